"""Experiment orchestration: seeded runs, CSV artifacts, aggregation.

Every experiment writes into runs/<id>/ under the output root, where <id>
is derived from the config hash, so re-running the same config reproduces
the same directory with byte-identical CSV bodies. Artifacts per run:
episodes.csv (one row per training episode), beta.csv (per-step blend
weight), trajectory.csv (deterministic post-training evaluation trace per
seed), evaluation.csv, summary.csv, manifest.json.
"""

import csv
import dataclasses
import json
import os

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError
from .trainer import effective_mode, evaluate, save_run, train_rlar

EPISODE_FIELDS = ("seed", "episode", "steps", "episode_return",
                  "normalized_return", "failed", "mean_beta",
                  "mpc_iterations")
BETA_FIELDS = ("seed", "episode", "step", "beta_mean")
EVAL_FIELDS = ("seed", "steps", "episode_return", "normalized_return",
               "failed")
SUMMARY_FIELDS = ("run_id", "plant", "mode", "n_seeds", "episodes",
                  "failed_episodes_total", "failures_per_seed",
                  "eval_normalized_return", "beta_first_quarter",
                  "beta_final_quarter", "config_hash")

# parameter-discrepancy grid: multipliers applied to the estimated preset
SWEEP_P2 = (0.25, 0.375, 0.5, 1.0, 2.0)
SWEEP_N = (3 / 16, 6 / 16, 9 / 16, 12 / 16, 1.0)


def run_id(config):
    return f"{config.plant}-{effective_mode(config)}-{config.config_hash()[:12]}"


def run_dir(out_root, config):
    return os.path.join(out_root, "runs", run_id(config))


def write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def mean_std(values, decimals):
    """Paper-style "mean (std)" cell, population std over the seeds."""
    arr = np.asarray(values, dtype=np.float64)
    return f"{arr.mean():.{decimals}f} ({arr.std():.{decimals}f})"


def train_experiment(config, out_root):
    """Train every seed of one config, evaluate deterministically, and write
    the full artifact set. Returns the in-memory results for callers."""
    out = run_dir(out_root, config)
    os.makedirs(out, exist_ok=True)
    records, beta_rows, traj_rows, eval_rows = [], [], [], []
    results = []
    for seed in config.seeds:
        result = train_rlar(config, seed)
        save_run(os.path.join(out, f"checkpoint-seed{seed}.npz"), config,
                 result.parts)
        records.extend(r.to_row() for r in result.records)
        beta_rows.extend(result.beta_rows)
        ev = evaluate(config, parts=result.parts)
        for row in ev["rows"]:
            traj_rows.append({"seed": seed, **row})
        eval_rows.append({"seed": seed, "steps": ev["steps"],
                          "episode_return": ev["episode_return"],
                          "normalized_return": ev["normalized_return"],
                          "failed": int(ev["failed"])})
        results.append(result)
    write_csv(os.path.join(out, "episodes.csv"), EPISODE_FIELDS, records)
    write_csv(os.path.join(out, "beta.csv"), BETA_FIELDS, beta_rows)
    write_csv(os.path.join(out, "trajectory.csv"),
              list(traj_rows[0]) if traj_rows else ("seed",), traj_rows)
    write_csv(os.path.join(out, "evaluation.csv"), EVAL_FIELDS, eval_rows)
    summary = summarize(config, records, eval_rows)
    write_csv(os.path.join(out, "summary.csv"), SUMMARY_FIELDS, [summary])
    manifest = {
        "run_id": run_id(config),
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seeds": list(config.seeds),
        "versions": {"package": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"dir": out, "records": records, "beta": beta_rows,
            "eval": eval_rows, "summary": summary, "results": results}


def summarize(config, records, eval_rows):
    per_seed_failures = []
    for seed in config.seeds:
        per_seed_failures.append(
            sum(r["failed"] for r in records if r["seed"] == seed))
    episodes = max(r["episode"] for r in records) + 1
    quarter = max(1, episodes // 4)
    first = [r["mean_beta"] for r in records if r["episode"] < quarter]
    final = [r["mean_beta"] for r in records
             if r["episode"] >= episodes - quarter]
    return {
        "run_id": run_id(config),
        "plant": config.plant,
        "mode": effective_mode(config),
        "n_seeds": len(config.seeds),
        "episodes": episodes,
        "failed_episodes_total": int(sum(per_seed_failures)),
        "failures_per_seed": mean_std(per_seed_failures, 1),
        "eval_normalized_return": mean_std(
            [e["normalized_return"] for e in eval_rows], 3),
        "beta_first_quarter": float(np.mean(first)),
        "beta_final_quarter": float(np.mean(final)),
        "config_hash": config.config_hash(),
    }


def report(out_root):
    """Aggregate every run directory under out_root into one table."""
    runs_root = os.path.join(out_root, "runs")
    if not os.path.isdir(runs_root):
        raise ConfigError(f"no runs directory under {out_root}")
    rows = []
    for name in sorted(os.listdir(runs_root)):
        path = os.path.join(runs_root, name, "summary.csv")
        if not os.path.isfile(path):
            continue
        with open(path, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"no summaries found under {runs_root}")
    out = os.path.join(out_root, "report.csv")
    write_csv(out, SUMMARY_FIELDS, rows)
    return {"path": out, "rows": rows}


def sweep(config, out_root, p2_grid=SWEEP_P2, n_grid=SWEEP_N):
    """Parameter-discrepancy grid: the actual plant is the estimated preset
    with (p2, n) scaled; the planner keeps believing the estimated preset."""
    if config.plant != "glucose":
        raise ConfigError("the discrepancy sweep is defined for glucose")
    cells = []
    for mp in p2_grid:
        for mn in n_grid:
            cell_config = dataclasses.replace(
                config, actual_role="estimated",
                param_multipliers={"p2": float(mp), "n": float(mn)})
            out = train_experiment(cell_config, out_root)
            cells.append({"p2_mult": float(mp), "n_mult": float(mn),
                          "failed_episodes_total":
                              out["summary"]["failed_episodes_total"],
                          "run_id": out["summary"]["run_id"]})
    path = os.path.join(out_root, "sweep.csv")
    write_csv(path, ("p2_mult", "n_mult", "failed_episodes_total", "run_id"),
              cells)
    return {"path": path, "cells": cells}


ABLATIONS = ("scalar-beta", "no-regularizer", "no-learning")


def ablate(config, out_root, which):
    """Run one ablation arm next to the unmodified config."""
    if which == "scalar-beta":
        changed = dataclasses.replace(config, scalar_beta=True)
    elif which == "no-regularizer":
        changed = dataclasses.replace(config, disable_regularizer=True)
    elif which == "no-learning":
        changed = dataclasses.replace(config, disable_learning=True)
    else:
        raise ConfigError(f"unknown ablation {which!r}, expected {ABLATIONS}")
    base = train_experiment(config, out_root)
    arm = train_experiment(changed, out_root)
    return {"base": base, "ablated": arm}


def episodes_to_threshold(records, seeds, threshold):
    """Median over seeds of the first episode whose normalized return clears
    the threshold; episodes+1 when a seed never clears it."""
    firsts = []
    for seed in seeds:
        mine = sorted((r for r in records if r["seed"] == seed),
                      key=lambda r: r["episode"])
        hit = next((r["episode"] for r in mine
                    if r["normalized_return"] >= threshold), len(mine))
        firsts.append(hit)
    return float(np.median(firsts))

"""Command-line front door: train, evaluate, pretrain-focus, sweep, ablate,
report. All commands are config-file driven and write CSV artifacts."""

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig
from .envs import make_env
from .errors import ConfigError, NumericalFault
from .focus import FocusNet, pretrain_focus
from .harness import (ABLATIONS, EPISODE_FIELDS, SWEEP_N, SWEEP_P2, ablate,
                      report, run_dir, sweep, train_experiment, write_csv)
from .nets import net_state, save_checkpoint
from .trainer import evaluate, normalized_box_sampler


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blendrl",
        description="Safety-regularized RL experiments on simulated plants")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--out", default=".", help="output root directory")
        p.add_argument("--plant", help="override config plant")
        p.add_argument("--mode", help="override config mode")
        p.add_argument("--seed", type=int, help="replace the seed list")
        p.add_argument("--episodes", type=int, help="override episode count")
        p.add_argument("--full-scale", action="store_true",
                       help="100 training episodes per run")

    for name in ("train", "evaluate", "pretrain-focus", "sweep", "ablate",
                 "report"):
        p = sub.add_parser(name)
        common(p)
        if name == "evaluate":
            p.add_argument("--checkpoint", required=True)
        if name == "ablate":
            p.add_argument("--which", required=True, choices=ABLATIONS)
        if name == "sweep":
            p.add_argument("--p2-grid", help="comma-separated multipliers")
            p.add_argument("--n-grid", help="comma-separated multipliers")
    return parser


def load_config(args):
    if args.config:
        config = RunConfig.from_file(args.config)
    else:
        config = RunConfig()
    overrides = {}
    if args.plant:
        overrides["plant"] = args.plant
    if args.mode:
        overrides["mode"] = args.mode
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.full_scale:
        overrides["episodes"] = 100
    if overrides:
        doc = config.to_dict()
        doc.update(overrides)
        config = RunConfig.from_dict(doc)
    return config


def grid(text, default):
    if not text:
        return default
    return tuple(float(x) for x in text.split(","))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "train":
            out = train_experiment(config, args.out)
            print(f"wrote {out['dir']}")
        elif args.command == "evaluate":
            ev = evaluate(config, checkpoint=args.checkpoint)
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, "evaluate-trajectory.csv")
            write_csv(path, list(ev["rows"][0]), ev["rows"])
            print(f"normalized return {ev['normalized_return']!r}; wrote {path}")
        elif args.command == "pretrain-focus":
            env = make_env(config.plant, config.actual_params())
            seed = config.seeds[0]
            focus = FocusNet(env.obs_dim, env.action_space.dim,
                             hidden=config.hidden_focus,
                             rng=np.random.default_rng(seed))
            pretrain_focus(focus, normalized_box_sampler(env.obs_dim),
                           threshold=config.pretrain_threshold,
                           rng=np.random.default_rng(seed + 1))
            held_out = np.random.default_rng(seed + 2).uniform(
                -1.0, 1.0, size=(10000, env.obs_dim))
            worst = float(focus.beta(held_out).min())
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out,
                                f"pretrained-focus-{config.plant}.npz")
            save_checkpoint(path, {"net": net_state(focus.net),
                                   "config_hash": config.config_hash(),
                                   "held_out_min": worst})
            print(f"held-out min beta {worst:.6f}; wrote {path}")
        elif args.command == "sweep":
            out = sweep(config, args.out,
                        p2_grid=grid(args.p2_grid, SWEEP_P2),
                        n_grid=grid(args.n_grid, SWEEP_N))
            print(f"wrote {out['path']}")
        elif args.command == "ablate":
            out = ablate(config, args.out, args.which)
            print(f"wrote {out['base']['dir']} and {out['ablated']['dir']}")
        elif args.command == "report":
            out = report(args.out)
            print(f"wrote {out['path']}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFault as exc:
        flush_error(args, config, exc)
        print(f"numerical fault: {exc}", file=sys.stderr)
        return 1
    return 0


def flush_error(args, config, exc):
    """Partial records plus an error manifest for a mid-run abort."""
    try:
        out = run_dir(args.out, config)
        os.makedirs(out, exist_ok=True)
        partial = getattr(exc, "partial_records", None)
        if partial:
            write_csv(os.path.join(out, "episodes-partial.csv"),
                      EPISODE_FIELDS, [r.to_row() for r in partial])
        with open(os.path.join(out, "error.json"), "w") as fh:
            json.dump({"error": str(exc),
                       "type": type(exc).__name__}, fh, indent=2)
            fh.write("\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())

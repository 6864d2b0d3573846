"""Outer training loop: safety controller, learner, and blending glue.

One run = one plant pair (planner sees the estimated parameters, the
simulation steps the actual ones), one seed, a fixed number of episodes.
The same loop also runs the degenerate baselines: planner-only (learning
disabled) and learner-only (regularizer disabled), which reduce bit-for-bit
to the standalone component loops because disabled parts are never built
and never consume random draws.
"""

import dataclasses

import numpy as np

from .config import RunConfig
from .envs import PlantModel, make_env
from .errors import ConfigError, NumericalFault
from .focus import FocusNet, ScalarFocus, blend, focus_update, pretrain_focus
from .mpc import MpcProblem, Regularizer
from .nets import (AdamState, adam_from_state, adam_state_dict,
                   load_checkpoint, net_from_state, net_state,
                   save_checkpoint)
from .replay import ReplayBuffer
from .sac import EntropyCoef, SacAgent


@dataclasses.dataclass
class RunRecord:
    seed: int
    episode: int
    steps: int
    episode_return: float
    normalized_return: float
    failed: bool
    mean_beta: float
    mpc_iterations: float

    def to_row(self):
        out = dataclasses.asdict(self)
        out["failed"] = int(self.failed)
        return out


def effective_mode(config):
    """Ablation flags collapse onto the pure baselines."""
    if config.mode == "mpc" or config.disable_learning:
        return "mpc"
    if config.mode == "sac" or config.disable_regularizer:
        return "sac"
    return "rlar"


def derive_seeds(seed):
    """Independent child streams per consumer, so changing one consumer
    (e.g. disabling the regularizer) cannot shift any other stream."""
    children = np.random.SeedSequence(int(seed)).spawn(5)
    names = ("agent", "focus_init", "pretrain", "focus_rl", "batch")
    return dict(zip(names, children))


def normalized_box_sampler(obs_dim):
    def sampler(count, rng):
        return rng.uniform(-1.0, 1.0, size=(count, int(obs_dim)))
    return sampler


def build_run(config, seed):
    """Construct the live components one seeded run needs for its mode."""
    mode = effective_mode(config)
    env = make_env(config.plant, config.actual_params(),
                   episode_len=config.episode_len or None,
                   substeps=config.env_substeps)
    seeds = derive_seeds(seed)
    parts = {"mode": mode, "seed": int(seed), "env": env,
             "scaler": env.obs_scaler, "regularizer": None, "agent": None,
             "focus": None, "adam_focus": None, "buffer": None,
             "rng_batch": None, "rng_focus": None}
    if mode != "sac":
        model = PlantModel(config.plant, config.estimated_params())
        problem = MpcProblem(
            model, horizon=config.mpc_horizon or None,
            substeps=config.mpc_substeps, margin_frac=config.margin_frac,
            al_tol=config.al_tol, rho0=config.rho0,
            rho_growth=config.rho_growth, max_outer=config.max_outer,
            inner_maxiter=config.inner_maxiter, inner_gtol=config.inner_gtol)
        parts["regularizer"] = Regularizer(problem)
    if mode != "mpc":
        parts["agent"] = SacAgent(
            env.obs_dim, env.action_space, seed=seeds["agent"],
            hidden=config.hidden_q, hidden_policy=config.hidden_policy,
            gamma=config.gamma, tau=config.tau, lr_q=config.lr_q,
            lr_policy=config.lr_policy, lr_alpha=config.lr_alpha,
            alpha=config.alpha, policy_frequency=config.policy_frequency,
            target_frequency=config.target_frequency)
        parts["buffer"] = ReplayBuffer(config.buffer_capacity, env.obs_dim,
                                       env.action_space.dim)
        parts["rng_batch"] = np.random.default_rng(seeds["batch"])
    if mode == "rlar":
        k = env.action_space.dim
        if config.scalar_beta:
            focus = ScalarFocus(env.obs_dim, k)
        else:
            focus = FocusNet(env.obs_dim, k, hidden=config.hidden_focus,
                             rng=np.random.default_rng(seeds["focus_init"]))
        pretrain_focus(focus, normalized_box_sampler(env.obs_dim),
                       threshold=config.pretrain_threshold,
                       rng=np.random.default_rng(seeds["pretrain"]))
        parts["focus"] = focus
        parts["adam_focus"] = AdamState(focus.n_params(), config.lr_focus)
        parts["rng_focus"] = np.random.default_rng(seeds["focus_rl"])
    return parts


class RunResult:
    """Per-seed training output: episode records, per-step weight log, and
    the live components for evaluation or checkpointing."""

    def __init__(self, config, seed, parts):
        self.config = config
        self.seed = int(seed)
        self.parts = parts
        self.records = []
        self.beta_rows = []

    @property
    def mode(self):
        return self.parts["mode"]


def train_rlar(config, seed):
    """Run `config.episodes` training episodes for one seed.

    Per step: safe action from the planner (memoized), learner proposal from
    the current policy, weighted combination executed on the actual plant,
    transition stored, then one update bundle once the buffer has passed the
    start-learning threshold. Episodes end on safety failure or step limit.
    On an abort the partial records are attached to the exception.
    """
    parts = build_run(config, seed)
    result = RunResult(config, seed, parts)
    try:
        _train_loop(config, parts, result)
    except NumericalFault as exc:
        exc.partial_records = result.records
        raise
    return result


def _train_loop(config, parts, result):
    mode = parts["mode"]
    env, scaler = parts["env"], parts["scaler"]
    reg, agent = parts["regularizer"], parts["agent"]
    focus, buffer = parts["focus"], parts["buffer"]
    for episode in range(config.episodes):
        obs = env.reset()
        if reg is not None:
            reg.reset(obs)
        total, beta_sum, iter_sum, failed = 0.0, 0.0, 0.0, False
        steps = 0
        done = False
        while not done:
            s_n = scaler.normalize(obs)
            if mode == "mpc":
                a = a_reg = reg.action()
                beta_mean = 1.0
            elif mode == "sac":
                a = agent.act(s_n)
                a_reg = np.zeros(env.action_space.dim)
                beta_mean = 0.0
            else:
                a_reg = reg.action()
                a_rl = agent.act(s_n)
                beta = focus.beta(s_n)
                a = blend(beta, a_reg, a_rl, env.action_space)
                beta_mean = float(np.mean(beta))
            obs2, r, done, step_failed = env.step(a)
            failed = failed or step_failed
            if reg is not None:
                iter_sum += reg.last_solve_iterations
                if not done:
                    reg.advance(a, obs2)
            if buffer is not None:
                buffer.push(s_n, a, scaler.normalize(obs2), r,
                            1.0 if step_failed else 0.0, a_reg)
                if len(buffer) > config.start_learning:
                    batch = buffer.sample(config.batch_size,
                                          parts["rng_batch"])
                    agent.update(batch)
                    if focus is not None:
                        focus_update(focus, agent.nets, batch.s, batch.a_reg,
                                     parts["adam_focus"], parts["rng_focus"])
            total += r
            steps += 1
            beta_sum += beta_mean
            result.beta_rows.append({"seed": result.seed, "episode": episode,
                                     "step": steps - 1,
                                     "beta_mean": beta_mean})
            obs = obs2
        result.records.append(RunRecord(
            seed=result.seed, episode=episode, steps=steps,
            episode_return=total,
            normalized_return=total / env.episode_len,
            failed=failed, mean_beta=beta_sum / steps,
            mpc_iterations=iter_sum / steps))


# checkpointing -----------------------------------------------------------------

def _agent_payload(agent):
    alpha = agent.alpha
    return {
        "q1": net_state(agent.nets.q1),
        "q2": net_state(agent.nets.q2),
        "q1_target": net_state(agent.nets.q1_target),
        "q2_target": net_state(agent.nets.q2_target),
        "policy": net_state(agent.nets.policy),
        "adam_q1": adam_state_dict(agent.adam_q1),
        "adam_q2": adam_state_dict(agent.adam_q2),
        "adam_policy": adam_state_dict(agent.adam_policy),
        "alpha": {"target_entropy": alpha.target_entropy,
                  "auto": int(alpha.auto),
                  "log_alpha": alpha._log_alpha.copy(),
                  "adam": adam_state_dict(alpha._adam)},
        "updates": agent.updates,
        "gamma": agent.gamma,
        "tau": agent.tau,
        "policy_frequency": agent.policy_frequency,
        "target_frequency": agent.target_frequency,
    }


def _focus_payload(focus, adam_focus):
    out = {"adam": adam_state_dict(adam_focus), "obs_dim": focus.obs_dim,
           "action_dim": focus.action_dim}
    if isinstance(focus, ScalarFocus):
        out["kind"] = "scalar"
        out["z"] = focus.params.copy()
    else:
        out["kind"] = "net"
        out["net"] = net_state(focus.net)
    return out


def save_run(path, config, parts):
    payload = {"config_hash": config.config_hash(), "seed": parts["seed"],
               "mode": parts["mode"]}
    if parts["agent"] is not None:
        payload["agent"] = _agent_payload(parts["agent"])
    if parts["focus"] is not None:
        payload["focus"] = _focus_payload(parts["focus"],
                                          parts["adam_focus"])
    save_checkpoint(path, payload)


def _agent_from_payload(payload, env):
    agent = SacAgent(env.obs_dim, env.action_space, seed=0,
                     hidden=(1,), gamma=payload["gamma"], tau=payload["tau"],
                     policy_frequency=payload["policy_frequency"],
                     target_frequency=payload["target_frequency"])
    agent.nets.q1 = net_from_state(payload["q1"])
    agent.nets.q2 = net_from_state(payload["q2"])
    agent.nets.q1_target = net_from_state(payload["q1_target"])
    agent.nets.q2_target = net_from_state(payload["q2_target"])
    agent.nets.policy = net_from_state(payload["policy"])
    agent.adam_q1 = adam_from_state(payload["adam_q1"])
    agent.adam_q2 = adam_from_state(payload["adam_q2"])
    agent.adam_policy = adam_from_state(payload["adam_policy"])
    al = payload["alpha"]
    agent.alpha = EntropyCoef(al["target_entropy"],
                              auto=bool(al["auto"]))
    agent.alpha._log_alpha = np.asarray(al["log_alpha"]).copy()
    agent.alpha._adam = adam_from_state(al["adam"])
    agent.updates = int(payload["updates"])
    return agent


def _focus_from_payload(payload):
    adam = adam_from_state(payload["adam"])
    if str(payload["kind"]) == "scalar":
        focus = ScalarFocus(int(payload["obs_dim"]),
                            int(payload["action_dim"]))
        focus.set_params(np.asarray(payload["z"]))
    else:
        net = net_from_state(payload["net"])
        sizes = [int(n) for n in net.layer_sizes]
        focus = FocusNet(sizes[0], sizes[-1], hidden=tuple(sizes[1:-1]),
                         params=net.params)
    return focus, adam


def load_run(path, config):
    """Rebuild the component bundle for evaluation; the stored config hash
    must match the supplied config exactly."""
    payload = load_checkpoint(path)
    if str(payload["config_hash"]) != config.config_hash():
        raise ConfigError(f"checkpoint at {path} was written by a different "
                          f"config (hash {payload['config_hash']})")
    mode = str(payload["mode"])
    env = make_env(config.plant, config.actual_params(),
                   episode_len=config.episode_len or None,
                   substeps=config.env_substeps)
    parts = {"mode": mode, "seed": int(payload["seed"]), "env": env,
             "scaler": env.obs_scaler, "regularizer": None, "agent": None,
             "focus": None, "adam_focus": None, "buffer": None,
             "rng_batch": None, "rng_focus": None}
    if mode != "sac":
        model = PlantModel(config.plant, config.estimated_params())
        problem = MpcProblem(
            model, horizon=config.mpc_horizon or None,
            substeps=config.mpc_substeps, margin_frac=config.margin_frac,
            al_tol=config.al_tol, rho0=config.rho0,
            rho_growth=config.rho_growth, max_outer=config.max_outer,
            inner_maxiter=config.inner_maxiter, inner_gtol=config.inner_gtol)
        parts["regularizer"] = Regularizer(problem)
    if "agent" in payload:
        parts["agent"] = _agent_from_payload(payload["agent"], env)
    if "focus" in payload:
        focus, adam = _focus_from_payload(payload["focus"])
        parts["focus"] = focus
        parts["adam_focus"] = adam
    return parts


# evaluation ----------------------------------------------------------------------

def evaluate(config, parts=None, checkpoint=None):
    """Deterministic episode on the actual plant: learner proposals use the
    squashed mean, blended through the current weight. Returns the trace
    rows, episodic return, and the return normalized by the episode length.
    """
    if parts is None:
        if checkpoint is None:
            raise ConfigError("evaluate needs live components or a checkpoint")
        parts = load_run(checkpoint, config)
    mode = parts["mode"]
    env, scaler = parts["env"], parts["scaler"]
    reg, agent, focus = parts["regularizer"], parts["agent"], parts["focus"]
    if mode != "mpc" and agent is None:
        raise ConfigError(f"mode {mode!r} evaluation needs a trained agent")
    obs = env.reset()
    if reg is not None:
        reg.reset(obs)
    rows, total, failed = [], 0.0, False
    done = False
    while not done:
        t = env.t
        state = env.state.copy()
        beta_mean = 1.0
        if mode == "mpc":
            a = reg.action()
        else:
            s_n = scaler.normalize(obs)
            a_rl = agent.act(s_n, deterministic=True)
            if mode == "sac":
                a = a_rl
                beta_mean = 0.0
            else:
                beta = focus.beta(s_n)
                a = blend(beta, reg.action(), a_rl, env.action_space)
                beta_mean = float(np.mean(beta))
        obs2, r, done, step_failed = env.step(a)
        failed = failed or step_failed
        if reg is not None and not done:
            reg.advance(a, obs2)
        row = {"t": t}
        row.update({f"state_{n}": v for n, v in zip(env.state_names, state)})
        row.update({f"obs_{n}": v for n, v in zip(env.obs_names, obs)})
        row.update({f"action_{n}": v
                    for n, v in zip(env.action_names, np.atleast_1d(a))})
        row.update({"reward": r, "done": int(done), "failed": int(step_failed),
                    "beta_mean": beta_mean})
        rows.append(row)
        total += r
        obs = obs2
    return {"rows": rows, "episode_return": total,
            "normalized_return": total / env.episode_len,
            "steps": len(rows), "failed": failed}

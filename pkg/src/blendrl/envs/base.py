"""Shared plant machinery: action boxes, safety bounds, normalization, Env base.

Each plant is an ODE dx/dt = f(x, a, t) integrated with fixed-step RK4 over
one control interval dt per env step. Safety is a set of linear functions of
the state (for every plant here the monitored quantities are linear in x),
checked after each step; leaving the band ends the episode as a failure.
"""

import csv

import numpy as np

from ..errors import ConfigError, NumericalFault
from ..ode import OdeStepper, ode_step


class ActionSpace:
    """Box of admissible actions [lo, hi] per dimension."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ConfigError(f"bad action box shapes {self.lo.shape} vs {self.hi.shape}")
        if not np.all(np.isfinite(self.lo)) or not np.all(np.isfinite(self.hi)):
            raise ConfigError("action bounds must be finite")
        if not np.all(self.lo < self.hi):
            raise ConfigError(f"action lower bounds must be < upper: {self.lo} vs {self.hi}")
        self.center = 0.5 * (self.lo + self.hi)
        self.half = 0.5 * (self.hi - self.lo)

    @property
    def dim(self):
        return self.lo.size

    def clip(self, a):
        return np.clip(np.asarray(a, dtype=np.float64), self.lo, self.hi)

    def contains(self, a, tol=1e-9):
        a = np.asarray(a, dtype=np.float64)
        return bool(np.all(a >= self.lo - tol) and np.all(a <= self.hi + tol))

    def normalize(self, a):
        """Map box to [-1, 1] (network-facing convention)."""
        return (np.asarray(a, dtype=np.float64) - self.center) / self.half

    def denormalize(self, u):
        return self.center + self.half * np.asarray(u, dtype=np.float64)

    def cold_start(self):
        """Zero action where 0 is admissible, per-dimension midpoint elsewhere."""
        z = np.zeros(self.dim)
        inside = (self.lo <= 0.0) & (0.0 <= self.hi)
        return np.where(inside, z, self.center)


class SafetySpec:
    """Band constraints lo <= W x <= hi on linear functions of the state.

    Bounds are inclusive: equality is safe, the episode fails only strictly
    outside the band.
    """

    def __init__(self, weights, lo, hi, labels=None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigError("safety weights must be a (rows, state_dim) matrix")
        m = self.weights.shape[0]
        if self.lo.shape != (m,) or self.hi.shape != (m,):
            raise ConfigError("safety bound shapes do not match weight rows")
        if not np.all(self.lo < self.hi):
            raise ConfigError("safety lower bounds must be < upper bounds")
        self.labels = list(labels) if labels is not None else [f"g{i}" for i in range(m)]

    def monitored(self, state):
        return self.weights @ np.asarray(state, dtype=np.float64)

    def violated(self, state):
        v = self.monitored(state)
        return bool(np.any(v < self.lo) or np.any(v > self.hi))

    def tightened(self, margin_frac):
        """Bounds pulled in by margin_frac of the half band width (for MPC)."""
        margin = margin_frac * 0.5 * (self.hi - self.lo)
        return self.lo + margin, self.hi - margin


class ObsScaler:
    """Fixed affine map taking raw observations to about [-1, 1]."""

    def __init__(self, center, half):
        self.center = np.asarray(center, dtype=np.float64)
        self.half = np.asarray(half, dtype=np.float64)
        if np.any(self.half <= 0):
            raise ConfigError("observation half-ranges must be positive")

    def normalize(self, obs):
        return (np.asarray(obs, dtype=np.float64) - self.center) / self.half

    def denormalize(self, x):
        return self.center + self.half * np.asarray(x, dtype=np.float64)


class Env:
    """Base plant: fixed-step integration, safety check, reward on new state.

    Subclasses define the dynamics hook, reward, initial state, and
    observation construction. A single instance is one episode stream; it is
    a plain state machine and not thread-safe across shared use.
    """

    name = "plant"
    state_names = ()
    obs_names = ()
    action_names = ()

    def __init__(self, params, episode_len, substeps=10):
        self.params = dict(params)
        self.stepper = OdeStepper(dt=float(params["dt"]), substeps=substeps)
        self.episode_len = int(episode_len)
        if self.episode_len < 1:
            raise ConfigError(f"episode_len must be >= 1, got {episode_len}")
        self.action_space = self._action_space()
        self.safety = self._safety_spec()
        self.obs_scaler = self._obs_scaler()
        self.basal_action = np.zeros(self.action_space.dim)
        self.state = None
        self.t = 0.0
        self.step_count = 0
        self._done = True

    # hooks -----------------------------------------------------------------
    def _action_space(self):
        raise NotImplementedError

    def _safety_spec(self):
        raise NotImplementedError

    def _obs_scaler(self):
        raise NotImplementedError

    def _initial_state(self):
        raise NotImplementedError

    def _dynamics(self, s, a, t):
        raise NotImplementedError

    def _reward(self, state, in_bounds):
        raise NotImplementedError

    def _penalty_floor(self):
        """Reward assigned when integration itself blows up."""
        raise NotImplementedError

    def _observe(self):
        """Default: fully observed state."""
        return self.state.copy()

    # API -------------------------------------------------------------------
    def reset(self):
        self.state = np.asarray(self._initial_state(), dtype=np.float64)
        self.t = 0.0
        self.step_count = 0
        self._done = False
        return self._observe()

    def step(self, action):
        if self._done:
            raise ConfigError("step() after episode end; call reset()")
        action = np.asarray(action, dtype=np.float64)
        if not self.action_space.contains(action):
            raise ConfigError(
                f"action {action} outside box [{self.action_space.lo}, "
                f"{self.action_space.hi}]")
        try:
            new_state = ode_step(self.stepper, self._dynamics, self.state,
                                 action, self.t)
            fault = False
        except NumericalFault:
            new_state = self.state  # keep last finite state for the record
            fault = True
        self.t += self.stepper.dt
        self.step_count += 1
        if fault:
            reward = self._penalty_floor()
            failed = True
        else:
            self.state = new_state
            failed = self.safety.violated(new_state)
            reward = self._reward(new_state, not failed)
        done = failed or self.step_count >= self.episode_len
        self._done = done
        return self._observe(), float(reward), bool(done), bool(failed)

    @property
    def obs_dim(self):
        return len(self.obs_names)


def run_episode_trace(env, controller):
    """Roll one episode under controller(obs) -> action, recording each step.

    Returns a list of row dicts (t, state..., obs..., action..., reward,
    done, failed) suitable for write_trace_csv.
    """
    obs = env.reset()
    rows = []
    done = False
    while not done:
        t = env.t
        state = env.state.copy()
        action = np.asarray(controller(obs), dtype=np.float64)
        obs, reward, done, failed = env.step(action)
        row = {"t": t}
        row.update({f"state_{n}": v for n, v in zip(env.state_names, state)})
        row.update({f"obs_{n}": v for n, v in zip(env.obs_names, obs)})
        row.update({f"action_{n}": v for n, v in zip(env.action_names, action)})
        row.update({"reward": reward, "done": int(done), "failed": int(failed)})
        rows.append(row)
    return rows


def write_trace_csv(rows, path):
    if not rows:
        raise ConfigError("cannot write an empty trace")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

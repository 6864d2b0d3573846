"""State-dependent blending weight between the safety controller and the learner.

A small net maps a normalized observation to one weight per action dimension
through a shifted tanh, beta = (tanh(z) + 1)/2, clamped away from {0, 1}.
It is pretrained to output ~1 everywhere (trust the safety controller), then
nudged by ascending the critic's value of the blended action, so weight moves
toward whichever source the critic currently prefers.
"""

import numpy as np

from .errors import ConfigError, NumericalFault
from .nets import AdamState, DenseNet, adam_step
from .sac import policy_sample

BETA_MIN = 1e-6
BETA_MAX = 1.0 - 1e-6


class FocusNet:
    """obs -> beta in (0,1)^k via a dense net and a shifted tanh output map."""

    def __init__(self, obs_dim, action_dim, hidden=(128, 32), rng=None,
                 dtype=np.float64, params=None):
        sizes = [int(obs_dim)] + [int(h) for h in hidden] + [int(action_dim)]
        acts = ["relu"] * len(hidden) + ["identity"]
        self.net = DenseNet(sizes, acts, rng=rng, dtype=dtype, params=params)
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)

    def beta_cached(self, obs):
        """Returns (beta, net cache, tanh(z), clamp mask) for backprop."""
        z, cache = self.net.forward_cached(obs)
        t = np.tanh(z)
        raw = 0.5 * (t + 1.0)
        beta = np.clip(raw, BETA_MIN, BETA_MAX)
        active = (raw > BETA_MIN) & (raw < BETA_MAX)
        return beta, cache, t, active

    def beta(self, obs):
        return self.beta_cached(obs)[0]

    # parameter facade shared with ScalarFocus
    def n_params(self):
        return self.net.n_params()

    @property
    def params(self):
        return self.net.params

    def set_params(self, flat):
        self.net.set_params(flat)

    @property
    def dtype(self):
        return self.net.dtype

    def backward(self, cache, g_z):
        return self.net.backward(cache, g_z)[0]


class ScalarFocus:
    """State-independent weight: one raw tanh input per action dimension.

    Ablation drop-in for FocusNet; beta ignores the observation, so the
    gradient of any per-row upstream signal just sums over the batch.
    """

    def __init__(self, obs_dim, action_dim, dtype=np.float64, z0=0.0):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self._z = np.full(self.action_dim, float(z0), dtype=dtype)

    def beta_cached(self, obs):
        obs = np.asarray(obs)
        if obs.ndim == 1:
            z = self._z.copy()
        else:
            z = np.tile(self._z, (obs.shape[0], 1))
        t = np.tanh(z)
        raw = 0.5 * (t + 1.0)
        beta = np.clip(raw, BETA_MIN, BETA_MAX)
        active = (raw > BETA_MIN) & (raw < BETA_MAX)
        return beta, None, t, active

    def beta(self, obs):
        return self.beta_cached(obs)[0]

    def n_params(self):
        return self.action_dim

    @property
    def params(self):
        return self._z

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=self._z.dtype)
        if flat.shape != self._z.shape:
            raise ConfigError(f"param shape mismatch: {flat.shape} vs {self._z.shape}")
        self._z[:] = flat

    @property
    def dtype(self):
        return self._z.dtype

    def backward(self, cache, g_z):
        g_z = np.asarray(g_z)
        return g_z.sum(axis=0) if g_z.ndim == 2 else g_z.copy()


def blend(beta, a_reg, a_rl, action_space=None):
    """Componentwise convex combination, optionally clipped into the box."""
    a = beta * np.asarray(a_reg) + (1.0 - beta) * np.asarray(a_rl)
    if action_space is not None:
        a = action_space.clip(a)
    return a


def pretrain_focus(focus, state_sampler, threshold=0.999, lr=1e-3,
                   batch_size=256, max_steps=30000, check_every=200,
                   val_count=10000, rng=None):
    """Regress the weight toward 1 until a held-out minimum clears threshold.

    state_sampler(count, rng) must cover the normalized observation box.
    Raises if the budget runs out before the held-out minimum clears
    (output-map saturation: the clamp caps how hard 1.0 can be approached).
    """
    if rng is None:
        raise ConfigError("pretrain_focus needs an rng")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    validation = state_sampler(int(val_count), rng)
    adam = AdamState(focus.n_params(), lr, dtype=focus.dtype)
    for step in range(1, int(max_steps) + 1):
        states = state_sampler(int(batch_size), rng)
        beta, cache, t, active = focus.beta_cached(states)
        err = beta - 1.0
        upstream = (2.0 / beta.shape[0]) * err * 0.5 * (1.0 - t * t) * active
        gflat = focus.backward(cache, upstream)
        focus.set_params(adam_step(adam, focus.params, gflat))
        if step % int(check_every) == 0:
            worst = float(focus.beta(validation).min())
            if worst >= threshold:
                return focus
    worst = float(focus.beta(validation).min())
    raise ConfigError(
        f"focus pretraining saturated: held-out min {worst:.6f} < "
        f"{threshold} after {max_steps} steps")


def focus_objective_and_grad(focus, nets, s, a_reg, a_rl):
    """Mean min-critic value of the blended action and its exact gradient
    in the focus-net parameters (critic and policy are read-only)."""
    beta, cache, t, active = focus.beta_cached(s)
    blended = beta * a_reg + (1.0 - beta) * a_rl
    x = np.concatenate([s, blended], axis=1)
    q1, c1 = nets.q1.forward_cached(x)
    q2, c2 = nets.q2.forward_cached(x)
    qmin = np.minimum(q1[:, 0], q2[:, 0])
    objective = float(np.mean(qmin))
    if not np.isfinite(objective):
        raise NumericalFault(f"non-finite focus objective {objective}")

    b = s.shape[0]
    pick1 = (q1[:, 0] <= q2[:, 0]).astype(beta.dtype)[:, None]
    _, gx1 = nets.q1.backward(c1, pick1 / b)
    _, gx2 = nets.q2.backward(c2, (1.0 - pick1) / b)
    g_blend = (gx1 + gx2)[:, focus.obs_dim:]
    g_z = g_blend * (a_reg - a_rl) * 0.5 * (1.0 - t * t) * active
    gflat = focus.backward(cache, g_z)
    return objective, gflat, {"beta": beta, "qmin": qmin}


def focus_update(focus, nets, s, a_reg, adam_focus, rng, diagnostics=False):
    """One ascent step on the critics' value of the blended action.

    a_rl is freshly sampled from the current policy at s; gradients flow
    only into the focus net.
    """
    s = np.asarray(s)
    a_reg = np.asarray(a_reg)
    a_rl = policy_sample(nets, s, rng=rng).action
    objective, gflat, extras = focus_objective_and_grad(focus, nets, s,
                                                        a_reg, a_rl)
    focus.set_params(adam_step(adam_focus, focus.params, gflat, ascend=True))
    if diagnostics:
        return {"objective": objective, "a_rl": a_rl, **extras}
    return {"objective": objective}


class Lemma1Result:
    """Statistical verdict of the blended-action distribution identity."""

    def __init__(self, passed, mean_error_se, cov_error_se, minimizer_gap,
                 empirical_mean, expected_mean, minimizer, empirical_var,
                 expected_var):
        self.passed = bool(passed)
        self.mean_error_se = float(mean_error_se)
        self.cov_error_se = float(cov_error_se)
        self.minimizer_gap = float(minimizer_gap)
        self.empirical_mean = empirical_mean
        self.expected_mean = expected_mean
        self.minimizer = minimizer
        self.empirical_var = empirical_var
        self.expected_var = expected_var

    def __repr__(self):
        return (f"Lemma1Result(passed={self.passed}, "
                f"mean_err={self.mean_error_se:.3g}se, "
                f"cov_err={self.cov_error_se:.3g}se, "
                f"minimizer_gap={self.minimizer_gap:.3g})")


def lemma1_check(beta, mean_rl, sigma_diag, a_reg, sample_count, rng,
                 se_tol=4.0, minimizer_tol=1e-3):
    """Check a_blend ~ N(beta a_reg + (1-beta) mean_rl, (1-beta)^2 Sigma).

    Draws sample_count unclipped Gaussian learner actions, blends them with
    the fixed a_reg, and tests (a) empirical mean and covariance against the
    closed-form pushforward within se_tol Monte Carlo standard errors, and
    (b) that a quasi-Newton minimizer of the weighted regularized objective
    ||a - mean_rl||^2_Sigma + lambda ||a - a_reg||^2_Sigma with
    lambda = beta/(1-beta) lands within minimizer_tol of the empirical mean.
    """
    from scipy.optimize import minimize

    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"beta must be in (0, 1), got {beta}")
    mean_rl = np.atleast_1d(np.asarray(mean_rl, dtype=np.float64))
    a_reg = np.atleast_1d(np.asarray(a_reg, dtype=np.float64))
    sigma_diag = np.atleast_1d(np.asarray(sigma_diag, dtype=np.float64))
    if np.any(sigma_diag <= 0.0):
        raise ConfigError(f"sigma_diag must be positive, got {sigma_diag}")
    n = int(sample_count)
    std = np.sqrt(sigma_diag)

    a_rl = mean_rl + std * rng.standard_normal((n, mean_rl.size))
    blended = beta * a_reg + (1.0 - beta) * a_rl

    expected_mean = beta * a_reg + (1.0 - beta) * mean_rl
    expected_var = (1.0 - beta) ** 2 * sigma_diag
    emp_mean = blended.mean(axis=0)
    emp_var = blended.var(axis=0, ddof=1)

    se_mean = np.sqrt(expected_var / n)
    se_var = expected_var * np.sqrt(2.0 / (n - 1))
    mean_err = float(np.max(np.abs(emp_mean - expected_mean) / se_mean))
    var_err = float(np.max(np.abs(emp_var - expected_var) / se_var))
    cov_err = var_err
    if mean_rl.size > 1:
        # off-diagonals should vanish; SE of a product-moment estimate
        emp_cov = np.cov(blended, rowvar=False, ddof=1)
        off = ~np.eye(mean_rl.size, dtype=bool)
        se_off = np.sqrt(np.outer(expected_var, expected_var) / n)
        cov_err = max(cov_err, float(np.max(np.abs(emp_cov[off]) / se_off[off])))

    lam = beta / (1.0 - beta)
    inv = 1.0 / sigma_diag

    def objective(a):
        da, dr = a - mean_rl, a - a_reg
        val = np.sum(da * da * inv) + lam * np.sum(dr * dr * inv)
        grad = 2.0 * da * inv + 2.0 * lam * dr * inv
        return val, grad

    start = 0.5 * (mean_rl + a_reg)
    res = minimize(objective, start, jac=True, method="BFGS",
                   options={"gtol": 1e-12})
    minimizer_gap = float(np.max(np.abs(res.x - emp_mean)))

    passed = (mean_err <= se_tol and cov_err <= se_tol
              and minimizer_gap <= minimizer_tol)
    return Lemma1Result(passed, mean_err, cov_err, minimizer_gap,
                        emp_mean, expected_mean, res.x, emp_var, expected_var)

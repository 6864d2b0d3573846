"""Soft actor-critic on numpy networks with hand-derived gradients.

Twin Q networks with a clipped min-of-targets backup, a squashed-Gaussian
policy updated by reparameterized gradient ascent, polyak-averaged target
networks, and an optional auto-tuned entropy coefficient. All gradients are
exact vector-Jacobian products through the dense nets; no autodiff.
"""

import numpy as np

from .errors import ConfigError, NumericalFault
from .nets import AdamState, DenseNet, adam_step

LOG_SIG_MIN = -5.0
LOG_SIG_MAX = 2.0


class SacNets:
    """Online and target critics plus the policy net.

    Critics map (obs, action) -> scalar; the policy maps obs -> (mean,
    raw log-sigma) per action dimension, with log-sigma squashed into
    [LOG_SIG_MIN, LOG_SIG_MAX]. Targets start as exact copies of the
    online critics.
    """

    def __init__(self, obs_dim, action_space, hidden=(256, 256), rng=None,
                 dtype=np.float64, hidden_policy=None):
        obs_dim = int(obs_dim)
        k = action_space.dim
        hidden = [int(h) for h in hidden]
        if hidden_policy is None:
            hidden_policy = hidden
        else:
            hidden_policy = [int(h) for h in hidden_policy]
        acts = ["relu"] * len(hidden) + ["identity"]
        pol_acts = ["relu"] * len(hidden_policy) + ["identity"]
        q_sizes = [obs_dim + k] + hidden + [1]
        self.q1 = DenseNet(q_sizes, acts, rng=rng, dtype=dtype)
        self.q2 = DenseNet(q_sizes, acts, rng=rng, dtype=dtype)
        self.q1_target = DenseNet(q_sizes, acts, params=self.q1.params, dtype=dtype)
        self.q2_target = DenseNet(q_sizes, acts, params=self.q2.params, dtype=dtype)
        self.policy = DenseNet([obs_dim] + hidden_policy + [2 * k], pol_acts,
                               rng=rng, dtype=dtype)
        self.obs_dim = obs_dim
        self.action_dim = k
        self.dtype = np.dtype(dtype)
        self.center = np.asarray(action_space.center, dtype=dtype)
        self.half = np.asarray(action_space.half, dtype=dtype)


class GaussianAction:
    """One policy sample: pre-squash draw, boxed action, exact log-prob."""

    def __init__(self, mean, log_sigma, u, action, log_prob):
        self.mean = mean
        self.log_sigma = log_sigma
        self.u = u
        self.action = action
        self.log_prob = log_prob


def _softplus(x):
    return np.logaddexp(0.0, x)


def _policy_head(nets, out):
    """Split raw policy output into mean and squashed log-sigma."""
    k = nets.action_dim
    mean = out[..., :k]
    raw = out[..., k:]
    t_raw = np.tanh(raw)
    log_sigma = LOG_SIG_MIN + 0.5 * (LOG_SIG_MAX - LOG_SIG_MIN) * (t_raw + 1.0)
    return mean, log_sigma, t_raw


def _squash(nets, u):
    """tanh then affine map into the action box, with the log-det correction.

    Returns (action, per-dim log|d action/d u|); the correction uses the
    numerically stable identity log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u)).
    """
    t = np.tanh(u)
    action = nets.center + nets.half * t
    log_det = np.log(nets.half) + 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))
    return action, log_det


def policy_sample(nets, obs, rng=None, deterministic=False):
    """Draw a squashed-Gaussian action; deterministic takes the squashed mean."""
    out = nets.policy.forward(obs)
    mean, log_sigma, _ = _policy_head(nets, out)
    if deterministic:
        u = mean.copy()
        action, _ = _squash(nets, u)
        return GaussianAction(mean, log_sigma, u, action, None)
    if rng is None:
        raise ConfigError("stochastic policy_sample needs an rng")
    sigma = np.exp(log_sigma)
    eps = rng.standard_normal(mean.shape).astype(nets.dtype)
    u = mean + sigma * eps
    action, log_det = _squash(nets, u)
    gauss = -0.5 * eps * eps - log_sigma - 0.5 * np.log(2.0 * np.pi)
    log_prob = np.sum(gauss - log_det, axis=-1)
    return GaussianAction(mean, log_sigma, u, action, log_prob)


def q_target(nets, batch, gamma, alpha, rng):
    """Clipped double-Q backup value for a batch.

    y = r + gamma (1-d) (min_i Q_targ,i(s', a') - alpha log pi(a'|s')) with
    a' freshly sampled from the current policy. Returns (y, diagnostics).
    """
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must be in [0, 1), got {gamma}")
    nxt = policy_sample(nets, batch.s2, rng=rng)
    xt = np.concatenate([batch.s2, nxt.action], axis=1)
    q1t = nets.q1_target.forward(xt)[:, 0]
    q2t = nets.q2_target.forward(xt)[:, 0]
    soft = np.minimum(q1t, q2t) - alpha * nxt.log_prob
    y = batch.r + gamma * (1.0 - batch.d) * soft
    return y, {"q1_target": q1t, "q2_target": q2t,
               "next_log_prob": nxt.log_prob}


def q_loss_and_grad(net, x, y):
    """Mean squared error of one critic against a fixed target, with grad."""
    pred, cache = net.forward_cached(x)
    err = pred[:, 0] - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NumericalFault(
            f"non-finite critic loss (|y|max={np.abs(y).max():.3g}, "
            f"|pred|max={np.abs(pred).max():.3g})")
    upstream = (2.0 / x.shape[0]) * err[:, None]
    gflat, _ = net.backward(cache, upstream)
    return loss, gflat


def q_update(nets, batch, gamma, alpha, adam_q1, adam_q2, rng,
             diagnostics=False):
    """One critic step: both critics regress the EXECUTED stored action
    onto the shared clipped target by one Adam step each."""
    y, diag = q_target(nets, batch, gamma, alpha, rng)
    x = np.concatenate([batch.s, batch.a], axis=1)
    losses = []
    for net, adam in ((nets.q1, adam_q1), (nets.q2, adam_q2)):
        loss, gflat = q_loss_and_grad(net, x, y)
        net.set_params(adam_step(adam, net.params, gflat))
        losses.append(loss)
    out = {"q1_loss": losses[0], "q2_loss": losses[1]}
    if diagnostics:
        out.update(y=y, gamma=gamma, alpha=alpha, **diag)
    return out


def policy_objective_and_grad(nets, s, alpha, eps):
    """Reparameterized E[min_i Q_i(s, a) - alpha log pi(a|s)] and its exact
    gradient in the policy parameters, for fixed noise eps.

    The critics are read-only: their input gradients steer the policy but
    their parameters are not touched. Returns (objective, gflat, extras).
    """
    out, cache = nets.policy.forward_cached(s)
    mean, log_sigma, t_raw = _policy_head(nets, out)
    sigma = np.exp(log_sigma)
    u = mean + sigma * eps
    t = np.tanh(u)
    action = nets.center + nets.half * t
    log_det = np.log(nets.half) + 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))
    gauss = -0.5 * eps * eps - log_sigma - 0.5 * np.log(2.0 * np.pi)
    log_prob = np.sum(gauss - log_det, axis=-1)

    b = s.shape[0]
    x = np.concatenate([s, action], axis=1)
    q1, c1 = nets.q1.forward_cached(x)
    q2, c2 = nets.q2.forward_cached(x)
    qmin = np.minimum(q1[:, 0], q2[:, 0])
    objective = float(np.mean(qmin - alpha * log_prob))
    if not np.isfinite(objective):
        raise NumericalFault(f"non-finite policy objective {objective}")

    # dJ/da via the per-sample argmin critic, action-slice of the input grad
    pick1 = (q1[:, 0] <= q2[:, 0]).astype(nets.dtype)[:, None]
    _, gx1 = nets.q1.backward(c1, pick1 / b)
    _, gx2 = nets.q2.backward(c2, (1.0 - pick1) / b)
    g_action = (gx1 + gx2)[:, nets.obs_dim:]

    # chain onto u, then add the entropy path: d log pi/du = 2 tanh(u),
    # d log pi/d log sigma = -1 + 2 tanh(u) sigma eps (for fixed noise eps)
    g_u = g_action * nets.half * (1.0 - t * t) - (alpha / b) * 2.0 * t
    g_mean = g_u
    g_log_sigma = g_u * sigma * eps + alpha / b
    g_raw = g_log_sigma * 0.5 * (LOG_SIG_MAX - LOG_SIG_MIN) * (1.0 - t_raw * t_raw)
    upstream = np.concatenate([g_mean, g_raw], axis=1)
    gflat, _ = nets.policy.backward(cache, upstream)
    extras = {"log_prob": log_prob, "qmin": qmin}
    return objective, gflat, extras


def policy_update(nets, batch, alpha, adam_policy, rng, diagnostics=False):
    """One reparameterized ascent step on the policy net."""
    eps = rng.standard_normal((batch.s.shape[0], nets.action_dim)).astype(nets.dtype)
    objective, gflat, extras = policy_objective_and_grad(nets, batch.s, alpha, eps)
    nets.policy.set_params(adam_step(adam_policy, nets.policy.params, gflat,
                                     ascend=True))
    res = {"objective": objective,
           "log_prob_mean": float(np.mean(extras["log_prob"]))}
    if diagnostics:
        res.update(extras)
    return res


def target_update(nets, tau):
    """Polyak tracking: targets move tau of the way to the online nets."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must be in (0, 1), got {tau}")
    for targ, online in ((nets.q1_target, nets.q1), (nets.q2_target, nets.q2)):
        # incremental form keeps targ bitwise fixed when online == targ
        targ.params[:] = targ.params + tau * (online.params - targ.params)


class EntropyCoef:
    """Entropy weight alpha, fixed or driven toward a target entropy.

    Auto mode does gradient descent on -log_alpha (log pi + target H) so
    alpha grows while the policy is more deterministic than the target and
    shrinks otherwise; alpha = exp(log_alpha) stays positive by construction.
    """

    def __init__(self, target_entropy, initial=1.0, lr=1e-3, auto=True):
        if not initial > 0.0:
            raise ConfigError(f"alpha must be positive, got {initial}")
        self.target_entropy = float(target_entropy)
        self.auto = bool(auto)
        self._log_alpha = np.array([np.log(initial)])
        self._adam = AdamState(1, lr)

    @property
    def value(self):
        return float(np.exp(self._log_alpha[0]))

    def update(self, mean_log_prob):
        if not self.auto:
            return 0.0
        grad = np.array([-(float(mean_log_prob) + self.target_entropy)])
        # d/dlog_alpha of -log_alpha (log pi + H*) is -(log pi + H*); the
        # alpha factor of the exact exp-parameterized gradient is absorbed
        # into Adam's scale invariance
        self._log_alpha = adam_step(self._adam, self._log_alpha, grad)
        return float(-self._log_alpha[0] * grad[0])


class SacAgent:
    """Bundles nets, optimizers, entropy coefficient, and update cadence.

    update() runs one critic step per call, a policy (and alpha) step every
    policy_frequency-th call, and a target step every target_frequency-th
    call. One agent instance is one seeded, single-threaded run.
    """

    def __init__(self, obs_dim, action_space, seed=0, hidden=(256, 256),
                 gamma=0.99, tau=0.005, lr_q=1e-3, lr_policy=3e-4,
                 lr_alpha=1e-3, alpha="auto", target_entropy=None,
                 policy_frequency=2, target_frequency=1, dtype=np.float64,
                 hidden_policy=None):
        self.rng = np.random.default_rng(seed)
        self.nets = SacNets(obs_dim, action_space, hidden=hidden, rng=self.rng,
                            dtype=dtype, hidden_policy=hidden_policy)
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.policy_frequency = int(policy_frequency)
        self.target_frequency = int(target_frequency)
        self.adam_q1 = AdamState(self.nets.q1.n_params(), lr_q, dtype=dtype)
        self.adam_q2 = AdamState(self.nets.q2.n_params(), lr_q, dtype=dtype)
        self.adam_policy = AdamState(self.nets.policy.n_params(), lr_policy,
                                     dtype=dtype)
        if target_entropy is None:
            target_entropy = -float(action_space.dim)
        if alpha == "auto":
            self.alpha = EntropyCoef(target_entropy, lr=lr_alpha, auto=True)
        else:
            self.alpha = EntropyCoef(target_entropy, initial=float(alpha),
                                     auto=False)
        self.updates = 0

    def act(self, obs, deterministic=False):
        sample = policy_sample(self.nets, obs, rng=self.rng,
                               deterministic=deterministic)
        return sample.action

    def update(self, batch):
        info = q_update(self.nets, batch, self.gamma, self.alpha.value,
                        self.adam_q1, self.adam_q2, self.rng)
        self.updates += 1
        if self.updates % self.policy_frequency == 0:
            # delayed actor: run policy_frequency ascent steps when it fires,
            # so the policy averages one update per critic update
            for _ in range(self.policy_frequency):
                pol = policy_update(self.nets, batch, self.alpha.value,
                                    self.adam_policy, self.rng)
                self.alpha.update(pol["log_prob_mean"])
            info.update(pol)
            info["alpha"] = self.alpha.value
        if self.updates % self.target_frequency == 0:
            target_update(self.nets, self.tau)
        return info

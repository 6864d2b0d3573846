"""Brute-force certification of the blending theory on small exact MDPs.

Continuous plants cannot certify the policy-improvement claims behind the
focus weight, so this module re-creates the setting exactly: a finite MDP
over a discretized 1-D action box where values solve linearly, the blended
action snaps to the grid, and the improvement step is an exhaustive search
over a weight grid. Everything here is exact up to floating-point solve
error; tolerances are 1e-10.
"""

import numpy as np

from .errors import ConfigError

MAX_STATES = 20


class TabularMdp:
    """Finite MDP with a discretized 1-D action box.

    transitions: (S, A, S) row-stochastic in the last axis; rewards: (S, A);
    actions: the A grid values over the box.
    """

    def __init__(self, transitions, rewards, actions, gamma):
        transitions = np.asarray(transitions, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if transitions.ndim != 3 or transitions.shape[0] != transitions.shape[2]:
            raise ConfigError(f"transitions must be (S, A, S), got {transitions.shape}")
        n_s, n_a = transitions.shape[0], transitions.shape[1]
        if n_s > MAX_STATES:
            raise ConfigError(f"at most {MAX_STATES} states, got {n_s}")
        if rewards.shape != (n_s, n_a):
            raise ConfigError(f"rewards must be {(n_s, n_a)}, got {rewards.shape}")
        if actions.shape != (n_a,):
            raise ConfigError(f"actions must be ({n_a},), got {actions.shape}")
        row_sums = transitions.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > 1e-12 or np.min(transitions) < 0.0:
            raise ConfigError("transition rows must be probability distributions")
        if not 0.0 <= gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1) for exact solves, got {gamma}")
        self.transitions = transitions
        self.rewards = rewards
        self.actions = actions
        self.gamma = float(gamma)
        self.n_states = n_s
        self.n_actions = n_a

    def snap(self, action_value):
        """Index of the grid action nearest to a continuous action value."""
        return int(np.argmin(np.abs(self.actions - float(action_value))))


def random_mdp(rng, n_states=6, n_actions=21, gamma=0.9, box=(-1.0, 1.0)):
    """Dirichlet transitions, uniform rewards in [-1, 1], even action grid."""
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    rewards = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    actions = np.linspace(box[0], box[1], n_actions)
    return TabularMdp(transitions, rewards, actions, gamma)


def _policy_matrices(mdp, policy):
    policy = np.asarray(policy)
    if policy.ndim == 1:  # deterministic: action index per state
        idx = policy.astype(int)
        p_pi = mdp.transitions[np.arange(mdp.n_states), idx]
        r_pi = mdp.rewards[np.arange(mdp.n_states), idx]
    elif policy.shape == (mdp.n_states, mdp.n_actions):
        if np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-12 or np.min(policy) < 0:
            raise ConfigError("stochastic policy rows must sum to 1")
        p_pi = np.einsum("sa,sat->st", policy, mdp.transitions)
        r_pi = np.sum(policy * mdp.rewards, axis=1)
    else:
        raise ConfigError(f"policy shape {policy.shape} not understood")
    return p_pi, r_pi


def exact_value(mdp, policy):
    """State values from the linear Bellman solve (I - gamma P_pi) v = r_pi."""
    p_pi, r_pi = _policy_matrices(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


def value_iteration_policy_eval(mdp, policy, sweeps=10000):
    """Fixed-point iteration evaluation; an independent check on exact_value."""
    p_pi, r_pi = _policy_matrices(mdp, policy)
    v = np.zeros(mdp.n_states)
    for _ in range(int(sweeps)):
        v = r_pi + mdp.gamma * p_pi @ v
    return v


def q_values(mdp, v):
    """Q(s, a) = R(s, a) + gamma sum_s' P(s'|s, a) v(s') for every grid action."""
    return mdp.rewards + mdp.gamma * mdp.transitions @ v


def occupancy(mdp, policy, start):
    """Unnormalized discounted visitation rho(s') = sum_t gamma^t P(s_t = s').

    Multiplying by (1 - gamma) gives the normalized occupancy measure.
    """
    p_pi, _ = _policy_matrices(mdp, policy)
    e = np.zeros(mdp.n_states)
    e[int(start)] = 1.0
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi.T, e)


def blended_policy(mdp, a_reg_idx, a_rl_idx, beta):
    """Deterministic policy: blend the two action tables, snap to the grid."""
    a_reg_idx = np.asarray(a_reg_idx, dtype=int)
    a_rl_idx = np.asarray(a_rl_idx, dtype=int)
    beta = np.asarray(beta, dtype=np.float64)
    out = np.empty(mdp.n_states, dtype=int)
    for s in range(mdp.n_states):
        a = (beta[s] * mdp.actions[a_reg_idx[s]]
             + (1.0 - beta[s]) * mdp.actions[a_rl_idx[s]])
        out[s] = mdp.snap(a)
    return out


def theorem2_check(mdp, a_reg_idx, a_rl_idx, beta, s_t, beta_grid=101,
                   tol=1e-10):
    """One exhaustive weight-improvement step must not lower any state value.

    The new weight at s_t maximizes Q^{pi_beta}(s_t, a_beta'(s_t)) over a
    grid of candidate weights that always includes the current beta(s_t);
    the policy changes only at s_t. Returns a verdict dict with both value
    vectors and the chosen weight.
    """
    beta = np.asarray(beta, dtype=np.float64)
    pi = blended_policy(mdp, a_reg_idx, a_rl_idx, beta)
    v = exact_value(mdp, pi)
    q = q_values(mdp, v)

    candidates = np.concatenate([np.linspace(0.0, 1.0, int(beta_grid)),
                                 [beta[int(s_t)]]])
    a_reg = mdp.actions[int(a_reg_idx[int(s_t)])]
    a_rl = mdp.actions[int(a_rl_idx[int(s_t)])]
    scores = np.array([q[int(s_t), mdp.snap(c * a_reg + (1.0 - c) * a_rl)]
                       for c in candidates])
    best = int(np.argmax(scores))  # first max: ties resolve to the smallest
    beta_star = float(candidates[best])

    pi_new = pi.copy()
    pi_new[int(s_t)] = mdp.snap(beta_star * a_reg + (1.0 - beta_star) * a_rl)
    v_new = exact_value(mdp, pi_new)
    worst_drop = float(np.max(v - v_new))
    return {
        "ok": bool(np.all(v_new >= v - tol)),
        "worst_drop": worst_drop,
        "beta_star": beta_star,
        "v_before": v,
        "v_after": v_new,
        "policy_before": pi,
        "policy_after": pi_new,
    }


def performance_difference_check(mdp, policy, policy_new, tol=1e-10):
    """V' - V must equal the occupancy-weighted advantage, at every start.

    For each start s: V'(s) - V(s) = sum_{s'} rho^{pi'}(s'|s) A^{pi}(s', pi'(s'))
    with rho the unnormalized discounted visitation of the NEW policy and
    A^{pi}(s, a) = Q^{pi}(s, a) - V^{pi}(s).
    """
    policy = np.asarray(policy, dtype=int)
    policy_new = np.asarray(policy_new, dtype=int)
    v = exact_value(mdp, policy)
    v_new = exact_value(mdp, policy_new)
    q = q_values(mdp, v)
    adv = q[np.arange(mdp.n_states), policy_new] - v
    worst = 0.0
    for s in range(mdp.n_states):
        rho = occupancy(mdp, policy_new, s)
        lhs = v_new[s] - v[s]
        rhs = float(rho @ adv)
        worst = max(worst, abs(lhs - rhs))
    return {"ok": worst <= tol, "worst_gap": worst}

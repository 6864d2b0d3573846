"""Exact small-MDP certification of the weight-improvement machinery."""

import numpy as np
import pytest

from blendrl.errors import ConfigError
from blendrl.tabular import (TabularMdp, blended_policy, exact_value,
                             occupancy, performance_difference_check,
                             q_values, random_mdp, theorem2_check,
                             value_iteration_policy_eval)


def uniform_transition_mdp(rng, n_states=5, n_actions=21, gamma=0.9):
    """Transitions ignore the action, so Q orderings mirror reward orderings."""
    p = rng.dirichlet(np.ones(n_states), size=n_states)
    transitions = np.repeat(p[:, None, :], n_actions, axis=1)
    rewards = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    actions = np.linspace(-1.0, 1.0, n_actions)
    return TabularMdp(transitions, rewards, actions, gamma)


# construction and validation -------------------------------------------------

def test_construction_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    good = random_mdp(rng)
    bad_rows = good.transitions.copy()
    bad_rows[0, 0, 0] += 0.01
    with pytest.raises(ConfigError):
        TabularMdp(bad_rows, good.rewards, good.actions, good.gamma)
    with pytest.raises(ConfigError):
        random_mdp(rng, n_states=21)
    with pytest.raises(ConfigError):
        TabularMdp(good.transitions, good.rewards, good.actions, 1.0)
    with pytest.raises(ConfigError):
        TabularMdp(good.transitions, good.rewards[:, :3], good.actions,
                   good.gamma)
    with pytest.raises(ConfigError):
        TabularMdp(good.transitions[0], good.rewards, good.actions, good.gamma)


def test_policy_table_validation():
    mdp = random_mdp(np.random.default_rng(1))
    bad = np.full((mdp.n_states, mdp.n_actions), 1.0)
    with pytest.raises(ConfigError):
        exact_value(mdp, bad)
    with pytest.raises(ConfigError):
        exact_value(mdp, np.zeros((2, 3, 4)))


# exact evaluation --------------------------------------------------------------

def test_zero_discount_value_is_immediate_reward():
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng, gamma=0.0)
    idx = rng.integers(0, mdp.n_actions, size=mdp.n_states)
    v = exact_value(mdp, idx)
    assert np.allclose(v, mdp.rewards[np.arange(mdp.n_states), idx],
                       rtol=0, atol=1e-14)
    # stochastic table: expected immediate reward
    table = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
    v = exact_value(mdp, table)
    assert np.allclose(v, np.sum(table * mdp.rewards, axis=1), atol=1e-14)


def test_single_state_value_is_geometric_series():
    r = 0.37
    mdp = TabularMdp(np.ones((1, 3, 1)), np.full((1, 3), r),
                     np.array([-1.0, 0.0, 1.0]), 0.8)
    v = exact_value(mdp, np.array([1]))
    assert abs(v[0] - r / (1.0 - 0.8)) < 1e-12


def test_value_iteration_agrees_with_linear_solve():
    rng = np.random.default_rng(3)
    for gamma in (0.9, 0.95):
        for _ in range(5):
            mdp = random_mdp(rng, gamma=gamma)
            idx = rng.integers(0, mdp.n_actions, size=mdp.n_states)
            direct = exact_value(mdp, idx)
            iterated = value_iteration_policy_eval(mdp, idx)
            assert np.max(np.abs(direct - iterated)) < 1e-8


def test_q_values_reduce_to_rewards_at_zero_discount():
    mdp = random_mdp(np.random.default_rng(4), gamma=0.0)
    v = np.zeros(mdp.n_states)
    assert np.array_equal(q_values(mdp, v), mdp.rewards)


def test_occupancy_mass_is_geometric_total():
    rng = np.random.default_rng(5)
    for _ in range(10):
        mdp = random_mdp(rng, gamma=float(rng.uniform(0.3, 0.97)))
        idx = rng.integers(0, mdp.n_actions, size=mdp.n_states)
        start = int(rng.integers(mdp.n_states))
        rho = occupancy(mdp, idx, start)
        assert np.all(rho >= -1e-14)
        assert abs(rho.sum() - 1.0 / (1.0 - mdp.gamma)) < 1e-9


# blending and snapping ----------------------------------------------------------

def test_blended_policy_snaps_to_sources_at_weight_extremes():
    mdp = random_mdp(np.random.default_rng(6))
    rng = np.random.default_rng(7)
    a_reg = rng.integers(0, mdp.n_actions, size=mdp.n_states)
    a_rl = rng.integers(0, mdp.n_actions, size=mdp.n_states)
    ones = np.ones(mdp.n_states)
    assert np.array_equal(blended_policy(mdp, a_reg, a_rl, ones), a_reg)
    assert np.array_equal(blended_policy(mdp, a_reg, a_rl, 0.0 * ones), a_rl)
    # midpoint blend of grid neighbors lands on an exact grid value
    half = blended_policy(mdp, np.array([20] * 6), np.array([10] * 6),
                          0.5 * ones)
    assert np.all(half == 15)


# improvement step ----------------------------------------------------------------

def test_weight_step_keeps_policy_when_current_action_dominates():
    rng = np.random.default_rng(8)
    mdp = uniform_transition_mdp(rng)
    a_reg = np.full(mdp.n_states, 20)  # +1.0
    a_rl = np.full(mdp.n_states, 0)   # -1.0
    beta = np.full(mdp.n_states, 0.4)  # blend -0.2, exactly grid index 8
    s_t = 2
    mdp.rewards[s_t, 8] = 5.0  # current action is the unique best
    out = theorem2_check(mdp, a_reg, a_rl, beta, s_t)
    assert out["ok"]
    assert np.array_equal(out["policy_after"], out["policy_before"])
    assert np.array_equal(out["v_after"], out["v_before"])


def test_weight_step_is_identity_when_sources_coincide():
    rng = np.random.default_rng(9)
    mdp = random_mdp(rng)
    idx = rng.integers(0, mdp.n_actions, size=mdp.n_states)
    out = theorem2_check(mdp, idx, idx, np.full(mdp.n_states, 0.7), 1)
    assert out["ok"]
    assert np.array_equal(out["policy_after"], out["policy_before"])
    assert np.array_equal(out["v_after"], out["v_before"])


def test_weight_step_never_lowers_any_value_on_random_instances():
    rng = np.random.default_rng(10)
    for _ in range(100):
        mdp = random_mdp(rng, gamma=float(rng.uniform(0.5, 0.95)))
        a_reg = rng.integers(0, mdp.n_actions, size=mdp.n_states)
        a_rl = rng.integers(0, mdp.n_actions, size=mdp.n_states)
        beta = rng.uniform(0.0, 1.0, size=mdp.n_states)
        s_t = int(rng.integers(mdp.n_states))
        out = theorem2_check(mdp, a_reg, a_rl, beta, s_t)
        assert out["ok"], f"value dropped by {out['worst_drop']}"


def test_learner_optimal_everywhere_pulls_weight_to_zero():
    rng = np.random.default_rng(11)
    mdp = uniform_transition_mdp(rng)
    a_rl = np.full(mdp.n_states, 0)    # -1.0 best everywhere
    a_reg = np.full(mdp.n_states, 20)  # +1.0
    mdp.rewards[:] = -np.abs(mdp.actions + 1.0)[None, :]
    beta = np.full(mdp.n_states, 0.98)
    s_t = 3
    out = theorem2_check(mdp, a_reg, a_rl, beta, s_t)
    assert out["ok"]
    assert out["beta_star"] == 0.0
    assert np.any(out["v_after"] > out["v_before"] + 1e-6)


# performance-difference identity -------------------------------------------------

def test_value_gap_equals_occupancy_weighted_advantage():
    rng = np.random.default_rng(12)
    for _ in range(50):
        mdp = random_mdp(rng, gamma=float(rng.uniform(0.4, 0.95)))
        pi = rng.integers(0, mdp.n_actions, size=mdp.n_states)
        pi_new = rng.integers(0, mdp.n_actions, size=mdp.n_states)
        out = performance_difference_check(mdp, pi, pi_new)
        assert out["ok"], f"identity gap {out['worst_gap']}"
        assert out["worst_gap"] <= 1e-10

"""Continuous-action cart pole: keep the pole within 6 degrees of vertical.

States (x, xdot, theta, thetadot); action a_f in [-1, 1] scaled to a
horizontal force of 10*a_f newtons. The episode starts with the pole tilted
exactly at the 6-degree safety bound, so the bound check is inclusive.
"""

import numpy as np
from numba import njit

from .base import ActionSpace, Env, ObsScaler, SafetySpec

FIELDS = ("g", "m_c", "m_p", "l", "dt")

STATE_NAMES = ("x", "xdot", "theta", "thetadot")
OBS_NAMES = STATE_NAMES
ACTION_NAMES = ("a_f",)

THETA_BOUND = 12.0 * np.pi / 360.0  # == 6 degrees

ACTION_LO = (-1.0,)
ACTION_HI = (1.0,)
SAFE_LO = (-2.4, -THETA_BOUND)
SAFE_HI = (2.4, THETA_BOUND)
OBS_CENTER = (0.0, 0.0, 0.0, 0.0)
OBS_HALF = (2.4, 3.0, 0.15, 1.5)
EPISODE_LEN = 400
MPC_HORIZON = 20

PENALTY = -1e4
FORCE_SCALE = 10.0

# packed order: g m_c m_p l
def pack(params):
    return np.array([params["g"], params["m_c"], params["m_p"], params["l"]],
                    dtype=np.float64)


@njit(cache=True)
def dynamics(s, a, t, p):
    g, m_c, m_p, l = p[0], p[1], p[2], p[3]
    theta, w = s[2], s[3]
    total = m_p + m_c
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    d = (FORCE_SCALE * a[0] + m_p * l * w * w * sin_t) / total
    denom = l * (4.0 / 3.0 - m_p * cos_t * cos_t / total)
    theta_acc = (g * sin_t - d * cos_t) / denom
    x_acc = d - m_p * l * theta_acc * cos_t / total
    ds = np.empty(4)
    ds[0] = s[1]
    ds[1] = x_acc
    ds[2] = w
    ds[3] = theta_acc
    return ds


@njit(cache=True)
def jacobian(s, a, t, p):
    g, m_c, m_p, l = p[0], p[1], p[2], p[3]
    theta, w = s[2], s[3]
    total = m_p + m_c
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)

    d = (FORCE_SCALE * a[0] + m_p * l * w * w * sin_t) / total
    dd_dth = m_p * l * w * w * cos_t / total
    dd_dw = 2.0 * m_p * l * w * sin_t / total
    dd_da = FORCE_SCALE / total

    denom = l * (4.0 / 3.0 - m_p * cos_t * cos_t / total)
    ddenom_dth = 2.0 * l * m_p * cos_t * sin_t / total

    num = g * sin_t - d * cos_t
    dnum_dth = g * cos_t - dd_dth * cos_t + d * sin_t
    dnum_dw = -dd_dw * cos_t
    dnum_da = -dd_da * cos_t

    theta_acc = num / denom
    dth_acc_dth = (dnum_dth * denom - num * ddenom_dth) / (denom * denom)
    dth_acc_dw = dnum_dw / denom
    dth_acc_da = dnum_da / denom

    coeff = m_p * l / total
    dx_acc_dth = dd_dth - coeff * (dth_acc_dth * cos_t - theta_acc * sin_t)
    dx_acc_dw = dd_dw - coeff * dth_acc_dw * cos_t
    dx_acc_da = dd_da - coeff * dth_acc_da * cos_t

    js = np.zeros((4, 4))
    ja = np.zeros((4, 1))
    js[0, 1] = 1.0
    js[1, 2] = dx_acc_dth
    js[1, 3] = dx_acc_dw
    js[2, 3] = 1.0
    js[3, 2] = dth_acc_dth
    js[3, 3] = dth_acc_dw
    ja[1, 0] = dx_acc_da
    ja[3, 0] = dth_acc_da
    return js, ja


@njit(cache=True)
def stage_cost(s, cp):
    # hinge kept exact; its subgradient at the kinks is 0 by convention
    x, theta = s[0], s[2]
    slack = abs(x) - 0.25
    return 1000.0 * theta * theta + (slack if slack > 0.0 else 0.0)


@njit(cache=True)
def stage_cost_grad(s, cp):
    g = np.zeros(s.size)
    x, theta = s[0], s[2]
    g[2] = 2000.0 * theta
    if abs(x) > 0.25:
        g[0] = 1.0 if x > 0.0 else -1.0
    return g


def cost_params(params):
    return np.zeros(0)


def safety_spec():
    w = np.zeros((2, 4))
    w[0, 0] = 1.0
    w[1, 2] = 1.0
    return SafetySpec(w, SAFE_LO, SAFE_HI, labels=["x", "theta"])


def reward(state, in_bounds):
    base = -1000.0 * state[2] ** 2 - max(0.0, abs(state[0]) - 0.25)
    return base if in_bounds else base - 1e4


def initial_state():
    return np.array([0.0, 0.0, 6.0 * np.pi / 180.0, 0.0])


class CartPoleEnv(Env):
    name = "cartpole"
    state_names = STATE_NAMES
    obs_names = OBS_NAMES
    action_names = ACTION_NAMES

    def __init__(self, params, episode_len=EPISODE_LEN, substeps=10):
        super().__init__(params, episode_len, substeps)
        self._p = pack(self.params)

    def _action_space(self):
        return ActionSpace(ACTION_LO, ACTION_HI)

    def _safety_spec(self):
        return safety_spec()

    def _obs_scaler(self):
        return ObsScaler(OBS_CENTER, OBS_HALF)

    def _initial_state(self):
        return initial_state()

    def _dynamics(self, s, a, t):
        return dynamics(s, a, t, self._p)

    def _reward(self, state, in_bounds):
        return reward(state, in_bounds)

    def _penalty_floor(self):
        return PENALTY

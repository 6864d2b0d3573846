"""Two-hormone blood glucose plant: 12-state gut/insulin/glucagon model.

States: Q1, Q2 (glucose masses, mmol/kg), x1..x3 (insulin actions, 1/min),
S1, S2 (subcutaneous insulin), I (plasma insulin, mU/L), Z1, Z2
(subcutaneous glucagon), N (plasma glucagon, pg/mL), Y (glucagon action,
1/min). Actions: insulin and glucagon injection rates (a_I, a_N).
Observable glucose level is G = 18*Q1/V_G (mg/dL); only G is observed.

The plant integrates the hard piecewise terms (F01c saturation at G=81,
renal clearance F_R clamped at 0); the `smooth` dynamics variant replaces
both seams with softplus blends of configurable width for gradient-based
planning. Reward is 10x the shared glucose risk.
"""

import numpy as np
from numba import njit

from ..errors import ConfigError
from .base import ActionSpace, Env, ObsScaler, SafetySpec
from .glucose import magni_risk, _risk, _risk_grad
from .jitmath import sigmoid, softplus

FIELDS = ("D_G", "V_G", "k12", "F01", "EGP0", "A_G", "t_maxG", "t_maxI",
          "V_I", "k_e", "k_a1", "k_a2", "k_a3", "k_b1", "k_b2", "k_b3",
          "t_maxN", "k_N", "V_N", "p", "S_N", "M_g", "BW", "N_b", "dt")

STATE_NAMES = ("Q1", "Q2", "x1", "x2", "x3", "S1", "S2", "I", "Z1", "Z2", "N", "Y")
OBS_NAMES = ("G", "dG", "t")
ACTION_NAMES = ("a_I", "a_N")

ACTION_LO = (0.0, 0.0)
ACTION_HI = (100.0, 100.0)
SAFE_LO = (10.0,)
SAFE_HI = (1000.0,)
OBS_CENTER = (505.0, 0.0, 500.0)
OBS_HALF = (495.0, 100.0, 500.0)
EPISODE_LEN = 100
MPC_HORIZON = 20

PENALTY = -1e5
REWARD_SCALE = 10.0

# default mmol/kg per kg-of-carbs conversion for the meal term: 1e6 mg/kg
# divided by molar mass and body weight (c_conv is never given numerically)
def default_c_conv(params):
    return 1e6 / (params["M_g"] * params["BW"])


# packed order:
#  0 V_G   1 k12   2 F01   3 EGP0  4 D_G   5 A_G   6 t_maxG  7 t_maxI
#  8 V_I   9 k_e  10 k_a1 11 k_a2 12 k_a3 13 k_b1 14 k_b2  15 k_b3
# 16 t_maxN 17 k_N 18 V_N 19 p    20 S_N  21 N_b  22 c_conv 23 seam width
def pack(params, c_conv=None, seam_width=1e-2):
    if c_conv is None:
        c_conv = default_c_conv(params)
    return np.array([
        params["V_G"], params["k12"], params["F01"], params["EGP0"],
        params["D_G"], params["A_G"], params["t_maxG"], params["t_maxI"],
        params["V_I"], params["k_e"], params["k_a1"], params["k_a2"],
        params["k_a3"], params["k_b1"], params["k_b2"], params["k_b3"],
        params["t_maxN"], params["k_N"], params["V_N"], params["p"],
        params["S_N"], params["N_b"], float(c_conv), float(seam_width),
    ], dtype=np.float64)


@njit(cache=True)
def _fill_common(ds, s, a, p):
    # rows 1..11 are seam-free and shared by both dynamics variants
    q1, q2 = s[0], s[1]
    x1, x2, x3 = s[2], s[3], s[4]
    s1, s2, i = s[5], s[6], s[7]
    z1, z2, n, y = s[8], s[9], s[10], s[11]
    ds[1] = x1 * q1 - (p[1] + x2) * q2
    ds[2] = -p[10] * x1 + p[13] * i
    ds[3] = -p[11] * x2 + p[14] * i
    ds[4] = -p[12] * x3 + p[15] * i
    ds[5] = a[0] - s1 / p[7]
    ds[6] = s1 / p[7] - s2 / p[7]
    ds[7] = s2 / (p[8] * p[7]) - p[9] * i
    ds[8] = a[1] - z1 / p[16]
    ds[9] = z1 / p[16] - z2 / p[16]
    ds[10] = -p[17] * (n - p[21]) + z2 / (p[18] * p[16])
    ds[11] = -p[19] * y + p[19] * p[20] * (n - p[21])


@njit(cache=True)
def _meal(t, p):
    return p[4] * p[5] / (p[6] * p[6]) * t * np.exp(-t / p[6])


@njit(cache=True)
def dynamics(s, a, t, p):
    """Plant dynamics with hard seams at G=81 (F01c) and G=162 (F_R)."""
    ds = np.empty(12)
    _fill_common(ds, s, a, p)
    g = 18.0 * s[0] / p[0]
    f01c = p[2] if g >= 81.0 else p[2] * g / 81.0
    fr_raw = 0.003 * (g / 18.0 - 9.0) * p[0]
    fr = fr_raw if fr_raw > 0.0 else 0.0
    ds[0] = (-f01c - s[2] * s[0] + p[1] * s[1] - fr
             + (1.0 - s[4]) * p[3] + p[22] * _meal(t, p) + s[11] * s[0])
    return ds


@njit(cache=True)
def dynamics_smooth(s, a, t, p):
    """Planning variant: both seams blended by softplus of width p[23]."""
    ds = np.empty(12)
    _fill_common(ds, s, a, p)
    g = 18.0 * s[0] / p[0]
    w = p[23]
    # min(g, 81) = g - max(0, g-81); F_R slope in g is 0.003*V_G/18
    f01c = p[2] * (g - w * softplus((g - 81.0) / w)) / 81.0
    fr = (0.003 * p[0] / 18.0) * w * softplus((g - 162.0) / w)
    ds[0] = (-f01c - s[2] * s[0] + p[1] * s[1] - fr
             + (1.0 - s[4]) * p[3] + p[22] * _meal(t, p) + s[11] * s[0])
    return ds


@njit(cache=True)
def jacobian_smooth(s, a, t, p):
    js = np.zeros((12, 12))
    ja = np.zeros((12, 2))
    q1, q2 = s[0], s[1]
    g = 18.0 * q1 / p[0]
    dg_dq1 = 18.0 / p[0]
    w = p[23]
    df01c_dg = p[2] * (1.0 - sigmoid((g - 81.0) / w)) / 81.0
    dfr_dg = (0.003 * p[0] / 18.0) * sigmoid((g - 162.0) / w)
    js[0, 0] = -(df01c_dg + dfr_dg) * dg_dq1 - s[2] + s[11]
    js[0, 1] = p[1]
    js[0, 2] = -q1
    js[0, 4] = -p[3]
    js[0, 11] = q1

    js[1, 0] = s[2]
    js[1, 1] = -(p[1] + s[3])
    js[1, 2] = q1
    js[1, 3] = -q2

    js[2, 2] = -p[10]
    js[2, 7] = p[13]
    js[3, 3] = -p[11]
    js[3, 7] = p[14]
    js[4, 4] = -p[12]
    js[4, 7] = p[15]

    js[5, 5] = -1.0 / p[7]
    js[6, 5] = 1.0 / p[7]
    js[6, 6] = -1.0 / p[7]
    js[7, 6] = 1.0 / (p[8] * p[7])
    js[7, 7] = -p[9]

    js[8, 8] = -1.0 / p[16]
    js[9, 8] = 1.0 / p[16]
    js[9, 9] = -1.0 / p[16]
    js[10, 9] = 1.0 / (p[18] * p[16])
    js[10, 10] = -p[17]
    js[11, 10] = p[19] * p[20]
    js[11, 11] = -p[19]

    ja[5, 0] = 1.0
    ja[8, 1] = 1.0
    return js, ja


@njit(cache=True)
def stage_cost(s, cp):
    # 10x the glucose risk on G = 18*Q1/V_G, linear below the low-G guard
    g = 18.0 * s[0] / cp[0]
    if g < 1.5:
        return 10.0 * (_risk(1.5) + _risk_grad(1.5) * (g - 1.5))
    return 10.0 * _risk(g)


@njit(cache=True)
def stage_cost_grad(s, cp):
    grad = np.zeros(s.size)
    g = 18.0 * s[0] / cp[0]
    slope = _risk_grad(1.5) if g < 1.5 else _risk_grad(g)
    grad[0] = 10.0 * slope * 18.0 / cp[0]
    return grad


def cost_params(params):
    return np.array([params["V_G"]])


def safety_spec(params):
    # the monitored quantity G = (18/V_G) * Q1 is linear in the state
    w = np.zeros((1, 12))
    w[0, 0] = 18.0 / params["V_G"]
    return SafetySpec(w, SAFE_LO, SAFE_HI, labels=["G"])


def glucose_level(params, state):
    return 18.0 * state[0] / params["V_G"]


def initial_state(params):
    """Zero-action steady state: everything rests except the G balance.

    With a_I = a_N = 0 and no meal, all insulin/glucagon compartments decay
    to zero (N to its basal), leaving F01c(G) + F_R(G) = EGP0 for G. That
    scalar equation is solved by bisection and the full residual verified.
    """
    from scipy.optimize import brentq

    f01, egp0, vg = params["F01"], params["EGP0"], params["V_G"]

    def balance(g):
        f01c = f01 if g >= 81.0 else f01 * g / 81.0
        fr = max(0.0, 0.003 * (g / 18.0 - 9.0) * vg)
        return f01c + fr - egp0

    if balance(1e-6) > 0 or balance(5000.0) < 0:
        raise ConfigError("no zero-action glucose equilibrium for these params")
    g0 = brentq(balance, 1e-6, 5000.0, xtol=1e-13)
    state = np.zeros(12)
    state[0] = g0 * vg / 18.0
    state[10] = params["N_b"]
    # the meal term vanishes at t=0, so the raw RHS is the full residual
    resid = dynamics(state, np.zeros(2), 0.0, pack(params))
    if np.max(np.abs(resid)) > 1e-10:
        raise ConfigError(f"steady-state residual too large: {np.max(np.abs(resid)):.2e}")
    return state


class BiGlucoseEnv(Env):
    name = "biglucose"
    state_names = STATE_NAMES
    obs_names = OBS_NAMES
    action_names = ACTION_NAMES

    def __init__(self, params, episode_len=EPISODE_LEN, substeps=10):
        super().__init__(params, episode_len, substeps)
        self._p = pack(self.params)
        self._prev_g = None

    def _action_space(self):
        return ActionSpace(ACTION_LO, ACTION_HI)

    def _safety_spec(self):
        return safety_spec(self.params)

    def _obs_scaler(self):
        return ObsScaler(OBS_CENTER, OBS_HALF)

    def _initial_state(self):
        self._prev_g = None
        return initial_state(self.params)

    def _dynamics(self, s, a, t):
        return dynamics(s, a, t, self._p)

    def _reward(self, state, in_bounds):
        return magni_risk(glucose_level(self.params, state), scale=REWARD_SCALE)

    def _penalty_floor(self):
        return PENALTY

    def _observe(self):
        g = glucose_level(self.params, self.state)
        dg = 0.0 if self._prev_g is None else g - self._prev_g
        self._prev_g = g
        return np.array([g, dg, self.t])

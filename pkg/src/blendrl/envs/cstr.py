"""Continuous stirred tank reactor: exothermic A->B->C with side reaction.

States (C_A, C_B, T_R, T_K): educt and product concentrations (mol/L),
reactor and jacket temperatures (degC). Actions: feed dilution rate a_F
(1/h) and jacket heat flow a_Q (kJ/h, cooling only). Fully observed.
The alpha/beta factors scale the K3 and K1 rate constants; the estimated
model has both at 1.
"""

import numpy as np
from numba import njit

from ..errors import ConfigError
from .base import ActionSpace, Env, ObsScaler, SafetySpec

FIELDS = ("k0_ab", "k0_bc", "k0_ad", "R_gas", "E_A_ab", "E_A_bc", "E_A_ad",
          "H_R_ab", "H_R_bc", "H_R_ad", "rho", "C_p", "C_pk", "A_R", "V_R",
          "m_k", "T_in", "K_w", "C_A0", "alpha", "beta", "dt")

STATE_NAMES = ("C_A", "C_B", "T_R", "T_K")
OBS_NAMES = STATE_NAMES
ACTION_NAMES = ("a_F", "a_Q")

ACTION_LO = (5.0, -8500.0)
ACTION_HI = (100.0, 0.0)
SAFE_LO = (0.1, 0.1, 50.0, 50.0)
SAFE_HI = (2.0, 2.0, 200.0, 150.0)
OBS_CENTER = (1.5, 1.25, 125.0, 100.0)
OBS_HALF = (1.5, 1.25, 85.0, 60.0)
EPISODE_LEN = 100
MPC_HORIZON = 20

PENALTY = -1e4

# operating point pins for the steady-state solve; the product target C_B=0.5
# is given, the reactor temperature pin resolves the remaining freedom
INIT_C_B = 0.5
INIT_T_R = 134.14

# packed order:
#  0 k0_ab  1 k0_bc  2 k0_ad  3 E_A_ab  4 E_A_bc  5 H_R_ab  6 H_R_bc
#  7 H_R_ad 8 rho    9 C_p   10 C_pk   11 A_R    12 V_R    13 m_k
# 14 T_in  15 K_w   16 C_A0  17 alpha  18 beta
def pack(params):
    return np.array([
        params["k0_ab"], params["k0_bc"], params["k0_ad"], params["E_A_ab"],
        params["E_A_bc"], params["H_R_ab"], params["H_R_bc"], params["H_R_ad"],
        params["rho"], params["C_p"], params["C_pk"], params["A_R"],
        params["V_R"], params["m_k"], params["T_in"], params["K_w"],
        params["C_A0"], params["alpha"], params["beta"],
    ], dtype=np.float64)


@njit(cache=True)
def _rates(t_r, p):
    # K3 reuses E_A_bc (as printed in the model definition); E_A_ad is unused
    t_abs = t_r + 273.15
    k1 = p[18] * p[0] * np.exp(-p[3] / t_abs)
    k2 = p[1] * np.exp(-p[4] / t_abs)
    k3 = p[2] * np.exp(-p[17] * p[4] / t_abs)
    return k1, k2, k3


@njit(cache=True)
def dynamics(s, a, t, p):
    c_a, c_b, t_r, t_k = s[0], s[1], s[2], s[3]
    a_f, a_q = a[0], a[1]
    k1, k2, k3 = _rates(t_r, p)
    ds = np.empty(4)
    ds[0] = a_f * (p[16] - c_a) - k1 * c_a - k3 * c_a * c_a
    ds[1] = -a_f * c_b + k1 * c_a - k2 * c_b
    ds[2] = ((k1 * c_a * p[5] + k2 * c_b * p[6] + k3 * c_a * c_a * p[7])
             / (-p[8] * p[9])
             + p[15] * p[11] * (t_k - t_r) / (p[8] * p[9] * p[12])
             + a_f * (p[14] - t_r))
    ds[3] = (a_q + p[15] * p[11] * (t_r - t_k)) / (p[13] * p[10])
    return ds


@njit(cache=True)
def jacobian(s, a, t, p):
    c_a, c_b, t_r, t_k = s[0], s[1], s[2], s[3]
    a_f = a[0]
    t_abs = t_r + 273.15
    k1, k2, k3 = _rates(t_r, p)
    dk1 = k1 * p[3] / (t_abs * t_abs)
    dk2 = k2 * p[4] / (t_abs * t_abs)
    dk3 = k3 * p[17] * p[4] / (t_abs * t_abs)
    neg_rc = -p[8] * p[9]
    cool = p[15] * p[11] / (p[8] * p[9] * p[12])
    jack = p[15] * p[11] / (p[13] * p[10])

    js = np.zeros((4, 4))
    ja = np.zeros((4, 2))
    js[0, 0] = -a_f - k1 - 2.0 * k3 * c_a
    js[0, 2] = -dk1 * c_a - dk3 * c_a * c_a
    js[1, 0] = k1
    js[1, 1] = -a_f - k2
    js[1, 2] = dk1 * c_a - dk2 * c_b
    js[2, 0] = (k1 * p[5] + 2.0 * k3 * c_a * p[7]) / neg_rc
    js[2, 1] = k2 * p[6] / neg_rc
    js[2, 2] = ((dk1 * c_a * p[5] + dk2 * c_b * p[6] + dk3 * c_a * c_a * p[7])
                / neg_rc - cool - a_f)
    js[2, 3] = cool
    js[3, 2] = jack
    js[3, 3] = -jack

    ja[0, 0] = p[16] - c_a
    ja[1, 0] = -c_b
    ja[2, 0] = p[14] - t_r
    ja[3, 1] = 1.0 / (p[13] * p[10])
    return js, ja


@njit(cache=True)
def stage_cost(s, cp):
    d = s[1] - 0.6
    return 100.0 * d * d


@njit(cache=True)
def stage_cost_grad(s, cp):
    g = np.zeros(s.size)
    g[1] = 200.0 * (s[1] - 0.6)
    return g


def cost_params(params):
    return np.zeros(0)


def safety_spec():
    return SafetySpec(np.eye(4), SAFE_LO, SAFE_HI, labels=list(STATE_NAMES))


def reward(state, in_bounds):
    base = -100.0 * (state[1] - 0.6) ** 2
    return base if in_bounds else base - 1e4


def steady_state(params, c_b=INIT_C_B, t_r=INIT_T_R):
    """Solve the operating point with C_B and T_R pinned.

    From the C_B balance the feed rate is a_F = (K1 C_A - K2 C_B)/C_B; that
    substituted into the C_A balance leaves a quadratic in C_A with (at most)
    two positive roots. The high-conversion branch needs a feed rate far
    outside the action box, so the operating point is the admissible root.
    The temperature rows then give T_K and the basal heat flow in closed
    form. Returns (state, basal_action).
    """
    p = pack(params)
    k1, k2, k3 = [float(v) for v in _rates(t_r, p)]
    c_a0 = params["C_A0"]

    # a_F(C_A0 - C_A) - K1 C_A - K3 C_A^2 = 0 with a_F = (K1 C_A - K2 C_B)/C_B
    quad_a = -(k1 / c_b + k3)
    quad_b = k1 * c_a0 / c_b + k2 - k1
    quad_c = -k2 * c_a0
    disc = quad_b * quad_b - 4.0 * quad_a * quad_c
    if disc <= 0:
        raise ConfigError("no feasible reactor operating point for these params")
    roots = sorted(((-quad_b + s * np.sqrt(disc)) / (2.0 * quad_a) for s in (1.0, -1.0)))

    box = ActionSpace(ACTION_LO, ACTION_HI)
    cool = params["K_w"] * params["A_R"] / (params["rho"] * params["C_p"] * params["V_R"])
    for c_a in roots:
        if not 0.0 < c_a < c_a0:
            continue
        a_f = (k1 * c_a - k2 * c_b) / c_b
        heat = (k1 * c_a * params["H_R_ab"] + k2 * c_b * params["H_R_bc"]
                + k3 * c_a ** 2 * params["H_R_ad"]) / (-params["rho"] * params["C_p"])
        t_k = t_r - (heat + a_f * (params["T_in"] - t_r)) / cool
        a_q = -params["K_w"] * params["A_R"] * (t_r - t_k)
        state = np.array([c_a, c_b, t_r, t_k])
        basal = np.array([a_f, a_q])
        if not box.contains(basal) or safety_spec().violated(state):
            continue
        resid = dynamics(state, basal, 0.0, p)
        if np.max(np.abs(resid)) > 1e-8:
            raise ConfigError(f"reactor steady-state residual {np.max(np.abs(resid)):.2e}")
        return state, basal
    raise ConfigError("no reactor operating point with admissible basal action")


class CstrEnv(Env):
    name = "cstr"
    state_names = STATE_NAMES
    obs_names = OBS_NAMES
    action_names = ACTION_NAMES

    def __init__(self, params, episode_len=EPISODE_LEN, substeps=10):
        super().__init__(params, episode_len, substeps)
        self._p = pack(self.params)
        state, basal = steady_state(self.params)
        self._init = state
        self.basal_action = basal

    def _action_space(self):
        return ActionSpace(ACTION_LO, ACTION_HI)

    def _safety_spec(self):
        return safety_spec()

    def _obs_scaler(self):
        return ObsScaler(OBS_CENTER, OBS_HALF)

    def _initial_state(self):
        return self._init.copy()

    def _dynamics(self, s, a, t):
        return dynamics(s, a, t, self._p)

    def _reward(self, state, in_bounds):
        return reward(state, in_bounds)

    def _penalty_floor(self):
        return PENALTY

"""Blood glucose plant: 3-state minimal model with a decaying meal input.

States (G, X, I): glucose level (mg/dL), remote insulin effect (1/min),
plasma insulin (uU/mL). Action: insulin injection rate a_I >= 0. Only G is
observable; the observation is (G, dG, t) with dG the successive difference.
"""

import numpy as np
from numba import njit

from .base import ActionSpace, Env, ObsScaler, SafetySpec

FIELDS = ("G_b", "I_b", "n", "p1", "p2", "p3", "D0", "dt")

STATE_NAMES = ("G", "X", "I")
OBS_NAMES = ("G", "dG", "t")
ACTION_NAMES = ("a_I",)

ACTION_LO = (0.0,)
ACTION_HI = (100.0,)
SAFE_LO = (10.0,)
SAFE_HI = (1000.0,)
OBS_CENTER = (505.0, 0.0, 500.0)
OBS_HALF = (495.0, 100.0, 500.0)
EPISODE_LEN = 100
MPC_HORIZON = 100

PENALTY = -1e5

# packed order: p1 p2 p3 n G_b I_b D0
def pack(params):
    return np.array([params["p1"], params["p2"], params["p3"], params["n"],
                     params["G_b"], params["I_b"], params["D0"]], dtype=np.float64)


@njit(cache=True)
def dynamics(s, a, t, p):
    G, X, I = s[0], s[1], s[2]
    ds = np.empty(3)
    ds[0] = -p[0] * (G - p[4]) - G * X + p[6] * np.exp(-0.01 * t)
    ds[1] = -p[1] * X + p[2] * (I - p[5])
    ds[2] = -p[3] * (I - p[5]) + a[0]
    return ds


@njit(cache=True)
def jacobian(s, a, t, p):
    js = np.zeros((3, 3))
    ja = np.zeros((3, 1))
    js[0, 0] = -p[0] - s[1]
    js[0, 1] = -s[0]
    js[1, 1] = -p[1]
    js[1, 2] = p[2]
    js[2, 2] = -p[3]
    ja[2, 0] = 1.0
    return js, ja


@njit(cache=True)
def _risk(G):
    d = 3.35506 * (np.log(G) ** 0.8353 - 3.7932)
    return d * d


@njit(cache=True)
def _risk_grad(G):
    lg = np.log(G)
    d = 3.35506 * (lg ** 0.8353 - 3.7932)
    return 2.0 * d * 3.35506 * 0.8353 * lg ** (-0.1647) / G


def magni_risk(G, scale=1.0):
    """Blood glucose reward: asymmetric risk, -1e5 outside [10, 1000].

    The in-range branch is -scale * (3.35506*((ln G)^0.8353 - 3.7932))^2,
    harsher for low G (hypoglycemia) than high. scale=10 is the two-action
    plant's variant.
    """
    if not np.isfinite(G) or G < 10.0 or G > 1000.0:
        return PENALTY
    return -scale * float(_risk(G))


# planner stage cost: the smooth in-range risk only; safety is handled by
# constraints, and below the guard the cost continues linearly so candidate
# rollouts stay finite
_COST_GUARD = 1.5


@njit(cache=True)
def stage_cost(s, cp):
    G = s[0]
    if G < _COST_GUARD:
        return _risk(_COST_GUARD) + _risk_grad(_COST_GUARD) * (G - _COST_GUARD)
    return _risk(G)


@njit(cache=True)
def stage_cost_grad(s, cp):
    g = np.zeros(s.size)
    G = s[0]
    if G < _COST_GUARD:
        g[0] = _risk_grad(_COST_GUARD)
    else:
        g[0] = _risk_grad(G)
    return g


def cost_params(params):
    return np.zeros(0)


def safety_spec():
    w = np.zeros((1, 3))
    w[0, 0] = 1.0
    return SafetySpec(w, SAFE_LO, SAFE_HI, labels=["G"])


def initial_state(params):
    # steady state of the ODEs with a_I = 0 and no meal: X=0, I=I_b, G=G_b
    return np.array([params["G_b"], 0.0, params["I_b"]])


class GlucoseEnv(Env):
    name = "glucose"
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
        return safety_spec()

    def _obs_scaler(self):
        return ObsScaler(OBS_CENTER, OBS_HALF)

    def _initial_state(self):
        self._prev_g = None
        return initial_state(self.params)

    def _dynamics(self, s, a, t):
        return dynamics(s, a, t, self._p)

    def _reward(self, state, in_bounds):
        return magni_risk(state[0])

    def _penalty_floor(self):
        return PENALTY

    def _observe(self):
        g = self.state[0]
        dg = 0.0 if self._prev_g is None else g - self._prev_g
        self._prev_g = g
        return np.array([g, dg, self.t])

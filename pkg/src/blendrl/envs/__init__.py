"""Plant registry: preset loading, parameter perturbation, env and model factories.

Each plant ships two parameter presets: "estimated" (what the planner
believes) and "actual" (what the simulation steps). Presets are JSON files
validated against the plant's exact field list on load.
"""

import json
from importlib import resources

import numpy as np

from ..errors import ConfigError
from .base import ActionSpace, Env, ObsScaler, SafetySpec
from . import biglucose, cartpole, cstr, glucose

PLANT_MODULES = {
    "glucose": glucose,
    "biglucose": biglucose,
    "cstr": cstr,
    "cartpole": cartpole,
}

PLANTS = tuple(PLANT_MODULES)
ROLES = ("estimated", "actual")

ENV_CLASSES = {
    "glucose": glucose.GlucoseEnv,
    "biglucose": biglucose.BiGlucoseEnv,
    "cstr": cstr.CstrEnv,
    "cartpole": cartpole.CartPoleEnv,
}

# fields that must be strictly positive for the plant to make physical sense
POSITIVE_FIELDS = {
    "glucose": ("G_b", "I_b", "n", "dt"),
    "biglucose": ("V_G", "V_I", "V_N", "t_maxG", "t_maxI", "t_maxN",
                  "k_e", "k_N", "M_g", "BW", "dt"),
    "cstr": ("k0_ab", "k0_bc", "k0_ad", "rho", "C_p", "C_pk", "A_R", "V_R",
             "m_k", "K_w", "C_A0", "alpha", "beta", "dt"),
    "cartpole": ("g", "m_c", "m_p", "l", "dt"),
}


def _check_plant(plant):
    if plant not in PLANT_MODULES:
        raise ConfigError(f"unknown plant {plant!r}, expected one of {PLANTS}")


def validate_params(plant, params):
    """Schema check: exact field set, all real numbers, positivity rules."""
    _check_plant(plant)
    fields = PLANT_MODULES[plant].FIELDS
    got = set(params)
    if got != set(fields):
        missing = sorted(set(fields) - got)
        extra = sorted(got - set(fields))
        raise ConfigError(
            f"{plant} params mismatch: missing {missing}, unexpected {extra}")
    out = {}
    for key in fields:
        value = params[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{plant}.{key} must be a number, got {value!r}")
        value = float(value)
        if not np.isfinite(value):
            raise ConfigError(f"{plant}.{key} must be finite, got {value!r}")
        out[key] = value
    for key in POSITIVE_FIELDS[plant]:
        if out[key] <= 0:
            raise ConfigError(f"{plant}.{key} must be positive, got {out[key]}")
    return out


def load_params(plant, role):
    """Load a shipped preset from its JSON file."""
    _check_plant(plant)
    if role not in ROLES:
        raise ConfigError(f"unknown role {role!r}, expected one of {ROLES}")
    ref = resources.files(__package__) / "presets" / f"{plant}_{role}.json"
    try:
        doc = json.loads(ref.read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing preset file for {plant}/{role}")
    for key in ("plant", "role", "params"):
        if key not in doc:
            raise ConfigError(f"preset {plant}/{role} missing top-level key {key!r}")
    if doc["plant"] != plant or doc["role"] != role:
        raise ConfigError(f"preset file mislabeled: {doc['plant']}/{doc['role']}")
    return validate_params(plant, doc["params"])


def perturb_params(plant, base, multipliers):
    """Copy of base params with named fields scaled: value <- value * mult."""
    _check_plant(plant)
    fields = PLANT_MODULES[plant].FIELDS
    out = dict(base)
    for key, mult in multipliers.items():
        if key not in fields:
            raise ConfigError(f"{plant} has no parameter {key!r}")
        out[key] = out[key] * float(mult)
    return validate_params(plant, out)


def make_env(plant, params, episode_len=None, substeps=10):
    _check_plant(plant)
    params = validate_params(plant, params)
    cls = ENV_CLASSES[plant]
    mod = PLANT_MODULES[plant]
    if episode_len is None:
        episode_len = mod.EPISODE_LEN
    return cls(params, episode_len=episode_len, substeps=substeps)


class PlantModel:
    """Planner-facing bundle: smooth dynamics, costs, constraints, spaces.

    For partially observed plants the planner keeps its own model state;
    `init_state` builds it from the first observation and `override_state`
    writes the newly observed quantity back into a propagated model state.
    """

    def __init__(self, plant, params, seam_width=1e-2, c_conv=None):
        _check_plant(plant)
        self.plant = plant
        self.params = validate_params(plant, params)
        mod = PLANT_MODULES[plant]
        self.dt = self.params["dt"]
        self.horizon = mod.MPC_HORIZON
        self.action_space = ActionSpace(mod.ACTION_LO, mod.ACTION_HI)
        self.cost = mod.stage_cost
        self.cost_grad = mod.stage_cost_grad
        self.cp = mod.cost_params(self.params)
        if plant == "glucose":
            self.f = glucose.dynamics
            self.jac = glucose.jacobian
            self.p = glucose.pack(self.params)
            spec = glucose.safety_spec()
        elif plant == "biglucose":
            self.f = biglucose.dynamics_smooth
            self.jac = biglucose.jacobian_smooth
            self.p = biglucose.pack(self.params, c_conv=c_conv, seam_width=seam_width)
            spec = biglucose.safety_spec(self.params)
        elif plant == "cstr":
            self.f = cstr.dynamics
            self.jac = cstr.jacobian
            self.p = cstr.pack(self.params)
            spec = cstr.safety_spec()
        else:
            self.f = cartpole.dynamics
            self.jac = cartpole.jacobian
            self.p = cartpole.pack(self.params)
            spec = cartpole.safety_spec()
        self.safety = spec
        self.state_dim = spec.weights.shape[1]
        self.fully_observed = plant in ("cstr", "cartpole")

    def init_state(self, obs):
        """Model state consistent with the first observation of an episode."""
        if self.fully_observed:
            return np.asarray(obs, dtype=np.float64).copy()
        if self.plant == "glucose":
            # unobserved X and I rest at their zero-action equilibrium
            return np.array([obs[0], 0.0, self.params["I_b"]])
        state = biglucose.initial_state(self.params)
        state[0] = obs[0] * self.params["V_G"] / 18.0
        return state

    def override_state(self, state, obs):
        """Write the observed quantity into a propagated model state."""
        if self.fully_observed:
            return np.asarray(obs, dtype=np.float64).copy()
        state = np.asarray(state, dtype=np.float64).copy()
        if self.plant == "glucose":
            state[0] = obs[0]
        else:
            state[0] = obs[0] * self.params["V_G"] / 18.0
        return state

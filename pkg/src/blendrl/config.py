"""Run configuration: plant choice, agent hyperparameters, ablation switches.

One RunConfig drives one experiment (all its seeds). The planner always uses
the shipped "estimated" preset; the plant that is actually stepped uses the
"actual" preset, or the estimated preset scaled by `param_multipliers` when
sweeping parameter discrepancies. Values here are the defaults used by every
experiment; anything unspecified by the source material is a recorded choice.
"""

import dataclasses
import json

from .envs import PLANTS, load_params, perturb_params
from .errors import ConfigError
from .nets import json_config_hash

MODES = ("rlar", "mpc", "sac")

# planning-time integration substeps, inner iteration caps, and inner
# gradient tolerances, tuned per plant for desk-scale runtime at closed-loop
# quality indistinguishable for the safety record
MPC_PLANNING = {
    "glucose": {"substeps": 5, "inner_maxiter": 150, "inner_gtol": 1e-5},
    "biglucose": {"substeps": 10, "inner_maxiter": 150, "inner_gtol": 1e-5},
    "cstr": {"substeps": 10, "inner_maxiter": 150, "inner_gtol": 1e-5},
    "cartpole": {"substeps": 2, "inner_maxiter": 120, "inner_gtol": 1e-4},
}


@dataclasses.dataclass
class RunConfig:
    plant: str = "glucose"
    mode: str = "rlar"
    episodes: int = 20
    episode_len: int = 0          # 0 = plant default
    seeds: tuple = (0, 1, 2, 3, 4)
    actual_role: str = "actual"   # preset stepped by the simulation
    param_multipliers: dict = dataclasses.field(default_factory=dict)

    # learner
    gamma: float = 0.99
    tau: float = 0.005
    lr_q: float = 1e-3
    lr_policy: float = 3e-4
    lr_alpha: float = 1e-3
    lr_focus: float = 5e-6
    batch_size: int = 256
    start_learning: int = 256
    policy_frequency: int = 2
    target_frequency: int = 1
    alpha: object = "auto"
    buffer_capacity: int = 100000
    hidden_q: tuple = (256, 256)
    hidden_policy: tuple = (256, 256)
    hidden_focus: tuple = (128, 32)
    pretrain_threshold: float = 0.999

    # planner
    mpc_horizon: int = 0          # 0 = plant default
    mpc_substeps: int = 0         # 0 = tuned per-plant default
    inner_maxiter: int = 0        # 0 = tuned per-plant default
    inner_gtol: float = 0.0       # 0 = tuned per-plant default
    margin_frac: float = 0.02
    al_tol: float = 1e-4
    rho0: float = 1e4
    rho_growth: float = 30.0
    max_outer: int = 12

    # simulation
    env_substeps: int = 10

    # ablations
    scalar_beta: bool = False
    disable_regularizer: bool = False
    disable_learning: bool = False

    def __post_init__(self):
        if self.plant not in PLANTS:
            raise ConfigError(f"unknown plant {self.plant!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.actual_role not in ("estimated", "actual"):
            raise ConfigError(f"bad actual_role {self.actual_role!r}")
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        self.hidden_q = tuple(int(h) for h in self.hidden_q)
        self.hidden_policy = tuple(int(h) for h in self.hidden_policy)
        self.hidden_focus = tuple(int(h) for h in self.hidden_focus)
        if self.mpc_substeps == 0:
            self.mpc_substeps = MPC_PLANNING[self.plant]["substeps"]
        if self.inner_maxiter == 0:
            self.inner_maxiter = MPC_PLANNING[self.plant]["inner_maxiter"]
        if self.inner_gtol == 0.0:
            self.inner_gtol = MPC_PLANNING[self.plant]["inner_gtol"]

    # plumbing ----------------------------------------------------------------
    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ("seeds", "hidden_q", "hidden_policy", "hidden_focus"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(doc) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {extra}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}")
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def config_hash(self):
        return json_config_hash(self.to_dict())

    # derived -----------------------------------------------------------------
    def estimated_params(self):
        return load_params(self.plant, "estimated")

    def actual_params(self):
        base = load_params(self.plant, self.actual_role)
        if self.param_multipliers:
            return perturb_params(self.plant, base, self.param_multipliers)
        return base

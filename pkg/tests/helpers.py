"""Shared plant test fixtures: state sampling boxes and factory shortcuts."""

import numpy as np

from blendrl import envs

# sampling boxes for random-but-physical plant states
STATE_RANGES = {
    "glucose": (np.array([20.0, -0.05, 0.0]), np.array([600.0, 0.1, 300.0])),
    "biglucose": (
        np.concatenate([[0.2, 0.0], np.zeros(8), [0.0, 10.0]]),
        np.concatenate([[4.0, 2.0], np.full(8, 5.0), [200.0, 60.0]]),
    ),
    "cstr": (np.array([0.2, 0.2, 100.0, 90.0]), np.array([3.0, 3.0, 150.0, 140.0])),
    "cartpole": (np.array([-2.0, -2.0, -0.5, -2.0]), np.array([2.0, 2.0, 0.5, 2.0])),
}


def random_state(plant, rng):
    lo, hi = STATE_RANGES[plant]
    return lo + (hi - lo) * rng.uniform(size=lo.size)


def random_action(model, rng):
    box = model.action_space
    return box.lo + (box.hi - box.lo) * rng.uniform(size=box.dim)


def make_model(plant, role="estimated"):
    return envs.PlantModel(plant, envs.load_params(plant, role))

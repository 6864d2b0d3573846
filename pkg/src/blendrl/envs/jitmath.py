"""Small jitted scalar helpers shared by the plant models."""

from numba import njit
import numpy as np


@njit(cache=True, inline="always")
def softplus(z):
    # overflow-stable log(1 + e^z)
    if z > 30.0:
        return z
    if z < -30.0:
        return np.exp(z)
    return np.log1p(np.exp(z))


@njit(cache=True, inline="always")
def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)

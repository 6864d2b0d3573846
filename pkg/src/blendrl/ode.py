"""Fixed-step RK4 integration with an exact reverse-mode sweep.

``ode_step`` advances a controlled ODE ds/dt = f(s, a, t) over one control
interval ``dt`` using ``substeps`` internal RK4 steps (action held constant).
``ode_step_tape``/``ode_step_vjp`` give the vector-Jacobian product of the
step, which is what single-shooting MPC needs: gradients of a scalar in the
final state with respect to the initial state and the action.
"""

import numpy as np

from .errors import ConfigError, NumericalFault


class OdeStepper:
    """Integration settings: control interval dt split into RK4 substeps."""

    def __init__(self, dt, substeps=10):
        if not dt > 0.0:
            raise ConfigError(f"dt must be positive, got {dt}")
        substeps = int(substeps)
        if substeps < 1:
            raise ConfigError(f"substeps must be >= 1, got {substeps}")
        self.dt = float(dt)
        self.substeps = substeps

    @property
    def h(self):
        return self.dt / self.substeps


def _rk4_substep(f, s, a, t, h):
    k1 = f(s, a, t)
    x2 = s + 0.5 * h * k1
    k2 = f(x2, a, t + 0.5 * h)
    x3 = s + 0.5 * h * k2
    k3 = f(x3, a, t + 0.5 * h)
    x4 = s + h * k3
    k4 = f(x4, a, t + h)
    s_next = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return s_next, (s, x2, x3, x4)


def ode_step(stepper, f, s, a, t):
    """Advance s by one control interval under constant action a.

    Raises NumericalFault (carrying the offending state) if the integration
    leaves the finite range; environments convert that into a failure.
    """
    s = np.asarray(s, dtype=np.float64).copy()
    a = np.asarray(a, dtype=np.float64)
    h = stepper.h
    tk = float(t)
    for _ in range(stepper.substeps):
        s, _ = _rk4_substep(f, s, a, tk, h)
        if not np.all(np.isfinite(s)):
            fault = NumericalFault(f"non-finite state {s} at t={tk + h}")
            fault.state = s
            raise fault
        tk += h
    return s


def ode_step_tape(stepper, f, s, a, t):
    """Like ode_step but also returns the tape of RK4 stage states."""
    s = np.asarray(s, dtype=np.float64).copy()
    a = np.asarray(a, dtype=np.float64)
    h = stepper.h
    tk = float(t)
    stages = []
    for _ in range(stepper.substeps):
        s, stage_states = _rk4_substep(f, s, a, tk, h)
        stages.append((tk, stage_states))
        tk += h
    return s, (h, a, stages)


def ode_step_vjp(f_jac, tape, bar_next):
    """Pull a cotangent on the step output back to (bar_s, bar_a).

    ``f_jac(s, a, t) -> (Js, Ja)`` with Js[i, j] = d f_i / d s_j. The tape
    comes from ode_step_tape; Jacobians are re-evaluated at the recorded
    stage states, which is cheaper than storing them.
    """
    h, a, stages = tape
    g = np.asarray(bar_next, dtype=np.float64).copy()
    bar_a = np.zeros_like(np.asarray(a, dtype=np.float64))
    for tk, (x1, x2, x3, x4) in reversed(stages):
        bar_k = [None] * 4
        bar_k[0] = (h / 6.0) * g
        bar_k[1] = (h / 3.0) * g
        bar_k[2] = (h / 3.0) * g
        bar_k[3] = (h / 6.0) * g
        bar_s = g.copy()

        js, ja = f_jac(x4, a, tk + h)
        bar_x = js.T @ bar_k[3]
        bar_a += ja.T @ bar_k[3]
        bar_s += bar_x
        bar_k[2] = bar_k[2] + h * bar_x

        js, ja = f_jac(x3, a, tk + 0.5 * h)
        bar_x = js.T @ bar_k[2]
        bar_a += ja.T @ bar_k[2]
        bar_s += bar_x
        bar_k[1] = bar_k[1] + 0.5 * h * bar_x

        js, ja = f_jac(x2, a, tk + 0.5 * h)
        bar_x = js.T @ bar_k[1]
        bar_a += ja.T @ bar_k[1]
        bar_s += bar_x
        bar_k[0] = bar_k[0] + 0.5 * h * bar_x

        js, ja = f_jac(x1, a, tk)
        bar_x = js.T @ bar_k[0]
        bar_a += ja.T @ bar_k[0]
        bar_s += bar_x

        g = bar_s
    return g, bar_a

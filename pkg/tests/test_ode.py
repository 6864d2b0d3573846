"""RK4 stepper: analytic one-step values, order-4 convergence, VJP vs FD."""

import numpy as np
import pytest

from conftest import assert_grad_close, fd_grad, rel_err
from blendrl.errors import ConfigError
from blendrl.ode import OdeStepper, ode_step, ode_step_tape, ode_step_vjp


def decay(s, a, t):
    return -s


def decay_jac(s, a, t):
    return -np.eye(len(s)), np.zeros((len(s), 0))


def test_single_substep_matches_rk4_polynomial():
    # for xdot = -x one RK4 step multiplies by 1 - h + h^2/2 - h^3/6 + h^4/24
    h = 0.1
    stepper = OdeStepper(dt=h, substeps=1)
    x0 = np.array([2.0])
    x1 = ode_step(stepper, decay, x0, np.zeros(0), 0.0)
    factor = 1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
    assert abs(x1[0] - 2.0 * factor) < 1e-15
    # and is within O(h^5) of the exact exponential
    assert abs(x1[0] - 2.0 * np.exp(-h)) < h**5


def test_order_four_convergence():
    # halving the substep size should shrink global error ~16x
    def f(s, a, t):
        return np.array([np.sin(s[0]) + 0.1 * a[0] * np.cos(t)])

    s0 = np.array([0.7])
    a = np.array([0.5])
    ref = ode_step(OdeStepper(2.0, substeps=4096), f, s0, a, 0.0)
    errs = []
    for m in (4, 8, 16):
        approx = ode_step(OdeStepper(2.0, substeps=m), f, s0, a, 0.0)
        errs.append(abs(approx[0] - ref[0]))
    r1 = errs[0] / errs[1]
    r2 = errs[1] / errs[2]
    assert 8 < r1 < 32 and 8 < r2 < 32


def test_substeps_compose():
    s0 = np.array([1.0, -0.5])
    one = ode_step(OdeStepper(1.0, substeps=4), decay, s0, np.zeros(0), 0.0)
    s = s0
    for i in range(4):
        s = ode_step(OdeStepper(0.25, substeps=1), decay, s, np.zeros(0), 0.25 * i)
    np.testing.assert_allclose(one, s, atol=1e-15)


def test_vjp_linear_system_exact():
    # for linear f = A s + B a the step is linear: s' = M s + N a with
    # M = sum (hA)^k / k! truncated at 4; the VJP must equal M^T w exactly
    rng = np.random.default_rng(0)
    for _ in range(10):
        n, k = 3, 2
        A = rng.standard_normal((n, n)) * 0.3
        B = rng.standard_normal((n, k))

        def f(s, a, t):
            return A @ s + B @ a

        def fjac(s, a, t):
            return A, B

        h = 0.25
        stepper = OdeStepper(h, substeps=1)
        s0 = rng.standard_normal(n)
        a = rng.standard_normal(k)
        _, tape = ode_step_tape(stepper, f, s0, a, 0.0)
        w = rng.standard_normal(n)
        bar_s, bar_a = ode_step_vjp(fjac, tape, w)

        hA = h * A
        M = np.eye(n) + hA + hA @ hA / 2 + hA @ hA @ hA / 6 + hA @ hA @ hA @ hA / 24
        np.testing.assert_allclose(bar_s, M.T @ w, atol=1e-12)


def test_vjp_matches_fd():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 3))
        A = rng.standard_normal((n, n)) * 0.4
        B = rng.standard_normal((n, k)) * 0.5
        c = rng.standard_normal(n) * 0.3

        def f(s, a, t):
            return A @ s + B @ a + c * np.sin(s) + 0.05 * np.cos(t) * np.ones(n)

        def fjac(s, a, t):
            return A + np.diag(c * np.cos(s)), B

        stepper = OdeStepper(float(rng.uniform(0.1, 0.8)), substeps=int(rng.integers(1, 4)))
        s0 = rng.standard_normal(n)
        a0 = rng.standard_normal(k)
        t0 = float(rng.uniform(0, 5))
        w = rng.standard_normal(n)

        s1, tape = ode_step_tape(stepper, f, s0, a0, t0)
        np.testing.assert_allclose(s1, ode_step(stepper, f, s0, a0, t0), atol=1e-15)
        bar_s, bar_a = ode_step_vjp(fjac, tape, w)

        assert_grad_close(bar_s, lambda s: float(w @ ode_step(stepper, f, s, a0, t0)), s0)
        if k > 0:
            assert_grad_close(bar_a, lambda a: float(w @ ode_step(stepper, f, s0, a, t0)), a0)


def test_time_dependence_enters_stages():
    # stage times must be t, t+h/2, t+h/2, t+h; an integrator that froze t
    # would integrate xdot=cos(t) to cos(t0)*dt instead of sin(t0+dt)-sin(t0)
    def f(s, a, t):
        return np.array([np.cos(t)])

    stepper = OdeStepper(0.5, substeps=1)
    t0 = 1.2
    out = ode_step(stepper, f, np.zeros(1), np.zeros(0), t0)
    exact = np.sin(t0 + 0.5) - np.sin(t0)
    assert abs(out[0] - exact) < 1e-5
    assert abs(out[0] - np.cos(t0) * 0.5) > 1e-3


def test_config_errors():
    with pytest.raises(ConfigError):
        OdeStepper(0.0)
    with pytest.raises(ConfigError):
        OdeStepper(1.0, substeps=0)

"""Shared test helpers: finite-difference oracles, tolerances, reporting."""

import numpy as np

# gradient checks: central differences, 1e-5 step, 1e-4 relative error
FD_STEP = 1e-5
FD_RTOL = 1e-4

# pass/fail lines registered by the acceptance tests, echoed after the run
CRITERION_LINES = []


def record_criterion(number, passed, detail):
    line = f"[criterion {number}] {'PASS' if passed else 'FAIL'} - {detail}"
    CRITERION_LINES.append((number, line))
    return passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(CRITERION_LINES):
        terminalreporter.write_line(line)


def fd_grad(f, x, step=FD_STEP):
    """Central-difference gradient of scalar f at flat float64 x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(numeric), 1e-10)
    return np.linalg.norm(analytic - numeric) / denom


def assert_grad_close(analytic, f, x, rtol=FD_RTOL, step=FD_STEP):
    numeric = fd_grad(f, x, step=step)
    err = rel_err(analytic, numeric)
    assert err <= rtol, f"gradient mismatch: rel err {err:.3e} > {rtol}"

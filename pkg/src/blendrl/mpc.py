"""Receding-horizon safety controller on the estimated plant model.

Minimizes the summed stage cost (the negated smooth reward branch) of an
N-step rollout, subject to the plant's safety band on every rollout state and
the action box. Transcription is single shooting: the decision variables are
the action sequence only. Band constraints are handled with an augmented
Lagrangian outer loop; the inner bound-constrained minimization is L-BFGS-B
with analytic gradients obtained by a reverse sweep through the RK4 steps.
The whole rollout (forward pass, cost, constraint terms, backward sweep) is
jit-compiled per plant.
"""

import logging

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .errors import ConfigError, NumericalFault
from .ode import OdeStepper, ode_step

log = logging.getLogger(__name__)

# objective assigned to rollouts that leave floating-point range; scaled by
# how early the blow-up happened so the optimizer backs away from the edge
BLOWUP_OBJ = 1e16


@njit(cache=True)
def rollout_objective(f, jac, cost, cost_grad, s0, actions, t0, dt, substeps,
                      p, cp, w, glo, ghi, lam_lo, lam_hi, rho_rows):
    """Objective, gradient and constraint values of one shooting rollout.

    Returns (al_obj, pure_obj, grad_actions, max_violation, g_lo, g_hi).
    al_obj includes the augmented-Lagrangian constraint terms
    phi(g) = (max(0, lam - rho g)^2 - lam^2) / (2 rho) for each band side;
    pure_obj is the plain summed stage cost. Violations are in raw
    constraint units. A non-finite state aborts the rollout with a large
    objective and zero gradient.
    """
    n_steps = actions.shape[0]
    n = s0.size
    ka = actions.shape[1]
    m = w.shape[0]
    h = dt / substeps
    stages = np.empty((n_steps, substeps, 4, n))
    nodes = np.empty((n_steps + 1, n))
    nodes[0] = s0
    grad = np.zeros((n_steps, ka))
    g_lo = np.zeros((n_steps, m))
    g_hi = np.zeros((n_steps, m))
    pure_obj = 0.0
    penalty = 0.0
    viol = 0.0

    s = s0.copy()
    for step in range(n_steps):
        a = actions[step]
        tb = t0 + step * dt
        for j in range(substeps):
            tj = tb + j * h
            stages[step, j, 0] = s
            k1 = f(s, a, tj, p)
            x2 = s + 0.5 * h * k1
            stages[step, j, 1] = x2
            k2 = f(x2, a, tj + 0.5 * h, p)
            x3 = s + 0.5 * h * k2
            stages[step, j, 2] = x3
            k3 = f(x3, a, tj + 0.5 * h, p)
            x4 = s + h * k3
            stages[step, j, 3] = x4
            k4 = f(x4, a, tj + h, p)
            s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        finite = True
        for i in range(n):
            if not np.isfinite(s[i]):
                finite = False
        if not finite:
            bad = BLOWUP_OBJ * (n_steps - step)
            return bad, bad, np.zeros((n_steps, ka)), BLOWUP_OBJ, g_lo, g_hi
        nodes[step + 1] = s
        pure_obj += cost(s, cp)
        v = w @ s
        for r in range(m):
            g_lo[step, r] = v[r] - glo[r]
            g_hi[step, r] = ghi[r] - v[r]
            if -g_lo[step, r] > viol:
                viol = -g_lo[step, r]
            if -g_hi[step, r] > viol:
                viol = -g_hi[step, r]
            rho = rho_rows[r]
            t_lo = lam_lo[step, r] - rho * g_lo[step, r]
            if t_lo > 0.0:
                penalty += (t_lo * t_lo - lam_lo[step, r] ** 2) / (2.0 * rho)
            else:
                penalty += -(lam_lo[step, r] ** 2) / (2.0 * rho)
            t_hi = lam_hi[step, r] - rho * g_hi[step, r]
            if t_hi > 0.0:
                penalty += (t_hi * t_hi - lam_hi[step, r] ** 2) / (2.0 * rho)
            else:
                penalty += -(lam_hi[step, r] ** 2) / (2.0 * rho)

    bar = np.zeros(n)
    for step in range(n_steps - 1, -1, -1):
        a = actions[step]
        tb = t0 + step * dt
        bar = bar + cost_grad(nodes[step + 1], cp)
        for r in range(m):
            rho = rho_rows[r]
            mu_lo = lam_lo[step, r] - rho * g_lo[step, r]
            if mu_lo > 0.0:
                for i in range(n):
                    bar[i] -= mu_lo * w[r, i]
            mu_hi = lam_hi[step, r] - rho * g_hi[step, r]
            if mu_hi > 0.0:
                for i in range(n):
                    bar[i] += mu_hi * w[r, i]
        for j in range(substeps - 1, -1, -1):
            tj = tb + j * h
            x1 = stages[step, j, 0]
            x2 = stages[step, j, 1]
            x3 = stages[step, j, 2]
            x4 = stages[step, j, 3]
            js4, ja4 = jac(x4, a, tj + h, p)
            bar_k4 = (h / 6.0) * bar
            bar_x4 = js4.T @ bar_k4
            ga = ja4.T @ bar_k4
            js3, ja3 = jac(x3, a, tj + 0.5 * h, p)
            bar_k3 = (h / 3.0) * bar + h * bar_x4
            bar_x3 = js3.T @ bar_k3
            ga = ga + ja3.T @ bar_k3
            js2, ja2 = jac(x2, a, tj + 0.5 * h, p)
            bar_k2 = (h / 3.0) * bar + 0.5 * h * bar_x3
            bar_x2 = js2.T @ bar_k2
            ga = ga + ja2.T @ bar_k2
            js1, ja1 = jac(x1, a, tj, p)
            bar_k1 = (h / 6.0) * bar + 0.5 * h * bar_x2
            bar_x1 = js1.T @ bar_k1
            ga = ga + ja1.T @ bar_k1
            bar = bar + bar_x1 + bar_x2 + bar_x3 + bar_x4
            grad[step] += ga

    return pure_obj + penalty, pure_obj, grad, viol, g_lo, g_hi


class MpcSolution:
    """Result of one receding-horizon solve."""

    def __init__(self, actions, objective, violation, iterations, converged):
        self.actions = actions
        self.objective = float(objective)
        self.violation = float(violation)
        self.iterations = int(iterations)
        self.converged = bool(converged)

    def __repr__(self):
        return (f"MpcSolution(obj={self.objective:.6g}, viol={self.violation:.3g}, "
                f"iters={self.iterations}, converged={self.converged})")


class MpcProblem:
    """Receding-horizon problem bound to one estimated plant model.

    Band constraints are tightened by margin_frac of the half band width so
    node-wise satisfaction leaves inter-sample headroom. Tolerances and the
    penalty schedule are exposed for the run config.
    """

    def __init__(self, model, horizon=None, substeps=10, margin_frac=0.02,
                 al_tol=1e-4, rho0=1e4, rho_growth=30.0, max_outer=12,
                 inner_maxiter=400, inner_ftol=1e-11, inner_gtol=1e-5):
        self.model = model
        self.horizon = int(horizon) if horizon is not None else int(model.horizon)
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {horizon}")
        self.substeps = int(substeps)
        self.margin_frac = float(margin_frac)
        self.al_tol = float(al_tol)
        self.rho_growth = float(rho_growth)
        self.max_outer = int(max_outer)
        self.inner_maxiter = int(inner_maxiter)
        self.inner_ftol = float(inner_ftol)
        self.inner_gtol = float(inner_gtol)
        glo, ghi = model.safety.tightened(self.margin_frac)
        self.glo = glo
        self.ghi = ghi
        self.w = model.safety.weights
        # per-row penalty weights: uniform curvature in band-relative units
        half_band = 0.5 * (ghi - glo)
        self.rho_rows0 = float(rho0) / half_band ** 2
        # the inner solver works in box-normalized action coordinates so one
        # gradient tolerance fits every plant's units
        box = model.action_space
        self.bounds = [(-1.0, 1.0)] * (self.horizon * box.dim)
        self._center = np.tile(box.center, (self.horizon, 1))
        self._half = np.tile(box.half, (self.horizon, 1))
        self._cold = np.tile(box.normalize(box.cold_start()), (self.horizon, 1))

    def evaluate(self, s, actions, t0=0.0, lam_lo=None, lam_hi=None, rho_rows=None):
        """Run the rollout kernel once; used by the solver and by tests."""
        m = self.w.shape[0]
        n_steps = actions.shape[0]
        if lam_lo is None:
            lam_lo = np.zeros((n_steps, m))
        if lam_hi is None:
            lam_hi = np.zeros((n_steps, m))
        if rho_rows is None:
            rho_rows = self.rho_rows0
        model = self.model
        return rollout_objective(
            model.f, model.jac, model.cost, model.cost_grad,
            np.asarray(s, dtype=np.float64), np.asarray(actions, dtype=np.float64),
            float(t0), model.dt, self.substeps, model.p, model.cp,
            self.w, self.glo, self.ghi, lam_lo, lam_hi, rho_rows)


def mpc_solve(problem, s, t0=0.0, warm_start=None):
    """Solve the N-step constrained problem from state s at plant time t0.

    Augmented-Lagrangian outer loop: minimize cost + penalty, update the
    multipliers from the constraint values, grow the penalty weights, stop
    once the worst band violation is below al_tol. Non-convergence returns
    the best found sequence with converged=False.
    """
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ConfigError(f"non-finite state passed to mpc_solve: {s}")
    n_steps = problem.horizon
    box = problem.model.action_space
    ka = box.dim
    m = problem.w.shape[0]
    center, half = problem._center, problem._half
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=np.float64)
        if warm_start.shape != (n_steps, ka):
            raise ConfigError(
                f"warm start shape {warm_start.shape} != {(n_steps, ka)}")
        clipped = np.clip(warm_start, box.lo, box.hi)
        x0 = ((clipped - center) / half).ravel()
    else:
        x0 = problem._cold.ravel().copy()

    lam_lo = np.zeros((n_steps, m))
    lam_hi = np.zeros((n_steps, m))
    rho_rows = problem.rho_rows0.copy()
    iterations = 0
    best = None

    for outer in range(problem.max_outer):
        def fun(x):
            actions = center + half * x.reshape(n_steps, ka)
            al_obj, _, grad, _, _, _ = problem.evaluate(
                s, actions, t0, lam_lo, lam_hi, rho_rows)
            return al_obj, (grad * half).ravel()

        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       bounds=problem.bounds,
                       options={"maxiter": problem.inner_maxiter,
                                "ftol": problem.inner_ftol,
                                "gtol": problem.inner_gtol})
        x0 = np.clip(res.x, -1.0, 1.0)
        actions = center + half * x0.reshape(n_steps, ka)
        iterations += int(res.nit)
        _, pure_obj, _, viol, g_lo, g_hi = problem.evaluate(
            s, actions, t0, lam_lo, lam_hi, rho_rows)
        if best is None or viol < best[1] or (viol <= problem.al_tol
                                              and pure_obj < best[0]):
            best = (pure_obj, viol, actions.copy())
        if viol <= problem.al_tol:
            log.debug("mpc solve converged: outer=%d iters=%d obj=%.6g viol=%.3g",
                      outer + 1, iterations, pure_obj, viol)
            return MpcSolution(actions, pure_obj, viol, iterations, True)
        if viol < BLOWUP_OBJ:
            lam_lo = np.maximum(0.0, lam_lo - rho_rows[None, :] * g_lo)
            lam_hi = np.maximum(0.0, lam_hi - rho_rows[None, :] * g_hi)
        rho_rows = rho_rows * problem.rho_growth

    pure_obj, viol, actions = best
    log.debug("mpc solve hit max_outer: iters=%d obj=%.6g viol=%.3g",
              iterations, pure_obj, viol)
    return MpcSolution(actions, pure_obj, viol, iterations, False)


def regularizer_action(cache, problem, s, t=0.0, warm_start=None):
    """First action of the receding-horizon solve, memoized per (state, time).

    Returns (action, solution, from_cache). Replayed queries for an already
    visited state never re-solve.
    """
    key = (np.asarray(s, dtype=np.float64).tobytes(), float(t))
    solution = cache.get(key)
    hit = solution is not None
    if not hit:
        solution = mpc_solve(problem, s, t0=t, warm_start=warm_start)
        cache[key] = solution
    return solution.actions[0].copy(), solution, hit


class Regularizer:
    """Closed-loop wrapper: model-state tracking, warm starts, memo cache.

    For partially observed plants it maintains its own model state,
    propagating it each step under the executed action and overwriting the
    observed component (the glucose level) from the new observation. Call
    reset(obs) at episode start, action() for the current safe action, and
    advance(executed_action, new_obs) after every plant step.
    """

    def __init__(self, problem):
        self.problem = problem
        self.cache = {}
        self._stepper = OdeStepper(dt=problem.model.dt, substeps=problem.substeps)
        self._state = None
        self._t = 0.0
        self._warm = None
        self.last_solution = None
        self.last_solve_iterations = 0

    def reset(self, obs):
        self._state = self.problem.model.init_state(np.asarray(obs, dtype=np.float64))
        self._t = 0.0
        self._warm = None
        return self._state.copy()

    @property
    def model_state(self):
        return None if self._state is None else self._state.copy()

    def action(self):
        if self._state is None:
            raise ConfigError("regularizer used before reset()")
        a, solution, hit = regularizer_action(
            self.cache, self.problem, self._state, self._t, self._warm)
        self.last_solution = solution
        self.last_solve_iterations = 0 if hit else solution.iterations
        # shift the plan one step for the next solve's warm start
        self._warm = np.vstack([solution.actions[1:], solution.actions[-1:]])
        return a

    def advance(self, executed_action, new_obs):
        if self._state is None:
            raise ConfigError("regularizer used before reset()")
        model = self.problem.model
        new_obs = np.asarray(new_obs, dtype=np.float64)
        if model.fully_observed:
            self._state = model.override_state(self._state, new_obs)
        else:
            a = np.asarray(executed_action, dtype=np.float64)
            try:
                propagated = ode_step(
                    self._stepper,
                    lambda x, u, tt: model.f(x, u, tt, model.p),
                    self._state, a, self._t)
            except NumericalFault:
                propagated = self._state  # keep last finite belief
            self._state = model.override_state(propagated, new_obs)
        self._t += model.dt
        return self._state.copy()

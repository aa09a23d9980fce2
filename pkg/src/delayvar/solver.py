"""Direct transcription solver for delayed isoperimetric problems.

The trajectory is discretized on the commensurate grid and the discretized
augmented functional is minimized over the interior node values (history and
terminal nodes stay fixed).  The multiplier is driven by a classical
first-order outer update lambda <- lambda - rho (I - l) around an inner
quasi-Newton solve (L-BFGS-B on the penalized functional with the exact
analytic gradient); the penalty weight grows when the constraint residual
stalls.  Discretize-then-optimize is the only sane route here: the
Euler-Lagrange system mixes retarded and advanced terms, which shooting
cannot integrate, while transcription sees it as a sparse index coupling.

Everything is deterministic: no random numbers anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .conditions import (
    ConditionReport,
    abnormality_check,
    augmented_lagrangian,
    el_residual,
    solver_tolerance,
)
from .expr import Expression
from .model import (
    DelayedProblem,
    MultiplierVector,
    Trajectory,
    ValidationError,
    as_multiplier,
    interval_envs,
    linear_init_trajectory,
    problem_grid,
    sample_history,
)

_FAMILIES = ("q", "qd", "qtau", "qdtau")


@dataclass(frozen=True)
class SolveSettings:
    """Discretization and iteration controls for one solve."""

    N: int                       # grid intervals on [t1, t2]; h = span / N
    inner_tol: float = 1e-6      # sup-norm of the Lagrangian gradient
    outer_tol: float = 1e-8      # sup-norm of the constraint residual
    max_inner: int = 5000        # L-BFGS-B iterations per outer step
    max_outer: int = 30
    penalty0: float = 10.0
    penalty_growth: float = 10.0
    penalty_cap: float = 1e8
    lambda0: Sequence[float] | None = None
    init: str = "linear"         # 'linear' or 'warm' (use warm_start trajectory)
    warm_start: Trajectory | None = None
    outer_update: str = "multiplier"  # or 'secant' (k == 1 only)

    def __post_init__(self):
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise ValidationError("settings", "tolerances must be positive")
        if self.outer_update not in ("multiplier", "secant"):
            raise ValidationError("outer_update", "must be 'multiplier' or 'secant'")


@dataclass
class SolveResult:
    trajectory: Trajectory
    lam: MultiplierVector
    J: float
    I: np.ndarray
    inner_iterations: int
    outer_iterations: int
    converged: bool
    normality: str
    el_report: ConditionReport
    settings: SolveSettings
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda": [float(v) for v in self.lam.lam],
            "J": self.J,
            "I": [float(v) for v in self.I],
            "inner_iterations": self.inner_iterations,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "normality": self.normality,
            "gradient_sup": self.diagnostics.get("gradient_sup"),
            "constraint_sup": self.diagnostics.get("constraint_sup"),
            "outer_history": self.diagnostics.get("outer_history", []),
            "el_sup_norm": self.el_report.sup_norm,
        }


# ---------------------------------------------------------------------------
# Discretized functionals


def _broadcast(value, count: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(count, float(arr))
    return arr


def quadrature_value_and_gradient(
    problem: DelayedProblem,
    traj: Trajectory,
    e: Expression,
    lam: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Trapezoidal integral of e and its exact gradient w.r.t. all node values.

    Each node value enters the quadrature directly (q slot), through the
    difference quotients of its two adjacent intervals (qd slot), and again
    one delay later through the qtau / qdtau slots; the gradient gathers all
    of those index-shifted contributions.
    """
    envL, envR, info = interval_envs(problem, traj, lam)
    m, i1, i2, h = info.m, info.i1, info.i2, info.h
    count = i2 - i1
    n = problem.n
    slots = tuple(f"{fam}[{i}]" for fam in _FAMILIES for i in range(n))
    dualL = e.dual(envL, slots)
    dualR = e.dual(envR, slots)
    fL = _broadcast(dualL.value, count)
    fR = _broadcast(dualR.value, count)
    value = 0.5 * h * float(np.sum(fL + fR))

    G = np.zeros((traj.num_nodes, n))
    idx = np.arange(i1, i2)
    w = 0.5 * h
    for i in range(n):
        for dual, q_at in ((dualL, idx), (dualR, idx + 1)):
            p2 = _broadcast(dual.partials.get(f"q[{i}]", 0.0), count)
            p3 = _broadcast(dual.partials.get(f"qd[{i}]", 0.0), count)
            p4 = _broadcast(dual.partials.get(f"qtau[{i}]", 0.0), count)
            p5 = _broadcast(dual.partials.get(f"qdtau[{i}]", 0.0), count)
            G[q_at, i] += w * p2
            G[q_at - m, i] += w * p4
            G[idx + 1, i] += w * p3 / h
            G[idx, i] -= w * p3 / h
            G[idx - m + 1, i] += w * p5 / h
            G[idx - m, i] -= w * p5 / h
    return value, G


def discretized_objective(
    problem: DelayedProblem, lam, traj: Trajectory
) -> tuple[float, np.ndarray]:
    """Value of the discretized augmented functional and its gradient over
    the free (interior) nodes; history and terminal nodes carry no gradient."""
    lam_arr = as_multiplier(lam, problem.k)
    F = augmented_lagrangian(problem)
    value, G = quadrature_value_and_gradient(problem, traj, F, lam_arr)
    i1, i2 = problem_free_slice(problem, traj)
    return value, G[i1:i2]


def discretized_constraints(
    problem: DelayedProblem, traj: Trajectory
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Constraint values I_j and their gradients over the free nodes."""
    i1, i2 = problem_free_slice(problem, traj)
    values = np.empty(problem.k)
    grads = []
    for j, gj in enumerate(problem.g):
        value, G = quadrature_value_and_gradient(problem, traj, gj)
        values[j] = value
        grads.append(G[i1:i2])
    return values, grads


def problem_free_slice(problem: DelayedProblem, traj: Trajectory) -> tuple[int, int]:
    """Index range of the free nodes: strictly between t1 and t2."""
    m = int(round(problem.tau / traj.h))
    return m + 1, traj.num_nodes - 1


# ---------------------------------------------------------------------------
# Solve


class _Transcription:
    """Flattened view of the free nodes with fixed history/terminal template."""

    def __init__(self, problem: DelayedProblem, settings: SolveSettings):
        self.problem = problem
        t_start, h, m, M = problem_grid(problem, settings.N)
        self.t_start, self.h, self.m, self.M = t_start, h, m, M
        if settings.init == "warm" and settings.warm_start is not None:
            template = settings.warm_start
            if template.num_nodes != M + 1:
                raise ValidationError("warm_start", "grid does not match settings.N")
            self.template = template.values.copy()
        else:
            self.template = linear_init_trajectory(problem, settings.N).values.copy()
        self.lo, self.hi = m + 1, M
        self.x0 = self.template[self.lo : self.hi].ravel().copy()
        self.F = augmented_lagrangian(problem)

    def trajectory(self, x: np.ndarray) -> Trajectory:
        values = self.template.copy()
        values[self.lo : self.hi] = x.reshape(-1, self.problem.n)
        return Trajectory(t_start=self.t_start, h=self.h, values=values, kink_set=())

    def parts(self, x: np.ndarray):
        traj = self.trajectory(x)
        JL, GL = quadrature_value_and_gradient(self.problem, traj, self.problem.L)
        gL = GL[self.lo : self.hi]
        I = np.empty(self.problem.k)
        gI = []
        for j, gj in enumerate(self.problem.g):
            value, G = quadrature_value_and_gradient(self.problem, traj, gj)
            I[j] = value
            gI.append(G[self.lo : self.hi])
        return JL, gL, I, gI


def _augmented(JL, gL, I, gI, lam, rho, levels):
    c = I - levels
    value = JL - float(lam @ c) + 0.5 * rho * float(c @ c)
    grad = gL.copy()
    for j in range(len(c)):
        grad -= (lam[j] - rho * c[j]) * gI[j]
    return value, grad, c


def solve_isoperimetric(problem: DelayedProblem, settings: SolveSettings) -> SolveResult:
    """Augmented-Lagrangian outer loop around an inner L-BFGS-B transcription.

    Converged means the discretized Lagrangian gradient over free nodes is
    below inner_tol in sup-norm and the constraint residual below outer_tol.
    The objective may be nonconvex; the contract is stationarity, not global
    optimality, and the returned extremal's Euler-Lagrange report plus the
    normality classification are attached for inspection.
    """
    if problem.mode != "lagrangian":
        raise ValidationError("mode", "solver handles lagrangian-mode problems")
    tr = _Transcription(problem, settings)
    lam = as_multiplier(settings.lambda0, problem.k)
    levels = problem.levels
    rho = settings.penalty0
    x = tr.x0.copy()
    history: list[dict] = []
    inner_total = 0
    converged = False
    gradient_sup = np.inf
    constraint_sup = np.inf
    prev_cnorm = np.inf
    prev_pair: tuple[np.ndarray, np.ndarray] | None = None

    for outer in range(1, settings.max_outer + 1):
        def fun(xk, lam=lam, rho=rho):
            JL, gL, I, gI = tr.parts(xk)
            value, grad, _ = _augmented(JL, gL, I, gI, lam, rho, levels)
            return value, grad.ravel()

        res = minimize(
            fun,
            x,
            jac=True,
            method="L-BFGS-B",
            options={
                "maxiter": settings.max_inner,
                "ftol": 1e-18,
                "gtol": 0.5 * settings.inner_tol,
                "maxcor": 25,
            },
        )
        x = res.x
        inner_total += int(res.nit)

        JL, gL, I, gI = tr.parts(x)
        c = I - levels
        lam_next = lam - rho * c
        grad_lagrangian = gL.copy()
        for j in range(problem.k):
            grad_lagrangian -= lam_next[j] * gI[j]
        gradient_sup = float(np.max(np.abs(grad_lagrangian))) if grad_lagrangian.size else 0.0
        constraint_sup = float(np.max(np.abs(c))) if c.size else 0.0
        history.append(
            {
                "outer": outer,
                "constraint_sup": constraint_sup,
                "gradient_sup": gradient_sup,
                "rho": rho,
                "inner_iterations": int(res.nit),
            }
        )

        if gradient_sup <= settings.inner_tol and constraint_sup <= settings.outer_tol:
            lam = lam_next
            converged = True
            break

        if settings.outer_update == "secant" and problem.k == 1 and prev_pair is not None:
            lam_prev, c_prev = prev_pair
            denom = c[0] - c_prev[0]
            if abs(denom) > 1e-14 * (1.0 + abs(c[0])):
                lam_secant = lam[0] - c[0] * (lam[0] - lam_prev[0]) / denom
                lam_next = np.array([lam_secant])
        prev_pair = (lam.copy(), c.copy())
        lam = lam_next
        if constraint_sup > settings.outer_tol and constraint_sup > 0.25 * prev_cnorm:
            rho = min(rho * settings.penalty_growth, settings.penalty_cap)
        prev_cnorm = constraint_sup

    traj = tr.trajectory(x)
    from .model import functional_value

    J, I = functional_value(problem, traj)
    lam_vec = MultiplierVector(lam)
    report = el_residual(problem, lam_vec.lam, traj, tol=solver_tolerance(tr.h))
    normality = abnormality_check(problem, traj)
    return SolveResult(
        trajectory=traj,
        lam=lam_vec,
        J=J,
        I=I,
        inner_iterations=inner_total,
        outer_iterations=len(history),
        converged=converged,
        normality=normality,
        el_report=report,
        settings=settings,
        diagnostics={
            "outer_history": history,
            "gradient_sup": gradient_sup,
            "constraint_sup": constraint_sup,
        },
    )


def refine(problem: DelayedProblem, result: SolveResult, factor: int,
           settings: SolveSettings | None = None) -> SolveResult:
    """Re-solve on a grid refined by an integer factor, warm-started from the
    interpolated previous solution and its multiplier."""
    if not isinstance(factor, int) or factor < 2:
        raise ValidationError("factor", "must be an integer >= 2")
    base = settings or result.settings
    N_new = base.N * factor
    t_start, h, m, M = problem_grid(problem, N_new)
    old = result.trajectory
    times = t_start + h * np.arange(M + 1)
    values = np.empty((M + 1, problem.n))
    values[: m + 1] = sample_history(problem, times[: m + 1])
    for i in range(problem.n):
        values[m:, i] = np.interp(times[m:], old.node_times, old.values[:, i])
    warm = Trajectory(t_start=t_start, h=h, values=values, kink_set=())
    new_settings = replace(
        base, N=N_new, init="warm", warm_start=warm, lambda0=tuple(result.lam.lam)
    )
    refined = solve_isoperimetric(problem, new_settings)
    refined.diagnostics["el_sup_before"] = result.el_report.sup_norm
    refined.diagnostics["el_sup_after"] = refined.el_report.sup_norm
    return refined

"""Weak Pontryagin conditions for delayed isoperimetric optimal control.

The Hamiltonian H = L - lambda . g + p . phi is assembled as a single
expression over the seven-argument operator (t, q, u, q_tau, u_tau, p,
lambda); all residuals are plain node evaluations since no velocity slots
appear in H.  Four residual families are reported: the state equation
qdot = dH/dp, the adjoint equation pdot = -d2 H(t) - d4 H(t+tau) (advanced
term dropped past t2 - tau), the stationarity condition
d3 H(t) + d5 H(t+tau) = 0, and the constancy of H(t) - int d1 H dt (the
Hamiltonian DuBois-Reymond identity, whose own hypothesis residual
d4 H(t+tau) . qdot + d5 H(t+tau) . udot is attached on both candidate
windows).

No solver lives here: the theory supplies necessary conditions only, so
supplied (q, u, p) triplets are verified, and for phi = u the costate is
constructed from the Lagrangian partials, reducing the checks to the
Euler-Lagrange ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditions import (
    TOL_ANALYTIC,
    ConditionReport,
    RegimeSpan,
    _demean_by_regime,
    _differentiated,
    _finish,
    _norms,
    _regime_mask,
    _standard_regimes,
    augmented_lagrangian,
)
from .expr import EvalPoint, Expression, combine_hamiltonian, rename_slots
from .model import DelayedProblem, Trajectory, ValidationError, as_multiplier
from .sampling import TrajectorySampler, best_derivative, cumulative_trapezoid


@dataclass(frozen=True, eq=False)
class HamiltonianContext:
    """An ocp-mode problem together with its assembled Hamiltonian."""

    problem: DelayedProblem
    H: Expression
    n: int
    m: int
    k: int


def hamiltonian_context(problem: DelayedProblem) -> HamiltonianContext:
    if problem.mode != "ocp":
        raise ValidationError("mode", "Hamiltonian form needs an ocp-mode problem")
    H = combine_hamiltonian(problem.L, problem.g, problem.phi)
    return HamiltonianContext(
        problem=problem, H=H, n=problem.n, m=problem.m, k=problem.k
    )


def hamiltonian_value(ctx: HamiltonianContext, x: EvalPoint) -> float:
    """H(x) = L - lambda . g + p . phi at one evaluation point."""
    return float(ctx.H.evaluate(x))


def _require_controls(traj: Trajectory) -> None:
    if traj.u is None:
        raise ValidationError("u", "ocp residuals need control values on the grid")
    if traj.p is None:
        raise ValidationError("p", "ocp residuals need costate values on the grid")


def _kink_mask(S: TrajectorySampler, shifts: tuple[int, ...]) -> np.ndarray:
    mask = np.ones(S.N + 1, dtype=bool)
    kinks = S.traj.kinks
    if kinks:
        karr = np.fromiter(kinks, dtype=int)
        for shift in shifts:
            mask &= ~np.isin(S.rows + shift, karr)
    return mask


def pontryagin_residuals(
    ctx: HamiltonianContext,
    traj: Trajectory,
    lam=None,
    tol: float | None = None,
) -> list[ConditionReport]:
    """The four weak-Pontryagin residual reports: state, adjoint,
    stationarity and Hamiltonian constancy, each split at t2 - tau."""
    _require_controls(traj)
    tol = TOL_ANALYTIC if tol is None else tol
    problem = ctx.problem
    S = TrajectorySampler(problem, traj, lam)
    js, m, n = S.boundary_row, S.m, ctx.n
    _, P = S.eval_families(ctx.H, ("q", "u", "qtau", "utau", "p"))
    inner, labels = _regime_mask(S.N, js)
    regimes = _standard_regimes(problem)
    masks = {"inner": inner, "outer": ~inner}
    reports = []

    # state equation: qdot - dH/dp (identical formula in both regimes)
    state = S.qdot_rows() - P["p"]
    reports.append(
        _finish("state", S, state, _kink_mask(S, (-m, 0)), {}, tol, regimes, masks, labels)
    )

    # adjoint equation, integrated: p(t) + int (d2 H + d4 H(t+tau)) constant
    rhs = np.empty((S.N + 1, n))
    rhs[: js + 1] = P["q"][: js + 1] + P["qtau"][m:]
    rhs[js + 1 :] = P["q"][js + 1 :]
    p_rows = traj.p[S.rows]
    Q = np.empty_like(rhs)
    Q[: js + 1] = p_rows[: js + 1] + cumulative_trapezoid(rhs[: js + 1], S.h)
    outer_q = p_rows[js:] + cumulative_trapezoid(P["q"][js:], S.h)
    Q[js + 1 :] = outer_q[1:]
    included = _kink_mask(S, (-m, 0, m))
    residuals, constants = _demean_by_regime(Q, included, inner)
    pdot = best_derivative(traj.p, S.h)[S.rows]
    aux = {"differentiated": pdot + rhs, "integrated_quantity": Q}
    reports.append(
        _finish("adjoint", S, residuals, included, constants, tol, regimes, masks, labels, aux)
    )

    # stationarity: d3 H(t) + d5 H(t+tau) = 0 pointwise
    stat = np.empty((S.N + 1, ctx.m))
    stat[: js + 1] = P["u"][: js + 1] + P["utau"][m:]
    stat[js + 1 :] = P["u"][js + 1 :]
    reports.append(
        _finish("stationarity", S, stat, _kink_mask(S, (-m, 0, m)), {}, tol, regimes, masks, labels)
    )

    reports.append(hamiltonian_dbr_residual(ctx, traj, lam=lam, tol=tol))
    return reports


def hamiltonian_dbr_residual(
    ctx: HamiltonianContext,
    traj: Trajectory,
    lam=None,
    tol: float | None = None,
) -> ConditionReport:
    """Deviation from constancy of H(t) - int_{t1}^t d1 H ds on [t1, t2].

    The hypothesis residual d4 H(t+tau) . qdot + d5 H(t+tau) . udot is
    evaluated on the wide window [t1 - tau, t2 - tau] and attached in aux,
    with the narrow window [t1 - tau, t1] summarized separately (the stated
    domain is ambiguous between the two).
    """
    _require_controls(traj)
    tol = TOL_ANALYTIC if tol is None else tol
    problem = ctx.problem
    S = TrajectorySampler(problem, traj, lam)
    js, m = S.boundary_row, S.m
    Hval, P = S.eval_families(ctx.H, ("t", "qtau", "utau"))
    Q = Hval - cumulative_trapezoid(P["t"], S.h)
    included = _kink_mask(S, (-m, 0))
    use = included if np.any(included) else np.ones_like(included)
    c = float(np.mean(Q[use]))
    residuals = Q - c
    inner, labels = _regime_mask(S.N, js)

    # hypothesis residual on nodes t in [t1 - tau, t2 - tau]
    count = S.N + 1
    qdot = best_derivative(traj.values, S.h)[:count]
    udot = best_derivative(traj.u, S.h)[:count]
    hyp = np.sum(P["qtau"] * qdot, axis=1) + np.sum(P["utau"] * udot, axis=1)
    nodes = np.arange(count)
    hyp_included = np.ones(count, dtype=bool)
    if S.traj.kinks:
        karr = np.fromiter(S.traj.kinks, dtype=int)
        for shift in (-1, 0, 1, m):
            hyp_included &= ~np.isin(nodes + shift, karr)
    initial = nodes <= m
    aux = {
        "integrated_quantity": Q,
        "hypothesis19_times": traj.node_times[:count],
        "hypothesis19_residuals": hyp,
        "hypothesis19_included": hyp_included,
        "hypothesis19_sup_initial": _norms(hyp, hyp_included & initial, S.h)[0],
        "hypothesis19_sup_wide": _norms(hyp, hyp_included, S.h)[0],
    }
    sup, l2 = _norms(residuals, included, S.h)
    return ConditionReport(
        condition="hamiltonian_dbr",
        times=S.row_times.copy(),
        residuals=residuals,
        included=included,
        regime_of=labels,
        regimes=_standard_regimes(problem),
        constants={"overall": c},
        sup_norm=sup,
        l2_norm=l2,
        sup_by_regime={
            "inner": _norms(residuals, included & inner, S.h)[0],
            "outer": _norms(residuals, included & ~inner, S.h)[0],
        },
        tolerance=tol,
        passed=sup <= tol,
        aux=aux,
    )


# ---------------------------------------------------------------------------
# Reduction of a Lagrangian problem to optimal-control form (phi = u)


def lagrangian_to_ocp(problem: DelayedProblem) -> DelayedProblem:
    """Rewrite a lagrangian-mode problem with qdot as the control: phi = u."""
    if problem.mode != "lagrangian":
        raise ValidationError("mode", "expected a lagrangian-mode problem")
    mapping = {"qd": "u", "qdtau": "utau"}
    L = rename_slots(problem.L, mapping, mode="ocp")
    g = tuple(rename_slots(gj, mapping, mode="ocp") for gj in problem.g)
    phi = tuple(
        Expression.from_ast(_u_slot(i), n=problem.n, mode="ocp", m=problem.n)
        for i in range(problem.n)
    )
    return DelayedProblem(
        n=problem.n,
        k=problem.k,
        mode="ocp",
        L=L,
        g=g,
        tau=problem.tau,
        t1=problem.t1,
        t2=problem.t2,
        history=problem.history,
        terminal=problem.terminal,
        levels=problem.levels,
        phi=phi,
        m=problem.n,
    )


def _u_slot(i: int):
    from .expr import Slot

    return Slot("u", i)


def construct_costate(problem: DelayedProblem, lam, traj: Trajectory) -> np.ndarray:
    """Costate from the stationarity condition for phi = u:

        p(t) = -d3 F(t) - d5 F(t+tau)   on [t1, t2 - tau],
        p(t) = -d3 F(t)                 on [t2 - tau, t2].

    Rows before t1 are padded with the t1 value (the costate lives on
    [t1, t2]); expects the lagrangian-mode problem.
    """
    if problem.mode != "lagrangian":
        raise ValidationError("mode", "costate construction uses the lagrangian form")
    S = TrajectorySampler(problem, traj, lam)
    F = augmented_lagrangian(problem)
    _, P = S.eval_families(F, ("qd", "qdtau"))
    A3, A5 = P["qd"], P["qdtau"]
    js, m = S.boundary_row, S.m
    p_rows = np.empty_like(A3)
    p_rows[: js + 1] = -(A3[: js + 1] + A5[m:])
    p_rows[js + 1 :] = -A3[js + 1 :]
    full = np.empty((traj.num_nodes, problem.n))
    full[S.i1 :] = p_rows
    full[: S.i1] = p_rows[0]
    return full


def reduce_to_ocp(
    problem: DelayedProblem, lam, traj: Trajectory
) -> tuple[DelayedProblem, Trajectory]:
    """OCP form of a Lagrangian problem plus the (q, u, p) triplet built from
    the trajectory: u is the nodal velocity (right-limit at t1, one-sided at
    the grid ends) and p comes from construct_costate."""
    ocp_problem = lagrangian_to_ocp(problem)
    S = TrajectorySampler(problem, traj, lam)
    m = S.m
    u = np.empty_like(traj.values)
    u[:m] = best_derivative(traj.values[: m + 1], traj.h)[:-1]
    u[m:] = S.qdot_rows()
    p = construct_costate(problem, lam, traj)
    kinks = traj.kink_set if traj.kink_set is not None else tuple(sorted(traj.kinks))
    return ocp_problem, Trajectory(
        t_start=traj.t_start, h=traj.h, values=traj.values.copy(), u=u, p=p,
        kink_set=kinks,
    )

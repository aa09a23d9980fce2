"""Pointwise residuals of the delayed necessary optimality conditions.

Every operation takes a problem, a multiplier vector and a trajectory and
returns per-node residual profiles.  The conditions split into two regimes:
on [t1, t2 - tau] the formulas carry advanced terms evaluated at t + tau, on
[t2 - tau, t2] they reduce to the classical form.  Residuals are reported in
integrated (deviation-from-constancy) form as the primary statistic -- robust
at the kinks of Lipschitz extremals, where the differentiated form would need
an undefined second derivative -- with the differentiated form attached as a
secondary diagnostic.  Kink-affected nodes are excluded from verdict norms.

The multiplier convention is F = L - lambda . g throughout; flipping the sign
of lambda recovers the opposite convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import EvalPoint, Expression, combine_augmented
from .model import DelayedProblem, Symmetry, Trajectory, ValidationError, as_multiplier
from .sampling import TrajectorySampler, cumulative_trapezoid

TOL_ANALYTIC = 1e-8  # default verdict tolerance for analytic trajectories


def solver_tolerance(h: float) -> float:
    """Default verdict tolerance for solver-produced trajectories."""
    return 10.0 * h * h


# ---------------------------------------------------------------------------
# Report types


@dataclass(frozen=True)
class RegimeSpan:
    name: str
    t_lo: float
    t_hi: float


@dataclass
class ConditionReport:
    """Per-node residual profile of one necessary condition."""

    condition: str
    times: np.ndarray
    residuals: np.ndarray        # (#nodes,) or (#nodes, dim)
    included: np.ndarray         # bool mask; kink-affected nodes are False
    regime_of: list[str]
    regimes: tuple[RegimeSpan, ...]
    constants: dict[str, float | np.ndarray]
    sup_norm: float
    l2_norm: float
    sup_by_regime: dict[str, float]
    tolerance: float
    passed: bool
    aux: dict = field(default_factory=dict)

    def summary(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"{self.condition:<18} sup={self.sup_norm:<12.4e} l2={self.l2_norm:<12.4e} "
            f"tol={self.tolerance:.1e}  {verdict}"
        )

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "times": _jsonable(self.times),
            "residuals": _jsonable(self.residuals),
            "included": [bool(b) for b in self.included],
            "regime_of": list(self.regime_of),
            "regimes": [
                {"name": r.name, "t_lo": r.t_lo, "t_hi": r.t_hi} for r in self.regimes
            ],
            "constants": {k: _jsonable(v) for k, v in self.constants.items()},
            "sup_norm": self.sup_norm,
            "l2_norm": self.l2_norm,
            "sup_by_regime": {k: float(v) for k, v in self.sup_by_regime.items()},
            "tolerance": self.tolerance,
            "passed": self.passed,
            "aux": {k: _jsonable(v) for k, v in self.aux.items()},
        }


@dataclass
class NoetherProfile:
    """Candidate constant of motion sampled along the trajectory."""

    times: np.ndarray
    values: np.ndarray
    included: np.ndarray
    regime_of: list[str]
    regimes: tuple[RegimeSpan, ...]
    drift: float
    drift_by_regime: dict[str, float]
    aux: dict = field(default_factory=dict)

    def summary(self) -> str:
        per_regime = ", ".join(f"{k}={v:.4e}" for k, v in self.drift_by_regime.items())
        return f"{'noether':<18} drift={self.drift:<12.4e} ({per_regime})"

    def to_dict(self) -> dict:
        return {
            "condition": "noether",
            "times": _jsonable(self.times),
            "values": _jsonable(self.values),
            "included": [bool(b) for b in self.included],
            "regime_of": list(self.regime_of),
            "regimes": [
                {"name": r.name, "t_lo": r.t_lo, "t_hi": r.t_hi} for r in self.regimes
            ],
            "drift": self.drift,
            "drift_by_regime": {k: float(v) for k, v in self.drift_by_regime.items()},
            "aux": {k: _jsonable(v) for k, v in self.aux.items()},
        }


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return None if math.isnan(v) else v
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def format_report_table(reports: Sequence) -> str:
    return "\n".join(r.summary() for r in reports)


# ---------------------------------------------------------------------------
# Augmented Lagrangian


def augmented_lagrangian(problem: DelayedProblem) -> Expression:
    """F = L - lambda . g as one expression over the slots plus lambda[j]."""
    return combine_augmented(problem.L, problem.g)


def augmented_value(problem: DelayedProblem, lam, x: EvalPoint) -> float:
    """F(x) = L(x) - lambda . g(x); partials follow from expr.partial on F."""
    lam_arr = as_multiplier(lam, problem.k)
    env = dict(x.env() if isinstance(x, EvalPoint) else x)
    for j, value in enumerate(lam_arr):
        env[f"lambda[{j}]"] = value
    return float(augmented_lagrangian(problem).evaluate(env))


# ---------------------------------------------------------------------------
# Shared assembly


def _norms(residuals: np.ndarray, included: np.ndarray, h: float) -> tuple[float, float]:
    r = np.abs(np.atleast_2d(residuals.T).T)[included]
    if r.size == 0:
        return 0.0, 0.0
    return float(np.max(r)), float(np.sqrt(h * np.sum(r * r)))


def _regime_mask(N: int, boundary_row: int) -> tuple[np.ndarray, list[str]]:
    inner = np.arange(N + 1) <= boundary_row
    labels = ["inner" if flag else "outer" for flag in inner]
    return inner, labels


def _demean_by_regime(
    Q: np.ndarray, included: np.ndarray, inner: np.ndarray
) -> tuple[np.ndarray, dict[str, float | np.ndarray]]:
    """Subtract the per-regime constant (mean over included nodes)."""
    residual = np.array(Q, dtype=float, copy=True)
    constants: dict[str, float | np.ndarray] = {}
    for name, mask in (("inner", inner), ("outer", ~inner)):
        use = mask & included
        if not np.any(use):
            use = mask
        c = np.mean(Q[use], axis=0)
        residual[mask] = Q[mask] - c
        constants[name] = float(c) if np.ndim(c) == 0 else c
    return residual, constants


def _finish(
    condition: str,
    S: TrajectorySampler,
    residuals: np.ndarray,
    included: np.ndarray,
    constants: dict,
    tol: float,
    regimes: tuple[RegimeSpan, ...],
    regime_masks: dict[str, np.ndarray],
    labels: list[str],
    aux: dict | None = None,
) -> ConditionReport:
    sup, l2 = _norms(residuals, included, S.h)
    sup_by_regime = {
        name: _norms(residuals, included & mask, S.h)[0]
        for name, mask in regime_masks.items()
    }
    return ConditionReport(
        condition=condition,
        times=S.row_times.copy(),
        residuals=residuals,
        included=included,
        regime_of=labels,
        regimes=regimes,
        constants=constants,
        sup_norm=sup,
        l2_norm=l2,
        sup_by_regime=sup_by_regime,
        tolerance=tol,
        passed=sup <= tol,
        aux=aux or {},
    )


def _standard_regimes(problem: DelayedProblem) -> tuple[RegimeSpan, RegimeSpan]:
    split = problem.t2 - problem.tau
    return (
        RegimeSpan("inner", problem.t1, split),
        RegimeSpan("outer", split, problem.t2),
    )


def _el_arrays(S: TrajectorySampler, e: Expression) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Integrated-form EL quantity of integrand e: (Q, bracket, rhs, included)."""
    _, P = S.eval_families(e, ("q", "qd", "qtau", "qdtau"))
    A2, A3, A4, A5 = P["q"], P["qd"], P["qtau"], P["qdtau"]
    js, m, N = S.boundary_row, S.m, S.N
    bracket = np.empty_like(A3)
    rhs = np.empty_like(A2)
    bracket[: js + 1] = A3[: js + 1] + A5[m:]
    rhs[: js + 1] = A2[: js + 1] + A4[m:]
    bracket[js + 1 :] = A3[js + 1 :]
    rhs[js + 1 :] = A2[js + 1 :]
    Q = np.empty_like(bracket)
    Q[: js + 1] = bracket[: js + 1] - cumulative_trapezoid(rhs[: js + 1], S.h)
    outer = A3[js:] - cumulative_trapezoid(A2[js:], S.h)
    Q[js + 1 :] = outer[1:]
    included = S.included_rows(forward_shift_until=js)
    return Q, bracket, rhs, included


def _differentiated(bracket: np.ndarray, rhs: np.ndarray, inner: np.ndarray, h: float) -> np.ndarray:
    """Secondary diagnostic d/dt(bracket) - rhs, NaN where the stencil breaks."""
    out = np.full_like(rhs, np.nan)
    for mask in (inner, ~inner):
        idx = np.nonzero(mask)[0]
        if idx.size < 3:
            continue
        mid = idx[1:-1]
        out[mid] = (bracket[idx[2:]] - bracket[idx[:-2]]) / (2.0 * h) - rhs[mid]
    return out


# ---------------------------------------------------------------------------
# Condition operations


def el_residual(problem: DelayedProblem, lam, traj: Trajectory, tol: float | None = None) -> ConditionReport:
    """Isoperimetric Euler-Lagrange residual with time delay.

    Inner regime: d/dt{d3 F(t) + d5 F(t+tau)} - d2 F(t) - d4 F(t+tau);
    outer regime: d/dt{d3 F(t)} - d2 F(t).  The reported residual is the
    integrated form's deviation from its per-regime constant.
    """
    tol = TOL_ANALYTIC if tol is None else tol
    S = TrajectorySampler(problem, traj, lam)
    F = augmented_lagrangian(problem)
    Q, bracket, rhs, included = _el_arrays(S, F)
    inner, labels = _regime_mask(S.N, S.boundary_row)
    residuals, constants = _demean_by_regime(Q, included, inner)
    aux = {
        "integrated_quantity": Q,
        "differentiated": _differentiated(bracket, rhs, inner, S.h),
    }
    return _finish(
        "euler_lagrange", S, residuals, included, constants, tol,
        _standard_regimes(problem), {"inner": inner, "outer": ~inner}, labels, aux,
    )


def cdur_residual(problem: DelayedProblem, lam, traj: Trajectory, tol: float | None = None) -> ConditionReport:
    """Residual of the DuBois-Reymond hypothesis

        d4 F(t+tau) . qdot(t) + d5 F(t+tau) . qddot(t)

    evaluated on the wide window [t1 - tau, t2 - tau]; the narrow window
    [t1 - tau, t1] is annotated separately since the two appear
    interchangeably as the stated domain.
    """
    tol = TOL_ANALYTIC if tol is None else tol
    S = TrajectorySampler(problem, traj, lam)
    F = augmented_lagrangian(problem)
    _, P = S.eval_families(F, ("qtau", "qdtau"))
    A4, A5 = P["qtau"], P["qdtau"]  # row j holds the sample at node j + m
    count = S.N + 1
    qdot = S.qdot_nodes()[:count]
    qddot = S.qddot_nodes()[:count]
    residuals = np.sum(A4 * qdot + A5 * qddot, axis=1)
    times = S.traj.node_times[:count]

    nodes = np.arange(count)
    kinks = S.traj.kinks
    included = np.ones(count, dtype=bool)
    if kinks:
        karr = np.fromiter(kinks, dtype=int)
        for shift in (-1, 0, 1, S.m):
            included &= ~np.isin(nodes + shift, karr)

    initial = nodes <= S.m
    labels = ["initial" if flag else "extended" for flag in initial]
    regimes = (
        RegimeSpan("initial", problem.t1 - problem.tau, problem.t1),
        RegimeSpan("extended", problem.t1, problem.t2 - problem.tau),
    )
    sup, l2 = _norms(residuals, included, S.h)
    sup_by_regime = {
        "initial": _norms(residuals, included & initial, S.h)[0],
        "extended": _norms(residuals, included & ~initial, S.h)[0],
    }
    report = ConditionReport(
        condition="cdur",
        times=times,
        residuals=residuals,
        included=included,
        regime_of=labels,
        regimes=regimes,
        constants={},
        sup_norm=sup,
        l2_norm=l2,
        sup_by_regime=sup_by_regime,
        tolerance=tol,
        passed=sup <= tol,
    )
    return report


def dbr_residual(problem: DelayedProblem, lam, traj: Trajectory, tol: float | None = None) -> ConditionReport:
    """Isoperimetric DuBois-Reymond residual with time delay.

    Deviation from constancy of F(t) - qdot . (d3 F(t) + d5 F(t+tau)) minus
    the running integral of d1 F (the advanced term drops in the outer
    regime).  The pre-integral bracket is kept in aux["bracket"]; with the
    time-translation generator it coincides nodewise with the Noether
    candidate constant.
    """
    tol = TOL_ANALYTIC if tol is None else tol
    S = TrajectorySampler(problem, traj, lam)
    F = augmented_lagrangian(problem)
    val, P = S.eval_families(F, ("t", "qd", "qdtau"))
    A3, A5, P1 = P["qd"], P["qdtau"], P["t"]
    js, m = S.boundary_row, S.m
    qdot = S.qdot_rows()
    bracket = np.empty(S.N + 1)
    bracket[: js + 1] = val[: js + 1] - np.sum(
        qdot[: js + 1] * (A3[: js + 1] + A5[m:]), axis=1
    )
    bracket[js + 1 :] = val[js + 1 :] - np.sum(qdot[js + 1 :] * A3[js + 1 :], axis=1)
    Q = bracket - cumulative_trapezoid(P1, S.h)
    included = S.included_rows(forward_shift_until=js)
    inner, labels = _regime_mask(S.N, js)
    residuals, constants = _demean_by_regime(Q, included, inner)
    aux = {"bracket": bracket, "integrated_quantity": Q}
    return _finish(
        "dubois_reymond", S, residuals, included, constants, tol,
        _standard_regimes(problem), {"inner": inner, "outer": ~inner}, labels, aux,
    )


def noether_constant(
    problem: DelayedProblem, lam, traj: Trajectory, sym: Symmetry
) -> NoetherProfile:
    """Candidate Noether constant of motion along the trajectory.

    Inner regime: -Phi + (d3 F(t) + d5 F(t+tau)) . xi
                  + (F - qdot . (d3 F(t) + d5 F(t+tau))) eta;
    the advanced terms drop in the outer regime.  The drift max - min over
    included nodes is the test statistic.
    """
    S = TrajectorySampler(problem, traj, lam)
    F = augmented_lagrangian(problem)
    val, P = S.eval_families(F, ("qd", "qdtau"))
    A3, A5 = P["qd"], P["qdtau"]
    js, m = S.boundary_row, S.m
    qdot = S.qdot_rows()

    env_tq: dict = {"t": S.row_times}
    for i in range(problem.n):
        env_tq[f"q[{i}]"] = S.traj.values[S.rows, i]
    eta = np.broadcast_to(np.asarray(sym.eta.evaluate(env_tq), dtype=float), (S.N + 1,))
    xi = np.column_stack(
        [
            np.broadcast_to(np.asarray(x.evaluate(env_tq), dtype=float), (S.N + 1,))
            for x in sym.xi
        ]
    )
    phi = S.value_rows(sym.phi_gauge)

    el_bracket = np.empty_like(A3)
    el_bracket[: js + 1] = A3[: js + 1] + A5[m:]
    el_bracket[js + 1 :] = A3[js + 1 :]
    values = (
        -phi
        + np.sum(el_bracket * xi, axis=1)
        + (val - np.sum(qdot * el_bracket, axis=1)) * eta
    )

    included = S.included_rows(forward_shift_until=js)
    inner, labels = _regime_mask(S.N, js)

    def drift(mask: np.ndarray) -> float:
        use = mask & included
        if np.count_nonzero(use) < 2:
            return 0.0
        return float(np.max(values[use]) - np.min(values[use]))

    return NoetherProfile(
        times=S.row_times.copy(),
        values=values,
        included=included,
        regime_of=labels,
        regimes=_standard_regimes(problem),
        drift=drift(np.ones_like(included)),
        drift_by_regime={"inner": drift(inner), "outer": drift(~inner)},
    )


def invariance_residual(
    problem: DelayedProblem,
    lam,
    sym: Symmetry,
    traj: Trajectory,
    subinterval: tuple[float, float] | None = None,
    step: float = 1e-5,
) -> float:
    """Gauge-invariance defect of the augmented functional on a subinterval.

    Returns  int_I Phidot dt  -  d/ds [transformed integral](s=0), the s-
    derivative taken as a central difference with the given step.  A value
    near zero certifies invariance of this trajectory/subinterval pair under
    the generators; the gauge integral is evaluated exactly as Phi(b)-Phi(a).
    """
    S = TrajectorySampler(problem, traj, lam)
    t1, t2 = problem.t1, problem.t2
    a, b = subinterval if subinterval is not None else (t1, t2)
    tol = 1e-9 * (1.0 + abs(t1) + abs(t2))
    if a < t1 - tol or b > t2 + tol or a >= b:
        raise ValidationError("subinterval", f"[{a}, {b}] must lie inside [{t1}, {t2}]")
    ja, jb = traj.index_of(a), traj.index_of(b)

    times, v, s = traj.node_times, traj.values, traj.slopes
    M, n = traj.num_nodes - 1, traj.n
    count = M + 1

    def rows(value) -> np.ndarray:
        return np.broadcast_to(np.asarray(value, dtype=float), (count,))

    env_nodes: dict = {"t": times}
    for i in range(n):
        env_nodes[f"q[{i}]"] = v[:, i]
    q_slots = tuple(f"q[{i}]" for i in range(n))
    eta_d = sym.eta.dual(env_nodes, ("t",) + q_slots)
    eta_val = rows(eta_d.value)
    eta_t = rows(eta_d.partials.get("t", 0.0))
    eta_q = np.column_stack([rows(eta_d.partials.get(sl, 0.0)) for sl in q_slots])
    xi_val = np.empty((count, n))
    xi_t = np.empty((count, n))
    xi_q = np.empty((count, n, n))
    for i, xi_i in enumerate(sym.xi):
        d = xi_i.dual(env_nodes, ("t",) + q_slots)
        xi_val[:, i] = rows(d.value)
        xi_t[:, i] = rows(d.partials.get("t", 0.0))
        for l, sl in enumerate(q_slots):
            xi_q[:, i, l] = rows(d.partials.get(sl, 0.0))

    F = augmented_lagrangian(problem)
    m, h = S.m, S.h
    idx = np.arange(ja, jb)

    def transformed_total(s_par: float) -> float:
        total = 0.0
        for nodes, intervals in ((idx, idx), (idx + 1, idx)):
            d = s[intervals]
            dtau = s[intervals - m]
            nd, ndtau = nodes, nodes - m
            etadot = eta_t[nd] + np.sum(eta_q[nd] * d, axis=1)
            etadot_tau = eta_t[ndtau] + np.sum(eta_q[ndtau] * dtau, axis=1)
            xidot = xi_t[nd] + np.einsum("ril,rl->ri", xi_q[nd], d)
            xidot_tau = xi_t[ndtau] + np.einsum("ril,rl->ri", xi_q[ndtau], dtau)
            env: dict = {"t": times[nd] + s_par * eta_val[nd]}
            for i in range(n):
                env[f"q[{i}]"] = v[nd, i] + s_par * xi_val[nd, i]
                env[f"qd[{i}]"] = (d[:, i] + s_par * xidot[:, i]) / (1.0 + s_par * etadot)
                env[f"qtau[{i}]"] = v[ndtau, i] + s_par * xi_val[ndtau, i]
                env[f"qdtau[{i}]"] = (dtau[:, i] + s_par * xidot_tau[:, i]) / (
                    1.0 + s_par * etadot_tau
                )
            for j, value in enumerate(S.lam):
                env[f"lambda[{j}]"] = value
            f = np.broadcast_to(
                np.asarray(F.evaluate(env), dtype=float), (idx.size,)
            ) * (1.0 + s_par * etadot)
            total += 0.5 * h * float(np.sum(f))
        return total

    d_transform = (transformed_total(step) - transformed_total(-step)) / (2.0 * step)
    phi_rows = S.value_rows(sym.phi_gauge)
    gauge = float(phi_rows[jb - S.i1] - phi_rows[ja - S.i1])
    return gauge - d_transform


def abnormality_check(problem: DelayedProblem, traj: Trajectory, tol: float | None = None) -> str:
    """Classify the trajectory as a 'normal' or 'abnormal' extremizer.

    Abnormal means the constraint integrands' own Euler-Lagrange system is
    already satisfied along the trajectory (for every constraint row, in both
    regimes), which degenerates the multiplier rule.
    """
    if problem.k == 0:
        return "normal"
    S = TrajectorySampler(problem, traj, None)
    if tol is None:
        tol = max(TOL_ANALYTIC, solver_tolerance(S.h))
    inner, _ = _regime_mask(S.N, S.boundary_row)
    for gj in problem.g:
        Q, _, _, included = _el_arrays(S, gj)
        residuals, _ = _demean_by_regime(Q, included, inner)
        sup, _ = _norms(residuals, included, S.h)
        if sup > tol:
            return "normal"
    return "abnormal"

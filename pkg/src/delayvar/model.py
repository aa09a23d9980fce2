"""Problem and trajectory data model for delayed variational problems.

A DelayedProblem bundles the Lagrangian L, the isoperimetric constraint
integrands g, the delay tau, the interval [t1, t2], the history function on
[t1 - tau, t1], the terminal state and the constraint levels.  Trajectories
are uniform grids covering [t1 - tau, t2] with the history prepended; the
grid step must divide tau exactly so that delayed values are pure index
shifts (no interpolation, ever).

Quadrature of the integral functionals is trapezoidal on each grid interval,
with the integrand's one-sided limits at interval endpoints: the velocity
slot on an interval is that interval's difference quotient (the exact slope
for piecewise-linear trajectories), and the delayed velocity is the slope of
the interval m steps earlier.  This is second-order accurate for smooth
integrands and exact on the piecewise-linear extremals that motivate the
whole construction.
"""

from __future__ import annotations

import json
from collections import namedtuple
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import (
    Expression,
    ParseError,
    parse_expression,
    zero_expression,
)

KINK_TOL_FACTOR = 1e-6  # slope-jump threshold relative to 1 + local slope scale
_GRID_RTOL = 1e-9


class ValidationError(Exception):
    """A problem or trajectory field failed validation."""

    def __init__(self, field: str, message: str):
        super().__init__(f"field '{field}': {message}")
        self.field = field


# ---------------------------------------------------------------------------
# History function


@dataclass(frozen=True)
class HistoryPiece:
    lo: float
    hi: float
    coeffs: np.ndarray  # (n, degree+1), ascending powers of t


@dataclass(frozen=True, eq=False)
class History:
    """Piecewise-polynomial history delta(t) on [t1 - tau, t1].

    Values and derivatives come from the polynomial pieces themselves, so
    history derivatives are exact rather than finite differences.
    """

    pieces: tuple[HistoryPiece, ...]

    def _piece(self, t: float) -> HistoryPiece:
        tol = _GRID_RTOL * (1.0 + abs(t))
        for piece in self.pieces:
            if piece.lo - tol <= t <= piece.hi + tol:
                return piece
        raise ValidationError("history", f"t={t} not covered by any piece")

    def value(self, t: float) -> np.ndarray:
        coeffs = self._piece(t).coeffs
        powers = t ** np.arange(coeffs.shape[1])
        return coeffs @ powers

    def deriv(self, t: float) -> np.ndarray:
        coeffs = self._piece(t).coeffs
        degree = coeffs.shape[1]
        if degree == 1:
            return np.zeros(coeffs.shape[0])
        d = np.arange(1, degree)
        powers = t ** np.arange(degree - 1)
        return (coeffs[:, 1:] * d) @ powers


def history_from_spec(spec: Mapping, n: int, field: str = "history") -> History:
    try:
        raw_pieces = spec["pieces"]
    except (KeyError, TypeError):
        raise ValidationError(field, "expected an object with a 'pieces' list")
    if not raw_pieces:
        raise ValidationError(field, "'pieces' must be nonempty")
    pieces = []
    for idx, raw in enumerate(raw_pieces):
        where = f"{field}.pieces[{idx}]"
        try:
            lo, hi = float(raw["from"]), float(raw["to"])
            coeffs = raw["coeffs"]
        except (KeyError, TypeError, ValueError):
            raise ValidationError(where, "needs numeric 'from', 'to' and 'coeffs'")
        if hi <= lo:
            raise ValidationError(where, "'to' must exceed 'from'")
        arr = np.atleast_2d(np.asarray(coeffs, dtype=float))
        if arr.shape[0] != n:
            raise ValidationError(
                where, f"coeffs describe {arr.shape[0]} components, problem has n={n}"
            )
        pieces.append(HistoryPiece(lo=lo, hi=hi, coeffs=arr))
    pieces.sort(key=lambda piece: piece.lo)
    for left, right in zip(pieces, pieces[1:]):
        if right.lo > left.hi + _GRID_RTOL * (1.0 + abs(left.hi)):
            raise ValidationError(field, "pieces leave a gap")
    return History(pieces=tuple(pieces))


# ---------------------------------------------------------------------------
# Problem


@dataclass(frozen=True, eq=False)
class DelayedProblem:
    """One delayed variational (or optimal-control) problem instance."""

    n: int
    k: int
    mode: str  # 'lagrangian' or 'ocp'
    L: Expression
    g: tuple[Expression, ...]
    tau: float
    t1: float
    t2: float
    history: History
    terminal: np.ndarray | None
    levels: np.ndarray
    phi: tuple[Expression, ...] = ()
    m: int = 0

    def __post_init__(self):
        if self.t1 >= self.t2:
            raise ValidationError("t1", "t1 must be smaller than t2")
        if not (0.0 < self.tau < self.t2 - self.t1):
            raise ValidationError("tau", "requires 0 < tau < t2 - t1")
        if self.k != len(self.g):
            raise ValidationError("g", f"expected {self.k} constraint integrands")
        if self.k != len(self.levels):
            raise ValidationError("levels", f"expected {self.k} entries")
        if self.mode == "ocp":
            if len(self.phi) != self.n:
                raise ValidationError("phi", f"expected {self.n} components")
        elif self.mode == "lagrangian":
            if self.terminal is None or len(self.terminal) != self.n:
                raise ValidationError("terminal", f"expected {self.n} entries")
        else:
            raise ValidationError("mode", "must be 'lagrangian' or 'ocp'")

    @property
    def span(self) -> float:
        return self.t2 - self.t1


def load_problem(source: str | Path | Mapping) -> DelayedProblem:
    """Load and validate a problem from a JSON file path, JSON text or dict."""
    if isinstance(source, Mapping):
        data = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ValidationError("<file>", f"not valid JSON: {err}") from None

    def need(key, cast, check=None, explain=""):
        if key not in data:
            raise ValidationError(key, "missing")
        try:
            value = cast(data[key])
        except (TypeError, ValueError):
            raise ValidationError(key, f"bad value {data[key]!r}") from None
        if check is not None and not check(value):
            raise ValidationError(key, explain)
        return value

    n = need("n", int, lambda v: v >= 1, "must be a positive integer")
    k = need("k", int, lambda v: v >= 0, "must be a nonnegative integer")
    mode = need("mode", str, lambda v: v in ("lagrangian", "ocp"),
                "must be 'lagrangian' or 'ocp'")
    tau = need("tau", float, lambda v: v > 0, "must be positive")
    t1 = need("t1", float)
    t2 = need("t2", float, lambda v: v > t1, "must exceed t1")
    if tau >= t2 - t1:
        raise ValidationError("tau", f"tau={tau} must be smaller than t2 - t1 = {t2 - t1}")
    m = int(data.get("m", n)) if mode == "ocp" else 0

    def parse_field(field, source_text):
        try:
            return parse_expression(str(source_text), n=n, mode=mode, m=m)
        except ParseError as err:
            raise ValidationError(field, str(err)) from None

    L = parse_field("L", need("L", str))
    raw_g = data.get("g", [])
    if k >= 1 and not raw_g:
        raise ValidationError("g", "isoperimetric problem (k >= 1) needs integrands")
    if len(raw_g) != k:
        raise ValidationError("g", f"expected {k} integrands, got {len(raw_g)}")
    g = tuple(parse_field(f"g[{j}]", src) for j, src in enumerate(raw_g))

    phi: tuple[Expression, ...] = ()
    if mode == "ocp":
        raw_phi = data.get("phi", [])
        if len(raw_phi) != n:
            raise ValidationError("phi", f"expected {n} components, got {len(raw_phi)}")
        phi = tuple(parse_field(f"phi[{i}]", src) for i, src in enumerate(raw_phi))

    history = history_from_spec(need("history", dict), n)
    lo_needed, hi_needed = t1 - tau, t1
    tol = _GRID_RTOL * (1.0 + abs(lo_needed) + abs(hi_needed))
    if history.pieces[0].lo > lo_needed + tol or history.pieces[-1].hi < hi_needed - tol:
        raise ValidationError("history", f"pieces must cover [{lo_needed}, {hi_needed}]")

    terminal = None
    if mode == "lagrangian":
        terminal = np.asarray(need("terminal", list), dtype=float)
        if terminal.shape != (n,):
            raise ValidationError("terminal", f"expected {n} entries")
    elif "terminal" in data and data["terminal"] is not None:
        terminal = np.asarray(data["terminal"], dtype=float)

    levels = np.asarray(data.get("levels", []), dtype=float)
    if levels.shape != (k,):
        raise ValidationError("levels", f"expected {k} entries, got shape {levels.shape}")

    return DelayedProblem(
        n=n, k=k, mode=mode, L=L, g=g, tau=tau, t1=t1, t2=t2,
        history=history, terminal=terminal, levels=levels, phi=phi, m=m,
    )


# ---------------------------------------------------------------------------
# Multipliers and symmetries


@dataclass(frozen=True, eq=False)
class MultiplierVector:
    lam: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if not np.all(np.isfinite(arr)):
            raise ValidationError("lambda", "entries must be finite")
        object.__setattr__(self, "lam", arr)


def as_multiplier(lam, k: int) -> np.ndarray:
    """Coerce None / sequence / MultiplierVector to a validated (k,) array."""
    if lam is None:
        return np.zeros(k)
    if isinstance(lam, MultiplierVector):
        arr = lam.lam
    else:
        arr = np.atleast_1d(np.asarray(lam, dtype=float))
    if arr.shape != (k,):
        raise ValidationError("lambda", f"expected {k} entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("lambda", "entries must be finite")
    return arr


_GENERATOR_SLOTS_MSG = "may reference only t and q[i]"


@dataclass(frozen=True, eq=False)
class Symmetry:
    """Infinitesimal generator pair (eta, xi) plus a gauge term."""

    eta: Expression
    xi: tuple[Expression, ...]
    phi_gauge: Expression

    def __post_init__(self):
        allowed = {"t"} | {f"q[{i}]" for i in range(len(self.xi))}
        if not set(self.eta.free_slots) <= allowed:
            raise ValidationError("eta", _GENERATOR_SLOTS_MSG)
        for i, xi_i in enumerate(self.xi):
            if not set(xi_i.free_slots) <= allowed:
                raise ValidationError(f"xi[{i}]", _GENERATOR_SLOTS_MSG)


def symmetry_from_strings(
    problem: DelayedProblem,
    eta: str,
    xi: str | Sequence[str],
    phi: str | None = None,
) -> Symmetry:
    """Parse generator sources; xi may be one comma-joined string for n > 1."""
    n = problem.n
    if isinstance(xi, str):
        xi_parts = [part.strip() for part in xi.split(",")] if n > 1 else [xi]
    else:
        xi_parts = list(xi)
    if len(xi_parts) != n:
        raise ValidationError("xi", f"expected {n} components")
    eta_expr = parse_expression(eta, n=n, mode="lagrangian")
    xi_exprs = tuple(parse_expression(part, n=n, mode="lagrangian") for part in xi_parts)
    phi_expr = (
        zero_expression(n=n, mode="lagrangian")
        if phi is None
        else parse_expression(phi, n=n, mode="lagrangian")
    )
    return Symmetry(eta=eta_expr, xi=xi_exprs, phi_gauge=phi_expr)


# ---------------------------------------------------------------------------
# Trajectories

DerivativePair = namedtuple("DerivativePair", ["left", "right"])

_POLICIES = ("central", "one_sided_left", "one_sided_right")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniform grid of state (and optionally control/costate) node values.

    The grid covers [t1 - tau, t2] for state trajectories, history included.
    `kink_set` lists node indices where the trajectory is not differentiable;
    if None, kinks are detected from the jump of the one-sided difference
    quotients (exact for piecewise-linear data).
    """

    t_start: float
    h: float
    values: np.ndarray  # (M+1, n)
    u: np.ndarray | None = None
    p: np.ndarray | None = None
    derivative_policy: str = "central"
    kink_set: tuple[int, ...] | None = None

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] < 2:
            raise ValidationError("values", "need at least two nodes")
        if self.h <= 0:
            raise ValidationError("h", "step must be positive")
        if self.derivative_policy not in _POLICIES:
            raise ValidationError("derivative_policy", f"must be one of {_POLICIES}")
        object.__setattr__(self, "values", values)
        for name in ("u", "p"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.atleast_2d(np.asarray(arr, dtype=float))
                if arr.shape[0] != values.shape[0]:
                    raise ValidationError(name, "needs one row per node")
                object.__setattr__(self, name, arr)

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def t_end(self) -> float:
        return self.t_start + (self.num_nodes - 1) * self.h

    @cached_property
    def node_times(self) -> np.ndarray:
        return self.t_start + self.h * np.arange(self.num_nodes)

    @cached_property
    def slopes(self) -> np.ndarray:
        """Difference quotient of each grid interval, shape (M, n)."""
        return np.diff(self.values, axis=0) / self.h

    @cached_property
    def kinks(self) -> frozenset[int]:
        """Nodes flagged as non-differentiable.

        Auto-detection flags a node when its one-sided difference quotients
        differ by more than kink_tol = 1e-6 (1 + slope scale) AND the jump is
        isolated (well above the jumps at the neighboring nodes).  The second
        test separates a clean corner -- zero jumps next to one large jump,
        as piecewise-linear data produces -- from the uniform O(h) jumps of a
        smooth curved trajectory and from the jump clusters left by corrupted
        node values, neither of which is a corner.
        """
        if self.kink_set is not None:
            return frozenset(int(i) for i in self.kink_set)
        s = self.slopes
        jump = np.max(np.abs(s[1:] - s[:-1]), axis=1)  # jump[j-1] is node j's
        scale = np.max(np.maximum(np.abs(s[1:]), np.abs(s[:-1])), axis=1)
        big = jump > KINK_TOL_FACTOR * (1.0 + scale)
        neighbor = np.zeros_like(jump)
        neighbor[1:] = jump[:-1]
        neighbor[:-1] = np.maximum(neighbor[:-1], jump[1:])
        isolated = jump > 4.0 * neighbor
        return frozenset(int(i) for i in np.nonzero(big & isolated)[0] + 1)

    def index_of(self, t: float) -> int:
        pos = (t - self.t_start) / self.h
        node = int(round(pos))
        if not (0 <= node < self.num_nodes) or abs(pos - node) > 1e-6:
            raise ValidationError("t", f"{t} is not a grid node")
        return node

    def _endpoint_slope(self, node: int) -> np.ndarray:
        # second-order one-sided estimate at the first/last node
        v, h = self.values, self.h
        if node == 0:
            return (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h) if self.num_nodes > 2 \
                else self.slopes[0]
        return (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h) if self.num_nodes > 2 \
            else self.slopes[-1]

    def derivative(self, node: int):
        """Finite-difference velocity at a node, per the trajectory's policy.

        At flagged kink nodes returns DerivativePair(left, right); callers
        must not average the two into a two-sided value.
        """
        if not (0 <= node < self.num_nodes):
            raise IndexError(f"node {node} out of range [0, {self.num_nodes})")
        s = self.slopes
        if node in self.kinks:
            return DerivativePair(left=s[node - 1].copy(), right=s[node].copy())
        if node == 0:
            return self._endpoint_slope(0)
        if node == self.num_nodes - 1:
            return self._endpoint_slope(node)
        policy = self.derivative_policy
        if policy == "one_sided_left":
            return s[node - 1].copy()
        if policy == "one_sided_right":
            return s[node].copy()
        return (self.values[node + 1] - self.values[node - 1]) / (2.0 * self.h)


def derivative(traj: Trajectory, node: int):
    return traj.derivative(node)


# ---------------------------------------------------------------------------
# Grids bound to a problem


@dataclass(frozen=True)
class GridInfo:
    """Index geometry of a trajectory relative to a problem."""

    m: int        # delay in steps, tau = m h
    i1: int       # node index of t1
    i2: int       # node index of t2 (last node)
    h: float

    @property
    def num_quadrature_nodes(self) -> int:
        return self.i2 - self.i1 + 1


def grid_info(problem: DelayedProblem, traj: Trajectory) -> GridInfo:
    """Validate commensurability and coverage; return the index geometry."""
    h = traj.h
    ratio = problem.tau / h
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > _GRID_RTOL * max(1.0, ratio):
        raise ValidationError(
            "tau", f"tau={problem.tau} is not an integer multiple of the step h={h}"
        )
    tol = _GRID_RTOL * (1.0 + abs(problem.t1) + abs(problem.t2))
    if abs(traj.t_start - (problem.t1 - problem.tau)) > tol:
        raise ValidationError(
            "trajectory", f"must start at t1 - tau = {problem.t1 - problem.tau}"
        )
    if abs(traj.t_end - problem.t2) > tol:
        raise ValidationError("trajectory", f"must end at t2 = {problem.t2}")
    if traj.n != problem.n:
        raise ValidationError("trajectory", f"state dimension {traj.n} != n = {problem.n}")
    M = traj.num_nodes - 1
    if M < 2 * m:
        raise ValidationError("trajectory", "needs at least 2 tau of span")
    return GridInfo(m=m, i1=m, i2=M, h=h)


def problem_grid(problem: DelayedProblem, N: int) -> tuple[float, float, int, int]:
    """Grid layout for N intervals on [t1, t2]: (t_start, h, m, M)."""
    if N < 2:
        raise ValidationError("N", "need at least 2 intervals")
    h = problem.span / N
    ratio = problem.tau / h
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ValidationError(
            "N", f"N={N} gives step h={h} that does not divide tau={problem.tau}"
        )
    return problem.t1 - problem.tau, h, m, N + m


def sample_history(problem: DelayedProblem, times: np.ndarray) -> np.ndarray:
    return np.array([problem.history.value(t) for t in times])


def trajectory_from_function(
    problem: DelayedProblem,
    N: int,
    fn: Callable[[float], Sequence[float]],
    u_fn: Callable[[float], Sequence[float]] | None = None,
    p_fn: Callable[[float], Sequence[float]] | None = None,
    kink_set: Sequence[int] | None = None,
) -> Trajectory:
    """Sample q(t) (and optionally u, p) on the problem grid with N intervals."""
    t_start, h, m, M = problem_grid(problem, N)
    times = t_start + h * np.arange(M + 1)
    values = np.array([np.atleast_1d(np.asarray(fn(t), dtype=float)) for t in times])
    u = p = None
    if u_fn is not None:
        u = np.array([np.atleast_1d(np.asarray(u_fn(t), dtype=float)) for t in times])
    if p_fn is not None:
        p = np.array([np.atleast_1d(np.asarray(p_fn(t), dtype=float)) for t in times])
    kinks = tuple(kink_set) if kink_set is not None else None
    return Trajectory(t_start=t_start, h=h, values=values, u=u, p=p, kink_set=kinks)


def linear_init_trajectory(problem: DelayedProblem, N: int) -> Trajectory:
    """History samples followed by the linear interpolant delta(t1) -> q_t2."""
    t_start, h, m, M = problem_grid(problem, N)
    times = t_start + h * np.arange(M + 1)
    values = np.empty((M + 1, problem.n))
    values[: m + 1] = sample_history(problem, times[: m + 1])
    q1 = values[m]
    q2 = np.asarray(problem.terminal, dtype=float)
    frac = (times[m:] - problem.t1) / problem.span
    values[m:] = q1 + np.outer(frac, q2 - q1)
    return Trajectory(t_start=t_start, h=h, values=values, kink_set=())


# ---------------------------------------------------------------------------
# Quadrature of the functionals


def _env_entry(env: dict, name: str, array: np.ndarray) -> None:
    for i in range(array.shape[1]):
        env[f"{name}[{i}]"] = array[:, i]


def interval_envs(
    problem: DelayedProblem,
    traj: Trajectory,
    lam: np.ndarray | None = None,
) -> tuple[dict, dict, GridInfo]:
    """Slot environments at the left/right endpoints of quadrature intervals.

    Both environments evaluate the integrand with the interval's own slope in
    the velocity slots and the slope of the interval m steps earlier in the
    delayed-velocity slots, i.e. the integrand's one-sided limits.
    """
    info = grid_info(problem, traj)
    m, i1, i2 = info.m, info.i1, info.i2
    idx = np.arange(i1, i2)  # interval = [node idx, node idx+1]
    times = traj.node_times
    v, s = traj.values, traj.slopes
    envL: dict = {"t": times[idx]}
    envR: dict = {"t": times[idx + 1]}
    _env_entry(envL, "q", v[idx])
    _env_entry(envR, "q", v[idx + 1])
    _env_entry(envL, "qtau", v[idx - m])
    _env_entry(envR, "qtau", v[idx + 1 - m])
    for env in (envL, envR):
        _env_entry(env, "qd", s[idx])
        _env_entry(env, "qdtau", s[idx - m])
    if lam is not None:
        for j, value in enumerate(np.atleast_1d(lam)):
            envL[f"lambda[{j}]"] = value
            envR[f"lambda[{j}]"] = value
    return envL, envR, info


def node_envs(
    problem: DelayedProblem,
    traj: Trajectory,
    lam: np.ndarray | None = None,
) -> tuple[dict, GridInfo]:
    """Data-only slot environment at the quadrature nodes (ocp mode)."""
    info = grid_info(problem, traj)
    m, i1, i2 = info.m, info.i1, info.i2
    idx = np.arange(i1, i2 + 1)
    env: dict = {"t": traj.node_times[idx]}
    _env_entry(env, "q", traj.values[idx])
    _env_entry(env, "qtau", traj.values[idx - m])
    if traj.u is not None:
        _env_entry(env, "u", traj.u[idx])
        _env_entry(env, "utau", traj.u[idx - m])
    if traj.p is not None:
        _env_entry(env, "p", traj.p[idx])
    if lam is not None:
        for j, value in enumerate(np.atleast_1d(lam)):
            env[f"lambda[{j}]"] = value
    return env, info


def integrate_expression(
    problem: DelayedProblem,
    traj: Trajectory,
    e: Expression,
    lam: np.ndarray | None = None,
) -> float:
    """Trapezoidal value of the integral of e along the trajectory."""
    if problem.mode == "ocp":
        env, info = node_envs(problem, traj, lam)
        f = np.broadcast_to(np.asarray(e.evaluate(env), dtype=float),
                            (info.num_quadrature_nodes,))
        return float(np.trapezoid(f, dx=info.h))
    envL, envR, info = interval_envs(problem, traj, lam)
    count = info.i2 - info.i1
    fL = np.broadcast_to(np.asarray(e.evaluate(envL), dtype=float), (count,))
    fR = np.broadcast_to(np.asarray(e.evaluate(envR), dtype=float), (count,))
    return float(0.5 * info.h * np.sum(fL + fR))


def functional_value(problem: DelayedProblem, traj: Trajectory) -> tuple[float, np.ndarray]:
    """Objective J and constraint values I (one entry per constraint)."""
    J = integrate_expression(problem, traj, problem.L)
    I = np.array([integrate_expression(problem, traj, gj) for gj in problem.g])
    return J, I


# ---------------------------------------------------------------------------
# Trajectory CSV files ('.' decimal, LF endings, one row per node)


def save_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    columns = [("t", traj.node_times)]
    columns += [(f"q{i}", traj.values[:, i]) for i in range(traj.n)]
    if traj.u is not None:
        columns += [(f"u{a}", traj.u[:, a]) for a in range(traj.u.shape[1])]
    if traj.p is not None:
        columns += [(f"p{i}", traj.p[:, i]) for i in range(traj.p.shape[1])]
    header = ",".join(name for name, _ in columns)
    rows = [header]
    for r in range(traj.num_nodes):
        rows.append(",".join(repr(float(col[r])) for _, col in columns))
    Path(path).write_text("\n".join(rows) + "\n", newline="\n")


def load_trajectory_csv(path: str | Path) -> Trajectory:
    lines = [line for line in Path(path).read_text().splitlines() if line.strip()]
    if len(lines) < 3:
        raise ValidationError("trajectory", "CSV needs a header and at least two rows")
    header = [name.strip() for name in lines[0].split(",")]
    if header[0] != "t":
        raise ValidationError("trajectory", "first CSV column must be 't'")
    data = np.array([[float(cell) for cell in line.split(",")] for line in lines[1:]])
    if data.shape[1] != len(header):
        raise ValidationError("trajectory", "row width does not match header")
    times = data[:, 0]
    h = float(times[-1] - times[0]) / (len(times) - 1)  # span average beats
    steps = np.diff(times)                              # adjacent differences
    if h <= 0 or np.any(np.abs(steps - h) > 1e-9 * max(1.0, abs(h))):
        raise ValidationError("trajectory", "time column must be a uniform grid")

    def block(prefix):
        names = [name for name in header if name.startswith(prefix) and name[len(prefix):].isdigit()]
        if not names:
            return None
        names.sort(key=lambda name: int(name[len(prefix):]))
        cols = [header.index(name) for name in names]
        return data[:, cols]

    q = block("q")
    if q is None:
        raise ValidationError("trajectory", "no q columns found")
    return Trajectory(t_start=float(times[0]), h=h, values=q, u=block("u"), p=block("p"))

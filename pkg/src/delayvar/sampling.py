"""Nodal evaluation of expressions along a delayed trajectory.

Necessary-condition residuals need expression values and slot partials at
every grid node of [t1, t2], with the velocity slots filled from finite
differences.  At a kink of a piecewise-linear trajectory the two one-sided
difference quotients are both exact but different, so each node is sampled
twice -- once with left-interval slopes throughout, once with right-interval
slopes -- and the two evaluations are averaged.  The average is second-order
accurate at smooth nodes and the per-side evaluations stay exact on
piecewise-linear data (kink nodes themselves are excluded from verdicts by
the callers).  At t1 only the right-sided sample exists and at t2 only the
left-sided one; there the sample uses second-order one-sided difference
quotients in every velocity slot so that smooth trajectories keep O(h^2)
accuracy at the interval ends.
"""

from __future__ import annotations

import numpy as np

from .expr import Expression
from .model import DelayedProblem, GridInfo, Trajectory, as_multiplier, grid_info


def cumulative_trapezoid(y: np.ndarray, h: float) -> np.ndarray:
    """Running trapezoidal integral along axis 0, starting at zero."""
    y = np.asarray(y, dtype=float)
    steps = 0.5 * h * (y[1:] + y[:-1])
    out = np.zeros_like(y)
    out[1:] = np.cumsum(steps, axis=0)
    return out


def best_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Central differences inside, second-order one-sided at the ends."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * h)
    if v.shape[0] > 2:
        out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    else:
        out[0] = out[-1] = (v[1] - v[0]) / h
    return out


def second_difference(values: np.ndarray, h: float) -> np.ndarray:
    """Second difference quotient per node, shifted stencils at the ends."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    if v.shape[0] > 2:
        out[0] = (v[0] - 2.0 * v[1] + v[2]) / (h * h)
        out[-1] = (v[-1] - 2.0 * v[-2] + v[-3]) / (h * h)
    else:
        out[0] = out[-1] = 0.0
    return out


def _fill(env: dict, name: str, array: np.ndarray) -> None:
    for i in range(array.shape[1]):
        env[f"{name}[{i}]"] = array[:, i]


class TrajectorySampler:
    """Evaluate expressions (values and partials) at the nodes of [t1, t2].

    Row `pos` corresponds to grid node i1 + pos, pos = 0 .. N; delayed slots
    are index shifts by m = tau/h.  In ocp mode all slots are node data and
    the left/right machinery is unnecessary.
    """

    def __init__(self, problem: DelayedProblem, traj: Trajectory, lam=None):
        self.problem = problem
        self.traj = traj
        self.info: GridInfo = grid_info(problem, traj)
        self.lam = as_multiplier(lam, problem.k)
        self.m = self.info.m
        self.i1, self.i2 = self.info.i1, self.info.i2
        self.h = self.info.h
        self.N = self.i2 - self.i1
        self.rows = np.arange(self.i1, self.i2 + 1)
        self.row_times = traj.node_times[self.rows]
        # row position of the regime boundary t2 - tau
        self.boundary_row = self.N - self.m
        self._row_cache: dict = {}
        self._pinned: list = []  # keeps cached expressions alive so ids stay unique

    # -- derivative tables ---------------------------------------------------

    def _one_sided2(self, node: int, side: str) -> np.ndarray:
        v, h = self.traj.values, self.traj.h
        if side == "right":
            if node + 2 < self.traj.num_nodes:
                return (-3.0 * v[node] + 4.0 * v[node + 1] - v[node + 2]) / (2.0 * h)
            return self.traj.slopes[node]
        if node >= 2:
            return (3.0 * v[node] - 4.0 * v[node - 1] + v[node - 2]) / (2.0 * h)
        return self.traj.slopes[node - 1]

    def _side_tables(self) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self._dL, self._dR
        except AttributeError:
            pass
        s = self.traj.slopes
        M = self.traj.num_nodes - 1
        dL = np.empty((M + 1, self.traj.n))
        dR = np.empty((M + 1, self.traj.n))
        dL[1:] = s
        dR[:-1] = s
        dL[0] = self._one_sided2(0, "right")   # placeholder, row overridden
        dR[M] = self._one_sided2(M, "left")    # placeholder, row overridden
        self._dL, self._dR = dL, dR
        return dL, dR

    def qdot_rows(self) -> np.ndarray:
        """Velocity used in condition formulas at each row, shape (N+1, n)."""
        dL, dR = self._side_tables()
        out = 0.5 * (dL[self.rows] + dR[self.rows])
        out[0] = self._one_sided2(self.i1, "right")
        out[-1] = self._one_sided2(self.i2, "left")
        return out

    def qdot_nodes(self) -> np.ndarray:
        return best_derivative(self.traj.values, self.h)

    def qddot_nodes(self) -> np.ndarray:
        return second_difference(self.traj.values, self.h)

    # -- environments ----------------------------------------------------------

    def _lambda_entries(self, env: dict) -> None:
        for j, value in enumerate(self.lam):
            env[f"lambda[{j}]"] = value

    def _env_side(self, table: np.ndarray) -> dict:
        traj, rows, m = self.traj, self.rows, self.m
        env: dict = {"t": self.row_times}
        _fill(env, "q", traj.values[rows])
        _fill(env, "qtau", traj.values[rows - m])
        _fill(env, "qd", table[rows])
        _fill(env, "qdtau", table[rows - m])
        self._lambda_entries(env)
        return env

    def _env_endpoint(self, node: int, side: str) -> dict:
        traj, m = self.traj, self.m
        d_here = self._one_sided2(node, side)
        d_delayed = self._one_sided2(node - m, side)
        env: dict = {"t": traj.node_times[node]}
        for i in range(traj.n):
            env[f"q[{i}]"] = traj.values[node, i]
            env[f"qtau[{i}]"] = traj.values[node - m, i]
            env[f"qd[{i}]"] = d_here[i]
            env[f"qdtau[{i}]"] = d_delayed[i]
        self._lambda_entries(env)
        return env

    def _env_data(self) -> dict:
        traj, rows, m = self.traj, self.rows, self.m
        env: dict = {"t": self.row_times}
        _fill(env, "q", traj.values[rows])
        _fill(env, "qtau", traj.values[rows - m])
        if traj.u is not None:
            _fill(env, "u", traj.u[rows])
            _fill(env, "utau", traj.u[rows - m])
        if traj.p is not None:
            _fill(env, "p", traj.p[rows])
        self._lambda_entries(env)
        return env

    # -- evaluation --------------------------------------------------------

    def _as_rows(self, value) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full(self.N + 1, float(arr))
        return arr.copy()

    def eval_rows(
        self, e: Expression, slots: tuple[str, ...] = ()
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Value and requested partials of e at every row.

        Returns (values, partials) with arrays of shape (N+1,).
        """
        if self.problem.mode == "ocp":
            dual = e.dual(self._env_data(), slots)
            value = self._as_rows(dual.value)
            partials = {s: self._as_rows(dual.partials.get(s, 0.0)) for s in slots}
            return value, partials

        dL, dR = self._side_tables()
        left = e.dual(self._env_side(dL), slots)
        right = e.dual(self._env_side(dR), slots)
        first = e.dual(self._env_endpoint(self.i1, "right"), slots)
        last = e.dual(self._env_endpoint(self.i2, "left"), slots)

        def combine(lv, rv, fv, lastv):
            out = 0.5 * (self._as_rows(lv) + self._as_rows(rv))
            out[0] = fv
            out[-1] = lastv
            return out

        value = combine(left.value, right.value, first.value, last.value)
        partials = {}
        for s in slots:
            partials[s] = combine(
                left.partials.get(s, 0.0),
                right.partials.get(s, 0.0),
                first.partials.get(s, 0.0),
                last.partials.get(s, 0.0),
            )
        return value, partials

    def value_rows(self, e: Expression) -> np.ndarray:
        return self.eval_rows(e, ())[0]

    def partial_rows(self, e: Expression, family: str) -> np.ndarray:
        """Partials of e w.r.t. one slot family, shape (N+1, dim)."""
        dim = self.problem.m if family in ("u", "utau") else self.problem.n
        slots = tuple(f"{family}[{i}]" for i in range(dim))
        _, partials = self.eval_rows(e, slots)
        return np.column_stack([partials[s] for s in slots])

    def eval_families(
        self, e: Expression, families: tuple[str, ...]
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Value plus per-family partial matrices (N+1, dim of family)."""
        key = (id(e), families)
        if key in self._row_cache:
            return self._row_cache[key]
        slots: list[str] = []
        for family in families:
            if family == "t":
                slots.append("t")
                continue
            dim = self.problem.m if family in ("u", "utau") else self.problem.n
            slots.extend(f"{family}[{i}]" for i in range(dim))
        value, partials = self.eval_rows(e, tuple(slots))
        grouped: dict[str, np.ndarray] = {}
        for family in families:
            if family == "t":
                grouped["t"] = partials["t"]
                continue
            dim = self.problem.m if family in ("u", "utau") else self.problem.n
            grouped[family] = np.column_stack(
                [partials[f"{family}[{i}]"] for i in range(dim)]
            )
        result = (value, grouped)
        self._row_cache[key] = result
        self._pinned.append(e)
        return result

    # -- kink bookkeeping ----------------------------------------------------

    def included_rows(self, forward_shift_until: int | None = None) -> np.ndarray:
        """Mask of rows whose referenced nodes avoid the kink set.

        A row is dropped when its own node or the node one delay back is
        kinky, or -- for rows up to `forward_shift_until` (the delay-coupled
        regime) -- when the node one delay ahead is kinky.
        """
        kinks = self.traj.kinks
        if not kinks:
            return np.ones(self.N + 1, dtype=bool)
        karr = np.fromiter(kinks, dtype=int)
        nodes = self.rows
        mask = ~np.isin(nodes, karr) & ~np.isin(nodes - self.m, karr)
        if forward_shift_until is not None:
            head = slice(0, forward_shift_until + 1)
            mask[head] &= ~np.isin(nodes[head] + self.m, karr)
        return mask

"""Built-in problems with known reference extremals.

`example33`: the cubic delayed problem

    J[q] = int_0^3 (qdot(t) + qdot(t-1))^3 dt,   I[q] = int_0^3 (qdot + qdot_tau)^2 dt = 0,
    q(t) = -t on [-1, 0], q(3) = 1,

whose sawtooth extremal (slopes alternating -1, +1, -1, +1 on unit pieces)
makes both integrands vanish almost everywhere.  It is an abnormal
extremizer: the constraint integrand's own Euler-Lagrange system already
holds along it.

`parabola`: the delay-inert classical oracle

    L = qdot^2,  g = q,  l = 1,  q(0) = q(1) = 0,  tau = 1/40,

with extremal q(t) = 6 t (1 - t) and multiplier lambda = 24 (from
2 qddot = -lambda).  The delay slots are unused, so the delayed machinery
must reproduce the classical answer.
"""

from __future__ import annotations

import numpy as np

from .model import DelayedProblem, Trajectory, load_problem, problem_grid

BUILTIN_NAMES = ("example33", "parabola")

PARABOLA_TAU = 0.025  # 1/40: keeps tau = m h for N any multiple of 40
PARABOLA_LAMBDA = 24.0

_EXAMPLE33_SPEC = {
    "n": 1,
    "k": 1,
    "mode": "lagrangian",
    "tau": 1.0,
    "t1": 0.0,
    "t2": 3.0,
    "L": "(qd[0] + qdtau[0])^3",
    "g": ["(qd[0] + qdtau[0])^2"],
    "history": {"pieces": [{"from": -1.0, "to": 0.0, "coeffs": [0.0, -1.0]}]},
    "terminal": [1.0],
    "levels": [0.0],
}

_PARABOLA_SPEC = {
    "n": 1,
    "k": 1,
    "mode": "lagrangian",
    "tau": PARABOLA_TAU,
    "t1": 0.0,
    "t2": 1.0,
    "L": "qd[0]^2",
    "g": ["q[0]"],
    "history": {"pieces": [{"from": -PARABOLA_TAU, "to": 0.0, "coeffs": [0.0]}]},
    "terminal": [0.0],
    "levels": [1.0],
}


def builtin_problem(name: str) -> DelayedProblem:
    if name == "example33":
        return load_problem(_EXAMPLE33_SPEC)
    if name == "parabola":
        return load_problem(_PARABOLA_SPEC)
    raise KeyError(f"unknown builtin {name!r}; available: {', '.join(BUILTIN_NAMES)}")


def builtin_spec(name: str) -> dict:
    if name == "example33":
        return dict(_EXAMPLE33_SPEC)
    if name == "parabola":
        return dict(_PARABOLA_SPEC)
    raise KeyError(f"unknown builtin {name!r}; available: {', '.join(BUILTIN_NAMES)}")


def example33_state(t: float) -> float:
    """The piecewise-linear extremal of example33 on [-1, 3]."""
    if t <= 0.0:
        return -t
    if t <= 1.0:
        return t
    if t <= 2.0:
        return -t + 2.0
    return t - 2.0


def example33_extremal(N: int = 300) -> Trajectory:
    """Grid samples of the sawtooth extremal; N must be a multiple of 3."""
    problem = builtin_problem("example33")
    t_start, h, m, M = problem_grid(problem, N)
    if N % 3 != 0:
        raise ValueError("example33 grids need N divisible by 3 to hit the kinks")
    times = t_start + h * np.arange(M + 1)
    values = np.array([[example33_state(t)] for t in times])
    kinks = (m, 2 * m, 3 * m)  # the junctions at t = 0, 1, 2
    return Trajectory(t_start=t_start, h=h, values=values, kink_set=kinks)


def parabola_state(t: float) -> float:
    return 6.0 * t * (1.0 - t) if t > 0.0 else 0.0


def parabola_extremal(N: int = 200) -> tuple[Trajectory, float]:
    """Samples of q = 6 t (1 - t) plus the exact multiplier lambda = 24.

    The junction with the constant history at t1 is a genuine kink (history
    slope 0 against extremal slope 6) and is flagged as such.
    """
    problem = builtin_problem("parabola")
    t_start, h, m, M = problem_grid(problem, N)
    times = t_start + h * np.arange(M + 1)
    values = np.array([[parabola_state(t)] for t in times])
    return (
        Trajectory(t_start=t_start, h=h, values=values, kink_set=(m,)),
        PARABOLA_LAMBDA,
    )


def builtin_reference(name: str, N: int | None = None) -> tuple[Trajectory, np.ndarray]:
    """Reference trajectory and multiplier for a builtin (verification inputs)."""
    if name == "example33":
        traj = example33_extremal(N or 300)
        return traj, np.array([0.0])
    if name == "parabola":
        traj, lam = parabola_extremal(N or 200)
        return traj, np.array([lam])
    raise KeyError(f"unknown builtin {name!r}; available: {', '.join(BUILTIN_NAMES)}")

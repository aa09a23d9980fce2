import numpy as np
import pytest

from delayvar import model, problems


@pytest.fixture(scope="session")
def example33():
    return problems.builtin_problem("example33")


@pytest.fixture(scope="session")
def example33_traj():
    return problems.example33_extremal(30)


@pytest.fixture(scope="session")
def parabola():
    return problems.builtin_problem("parabola")


@pytest.fixture(scope="session")
def rich_problem():
    """A generic problem touching every Lagrangian slot (and t)."""
    spec = {
        "n": 1,
        "k": 1,
        "mode": "lagrangian",
        "tau": 0.5,
        "t1": 0.0,
        "t2": 2.0,
        "L": "qd[0]^2/2 + q[0]*qtau[0] + sin(t)*qdtau[0] + q[0]^2/4",
        "g": ["q[0]*qd[0] + qtau[0]^2 + t*q[0]/2"],
        "history": {"pieces": [{"from": -0.5, "to": 0.0, "coeffs": [0.1, 0.2]}]},
        "terminal": [0.3],
        "levels": [0.5],
    }
    return model.load_problem(spec)


def smooth_trajectory(problem, N, rng):
    """Random smooth trajectory on the problem grid (no kinks)."""
    coeffs = rng.uniform(-0.8, 0.8, size=(problem.n, 4))

    def fn(t):
        return [
            c[0] + c[1] * t + c[2] * np.sin(t) + c[3] * np.cos(2.0 * t)
            for c in coeffs
        ]

    return model.trajectory_from_function(problem, N, fn, kink_set=())


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)

import json

import numpy as np
import pytest

from delayvar import model, problems
from delayvar.model import (
    DerivativePair,
    MultiplierVector,
    Trajectory,
    ValidationError,
    functional_value,
    load_problem,
    load_trajectory_csv,
    save_trajectory_csv,
    symmetry_from_strings,
    trajectory_from_function,
)


class TestLoadProblem:
    def test_example33_roundtrip(self, example33):
        p = example33
        assert (p.n, p.k, p.tau, p.t1, p.t2) == (1, 1, 1.0, 0.0, 3.0)
        assert np.allclose(p.history.value(-1.0), [1.0])
        assert np.allclose(p.history.value(0.0), [0.0])
        assert np.allclose(p.history.deriv(-0.5), [-1.0])
        assert np.allclose(p.terminal, [1.0])

    def test_loads_json_text_and_path(self, tmp_path):
        spec = problems.builtin_spec("example33")
        text = json.dumps(spec)
        p1 = load_problem(text)
        path = tmp_path / "p.json"
        path.write_text(text)
        p2 = load_problem(path)
        assert str(p1.L) == str(p2.L)

    def test_delay_longer_than_interval_rejected(self):
        spec = problems.builtin_spec("example33")
        spec["tau"] = 5.0
        with pytest.raises(ValidationError, match="'tau'"):
            load_problem(spec)

    def test_missing_constraints_rejected(self):
        spec = problems.builtin_spec("example33")
        spec["g"] = []
        with pytest.raises(ValidationError, match="'g'"):
            load_problem(spec)

    def test_bad_expression_names_field(self):
        spec = problems.builtin_spec("example33")
        spec["L"] = "qd[0] +"
        with pytest.raises(ValidationError, match="'L'"):
            load_problem(spec)

    def test_missing_field(self):
        spec = problems.builtin_spec("example33")
        del spec["n"]
        with pytest.raises(ValidationError, match="'n'"):
            load_problem(spec)

    def test_history_must_cover_delay_window(self):
        spec = problems.builtin_spec("example33")
        spec["history"] = {"pieces": [{"from": -0.5, "to": 0.0, "coeffs": [0.0, -1.0]}]}
        with pytest.raises(ValidationError, match="history"):
            load_problem(spec)

    def test_terminal_dimension(self):
        spec = problems.builtin_spec("example33")
        spec["terminal"] = [1.0, 2.0]
        with pytest.raises(ValidationError, match="terminal"):
            load_problem(spec)


class TestDerivative:
    def test_interior_slope(self, example33_traj):
        node = example33_traj.index_of(0.5)
        d = example33_traj.derivative(node)
        assert np.allclose(d, [1.0], atol=1e-10)

    def test_constant_trajectory(self):
        traj = Trajectory(t_start=0.0, h=0.1, values=np.ones((11, 1)))
        for node in range(1, 10):
            assert np.all(traj.derivative(node) == 0.0)

    def test_kink_reports_one_sided_pair(self, example33_traj):
        node = example33_traj.index_of(1.0)
        d = example33_traj.derivative(node)
        assert isinstance(d, DerivativePair)
        assert np.allclose(d.left, [1.0], atol=1e-10)
        assert np.allclose(d.right, [-1.0], atol=1e-10)

    def test_out_of_range(self, example33_traj):
        with pytest.raises(IndexError):
            example33_traj.derivative(example33_traj.num_nodes)

    def test_policies(self):
        values = np.arange(11.0)[:, None] ** 2  # q = (i h)^2 with h = 1
        traj_l = Trajectory(t_start=0.0, h=1.0, values=values, kink_set=(),
                            derivative_policy="one_sided_left")
        traj_r = Trajectory(t_start=0.0, h=1.0, values=values, kink_set=(),
                            derivative_policy="one_sided_right")
        assert traj_l.derivative(5) == pytest.approx([9.0])   # (25-16)/1
        assert traj_r.derivative(5) == pytest.approx([11.0])  # (36-25)/1


class TestKinkDetection:
    def test_example33_corners(self, example33):
        traj = trajectory_from_function(example33, 30, lambda t: [problems.example33_state(t)])
        assert sorted(traj.kinks) == [10, 20, 30]

    def test_smooth_curvature_not_flagged(self, parabola):
        traj = trajectory_from_function(parabola, 80, lambda t: [problems.parabola_state(t)])
        # only the genuine corner at t1 (history slope 0 vs extremal slope 6)
        assert sorted(traj.kinks) == [2]

    def test_explicit_set_wins(self, example33):
        traj = trajectory_from_function(
            example33, 30, lambda t: [problems.example33_state(t)], kink_set=(7,)
        )
        assert traj.kinks == frozenset({7})


class TestFunctionalValue:
    def test_example33_functionals_vanish(self, example33, example33_traj):
        J, I = functional_value(example33, example33_traj)
        assert abs(J) <= 1e-12
        assert np.all(np.abs(I) <= 1e-12)

    def test_constant_integrands(self):
        spec = problems.builtin_spec("example33")
        spec["L"] = "1"
        spec["g"] = ["1"]
        p = load_problem(spec)
        traj = trajectory_from_function(p, 30, lambda t: [0.0])
        J, I = functional_value(p, traj)
        assert J == pytest.approx(3.0, abs=1e-13)
        assert I[0] == pytest.approx(3.0, abs=1e-13)

    def test_unit_slope(self):
        spec = {
            "n": 1, "k": 0, "mode": "lagrangian", "tau": 0.5, "t1": 0.0, "t2": 1.0,
            "L": "qd[0]^2", "g": [],
            "history": {"pieces": [{"from": -0.5, "to": 0.0, "coeffs": [0.0, 1.0]}]},
            "terminal": [1.0], "levels": [],
        }
        p = load_problem(spec)
        traj = trajectory_from_function(p, 20, lambda t: [t])
        J, I = functional_value(p, traj)
        assert J == pytest.approx(1.0, abs=1e-13)
        assert I.shape == (0,)

    def test_quadrature_second_order(self):
        spec = {
            "n": 1, "k": 0, "mode": "lagrangian", "tau": 0.25, "t1": 0.0, "t2": 1.0,
            "L": "qd[0]^2", "g": [],
            "history": {"pieces": [{"from": -0.25, "to": 0.0, "coeffs": [0.0, 0.0, 0.0, 1.0]}]},
            "terminal": [1.0], "levels": [],
        }
        p = load_problem(spec)
        exact = 9.0 / 5.0  # int_0^1 (3 t^2)^2 dt

        def err(N):
            traj = trajectory_from_function(p, N, lambda t: [t**3])
            J, _ = functional_value(p, traj)
            return abs(J - exact)

        ratio = err(40) / err(80)
        assert 3.0 <= ratio <= 5.5

    def test_delayed_values_are_pure_index_shifts(self, rng):
        spec = {
            "n": 1, "k": 0, "mode": "lagrangian", "tau": 0.5, "t1": 0.0, "t2": 2.0,
            "L": "qtau[0]", "g": [],
            "history": {"pieces": [{"from": -0.5, "to": 0.0, "coeffs": [0.0, 1.0]}]},
            "terminal": [0.0], "levels": [],
        }
        p = load_problem(spec)
        values = rng.standard_normal((41, 1))
        traj = Trajectory(t_start=-0.5, h=2.5 / 40, values=values, kink_set=())
        m = 8  # tau / h
        i1, i2 = m, 40
        shifted = values[i1 - m : i2 + 1 - m, 0]
        expected = traj.h * (np.sum(shifted) - 0.5 * (shifted[0] + shifted[-1]))
        J, _ = functional_value(p, traj)
        assert J == pytest.approx(expected, abs=1e-14)

    def test_non_commensurate_step_rejected(self, example33):
        values = np.zeros((41, 1))
        traj = Trajectory(t_start=-1.0, h=0.11, values=values)
        with pytest.raises(ValidationError, match="tau"):
            functional_value(example33, traj)

    def test_coverage_rejected(self, example33):
        # grid starts at t1, missing the history span
        values = np.zeros((31, 1))
        traj = Trajectory(t_start=0.0, h=0.1, values=values)
        with pytest.raises(ValidationError, match="start"):
            functional_value(example33, traj)


class TestCsv:
    def test_roundtrip_bitwise(self, tmp_path, example33_traj):
        path = tmp_path / "traj.csv"
        save_trajectory_csv(example33_traj, path)
        back = load_trajectory_csv(path)
        assert back.t_start == example33_traj.t_start
        assert back.h == pytest.approx(example33_traj.h, rel=1e-12)
        assert np.array_equal(back.values, example33_traj.values)
        assert sorted(back.kinks) == sorted(example33_traj.kinks)

    def test_roundtrip_with_controls(self, tmp_path):
        traj = Trajectory(
            t_start=0.0, h=0.5, values=np.arange(6.0)[:, None],
            u=np.arange(6.0)[:, None] * 2, p=np.arange(6.0)[:, None] * 3,
        )
        path = tmp_path / "traj.csv"
        save_trajectory_csv(traj, path)
        back = load_trajectory_csv(path)
        assert np.array_equal(back.u, traj.u)
        assert np.array_equal(back.p, traj.p)
        assert path.read_text().splitlines()[0] == "t,q0,u0,p0"

    def test_nonuniform_grid_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,q0\n0.0,0.0\n0.1,1.0\n0.3,2.0\n")
        with pytest.raises(ValidationError, match="uniform"):
            load_trajectory_csv(path)


class TestSymmetryAndMultipliers:
    def test_generators_restricted_to_t_q(self, example33):
        symmetry_from_strings(example33, "1", "0")
        symmetry_from_strings(example33, "t*q[0]", "sin(t)")
        with pytest.raises(ValidationError, match="eta"):
            symmetry_from_strings(example33, "qd[0]", "0")

    def test_multiplier_must_be_finite(self):
        with pytest.raises(ValidationError):
            MultiplierVector(np.array([np.inf]))

    def test_gauge_term_may_use_all_slots(self, example33):
        sym = symmetry_from_strings(example33, "1", "0", phi="qd[0]*qtau[0]")
        assert "qd[0]" in sym.phi_gauge.free_slots

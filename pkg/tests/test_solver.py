import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import smooth_trajectory
from delayvar import problems
from delayvar.conditions import augmented_lagrangian
from delayvar.model import (
    Trajectory,
    ValidationError,
    linear_init_trajectory,
    load_problem,
)
from delayvar.solver import (
    SolveSettings,
    discretized_constraints,
    discretized_objective,
    problem_free_slice,
    quadrature_value_and_gradient,
    refine,
    solve_isoperimetric,
)


def fd_gradient(problem, lam, traj, step=1e-6):
    """Central-difference gradient over the free nodes (the oracle)."""
    lo, hi = problem_free_slice(problem, traj)
    F = augmented_lagrangian(problem)
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))

    def value(values):
        t = Trajectory(t_start=traj.t_start, h=traj.h, values=values, kink_set=())
        return quadrature_value_and_gradient(problem, t, F, lam_arr)[0]

    out = np.zeros((hi - lo, problem.n))
    for row in range(lo, hi):
        for comp in range(problem.n):
            up = traj.values.copy()
            dn = traj.values.copy()
            up[row, comp] += step
            dn[row, comp] -= step
            out[row - lo, comp] = (value(up) - value(dn)) / (2.0 * step)
    return out


def assert_gradient_matches(problem, lam, traj, rtol=1e-6):
    _, grad = discretized_objective(problem, lam, traj)
    oracle = fd_gradient(problem, lam, traj)
    err = np.max(np.abs(grad - oracle) / (1.0 + np.abs(grad)))
    assert err <= rtol, f"gradient mismatch {err:.2e}"


class TestGradient:
    def test_example33_random_trajectory(self, example33, rng):
        traj = smooth_trajectory(example33, 24, rng)
        assert_gradient_matches(example33, [1.3], traj)

    def test_example33_sixty_intervals(self, example33, rng):
        traj = smooth_trajectory(example33, 60, rng)
        assert_gradient_matches(example33, [0.4], traj)

    def test_rich_problem(self, rich_problem, rng):
        traj = smooth_trajectory(rich_problem, 32, rng)
        assert_gradient_matches(rich_problem, [-0.6], traj)

    def test_constant_lagrangian_zero_gradient(self):
        spec = problems.builtin_spec("example33")
        spec["L"], spec["g"], spec["levels"] = "1", ["1"], [3.0]
        p = load_problem(spec)
        traj = linear_init_trajectory(p, 30)
        _, grad = discretized_objective(p, [0.7], traj)
        assert np.all(grad == 0.0)

    def test_delay_inert_gradient_is_discrete_laplacian(self, parabola):
        # L = qdot^2: interior gradient = -2 (q_{i+1} - 2 q_i + q_{i-1}) / h
        traj = linear_init_trajectory(parabola, 40)
        values = traj.values.copy()
        rng = np.random.default_rng(7)
        lo, hi = problem_free_slice(parabola, traj)
        values[lo:hi, 0] += 0.1 * rng.standard_normal(hi - lo)
        traj = Trajectory(t_start=traj.t_start, h=traj.h, values=values, kink_set=())
        _, grad = discretized_objective(parabola, [0.0], traj)
        v, h = values[:, 0], traj.h
        stencil = -2.0 * (v[lo + 1 : hi + 1] - 2 * v[lo:hi] + v[lo - 1 : hi - 1]) / h
        assert np.max(np.abs(grad[:, 0] - stencil)) <= 1e-10

    def test_constraint_gradients(self, rich_problem, rng):
        traj = smooth_trajectory(rich_problem, 32, rng)
        I, grads = discretized_constraints(rich_problem, traj)
        assert I.shape == (1,)
        zero = np.zeros(1)
        _, gF = discretized_objective(rich_problem, [1.0], traj)
        _, gL = discretized_objective(rich_problem, zero, traj)
        # F = L - lambda g  =>  grad g = grad L - grad F at lambda = 1
        assert np.max(np.abs(grads[0] - (gL - gF))) <= 1e-12


class TestSolve:
    def test_parabola_recovery(self, parabola):
        res = solve_isoperimetric(parabola, SolveSettings(N=80))
        assert res.converged
        traj = res.trajectory
        exact = np.array([problems.parabola_state(t) for t in traj.node_times])
        assert np.max(np.abs(traj.values[:, 0] - exact)) <= 1e-3
        assert res.lam.lam[0] == pytest.approx(problems.PARABOLA_LAMBDA, abs=1e-2)
        assert res.normality == "normal"
        assert res.el_report.passed

    def test_kkt_invariant_at_convergence(self, parabola):
        settings = SolveSettings(N=80)
        res = solve_isoperimetric(parabola, settings)
        assert res.converged
        assert res.diagnostics["gradient_sup"] <= settings.inner_tol
        assert res.diagnostics["constraint_sup"] <= settings.outer_tol

    def test_boundary_nodes_untouched(self, parabola):
        res = solve_isoperimetric(parabola, SolveSettings(N=80))
        init = linear_init_trajectory(parabola, 80)
        m = 2  # tau / h at N = 80
        assert np.array_equal(res.trajectory.values[: m + 1], init.values[: m + 1])
        assert np.array_equal(res.trajectory.values[-1], init.values[-1])

    def test_inactive_constraint_gives_zero_multiplier(self, parabola):
        spec = problems.builtin_spec("parabola")
        spec["levels"] = [0.0]  # the unconstrained minimum q = 0 already has I = 0
        p = load_problem(spec)
        res = solve_isoperimetric(p, SolveSettings(N=40))
        assert res.converged
        assert abs(res.lam.lam[0]) <= 1e-6
        assert np.max(np.abs(res.trajectory.values)) <= 1e-6

    def test_infeasible_problem_flagged(self):
        spec = {
            "n": 1, "k": 1, "mode": "lagrangian", "tau": 0.25, "t1": 0.0, "t2": 1.0,
            "L": "qd[0]^2", "g": ["1"],
            "history": {"pieces": [{"from": -0.25, "to": 0.0, "coeffs": [0.0]}]},
            "terminal": [0.0], "levels": [2.0],
        }
        p = load_problem(spec)
        res = solve_isoperimetric(p, SolveSettings(N=20, max_outer=5))
        assert not res.converged
        # I = 1 regardless, so the reported constraint residual stays ~1
        assert res.diagnostics["constraint_sup"] == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self, parabola):
        a = solve_isoperimetric(parabola, SolveSettings(N=40))
        b = solve_isoperimetric(parabola, SolveSettings(N=40))
        assert np.array_equal(a.trajectory.values, b.trajectory.values)
        assert np.array_equal(a.lam.lam, b.lam.lam)

    def test_secant_update_variant(self, parabola):
        res = solve_isoperimetric(
            parabola, SolveSettings(N=40, outer_update="secant")
        )
        assert res.converged
        assert res.lam.lam[0] == pytest.approx(problems.PARABOLA_LAMBDA, abs=5e-2)

    def test_descent_property_of_inner_method(self, parabola):
        """Accepted inner iterates never increase the penalized objective."""
        traj = linear_init_trajectory(parabola, 40)
        lo, hi = problem_free_slice(parabola, traj)
        lam, rho = np.array([5.0]), 10.0
        F = augmented_lagrangian(parabola)

        def fun(x):
            values = traj.values.copy()
            values[lo:hi, 0] = x
            t = Trajectory(t_start=traj.t_start, h=traj.h, values=values, kink_set=())
            JL, gL = discretized_objective(parabola, np.zeros(1), t)
            I, gI = discretized_constraints(parabola, t)
            c = I - parabola.levels
            val = JL - lam @ c + 0.5 * rho * (c @ c)
            grad = gL[:, 0] - (lam[0] - rho * c[0]) * gI[0][:, 0]
            return val, grad

        seen = []
        minimize(
            fun, traj.values[lo:hi, 0], jac=True, method="L-BFGS-B",
            callback=lambda xk: seen.append(fun(xk)[0]),
            options={"maxiter": 200},
        )
        assert len(seen) > 3
        diffs = np.diff(np.asarray(seen))
        assert np.all(diffs <= 1e-10)


class TestRefine:
    def test_refinement_tightens_trajectory(self, parabola):
        coarse = solve_isoperimetric(parabola, SolveSettings(N=40))
        fine = refine(parabola, coarse, 2)
        assert fine.converged
        exact = lambda tr: np.array([problems.parabola_state(t) for t in tr.node_times])
        err_coarse = np.max(np.abs(coarse.trajectory.values[:, 0] - exact(coarse.trajectory)))
        err_fine = np.max(np.abs(fine.trajectory.values[:, 0] - exact(fine.trajectory)))
        assert err_coarse / err_fine >= 3.0
        # post: the EL sup-residual may not grow by more than 2x
        assert fine.el_report.sup_norm <= 2.0 * coarse.el_report.sup_norm + 1e-12

    def test_refine_matches_cold_start(self, parabola):
        """Same fixed point whether warm-started or solved from scratch
        (agreement is limited by the inner gradient tolerance)."""
        coarse = solve_isoperimetric(parabola, SolveSettings(N=40))
        warm = refine(parabola, coarse, 2)
        cold = solve_isoperimetric(parabola, SolveSettings(N=80))
        assert np.max(np.abs(warm.trajectory.values - cold.trajectory.values)) <= 1e-6
        assert warm.lam.lam[0] == pytest.approx(cold.lam.lam[0], abs=1e-5)

    def test_resolving_a_converged_solution_is_a_fixed_point(self, parabola):
        from dataclasses import replace

        cold = solve_isoperimetric(parabola, SolveSettings(N=80))
        again = solve_isoperimetric(
            parabola,
            replace(cold.settings, init="warm", warm_start=cold.trajectory,
                    lambda0=tuple(cold.lam.lam)),
        )
        diff = np.max(np.abs(again.trajectory.values - cold.trajectory.values))
        assert diff <= 1e-10

    def test_factor_three_accepted(self, parabola):
        coarse = solve_isoperimetric(parabola, SolveSettings(N=40))
        fine = refine(parabola, coarse, 3)
        assert fine.converged
        assert fine.trajectory.h == pytest.approx(1.0 / 120.0)

    def test_bad_factor_rejected(self, parabola):
        coarse = solve_isoperimetric(parabola, SolveSettings(N=40))
        with pytest.raises(ValidationError):
            refine(parabola, coarse, 1)

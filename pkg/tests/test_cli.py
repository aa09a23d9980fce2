import json
from pathlib import Path

import numpy as np
import pytest

from delayvar import problems
from delayvar.cli import main
from delayvar.model import Trajectory, load_trajectory_csv, save_trajectory_csv


def run(*argv):
    return main(list(argv))


@pytest.fixture()
def parabola_file(tmp_path):
    path = tmp_path / "parabola.json"
    path.write_text(json.dumps(problems.builtin_spec("parabola")))
    return str(path)


class TestSolveCommand:
    def test_solve_recovers_multiplier(self, parabola_file, tmp_path, capsys):
        out = tmp_path / "run"
        code = run("solve", "--problem", parabola_file, "--n", "80", "--out", str(out))
        assert code == 0
        result = json.loads((out / "result.json").read_text())
        assert result["converged"] is True
        assert result["lambda"][0] == pytest.approx(24.0, abs=1e-2)
        assert (out / "trajectory.csv").exists()
        assert (out / "manifest.json").exists()

    def test_validation_error_exits_2(self, tmp_path, capsys):
        spec = problems.builtin_spec("parabola")
        spec["tau"] = 5.0
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(spec))
        code = run("solve", "--problem", str(bad), "--n", "40")
        assert code == 2
        assert "tau" in capsys.readouterr().err

    def test_builtin_example33_runs(self, tmp_path, capsys):
        out = tmp_path / "e33"
        code = run("solve", "--builtin", "example33", "--n", "60",
                   "--max-outer", "6", "--out", str(out))
        assert code in (0, 3)
        result = json.loads((out / "result.json").read_text())
        assert "normality" in result
        assert (out / "report_el.json").exists()

    def test_missing_n_with_problem_file(self, parabola_file, capsys):
        assert run("solve", "--problem", parabola_file) == 2


class TestVerifyCommand:
    def test_builtin_extremal_passes(self, capsys):
        code = run("verify", "--builtin", "example33", "--lambda", "2",
                   "--tol", "1e-12", "--n", "30")
        assert code == 0
        out = capsys.readouterr().out
        assert "euler_lagrange" in out and "pass" in out

    def test_perturbed_node_fails_with_local_spike(self, tmp_path, capsys):
        traj = problems.example33_extremal(30)
        values = traj.values.copy()
        node = traj.index_of(0.5)
        values[node, 0] += 0.05
        bad = Trajectory(t_start=traj.t_start, h=traj.h, values=values)
        csv = tmp_path / "perturbed.csv"
        save_trajectory_csv(bad, csv)
        spec_file = tmp_path / "e33.json"
        spec_file.write_text(json.dumps(problems.builtin_spec("example33")))
        out = tmp_path / "rep"
        code = run("verify", "--problem", str(spec_file), "--traj", str(csv),
                   "--lambda", "2", "--tol", "1e-8", "--out", str(out))
        assert code == 1
        report = json.loads((out / "report_euler_lagrange.json").read_text())
        residuals = np.array([r[0] for r in report["residuals"]])
        included = np.array(report["included"])
        times = np.array(report["times"])
        residuals[~included] = 0.0
        spike = np.max(np.abs(residuals))
        spike_at = times[int(np.argmax(np.abs(residuals)))]
        assert abs(spike_at - 0.5) <= 0.11  # localized near the perturbed node
        # rows away from the perturbation and its delayed image see only the
        # constant shift the spike induces in the fitted regime constant
        far = (np.abs(times - 0.5) > 0.2) & (np.abs(times - 1.5) > 0.2) & included
        assert np.max(np.abs(residuals[far])) <= 0.15 * spike

    def test_non_commensurate_step_exits_2(self, tmp_path, capsys):
        rows = ["t,q0"] + [f"{-1 + 0.35 * i},{0.0}" for i in range(12)]
        csv = tmp_path / "grid.csv"
        csv.write_text("\n".join(rows) + "\n")
        spec_file = tmp_path / "e33.json"
        spec_file.write_text(json.dumps(problems.builtin_spec("example33")))
        code = run("verify", "--problem", str(spec_file), "--traj", str(csv))
        assert code == 2

    def test_traj_required_with_problem_file(self, parabola_file):
        assert run("verify", "--problem", parabola_file) == 2

    def test_ocp_problem_runs_pontryagin_reports(self, tmp_path, capsys):
        spec = {
            "n": 1, "k": 0, "mode": "ocp", "tau": 0.25, "t1": 0.0, "t2": 1.0,
            "L": "u[0]^2/2", "g": [], "phi": ["u[0]"],
            "history": {"pieces": [{"from": -0.25, "to": 0.0, "coeffs": [1.0, 2.0]}]},
            "levels": [],
        }
        spec_file = tmp_path / "ocp.json"
        spec_file.write_text(json.dumps(spec))
        h = 1.25 / 50
        times = -0.25 + h * np.arange(51)
        traj = Trajectory(
            t_start=-0.25, h=h, values=(1.0 + 2.0 * times)[:, None],
            u=np.full((51, 1), 2.0), p=np.full((51, 1), -2.0), kink_set=(),
        )
        csv = tmp_path / "triple.csv"
        save_trajectory_csv(traj, csv)
        out = tmp_path / "ocp_rep"
        code = run("verify", "--problem", str(spec_file), "--traj", str(csv),
                   "--out", str(out))
        assert code == 0
        for name in ("state", "adjoint", "stationarity", "hamiltonian_dbr"):
            assert (out / f"report_{name}.json").exists()


class TestNoetherCommand:
    def test_time_translation_passes(self, capsys):
        code = run("noether", "--builtin", "example33", "--n", "30",
                   "--lambda", "2", "--eta", "1", "--xi", "0")
        assert code == 0
        out = capsys.readouterr().out
        assert "drift" in out

    def test_pure_gauge_fails(self, capsys):
        code = run("noether", "--builtin", "example33", "--n", "30",
                   "--eta", "0", "--xi", "0", "--phi", "q[0]*t")
        assert code == 1

    def test_any_generator_passes_on_the_degenerate_extremal(self, capsys):
        # the sawtooth extremal makes the integrand (and every EL bracket)
        # vanish identically, so even a non-symmetry generator like eta = t
        # produces zero drift and zero invariance defect along it
        code = run("noether", "--builtin", "example33", "--n", "30",
                   "--lambda", "2", "--eta", "t", "--xi", "0")
        assert code == 0

    def test_non_invariant_generator_fails_on_generic_trajectory(self, tmp_path):
        from delayvar.model import trajectory_from_function

        p = problems.builtin_problem("example33")
        traj = trajectory_from_function(p, 30, lambda t: [0.2 * t * t], kink_set=())
        csv = tmp_path / "generic.csv"
        save_trajectory_csv(traj, csv)
        spec_file = tmp_path / "e33.json"
        spec_file.write_text(json.dumps(problems.builtin_spec("example33")))
        code = run("noether", "--problem", str(spec_file), "--traj", str(csv),
                   "--lambda", "2", "--eta", "t", "--xi", "0")
        assert code == 1

    def test_bad_generator_exits_2(self, capsys):
        code = run("noether", "--builtin", "example33", "--n", "30",
                   "--eta", "qd[0]", "--xi", "0")
        assert code == 2


class TestReproducibility:
    def test_byte_identical_reruns(self, tmp_path):
        args = ("verify", "--builtin", "example33", "--n", "30", "--lambda", "2")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(*args, "--out", str(out1)) == 0
        assert run(*args, "--out", str(out2)) == 0
        files1 = sorted(f.name for f in out1.iterdir())
        files2 = sorted(f.name for f in out2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_manifest_lists_outputs(self, tmp_path):
        out = tmp_path / "m"
        run("verify", "--builtin", "example33", "--n", "30", "--out", str(out))
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "verify"
        assert "report_euler_lagrange.json" in manifest["outputs"]
        assert len(manifest["problem_sha256"]) == 64

    def test_json_format_output(self, capsys):
        code = run("verify", "--builtin", "example33", "--n", "30",
                   "--lambda", "2", "--format", "json")
        assert code == 0
        parsed = json.loads(capsys.readouterr().out)
        assert parsed[0]["condition"] == "euler_lagrange"

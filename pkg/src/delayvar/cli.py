"""Command-line front end: solve, verify and noether subcommands.

Runs are reproducible and deterministic: given identical inputs and flags the
written reports are byte-identical (no timestamps, no randomness, canonical
JSON with sorted keys).  Each --out directory receives a manifest.json tying
the command, the problem hash, the settings and the produced files together.

Exit codes: 0 success / all verdicts pass; 1 verdict failure (verify,
noether); 2 validation or usage error; 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import (
    TOL_ANALYTIC,
    cdur_residual,
    dbr_residual,
    el_residual,
    format_report_table,
    invariance_residual,
    noether_constant,
)
from .expr import ExprError
from .model import (
    DelayedProblem,
    Trajectory,
    ValidationError,
    load_problem,
    load_trajectory_csv,
    save_trajectory_csv,
    symmetry_from_strings,
)
from .ocp import hamiltonian_context, pontryagin_residuals
from .problems import BUILTIN_NAMES, builtin_problem, builtin_reference, builtin_spec
from .solver import SolveSettings, solve_isoperimetric

_DEFAULT_N = {"example33": 300, "parabola": 200}

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, newline="\n")


class _Run:
    """Collects outputs and writes them plus a manifest under --out."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out) if getattr(args, "out", None) else None
        self.outputs: list[str] = []

    def emit_json(self, name: str, obj) -> None:
        if self.out is not None:
            _write(self.out / name, _canonical_json(obj))
            self.outputs.append(name)

    def emit_trajectory(self, name: str, traj: Trajectory) -> None:
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            save_trajectory_csv(traj, self.out / name)
            self.outputs.append(name)

    def finish(self, problem_digest: str, settings: dict) -> None:
        if self.out is None:
            return
        manifest = {
            "command": self.command,
            "problem_sha256": problem_digest,
            "settings": settings,
            "tool_version": __version__,
            "outputs": sorted(self.outputs),
        }
        _write(self.out / "manifest.json", _canonical_json(manifest))


def _load_inputs(args, need_trajectory: bool):
    """Resolve --problem/--builtin (+ --traj) into problem, trajectory, lam."""
    if bool(args.problem) == bool(args.builtin):
        raise ValidationError("problem", "give exactly one of --problem or --builtin")
    lam = None
    if args.builtin:
        if args.builtin not in BUILTIN_NAMES:
            raise ValidationError("builtin", f"unknown name; available: {', '.join(BUILTIN_NAMES)}")
        problem = builtin_problem(args.builtin)
        spec_text = _canonical_json(builtin_spec(args.builtin))
        digest = hashlib.sha256(spec_text.encode()).hexdigest()
        traj = None
        if need_trajectory:
            if args.traj:
                traj = load_trajectory_csv(args.traj)
            else:
                n = args.n or _DEFAULT_N[args.builtin]
                traj, lam = builtin_reference(args.builtin, n)
    else:
        problem = load_problem(args.problem)
        digest = hashlib.sha256(Path(args.problem).read_bytes()).hexdigest()
        traj = None
        if need_trajectory:
            if not args.traj:
                raise ValidationError("traj", "a trajectory CSV is required with --problem")
            traj = load_trajectory_csv(args.traj)
    if getattr(args, "lam", None) is not None:
        lam = np.array([float(v) for v in args.lam.split(",")])
    if lam is None:
        lam = np.zeros(problem.k)
    return problem, traj, lam, digest


def _print(args, text: str) -> None:
    if args.format == "text":
        print(text)


def cmd_solve(args) -> int:
    problem, _, lam0, digest = _load_inputs(args, need_trajectory=False)
    if args.n is None and args.builtin:
        args.n = _DEFAULT_N[args.builtin]
    if args.n is None:
        raise ValidationError("n", "--n is required with --problem")
    settings = SolveSettings(
        N=args.n,
        max_outer=args.max_outer,
        max_inner=args.max_inner,
        inner_tol=args.inner_tol,
        outer_tol=args.outer_tol,
        lambda0=tuple(lam0) if problem.k else None,
        outer_update=args.outer_update,
    )
    result = solve_isoperimetric(problem, settings)
    run = _Run(args, "solve")
    run.emit_trajectory("trajectory.csv", result.trajectory)
    run.emit_json("result.json", result.to_dict())
    run.emit_json("report_el.json", result.el_report.to_dict())
    run.finish(digest, _settings_dict(settings))
    payload = result.to_dict()
    if args.format == "json":
        print(_canonical_json(payload), end="")
    else:
        status = "converged" if result.converged else "did NOT converge"
        print(f"solve {status}: lambda={list(result.lam.lam)}  J={result.J:.9g}  "
              f"I={list(np.round(result.I, 12))}")
        print(f"iterations: outer={result.outer_iterations} inner={result.inner_iterations}  "
              f"normality={result.normality}")
        print(result.el_report.summary())
        if result.normality == "abnormal":
            print("warning: extremal is abnormal (constraint EL system already holds); "
                  "the multiplier rule degenerates")
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _settings_dict(settings: SolveSettings) -> dict:
    return {
        "N": settings.N,
        "inner_tol": settings.inner_tol,
        "outer_tol": settings.outer_tol,
        "max_inner": settings.max_inner,
        "max_outer": settings.max_outer,
        "penalty0": settings.penalty0,
        "penalty_growth": settings.penalty_growth,
        "penalty_cap": settings.penalty_cap,
        "lambda0": list(settings.lambda0) if settings.lambda0 else None,
        "outer_update": settings.outer_update,
    }


def cmd_verify(args) -> int:
    problem, traj, lam, digest = _load_inputs(args, need_trajectory=True)
    tol = args.tol if args.tol is not None else TOL_ANALYTIC
    run = _Run(args, "verify")
    if problem.mode == "ocp":
        ctx = hamiltonian_context(problem)
        reports = pontryagin_residuals(ctx, traj, lam=lam, tol=tol)
    else:
        reports = [
            el_residual(problem, lam, traj, tol=tol),
            cdur_residual(problem, lam, traj, tol=tol),
            dbr_residual(problem, lam, traj, tol=tol),
        ]
    for report in reports:
        run.emit_json(f"report_{report.condition}.json", report.to_dict())
    run.finish(digest, {"lambda": [float(v) for v in lam], "tol": tol, "n": args.n})
    if args.format == "json":
        print(_canonical_json([r.to_dict() for r in reports]), end="")
    else:
        print(format_report_table(reports))
    all_pass = all(r.passed for r in reports)
    _print(args, f"verdict: {'pass' if all_pass else 'FAIL'} at tol={tol:.1e}")
    return EXIT_OK if all_pass else EXIT_VERDICT


def cmd_noether(args) -> int:
    problem, traj, lam, digest = _load_inputs(args, need_trajectory=True)
    tol = args.tol if args.tol is not None else TOL_ANALYTIC
    sym = symmetry_from_strings(problem, args.eta, args.xi, args.phi)
    profile = noether_constant(problem, lam, traj, sym)
    inv = invariance_residual(problem, lam, sym, traj)
    run = _Run(args, "noether")
    payload = profile.to_dict()
    payload["invariance_residual"] = inv
    run.emit_json("noether.json", payload)
    run.finish(
        digest,
        {"lambda": [float(v) for v in lam], "tol": tol,
         "eta": args.eta, "xi": args.xi, "phi": args.phi, "n": args.n},
    )
    if args.format == "json":
        print(_canonical_json(payload), end="")
    else:
        print(profile.summary())
        print(f"invariance residual: {inv:.6e}")
    ok = profile.drift <= tol and abs(inv) <= tol
    _print(args, f"verdict: {'pass' if ok else 'FAIL'} at tol={tol:.1e}")
    return EXIT_OK if ok else EXIT_VERDICT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayvar",
        description="solve and verify isoperimetric variational problems with time delay",
    )
    parser.add_argument("--version", action="version", version=f"delayvar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_traj: bool):
        p.add_argument("--problem", help="problem JSON file")
        p.add_argument("--builtin", help=f"builtin problem: {', '.join(BUILTIN_NAMES)}")
        p.add_argument("--n", type=int, default=None, help="grid intervals on [t1, t2]")
        p.add_argument("--lambda", dest="lam", default=None,
                       help="comma-separated multiplier values")
        p.add_argument("--tol", type=float, default=None, help="verdict tolerance")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=("json", "text"), default="text")
        if needs_traj:
            p.add_argument("--traj", default=None, help="trajectory CSV file")

    ps = sub.add_parser("solve", help="compute an isoperimetric extremal")
    common(ps, needs_traj=False)
    ps.add_argument("--max-outer", type=int, default=30)
    ps.add_argument("--max-inner", type=int, default=5000)
    ps.add_argument("--inner-tol", type=float, default=1e-6)
    ps.add_argument("--outer-tol", type=float, default=1e-8)
    ps.add_argument("--outer-update", choices=("multiplier", "secant"), default="multiplier")
    ps.set_defaults(fn=cmd_solve)

    pv = sub.add_parser("verify", help="evaluate the necessary-condition residuals")
    common(pv, needs_traj=True)
    pv.set_defaults(fn=cmd_verify)

    pn = sub.add_parser("noether", help="check a symmetry's constant of motion")
    common(pn, needs_traj=True)
    pn.add_argument("--eta", required=True, help="time generator eta(t, q)")
    pn.add_argument("--xi", required=True, help="state generator xi(t, q), comma-separated for n > 1")
    pn.add_argument("--phi", default=None, help="gauge term over the full slots")
    pn.set_defaults(fn=cmd_noether)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, ExprError, FileNotFoundError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

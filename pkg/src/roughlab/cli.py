"""Command-line front end.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure (partial
diagnostics are still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .concentrated import (ConcentrationRecord, closed_form, seeded_bound_ratio, seeded_lipschitz_ratio,
                           verify_concentration)
from .config import RunConfig, load_config, with_overrides
from .export import newton_csv, write_text, write_vtk
from .fem import LinearSolverError, NewtonError, norm_W1p
from .geometry import ConfigError, check_admissible, mu
from .lab import mesh_resolution_study, rows_to_csv, run_theorem_sweep
from .limit import boundary_residual, solve_limit
from .meshing import GAMMA, build_rough_mesh
from .rough import energy_check, solve_rough, thin_region_energy

log = logging.getLogger("roughlab")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
VERIFY_KINDS = ("concentration", "bounds", "lipschitz", "mu")


class SolverFailure(RuntimeError):
    pass


def _out_dir(args, command: str, run: RunConfig) -> Path:
    out = Path(args.out) / command / run.digest()
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_path": str(Path(args.config).resolve()),
        "resolved_config": run.resolved(),
        "hash": run.digest(),
        "output_dir": str(out),
        "version": __version__,
        "seed": run.verify.seed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _write_stages(out: Path, name: str, stages):
    write_text(out / name, newton_csv(stages))


def _failure_csv(out: Path, exc: Exception):
    diag = getattr(exc, "diagnostics", None)
    if diag is not None:
        write_text(out / "newton_failure.csv",
                   rows_to_csv(("iteration", "residual", "damping"), diag.rows()))


def cmd_solve_rough(args, run: RunConfig) -> int:
    cfg = run.problem
    check_admissible(cfg)
    mesh = build_rough_mesh(cfg)
    out = _out_dir(args, "solve-rough", run)
    try:
        sol = solve_rough(cfg, mesh=mesh)
    except (NewtonError, LinearSolverError) as exc:
        _failure_csv(out, exc)
        raise SolverFailure(str(exc)) from exc
    _write_stages(out, "newton.csv", sol.diagnostics)
    strip = np.zeros(mesh.n_triangles, dtype=np.int64)
    strip[mesh.strip_elements] = 1
    write_vtk(out / "solution.vtk", mesh, {"u": sol.u.values}, {"strip": strip},
              title=f"rough solution eps={cfg.epsilon:g} p={cfg.p:g}")
    rows = [("epsilon", cfg.epsilon), ("n_vertices", mesh.n_vertices), ("norm", sol.norm),
            ("energy_residual", energy_check(sol)), ("thin_energy", thin_region_energy(sol)),
            ("newton_iterations", sol.newton_iterations),
            ("strip_measure_perturbation", mesh.info["strip_measure_perturbation"])]
    write_text(out / "summary.csv", rows_to_csv(("quantity", "value"), rows))
    print(f"rough solve eps={cfg.epsilon:g}: norm {sol.norm:.10g}, "
          f"{sol.newton_iterations} Newton iterations -> {out}")
    return EXIT_OK


def cmd_solve_limit(args, run: RunConfig) -> int:
    cfg = run.problem
    out = _out_dir(args, "solve-limit", run)
    try:
        sol = solve_limit(cfg)
    except (NewtonError, LinearSolverError) as exc:
        _failure_csv(out, exc)
        raise SolverFailure(str(exc)) from exc
    _write_stages(out, "newton.csv", sol.diagnostics)
    write_vtk(out / "solution.vtk", sol.mesh, {"u": sol.u.values},
              title=f"limit solution p={cfg.p:g}")
    top = np.unique(sol.mesh.edges_tagged(GAMMA))
    top = top[np.argsort(sol.mesh.vertices[top, 0], kind="stable")]
    trace = sol.u.values[top]
    write_text(out / "trace.csv", rows_to_csv(("x", "u"), zip(sol.mesh.vertices[top, 0], trace)))
    rows = [("n_vertices", sol.mesh.n_vertices), ("norm", norm_W1p(sol.u, cfg.p)),
            ("trace_max", float(trace.max())), ("trace_min", float(trace.min())),
            ("boundary_residual", boundary_residual(sol))]
    write_text(out / "summary.csv", rows_to_csv(("quantity", "value"), rows))
    print(f"limit solve: trace max {trace.max():.10g}, boundary residual "
          f"{boundary_residual(sol):.3e} -> {out}")
    return EXIT_OK


def cmd_sweep(args, run: RunConfig) -> int:
    cfg = run.problem
    opts = run.sweep
    check_admissible(cfg.replace(epsilon=opts.eps_list[0]))
    out = _out_dir(args, "sweep", run)
    report = run_theorem_sweep(cfg, opts.eps_list, threads=opts.threads)
    write_text(out / "sweep.csv", report.to_csv())
    write_text(out / "sweep.dat", report.plot_data())
    text = report.summary()
    if opts.resolution_levels:
        study = mesh_resolution_study(cfg.replace(epsilon=opts.eps_list[-1]), opts.resolution_levels)
        write_text(out / "resolution.csv", study.to_csv())
        est = study.discretization_error(opts.resolution_levels[0])
        text += f"discretization error estimate at eps={opts.eps_list[-1]:g}: {est:.3e}\n"
    write_text(out / "summary.txt", text)
    print(text, end="")
    print(f"-> {out}")
    if report.incomplete:
        raise SolverFailure("sweep incomplete: at least one row failed")
    return EXIT_OK


def _verify_concentration(run: RunConfig):
    v = run.verify
    recs = verify_concentration(closed_form(v.u), closed_form(v.phi), run.problem, v.eps_list, v.composed)
    rows = [r.csv_row() for r in recs]
    return ConcentrationRecord.CSV_HEADER, rows, f"max abs error {max(r.abs_error for r in recs):.3e}"


def _eps_meshes(run: RunConfig):
    for eps in run.verify.eps_list:
        cfg = run.problem.replace(epsilon=eps)
        check_admissible(cfg)
        yield cfg, build_rough_mesh(cfg)


def _verify_bounds(run: RunConfig):
    v = run.verify
    rows = [(cfg.epsilon, seeded_bound_ratio(mesh, cfg, v.seed, v.samples)) for cfg, mesh in _eps_meshes(run)]
    return ("epsilon", "max_ratio"), rows, f"empirical constant {max(r for _, r in rows):.6g}"


def _verify_lipschitz(run: RunConfig):
    v = run.verify
    rows = [(cfg.epsilon, seeded_lipschitz_ratio(mesh, cfg, v.seed, v.samples, v.perturbation))
            for cfg, mesh in _eps_meshes(run)]
    return ("epsilon", "max_ratio"), rows, f"empirical Lipschitz constant {max(r for _, r in rows):.6g}"


def _verify_mu(run: RunConfig):
    fns = run.problem.fns
    if fns.mu_exact is None:
        raise ConfigError(f"density {run.problem.h!r} has no closed-form cell average")
    x = np.linspace(0.0, 1.0, run.verify.mu_points)
    m, me = mu(x, fns), fns.mu_exact(x)
    rows = list(zip(x, m, me, np.abs(m - me)))
    return ("x", "mu", "mu_exact", "abs_error"), rows, f"max abs error {np.max(np.abs(m - me)):.3e}"


def cmd_verify(args, run: RunConfig) -> int:
    which = args.which
    table = {"concentration": _verify_concentration, "bounds": _verify_bounds,
             "lipschitz": _verify_lipschitz, "mu": _verify_mu}[which]
    header, rows, summary = table(run)
    out = _out_dir(args, f"verify-{which}", run)
    write_text(out / f"{which}.csv", rows_to_csv(header, rows))
    print(f"verify {which}: {summary} -> {out}")
    return EXIT_OK


COMMANDS = {"solve-rough": cmd_solve_rough, "solve-limit": cmd_solve_limit,
            "sweep": cmd_sweep, "verify": cmd_verify}


def _eps_list(text: str):
    try:
        vals = tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI config file (see reference.ini)")
    common.add_argument("--out", default="results", help="results root (default: results)")
    common.add_argument("--eps-list", type=_eps_list, help="comma-separated epsilons, strictly decreasing")
    common.add_argument("--seed", type=int, help="seed for random test fields")
    common.add_argument("--threads", type=int, help="sweep rows solved concurrently")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="roughlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"roughlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-rough", parents=[common], help="solve the concentrated-reaction problem")
    sub.add_parser("solve-limit", parents=[common], help="solve the homogenized limit problem")
    sub.add_parser("sweep", parents=[common], help="epsilon sweep against the limit solution")
    ver = sub.add_parser("verify", parents=[common], help="concentrated-integral checks")
    ver.add_argument("which", choices=VERIFY_KINDS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = with_overrides(load_config(args.config), args.eps_list, args.seed, args.threads)
        return COMMANDS[args.command](args, run)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, NewtonError, LinearSolverError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

"""Epsilon sweeps against the homogenized limit and mesh-resolution studies."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .concentrated import ls_slope
from .fem import LinearSolverError, NewtonError, difference_norm, field_error, norm_W1p
from .geometry import ConfigError, ProblemConfig, check_admissible
from .limit import LimitSolution, default_limit_mesh, solve_limit
from .meshing import build_rough_mesh
from .rough import energy_check, solve_rough, thin_region_energy

log = logging.getLogger(__name__)

DEFAULT_EPS = (0.2, 0.1, 0.05, 0.025)


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    n_vertices: int
    n_triangles: int
    dx: float
    norm: float
    error: float
    thin_energy: float
    newton_iterations: int
    wall_time: float
    energy_residual: float
    failure: str = ""

    CSV_HEADER = ("epsilon", "n_vertices", "n_triangles", "dx", "norm", "error",
                  "thin_energy", "newton_iterations", "energy_residual", "failure")

    @property
    def ok(self) -> bool:
        return not self.failure

    def csv_row(self):
        # wall time is left out so that files are reproducible byte for byte
        return (self.epsilon, self.n_vertices, self.n_triangles, self.dx, self.norm, self.error,
                self.thin_energy, self.newton_iterations, self.energy_residual, self.failure)


@dataclass
class SweepReport:
    """Rows sorted by decreasing epsilon plus metadata of the single limit solve."""

    rows: list
    limit: dict
    cfg: ProblemConfig
    solutions: list = field(default_factory=list, repr=False)
    limit_solution: Optional[LimitSolution] = field(default=None, repr=False)

    @property
    def incomplete(self) -> bool:
        return any(not r.ok for r in self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if r.ok], dtype=float)

    @property
    def epsilons(self) -> np.ndarray:
        return self.column("epsilon")

    def strictly_decreasing(self, name: str) -> bool:
        v = self.column(name)
        return bool(np.all(np.diff(v) < 0))

    def norm_slope(self) -> float:
        return ls_slope(self.epsilons, self.column("norm"))

    def to_csv(self) -> str:
        return rows_to_csv(SweepRow.CSV_HEADER, [r.csv_row() for r in self.rows])

    def summary(self) -> str:
        c = self.cfg
        lines = [
            f"sweep p={c.p:g} gamma={c.gamma:g} beta={c.beta:g} g={c.g} psi={c.psi} h={c.h} f={c.f}",
            f"limit: {self.limit.get('n_vertices')} vertices, norm {self.limit.get('norm', math.nan):.6g}, "
            f"{self.limit.get('newton_iterations')} Newton iterations",
            f"{'epsilon':>10} {'vertices':>9} {'norm':>12} {'error':>12} {'thin':>12} {'newton':>6} {'time[s]':>8}",
        ]
        for r in self.rows:
            if r.ok:
                lines.append(f"{r.epsilon:10.5g} {r.n_vertices:9d} {r.norm:12.6g} {r.error:12.6g} "
                             f"{r.thin_energy:12.6g} {r.newton_iterations:6d} {r.wall_time:8.2f}")
            else:
                lines.append(f"{r.epsilon:10.5g}  FAILED: {r.failure}")
        if len(self.rows) > 1 and not self.incomplete:
            trend = "decreasing" if self.strictly_decreasing("error") else "NOT decreasing"
            lines.append(f"error column {trend}; thin-region column "
                         f"{'decreasing' if self.strictly_decreasing('thin_energy') else 'NOT decreasing'}; "
                         f"norm slope vs log(1/eps) {self.norm_slope():+.4f}")
            if not self.strictly_decreasing("error"):
                lines.append("note: convergence is only guaranteed along a subsequence; "
                             "non-monotone errors are reported, not treated as failures")
        if self.incomplete:
            lines.append("report INCOMPLETE: at least one row failed")
        return "\n".join(lines) + "\n"

    def plot_data(self) -> str:
        """Whitespace-separated columns ``epsilon error norm thin_energy`` for gnuplot."""
        out = ["# epsilon error norm thin_energy"]
        out += [f"{r.epsilon:.17g} {r.error:.17g} {r.norm:.17g} {r.thin_energy:.17g}"
                for r in self.rows if r.ok]
        return "\n".join(out) + "\n"


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _check_eps_list(eps_list: Sequence[float]) -> list:
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ConfigError("eps_list is empty")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("eps_list must be strictly decreasing")
    return eps_list


def _solve_row(cfg: ProblemConfig, limit: LimitSolution, initial=None):
    t0 = time.perf_counter()
    mesh = build_rough_mesh(cfg)
    try:
        sol = solve_rough(cfg, initial, mesh)
        err = field_error(sol.u, limit.u, cfg.p)
    except (NewtonError, LinearSolverError) as exc:
        log.warning("row eps=%g failed: %s", cfg.epsilon, exc)
        row = SweepRow(cfg.epsilon, mesh.n_vertices, mesh.n_triangles, mesh.info["dx"],
                       math.nan, math.nan, math.nan, 0, time.perf_counter() - t0, math.nan,
                       failure=str(exc).replace(",", ";"))
        return row, None
    row = SweepRow(
        epsilon=cfg.epsilon, n_vertices=mesh.n_vertices, n_triangles=mesh.n_triangles,
        dx=mesh.info["dx"], norm=sol.norm, error=err, thin_energy=thin_region_energy(sol),
        newton_iterations=sol.newton_iterations, wall_time=time.perf_counter() - t0,
        energy_residual=energy_check(sol),
    )
    return row, sol


def run_theorem_sweep(cfg_base: ProblemConfig, eps_list: Sequence[float] = DEFAULT_EPS,
                      threads: int = 1, keep_solutions: bool = False) -> SweepReport:
    """Solve the limit problem once and the rough problem for every epsilon.

    The limit mesh is graded to the column spacing of the finest rough mesh
    so both discretizations resolve the top boundary layer alike.  A failed
    row is recorded and the sweep goes on; the report is then incomplete.
    """
    eps_list = _check_eps_list(eps_list)
    check_admissible(cfg_base.replace(epsilon=eps_list[0]))
    cfgs = [cfg_base.replace(epsilon=e) for e in eps_list]
    for c in cfgs:
        check_admissible(c)

    finest = cfg_base.mesh.column_spacing(eps_list[-1])
    t0 = time.perf_counter()
    lmesh = default_limit_mesh(cfg_base, finest_dx=finest)
    limit = solve_limit(cfg_base, lmesh)
    meta = dict(n_vertices=lmesh.n_vertices, n_triangles=lmesh.n_triangles, top_edge=finest,
                norm=_norm(limit), newton_iterations=sum(d["newton"].iterations for d in limit.diagnostics),
                wall_time=time.perf_counter() - t0)

    if threads > 1 and len(cfgs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _solve_row(c, limit), cfgs))
    else:
        results = [_solve_row(c, limit) for c in cfgs]
    rows = [r for r, _ in results]
    sols = [s for _, s in results] if keep_solutions else []
    return SweepReport(rows, meta, cfg_base, sols, limit if keep_solutions else None)


def _norm(limit: LimitSolution) -> float:
    return norm_W1p(limit.u, limit.cfg.p)


# ---------------------------------------------------------------------------
# resolution study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResolutionRow:
    level: int
    dx: float
    n_vertices: int
    limit_vertices: int
    error: float           # epsilon-error measured at this level
    error_gap: float       # |error - error at the reference level|
    limit_difference: float  # W1p(Omega) distance of the limit field to the reference one
    rough_difference: float  # same for the rough field, restricted to Omega

    CSV_HEADER = ("level", "dx", "n_vertices", "limit_vertices", "error", "error_gap",
                  "limit_difference", "rough_difference")

    def csv_row(self):
        return (self.level, self.dx, self.n_vertices, self.limit_vertices, self.error,
                self.error_gap, self.limit_difference, self.rough_difference)


@dataclass
class ResolutionStudy:
    rows: list
    cfg: ProblemConfig

    @property
    def reference(self) -> ResolutionRow:
        return self.rows[-1]

    def _distinct_errors(self) -> list:
        by_level = {r.level: r.error for r in self.rows}
        return [by_level[k] for k in sorted(by_level)]

    def observed_ratio(self) -> float:
        """Contraction of the error gap per level, from the last three distinct levels."""
        e = self._distinct_errors()
        if len(e) < 3:
            return math.nan
        d1, d2 = abs(e[-3] - e[-2]), abs(e[-2] - e[-1])
        return d2 / d1 if d1 > 0 else 0.0

    def discretization_error(self, level: int = 0) -> float:
        """Estimated distance of the level-``level`` error from its mesh limit.

        The gap to the reference level plus a geometric tail for the
        reference itself, using the observed contraction ratio; when the
        gaps do not contract the tail is taken as large as the last gap.
        """
        row = next(r for r in self.rows if r.level == level)
        e = self._distinct_errors()
        last_gap = abs(e[-2] - e[-1]) if len(e) > 1 else 0.0
        q = self.observed_ratio()
        tail = last_gap * q / (1.0 - q) if (np.isfinite(q) and q < 1.0) else last_gap
        return row.error_gap + tail

    def to_csv(self) -> str:
        return rows_to_csv(ResolutionRow.CSV_HEADER, [r.csv_row() for r in self.rows])


def mesh_resolution_study(cfg: ProblemConfig, levels: Sequence[int] = (0, 1, 2)) -> ResolutionStudy:
    """At fixed epsilon, measure the epsilon-error on refined mesh pairs.

    Level ``l`` halves the top column spacing and the bulk edge ``l`` times
    (relative to ``cfg.mesh.refine``) for both the rough and the limit mesh.
    The last level is the reference.
    """
    levels = [int(l) for l in levels]
    if len(levels) < 3:
        raise ConfigError("a resolution study needs at least 3 levels")
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels must be non-decreasing")
    base = cfg.mesh.refine
    sols = {}
    for lev in sorted(set(levels)):
        c = cfg.replace(mesh=_refined(cfg, base + lev))
        mesh = build_rough_mesh(c)
        rough = solve_rough(c, mesh=mesh)
        limit = solve_limit(c, default_limit_mesh(c))
        sols[lev] = (mesh, rough, limit, field_error(rough.u, limit.u, c.p))
    ref_mesh, ref_rough, ref_limit, ref_err = sols[levels[-1]]
    rows = []
    for lev in levels:
        mesh, rough, limit, err = sols[lev]
        same = lev == levels[-1]  # the very same solve: report exact zeros, not round-off
        rows.append(ResolutionRow(
            level=lev, dx=mesh.info["dx"], n_vertices=mesh.n_vertices,
            limit_vertices=limit.mesh.n_vertices, error=err, error_gap=abs(err - ref_err),
            limit_difference=0.0 if same else field_error(limit.u, ref_limit.u, cfg.p),
            rough_difference=0.0 if same else difference_norm(rough.u, ref_rough.u, cfg.p, ref_limit.mesh),
        ))
    return ResolutionStudy(rows, cfg)


def _refined(cfg: ProblemConfig, refine: int):
    return dataclasses.replace(cfg.mesh, refine=refine)


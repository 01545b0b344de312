"""The concentrated-reaction problem on the rough domain."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .concentrated import apply_concentrated_functional
from .continuation import continuation_solve
from .fem import ElementLoad, FemField, Load, ZeroLoad, energy_integral, norm_W1p, residual
from .geometry import ProblemConfig
from .meshing import TriangleMesh, build_rough_mesh


@dataclass
class RoughSolution:
    u: FemField
    cfg: ProblemConfig
    norm: float
    diagnostics: list = field(default_factory=list)
    load: Optional[Load] = field(default=None, repr=False)

    @property
    def mesh(self) -> TriangleMesh:
        return self.u.mesh

    @property
    def newton_iterations(self) -> int:
        return sum(d["newton"].iterations for d in self.diagnostics)


def strip_load(cfg: ProblemConfig, mesh: TriangleMesh) -> Load:
    """The reaction ``eps**-(gamma+1) int_strip f(u) phi`` as a load."""
    fns = cfg.fns
    if not mesh.has_strip:
        return ZeroLoad(mesh.n_vertices)
    return ElementLoad(mesh, mesh.strip_elements, 1.0 / cfg.scale, fns.f, fns.df)


def solve_rough(cfg: ProblemConfig, initial: Optional[FemField] = None,
                mesh: Optional[TriangleMesh] = None) -> RoughSolution:
    """Solve the weak form with the concentrated load; Neumann data are natural."""
    mesh = mesh if mesh is not None else build_rough_mesh(cfg)
    load = strip_load(cfg, mesh)
    u, diags = continuation_solve(mesh, cfg, load, initial)
    return RoughSolution(u, cfg, norm_W1p(u, cfg.p), diags, load)


def energy_check(sol: RoughSolution) -> float:
    """``| ||u||^p - <F(u), u> |``; vanishes up to solver tolerance at a solution."""
    p = sol.cfg.p
    return abs(norm_W1p(sol.u, p) ** p - apply_concentrated_functional(sol.u, sol.u, sol.cfg))


def thin_region_energy(sol: RoughSolution) -> float:
    """``int_{y > 0} |grad u|^p + |u|^p`` over the oscillating cap."""
    return energy_integral(sol.u, sol.cfg.p, "y>0")


def residual_norm(sol: RoughSolution) -> float:
    return float(np.linalg.norm(residual(sol.u, sol.cfg.p, sol.load)))

"""Homogenized problem on the cylinder with flux ``mu(x) f(u)`` through the top."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fem import EdgeLoad, FemField, NewtonError, residual
from .geometry import ProblemConfig, mu
from .meshing import GAMMA, MeshError, TriangleMesh, build_cylinder_mesh
from .continuation import continuation_solve


@dataclass
class LimitSolution:
    u: FemField
    mu_samples: np.ndarray          # (edges, 2) at the Gauss points of the GAMMA edges
    cfg: ProblemConfig
    load: EdgeLoad = field(repr=False)
    diagnostics: list = field(default_factory=list)

    @property
    def mesh(self) -> TriangleMesh:
        return self.u.mesh


def gamma_load(cfg: ProblemConfig, mesh: TriangleMesh, exact_mu: bool = False,
               n_cells: int = 16) -> EdgeLoad:
    edges = mesh.edges_tagged(GAMMA)
    if len(edges) == 0:
        raise MeshError("limit mesh has no GAMMA edges")
    fns = cfg.fns
    probe = EdgeLoad(mesh, edges, np.ones((len(edges), 2)), fns.f, fns.df)
    xq = probe.gauss_points()[..., 0]
    if exact_mu:
        if fns.mu_exact is None:
            raise ValueError("no closed-form mu for this density")
        mu_qp = fns.mu_exact(xq)
    else:
        mu_qp = mu(xq, fns, n_cells)
    return EdgeLoad(mesh, edges, mu_qp, fns.f, fns.df)


def default_limit_mesh(cfg: ProblemConfig, finest_dx: Optional[float] = None) -> TriangleMesh:
    mp = cfg.mesh
    if mp.limit_resolution:
        return build_cylinder_mesh(mp.limit_resolution * 2 ** mp.refine)
    dx = finest_dx if finest_dx is not None else mp.column_spacing(cfg.epsilon)
    return build_cylinder_mesh(top_edge=dx, edge=mp.bulk_edge(), grading=mp.grading)


def solve_limit(cfg: ProblemConfig, mesh: Optional[TriangleMesh] = None,
                initial: Optional[FemField] = None, exact_mu: bool = False) -> LimitSolution:
    """Solve the limit problem; the top flux is integrated with 2-point Gauss per edge."""
    mesh = mesh if mesh is not None else default_limit_mesh(cfg)
    load = gamma_load(cfg, mesh, exact_mu)
    u, diags = continuation_solve(mesh, cfg, load, initial)
    return LimitSolution(u, load.mu_qp, cfg, load, diags)


def boundary_residual(sol: LimitSolution) -> float:
    """Euclidean norm of the weak-flux mismatch tested against GAMMA basis functions.

    The weak normal flux tested with ``phi_i`` is the volume form
    ``int |grad u|^{p-2} grad u . grad phi_i + |u|^{p-2} u phi_i``; the
    mismatch with ``int_Gamma mu f(u) phi_i`` is the residual row ``i``.
    """
    r = residual(sol.u, sol.cfg.p, sol.load)
    nodes = np.unique(sol.mesh.edges_tagged(GAMMA))
    return float(np.linalg.norm(r[nodes]))


__all__ = ["LimitSolution", "solve_limit", "boundary_residual", "gamma_load",
           "default_limit_mesh", "NewtonError"]

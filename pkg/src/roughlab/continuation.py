"""Continuation in p with a Picard fallback on the reaction term."""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from .fem import FemField, Load, NewtonError, VectorLoad, newton_solve
from .geometry import ProblemConfig

log = logging.getLogger(__name__)


def p_schedule(p: float, step: float) -> list:
    if p <= 2.0 or step <= 0:
        return [p]
    stages = list(np.arange(2.0, p, step))
    return [float(s) for s in stages] + [float(p)]


def picard(u0: FemField, p: float, load: Load, tols, max_outer: int = 200, tol: float = 1e-12):
    """Freeze the reaction at the current iterate and solve the monotone problem."""
    u = u0
    for k in range(1, max_outer + 1):
        frozen = VectorLoad(load.vector(u.values))
        u_new, _ = newton_solve(u, p, frozen, tols)
        change = np.max(np.abs(u_new.values - u.values))
        u = u_new
        if change <= tol * max(1.0, np.max(np.abs(u.values))):
            return u, k
    return u, max_outer


def _stage(u: FemField, p: float, load: Load, tols, picard_first: bool):
    info = {"p": p, "picard_iterations": 0}
    if picard_first:
        u, info["picard_iterations"] = picard(u, p, load, tols)
    try:
        u, diag = newton_solve(u, p, load, tols)
    except NewtonError as exc:
        log.info("Newton failed at p=%g (%s); falling back to Picard", p, exc)
        info["newton_failed"] = exc.diagnostics
        u, info["picard_iterations"] = picard(exc.best, p, load, tols)
        u, diag = newton_solve(u, p, load, tols)
    info["newton"] = diag
    return u, info


def continuation_solve(mesh, cfg: ProblemConfig, load: Load, initial: Optional[FemField] = None):
    """Solve ``A_p(u) = L(u)``; without an initial guess start at p = 2 and step up."""
    tols = cfg.solver
    diags = []
    if initial is not None:
        try:
            u, info = _stage(initial, cfg.p, load, tols, tols.picard)
            return u, [info]
        except NewtonError:
            log.info("warm start failed, restarting continuation from p = 2")
    u = FemField.zeros(mesh)
    for p in p_schedule(cfg.p, tols.p_step):
        u, info = _stage(u, p, load, tols, tols.picard)
        diags.append(info)
    return u, diags

"""Integrals concentrated on the reaction strip and their limits on Gamma.

The concentrated integral of ``w`` is ``eps**-(gamma+1) * int_strip w``.
For FemFields it is an exact sum over the strip triangles (mid-edge rule);
for closed-form integrands the strip is mapped onto ``(0, 1) x (0, 1)`` by
``y = G(x) - eps**(gamma+1) H(x) (1 - t)``, which leaves the weight ``H(x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .fem import FemField, midedge_values, norm_W1p
from .geometry import ProblemConfig, RegistryError, eval_profile, gauss_points, mu, strip_density
from .meshing import MeshError, TriangleMesh


@dataclass(frozen=True)
class ConcentrationRecord:
    epsilon: float
    value: float
    limit: float
    abs_error: float
    candidate_beta0: float = math.nan
    candidate_error: float = math.nan
    scale: float = math.nan  # int_Gamma mu |u phi|, the size of the limit integrand

    CSV_HEADER = ("epsilon", "value", "limit", "abs_error", "candidate_beta0")

    @property
    def rel_error(self) -> float:
        """Error relative to ``int_Gamma mu |u phi|``; equals ``|limit|`` when ``u phi`` keeps its sign."""
        return self.abs_error / self.scale if self.scale > 0 else math.inf

    def csv_row(self):
        return (self.epsilon, self.value, self.limit, self.abs_error, self.candidate_beta0)


def _strip_sum(mesh: TriangleMesh, qvals: np.ndarray, cfg: ProblemConfig) -> float:
    """Mid-edge quadrature of samples ``qvals`` (strip triangles x 3), scaled."""
    area = mesh.signed_areas[mesh.strip_elements]
    return float(np.dot(area, qvals.sum(axis=1)) / 3.0 / cfg.scale)


def _strip_midedge(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    # a rough mesh may legitimately carry an empty strip (density identically zero)
    if not mesh.has_strip and mesh.info.get("kind") != "rough":
        raise MeshError("mesh has no tagged strip elements")
    return midedge_values(values, mesh.triangles[mesh.strip_elements])


def strip_quadrature(cfg: ProblemConfig, cells: int = 0):
    """Points (x, y) and weights of the mapped tensor Gauss rule over the strip.

    The weights already include the ``eps**-(gamma+1)`` factor.  Cells in x
    have width at most ``min(eps, eps**beta) / 8``.
    """
    eps = cfg.epsilon
    if cells <= 0:
        cells = max(8, math.ceil(8.0 / min(eps, eps ** cfg.beta)))
    x, wx = gauss_points(0.0, 1.0, cells)
    t, wt = gauss_points(0.0, 1.0, 1)
    G = eval_profile(x, cfg)
    H = strip_density(x, cfg)
    y = G[:, None] - cfg.scale * H[:, None] * (1.0 - t[None, :])
    w = (wx * H)[:, None] * wt[None, :]
    return np.broadcast_to(x[:, None], y.shape), y, w


def concentrated_integral(w: Union[FemField, Callable], cfg: ProblemConfig, cells: int = 0) -> float:
    """``eps**-(gamma+1) * int_strip w`` for a FemField or a callable ``w(x, y)``."""
    if isinstance(w, FemField):
        return _strip_sum(w.mesh, _strip_midedge(w.mesh, w.values), cfg)
    X, Y, W = strip_quadrature(cfg, cells)
    return float(np.sum(W * np.broadcast_to(w(X, Y), X.shape)))


def apply_concentrated_functional(u: FemField, phi: FemField, cfg: ProblemConfig) -> float:
    """``<F(u), phi> = eps**-(gamma+1) * int_strip f(u) phi``."""
    if u.mesh is not phi.mesh:
        raise ValueError("u and phi must live on the same rough mesh")
    um = _strip_midedge(u.mesh, u.values)
    pm = _strip_midedge(u.mesh, phi.values)
    return _strip_sum(u.mesh, cfg.fns.f(um) * pm, cfg)


def gamma_integral(fn: Callable, cfg: ProblemConfig, weight: str = "mu", cells: int = 0) -> float:
    """``int_0^1 c(x) fn(x)`` with ``c = mu`` or ``c = h(x, x)`` (weight ``"diag"``)."""
    if cells <= 0:
        cells = max(64, math.ceil(8.0 / min(cfg.epsilon, cfg.epsilon ** cfg.beta)))
    x, wx = gauss_points(0.0, 1.0, cells)
    c = mu(x, cfg.fns) if weight == "mu" else cfg.fns.h(x, x)
    return float(np.dot(wx, c * fn(x)))


def verify_concentration(u: Callable, phi: Callable, cfg_base: ProblemConfig,
                         eps_list: Sequence[float], composed: bool = False) -> list:
    """Concentrated integral of ``u phi`` (or ``f(u) phi``) against its limit on Gamma.

    For ``beta = 0`` the record also carries the candidate limit with weight
    ``h(x, x)`` instead of ``mu``.
    """
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    f = cfg_base.fns.f
    if composed:
        integrand = lambda x, y: f(u(x, y)) * phi(x, y)  # noqa: E731
    else:
        integrand = lambda x, y: u(x, y) * phi(x, y)  # noqa: E731

    def trace(x):
        return integrand(x, np.zeros_like(x))

    records = []
    for eps in eps_list:
        cfg = cfg_base.replace(epsilon=eps)
        value = concentrated_integral(integrand, cfg)
        limit = gamma_integral(trace, cfg, "mu")
        scale = gamma_integral(lambda x: np.abs(trace(x)), cfg, "mu")
        cand = cand_err = math.nan
        if cfg.beta == 0:
            cand = gamma_integral(trace, cfg, "diag")
            cand_err = abs(value - cand)
        records.append(ConcentrationRecord(eps, value, limit, abs(value - limit), cand, cand_err, scale))
    return records


CLOSED_FORMS = {
    "one": lambda x, y: np.ones_like(np.asarray(x, dtype=float) + np.asarray(y, dtype=float)),
    "cos_exp": lambda x, y: np.cos(np.pi * np.asarray(x)) * np.exp(np.asarray(y)),
}


def closed_form(key: str) -> Callable:
    """Closed-form integrands ``u`` and ``phi`` selectable from a config."""
    try:
        return CLOSED_FORMS[key]
    except KeyError:
        raise RegistryError("test function", key, CLOSED_FORMS) from None


def smooth_random_function(rng: np.random.Generator, modes: int = 3) -> Callable:
    """Random trigonometric polynomial ``sum c_kl cos(k pi x) cos(l pi y)`` with decaying ``c_kl``."""
    k = np.arange(modes)
    c = rng.standard_normal((modes, modes)) / (1.0 + np.add.outer(k, k))

    def fn(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        cx = np.cos(np.pi * np.multiply.outer(k, x))
        cy = np.cos(np.pi * np.multiply.outer(k, y))
        return np.einsum("kl,k...,l...->...", c, cx, cy)

    return fn


def smooth_random_field(mesh: TriangleMesh, rng: np.random.Generator, modes: int = 3) -> FemField:
    """Interpolant of :func:`smooth_random_function` on ``mesh``."""
    return FemField.interpolate(mesh, smooth_random_function(rng, modes))


def ls_slope(eps, values) -> float:
    """Least-squares slope of ``values`` against ``log(1/eps)``."""
    t = np.log(1.0 / np.asarray(eps, dtype=float))
    v = np.asarray(values, dtype=float)
    if len(t) < 2:
        return 0.0
    return float(np.polyfit(t, v, 1)[0])


def uniform_bound_ratio(u: FemField, cfg: ProblemConfig) -> float:
    """``[eps**-(gamma+1) int_strip |u|^p] / ||u||^p_{W^{1,p}}``."""
    p = cfg.p
    nrm = norm_W1p(u, p)
    if nrm == 0.0:
        raise ValueError("zero field: ratio undefined")
    conc = _strip_sum(u.mesh, np.abs(_strip_midedge(u.mesh, u.values)) ** p, cfg)
    return conc / nrm ** p


def verify_uniform_bound(u_samples: Sequence[FemField], cfg_list: Sequence[ProblemConfig]):
    """Rows ``(epsilon, ratio)`` and the maximum ratio (the empirical constant)."""
    if len(u_samples) != len(cfg_list):
        raise ValueError("one config per sample")
    rows = [(cfg.epsilon, uniform_bound_ratio(u, cfg)) for u, cfg in zip(u_samples, cfg_list)]
    return rows, max(r for _, r in rows)


def verify_lipschitz(u: FemField, v: FemField, phi: FemField, cfg: ProblemConfig) -> float:
    """``|<F(u) - F(v), phi>| / (||u - v|| ||phi||)`` in ``W^{1,p}`` of the rough domain."""
    if not (u.mesh is v.mesh is phi.mesh):
        raise ValueError("u, v, phi must live on the same rough mesh")
    p = cfg.p
    duv = norm_W1p(u - v, p)
    if duv == 0.0:
        raise ValueError("u and v coincide: ratio undefined")
    nphi = norm_W1p(phi, p)
    if nphi == 0.0:
        return 0.0
    um = _strip_midedge(u.mesh, u.values)
    vm = _strip_midedge(u.mesh, v.values)
    pm = _strip_midedge(u.mesh, phi.values)
    f = cfg.fns.f
    num = _strip_sum(u.mesh, (f(um) - f(vm)) * pm, cfg)
    return abs(num) / (duv * nphi)


def seeded_bound_ratio(mesh: TriangleMesh, cfg: ProblemConfig, seed: int, samples: int) -> float:
    """Largest uniform-bound ratio over ``samples`` seeded smooth fields.

    The generator is reseeded per call, so the same functions are tested at
    every epsilon and a trend in epsilon is not sampling noise.
    """
    rng = np.random.default_rng(seed)
    return max(uniform_bound_ratio(smooth_random_field(mesh, rng), cfg) for _ in range(samples))


def seeded_lipschitz_ratio(mesh: TriangleMesh, cfg: ProblemConfig, seed: int, samples: int,
                           perturbation: float = 0.1) -> float:
    """Largest Lipschitz ratio over seeded triples ``(u, u + perturbation * w, phi)``."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        u = smooth_random_field(mesh, rng)
        v = u + smooth_random_field(mesh, rng) * perturbation
        phi = smooth_random_field(mesh, rng)
        best = max(best, verify_lipschitz(u, v, phi, cfg))
    return best

"""P1 finite elements for ``-div(|grad u|^{p-2} grad u) + |u|^{p-2} u = load``.

Gradient terms are integrated exactly (the gradient is constant per
triangle).  Zeroth-order terms use the three-point mid-edge rule.
"""
from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshing import TriangleMesh

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    """Newton did not converge; ``best`` holds the iterate with smallest residual."""

    def __init__(self, msg, best=None, diagnostics=None):
        super().__init__(msg)
        self.best = best
        self.diagnostics = diagnostics


class LinearSolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FemField:
    mesh: TriangleMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"field has {v.size} coefficients, mesh has {self.mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field coefficients must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def interpolate(cls, mesh: TriangleMesh, fn) -> "FemField":
        x, y = mesh.vertices.T
        return cls(mesh, np.broadcast_to(np.asarray(fn(x, y), dtype=float), x.shape))

    @classmethod
    def zeros(cls, mesh: TriangleMesh) -> "FemField":
        return cls(mesh, np.zeros(mesh.n_vertices))

    def __add__(self, other):
        _same_mesh(self, other)
        return FemField(self.mesh, self.values + other.values)

    def __sub__(self, other):
        _same_mesh(self, other)
        return FemField(self.mesh, self.values - other.values)

    def __mul__(self, a: float):
        return FemField(self.mesh, a * self.values)

    __rmul__ = __mul__


def _same_mesh(a: FemField, b: FemField):
    if a.mesh is not b.mesh:
        raise ValueError("fields live on different meshes")


# ---------------------------------------------------------------------------
# cached element geometry and sparsity pattern
# ---------------------------------------------------------------------------

class _Geometry:
    def __init__(self, mesh: TriangleMesh):
        tri = mesh.triangles
        p = mesh.vertices[tri]
        self.area = mesh.signed_areas
        twice = 2.0 * self.area
        grads = np.empty((len(tri), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grads[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / twice
            grads[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / twice
        self.grads = grads
        n = mesh.n_vertices
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        keys, self.inverse = np.unique(rows * n + cols, return_inverse=True)
        self.indices = (keys % n).astype(np.int32)
        self.indptr = np.searchsorted(keys // n, np.arange(n + 1)).astype(np.int32)
        self.nnz = len(keys)
        self.n = n
        self.tri = tri

    def matrix(self, local: np.ndarray, mask: Optional[np.ndarray] = None) -> sp.csr_matrix:
        """Assemble per-element (m, 3, 3) blocks."""
        if mask is not None:
            full = np.zeros((len(self.tri), 3, 3))
            full[mask] = local
            local = full
        data = np.bincount(self.inverse, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def vector(self, local: np.ndarray, tri: Optional[np.ndarray] = None) -> np.ndarray:
        tri = self.tri if tri is None else tri
        return np.bincount(tri.ravel(), weights=local.ravel(), minlength=self.n)


_GEOMETRY = weakref.WeakKeyDictionary()


def geometry(mesh: TriangleMesh) -> _Geometry:
    g = _GEOMETRY.get(mesh)
    if g is None:
        g = _GEOMETRY[mesh] = _Geometry(mesh)
    return g


def gradients(u: FemField) -> np.ndarray:
    """Elementwise constant gradient, shape (m, 2)."""
    g = geometry(u.mesh)
    return np.einsum("ti,tid->td", u.values[u.mesh.triangles], g.grads)


def midedge_values(values: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Values at the mid-edge points; column k sits opposite vertex k."""
    v = values[tri]
    return 0.5 * np.stack([v[:, 1] + v[:, 2], v[:, 2] + v[:, 0], v[:, 0] + v[:, 1]], axis=1)


def midedge_load(area: np.ndarray, qvals: np.ndarray) -> np.ndarray:
    """Local vectors ``int q phi_j`` from mid-edge samples ``q`` (m, 3)."""
    s = qvals.sum(axis=1, keepdims=True)
    return (area / 6.0)[:, None] * (s - qvals)


def midedge_matrix(area: np.ndarray, qvals: np.ndarray) -> np.ndarray:
    """Local matrices ``int q phi_i phi_j`` from mid-edge samples ``q`` (m, 3)."""
    m = len(area)
    out = np.empty((m, 3, 3))
    s = qvals.sum(axis=1)
    for i in range(3):
        out[:, i, i] = s - qvals[:, i]
        for j in range(3):
            if j != i:
                out[:, i, j] = qvals[:, 3 - i - j]
    return out * (area / 12.0)[:, None, None]


def _signed_power(u, p):
    return np.abs(u) ** (p - 2.0) * u


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------

class Load:
    """A load functional ``<L(u), phi_i>``; ``matrix`` is its derivative in u."""

    def vector(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, u: np.ndarray):
        return None


class ZeroLoad(Load):
    def __init__(self, n: int):
        self.n = n

    def vector(self, u):
        return np.zeros(self.n)


class VectorLoad(Load):
    def __init__(self, b: np.ndarray):
        self.b = np.asarray(b, dtype=float)

    def vector(self, u):
        return self.b


class ElementLoad(Load):
    """``weight * int_{elements} f(u) phi`` with the mid-edge rule."""

    def __init__(self, mesh: TriangleMesh, elements: np.ndarray, weight: float, f, df):
        if len(elements) == 0:
            raise ValueError("element load needs at least one element")
        self.mesh = mesh
        self.geo = geometry(mesh)
        self.elements = np.asarray(elements)
        self.tri = mesh.triangles[self.elements]
        self.area = mesh.signed_areas[self.elements] * weight
        self.f = f
        self.df = df

    def vector(self, u):
        q = self.f(midedge_values(u, self.tri))
        return self.geo.vector(midedge_load(self.area, q), self.tri)

    def matrix(self, u):
        dq = self.df(midedge_values(u, self.tri))
        if not np.any(dq):
            return None
        mask = np.zeros(len(self.mesh.triangles), dtype=bool)
        mask[self.elements] = True
        return self.geo.matrix(midedge_matrix(self.area, dq), mask)


_GL2 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


class EdgeLoad(Load):
    """``int_{edges} mu f(u) phi ds`` with 2-point Gauss per edge.

    ``mu_qp`` holds mu at the two Gauss points of every edge, shape (k, 2).
    """

    def __init__(self, mesh: TriangleMesh, edges: np.ndarray, mu_qp: np.ndarray, f, df):
        self.mesh = mesh
        self.edges = np.asarray(edges)
        self.n = mesh.n_vertices
        d = mesh.vertices[self.edges[:, 1]] - mesh.vertices[self.edges[:, 0]]
        self.length = np.hypot(d[:, 0], d[:, 1])
        self.mu_qp = np.asarray(mu_qp, dtype=float)
        # phi_a, phi_b at the Gauss points: (2 points, 2 basis)
        self.phi = np.array([[1 - _GL2[0], _GL2[0]], [1 - _GL2[1], _GL2[1]]])
        self.f = f
        self.df = df

    def gauss_points(self) -> np.ndarray:
        a = self.mesh.vertices[self.edges[:, 0]]
        b = self.mesh.vertices[self.edges[:, 1]]
        return a[:, None, :] + _GL2[None, :, None] * (b - a)[:, None, :]

    def _uq(self, u):
        ue = u[self.edges]
        return ue @ self.phi.T

    def vector(self, u):
        w = 0.5 * self.length[:, None] * self.mu_qp * self.f(self._uq(u))
        local = w @ self.phi
        return np.bincount(self.edges.ravel(), weights=local.ravel(), minlength=self.n)

    def matrix(self, u):
        w = 0.5 * self.length[:, None] * self.mu_qp * self.df(self._uq(u))
        if not np.any(w):
            return None
        local = np.einsum("eq,qa,qb->eab", w, self.phi, self.phi)
        rows = np.repeat(self.edges, 2, axis=1).ravel()
        cols = np.tile(self.edges, (1, 2)).ravel()
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(self.n, self.n))


class SumLoad(Load):
    def __init__(self, *parts: Load):
        self.parts = parts

    def vector(self, u):
        return sum(p.vector(u) for p in self.parts)

    def matrix(self, u):
        mats = [m for m in (p.matrix(u) for p in self.parts) if m is not None]
        return sum(mats[1:], mats[0]) if mats else None


# ---------------------------------------------------------------------------
# operator, residual, jacobian
# ---------------------------------------------------------------------------

def operator(u: FemField, p: float) -> np.ndarray:
    """``<A(u), phi_i>`` for the p-Laplacian plus the ``|u|^{p-2} u`` term."""
    mesh = u.mesh
    g = geometry(mesh)
    grad = gradients(u)
    s = np.einsum("td,td->t", grad, grad)
    flux = (s ** ((p - 2.0) / 2.0))[:, None] * grad
    local = g.area[:, None] * np.einsum("td,tid->ti", flux, g.grads)
    local += midedge_load(g.area, _signed_power(midedge_values(u.values, mesh.triangles), p))
    return g.vector(local)


def residual(u: FemField, p: float, load: Optional[Load] = None) -> np.ndarray:
    """Residual of the weak form against every P1 basis function."""
    if p < 2:
        raise ValueError("p must be >= 2")
    r = operator(u, p)
    if load is not None:
        r = r - load.vector(u.values)
    return r


def jacobian(u: FemField, p: float, delta: float, load: Optional[Load] = None) -> sp.csr_matrix:
    """Derivative of the residual with ``|grad u|^2`` regularized to ``|grad u|^2 + delta^2``."""
    if p < 2:
        raise ValueError("p must be >= 2")
    mesh = u.mesh
    g = geometry(mesh)
    grad = gradients(u)
    s = np.einsum("td,td->t", grad, grad) + delta * delta
    a = s ** ((p - 2.0) / 2.0)
    b = (p - 2.0) * s ** ((p - 4.0) / 2.0) if p != 2 else np.zeros_like(s)
    # grads_i . M . grads_j with M = a I + b grad grad^T
    gg = np.einsum("tid,tjd->tij", g.grads, g.grads)
    gu = np.einsum("tid,td->ti", g.grads, grad)
    local = g.area[:, None, None] * (a[:, None, None] * gg + b[:, None, None] * gu[:, :, None] * gu[:, None, :])
    dm = (p - 1.0) * np.abs(midedge_values(u.values, mesh.triangles)) ** (p - 2.0)
    local += midedge_matrix(g.area, dm)
    K = g.matrix(local)
    if load is not None:
        dL = load.matrix(u.values)
        if dL is not None:
            K = K - dL
    return K


def gradient_block(u: FemField, p: float, delta: float) -> np.ndarray:
    """The 2x2 coefficient matrix of the linearized flux per element."""
    grad = gradients(u)
    s = np.einsum("td,td->t", grad, grad) + delta * delta
    a = s ** ((p - 2.0) / 2.0)
    b = (p - 2.0) * s ** ((p - 4.0) / 2.0)
    return a[:, None, None] * np.eye(2) + b[:, None, None] * grad[:, :, None] * grad[:, None, :]


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def _region_mask(mesh: TriangleMesh, region) -> np.ndarray:
    if region in (None, "all"):
        return np.ones(mesh.n_triangles, dtype=bool)
    if region in ("y<0", "lower"):
        return mesh.lower_mask
    if region in ("y>0", "upper"):
        return mesh.upper_mask
    return np.asarray(region, dtype=bool)


def energy_integral(u: FemField, p: float, region="all") -> float:
    """``int |grad u|^p + |u|^p`` over a region."""
    mesh = u.mesh
    g = geometry(mesh)
    mask = _region_mask(mesh, region)
    grad = gradients(u)[mask]
    area = g.area[mask]
    gterm = area * np.einsum("td,td->t", grad, grad) ** (p / 2.0)
    um = midedge_values(u.values, mesh.triangles[mask])
    mterm = area / 3.0 * (np.abs(um) ** p).sum(axis=1)
    return float(gterm.sum() + mterm.sum())


def norm_W1p(u: FemField, p: float, region="all") -> float:
    """``(int_region |grad u|^p + |u|^p)^{1/p}``; region is ``"all"`` or ``"y<0"``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return energy_integral(u, p, region) ** (1.0 / p)


# degree-4 six-point rule, barycentric points and weights normalized to 1
_Q6_A, _Q6_B = 0.445948490915965, 0.091576213509771
_Q6_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
_Q6_W /= _Q6_W.sum()
_Q6_L = np.array([
    [1 - 2 * _Q6_A, _Q6_A, _Q6_A], [_Q6_A, 1 - 2 * _Q6_A, _Q6_A], [_Q6_A, _Q6_A, 1 - 2 * _Q6_A],
    [1 - 2 * _Q6_B, _Q6_B, _Q6_B], [_Q6_B, 1 - 2 * _Q6_B, _Q6_B], [_Q6_B, _Q6_B, 1 - 2 * _Q6_B],
])


def evaluate(u: FemField, xs, ys):
    """Values and gradients of ``u`` at points; raises if a point is outside."""
    from .meshing import PointNotFound

    t, bary = u.mesh.locator.locate(xs, ys)
    if np.any(t < 0):
        i = int(np.flatnonzero(t < 0)[0])
        raise PointNotFound(f"point ({np.ravel(xs)[i]}, {np.ravel(ys)[i]}) is outside the mesh")
    vals = np.einsum("ti,ti->t", u.values[u.mesh.triangles[t]], bary)
    return vals, gradients(u)[t]


def field_error(u_rough: FemField, u_limit: FemField, p: float) -> float:
    """``W^{1,p}`` norm of ``u_rough - u_limit`` over the limit mesh.

    Uses the six-point interior rule on the limit triangles with ``u_rough``
    evaluated by point location, so its gradient is never sampled on an edge.
    """
    lm = u_limit.mesh
    pts = np.einsum("qi,tid->tqd", _Q6_L, lm.vertices[lm.triangles]).reshape(-1, 2)
    vr, gr = evaluate(u_rough, pts[:, 0], pts[:, 1])
    vl = (u_limit.values[lm.triangles] @ _Q6_L.T).ravel()
    gl = np.repeat(gradients(u_limit), len(_Q6_W), axis=0)
    de = gr - gl
    integrand = np.einsum("td,td->t", de, de) ** (p / 2.0) + np.abs(vr - vl) ** p
    w = (lm.signed_areas[:, None] * _Q6_W[None, :]).ravel()
    return float(np.dot(w, integrand) ** (1.0 / p))


def difference_norm(u: FemField, v: FemField, p: float, quad_mesh: TriangleMesh) -> float:
    """``W^{1,p}`` norm of ``u - v`` over ``quad_mesh``, both fields evaluated by point location."""
    pts = np.einsum("qi,tid->tqd", _Q6_L, quad_mesh.vertices[quad_mesh.triangles]).reshape(-1, 2)
    vu, gu = evaluate(u, pts[:, 0], pts[:, 1])
    vv, gv = evaluate(v, pts[:, 0], pts[:, 1])
    de = gu - gv
    integrand = np.einsum("td,td->t", de, de) ** (p / 2.0) + np.abs(vu - vv) ** p
    w = (quad_mesh.signed_areas[:, None] * _Q6_W[None, :]).ravel()
    return float(np.dot(w, integrand) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

def _roundoff_floor(K: sp.csr_matrix, u: np.ndarray, load: Optional[Load]) -> float:
    """Residual level below which cancellation noise dominates: eps * || |K| |u| + |L| ||."""
    absK = sp.csr_matrix((np.abs(K.data), K.indices, K.indptr), shape=K.shape)
    mag = absK @ np.abs(u)
    if load is not None:
        mag += np.abs(load.vector(u))
    return 64.0 * np.finfo(float).eps * float(np.linalg.norm(mag))


@dataclass
class NewtonDiagnostics:
    iterations: int = 0
    converged: bool = False
    residual_norms: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    linear_solver: list = field(default_factory=list)
    tolerance: float = 0.0
    roundoff_floor: float = 0.0

    def rows(self):
        """(iteration, residual, damping) rows; damping of row 0 is blank."""
        out = []
        for i, r in enumerate(self.residual_norms):
            d = self.damping[i - 1] if i > 0 else ""
            out.append((i, r, d))
        return out


def solve_linear(K: sp.spmatrix, rhs: np.ndarray):
    """Sparse direct solve, with Jacobi-preconditioned CG as fallback."""
    try:
        lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")
        x = lu.solve(rhs)
        x += lu.solve(rhs - K @ x)  # one step of iterative refinement
        if np.all(np.isfinite(x)):
            return x, "lu"
    except RuntimeError as exc:
        log.debug("direct solve failed: %s", exc)
    d = K.diagonal()
    if np.any(d <= 0):
        raise LinearSolverError("matrix is singular and not positive definite")
    M = sp.diags(1.0 / d)
    x, info = spla.cg(K, rhs, rtol=1e-12, atol=0.0, M=M, maxiter=20 * K.shape[0])
    if info != 0 or not np.all(np.isfinite(x)):
        raise LinearSolverError(f"conjugate gradient failed (info={info})")
    return x, "cg"


def newton_solve(initial: FemField, p: float, load: Optional[Load] = None, tols=None):
    """Damped Newton for ``A(u) = L(u)``.

    ``tols`` is a SolverParams-like object (rtol, atol, max_iter, delta,
    delta_floor, max_halvings).  Convergence is declared when the Euclidean
    residual drops below ``max(atol, rtol * scale)``, where ``scale`` is the
    larger of the initial residual and the initial load vector norms, or
    below the round-off floor ``64 eps || |K| |u| + |L(u)| ||`` of the
    current iterate (reported in the diagnostics).
    Returns ``(field, diagnostics)``.
    """
    from .geometry import SolverParams

    tols = tols or SolverParams()
    mesh = initial.mesh
    g = geometry(mesh)
    u = initial.values.copy()
    field_of = lambda v: FemField(mesh, v)  # noqa: E731

    def res(v):
        return residual(field_of(v), p, load)

    r = res(u)
    rn = float(np.linalg.norm(r))
    load0 = float(np.linalg.norm(load.vector(u))) if load is not None else 0.0
    scale = max(rn, load0)
    tol = max(tols.atol, tols.rtol * scale)
    diag = NewtonDiagnostics(tolerance=tol, residual_norms=[rn])
    best_u, best_r = u.copy(), rn

    floor = 0.0
    while rn > max(tol, floor):
        if diag.iterations >= tols.max_iter:
            raise NewtonError(
                f"Newton did not converge in {tols.max_iter} iterations (residual {best_r:.3e}, tol {tol:.1e})",
                best=field_of(best_u), diagnostics=diag,
            )
        grad = gradients(field_of(u))
        rms = np.sqrt(np.dot(g.area, np.einsum("td,td->t", grad, grad)) / g.area.sum())
        delta = max(tols.delta * rms, tols.delta_floor)
        K = jacobian(field_of(u), p, delta, load)
        floor = _roundoff_floor(K, u, load)
        diag.roundoff_floor = floor
        if rn <= floor:
            break
        du, how = solve_linear(K, -r)
        lam = 1.0
        for _ in range(tols.max_halvings + 1):
            trial = u + lam * du
            r_trial = res(trial)
            rn_trial = float(np.linalg.norm(r_trial))
            if rn_trial < rn:
                break
            lam *= 0.5
        else:
            lam *= 2.0
        u, r, rn = trial, r_trial, rn_trial
        diag.iterations += 1
        diag.residual_norms.append(rn)
        diag.damping.append(lam)
        diag.deltas.append(delta)
        diag.linear_solver.append(how)
        if rn < best_r:
            best_u, best_r = u.copy(), rn
        log.debug("newton %d: residual %.3e damping %g", diag.iterations, rn, lam)

    diag.converged = True
    return field_of(u), diag

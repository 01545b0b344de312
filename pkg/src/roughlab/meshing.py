"""Structured column meshes of the rough domain and of the limit cylinder.

Every column of vertices carries the same number of levels, so neighbouring
columns are joined by quads split along one diagonal.  For the rough domain a
column is stacked as::

    [-1, a]      bulk block, graded towards y = 0       (a = min(0, y_lo))
    [a, 0]       strip part below y = 0                 (collapsed when y_lo >= 0)
    [0, b]       cap outside the strip                  (b = max(0, y_lo))
    [b, G]       strip part above y = 0

so ``y = 0`` and both strip boundaries are mesh lines.  Coincident levels in a
column are merged into one vertex and the resulting zero-area triangles are
dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .geometry import ConfigError, ProblemConfig, check_admissible, eval_profile, strip_density

TOP_ROUGH = "TOP_ROUGH"
GAMMA = "GAMMA"
LATERAL = "LATERAL"
BOTTOM = "BOTTOM"

# element regions
BULK = 0
STRIP_LOW = 1
CAP = 2
STRIP_HIGH = 3


class MeshError(ConfigError):
    pass


class PointNotFound(LookupError):
    pass


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray            # (n, 2)
    triangles: np.ndarray           # (m, 3), counterclockwise
    boundary_edges: np.ndarray      # (k, 2) vertex pairs
    boundary_tags: np.ndarray       # (k,) tag strings
    region: np.ndarray              # (m,) region code per triangle
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.asarray(self.boundary_tags, dtype=object)
        self.region = np.asarray(self.region, dtype=np.int8)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def strip_elements(self) -> np.ndarray:
        """Indices of triangles inside the closure of the reaction strip."""
        return np.flatnonzero((self.region == STRIP_LOW) | (self.region == STRIP_HIGH))

    @property
    def has_strip(self) -> bool:
        return self.strip_elements.size > 0

    @cached_property
    def upper_mask(self) -> np.ndarray:
        """Triangles in the cap ``y > 0``."""
        return (self.region == CAP) | (self.region == STRIP_HIGH)

    @property
    def lower_mask(self) -> np.ndarray:
        return ~self.upper_mask

    def edges_tagged(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def total_area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def locator(self) -> "PointLocator":
        return PointLocator(self)


# ---------------------------------------------------------------------------
# column mesh machinery
# ---------------------------------------------------------------------------

def graded_levels(h_top: float, h_bulk: float, ratio: float) -> np.ndarray:
    """Increasing levels from -1 to 0, spacing ``h_top`` at 0 growing by ``ratio`` up to ``h_bulk``."""
    h_top = min(h_top, h_bulk)
    steps = []
    t, total = h_top, 0.0
    while total < 1.0 - 1e-12:
        steps.append(t)
        total += t
        t = min(t * ratio, h_bulk)
    steps = np.array(steps) / total
    ys = -np.concatenate([[0.0], np.cumsum(steps)])
    ys[-1] = -1.0
    return ys[::-1].copy()


def _column_mesh(x: np.ndarray, Y: np.ndarray, layer_region: np.ndarray, top_tag: str,
                 info: dict) -> TriangleMesh:
    """Triangulate columns of levels ``Y[i, k]`` at abscissae ``x[i]``."""
    ncol, L = Y.shape
    new = np.ones((ncol, L), dtype=bool)
    new[:, 1:] = np.diff(Y, axis=1) > 0.0
    ids = np.cumsum(new.ravel()).reshape(ncol, L) - 1
    X = np.broadcast_to(x[:, None], Y.shape)
    vertices = np.column_stack([X[new], Y[new]])

    v00 = ids[:-1, :-1]
    v10 = ids[1:, :-1]
    v11 = ids[1:, 1:]
    v01 = ids[:-1, 1:]
    reg = np.broadcast_to(layer_region[None, :], v00.shape)
    ta = np.stack([v00, v10, v11], axis=-1).reshape(-1, 3)
    tb = np.stack([v00, v11, v01], axis=-1).reshape(-1, 3)
    # interleave so the two halves of each quad are adjacent
    tris = np.stack([ta, tb], axis=1).reshape(-1, 3)
    regs = np.repeat(reg.ravel(), 2)
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris, regs = tris[ok], regs[ok]

    edges, tags = [], []
    bot = np.column_stack([ids[:-1, 0], ids[1:, 0]])
    edges.append(bot)
    tags += [BOTTOM] * len(bot)
    right = np.column_stack([ids[-1, :-1], ids[-1, 1:]])
    right = right[right[:, 0] != right[:, 1]]
    edges.append(right)
    tags += [LATERAL] * len(right)
    top = np.column_stack([ids[1:, -1], ids[:-1, -1]])[::-1]
    edges.append(top)
    tags += [top_tag] * len(top)
    left = np.column_stack([ids[0, 1:], ids[0, :-1]])[::-1]
    left = left[left[:, 0] != left[:, 1]]
    edges.append(left)
    tags += [LATERAL] * len(left)

    mesh = TriangleMesh(vertices, tris, np.vstack(edges), np.array(tags, dtype=object), regs, info)
    mesh.info.setdefault("columns", x)
    mesh.info.setdefault("column_ids", ids)
    return mesh


def _active(num: np.ndarray, den: np.ndarray, n_max: int) -> np.ndarray:
    """Number of non-collapsed layers a column uses in a block."""
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return np.clip(np.ceil(ratio - 1e-9), 1, n_max).astype(np.int64)


def _block(lo: np.ndarray, hi: np.ndarray, n_max: int, n_active: np.ndarray) -> np.ndarray:
    """Levels above ``lo`` up to ``hi``: ``n_active`` equal layers, the rest collapsed on ``hi``."""
    k = np.arange(1, n_max + 1)
    frac = np.minimum(k[None, :] / n_active[:, None], 1.0)
    out = lo[:, None] + (hi - lo)[:, None] * frac
    out[frac >= 1.0] = np.broadcast_to(hi[:, None], out.shape)[frac >= 1.0]
    return out


def build_rough_mesh(cfg: ProblemConfig) -> TriangleMesh:
    """Conforming triangulation of the rough domain with strip layers resolved.

    The column spacing near the rough top must not exceed ``eps / 8``.
    """
    check_admissible(cfg)
    eps = cfg.epsilon
    mp = cfg.mesh
    dx = mp.column_spacing(eps)
    if dx > eps / 8.0 * (1.0 + 1e-12):
        raise MeshError(
            f"column spacing {dx:.4g} cannot resolve the eps-oscillation (needs <= eps/8 = {eps / 8:.4g})"
        )
    ncol = max(1, math.ceil(1.0 / dx - 1e-9))
    x = np.linspace(0.0, 1.0, ncol + 1)
    dx = 1.0 / ncol

    G = eval_profile(x, cfg)
    thick = cfg.scale * strip_density(x, cfg)
    floor = 1e-3 * cfg.scale * cfg.fns.h1
    thin = thick < floor
    thick_mesh = np.where(thin, floor, thick)

    # snap nearly-collapsed blocks; strip thickness is kept, the profile moves by < floor
    G_mesh = G.copy()
    tiny_cap = (G_mesh > 0.0) & (G_mesh < floor)
    G_mesh[tiny_cap] = 0.0
    y_lo = G_mesh - thick_mesh
    near_zero = (y_lo != 0.0) & (np.abs(y_lo) < floor) & (G_mesh > 0.0)
    G_mesh[near_zero] = thick_mesh[near_zero]
    y_lo = G_mesh - thick_mesh
    y_lo[near_zero] = 0.0
    snap = float(np.max(np.abs(G_mesh - G), initial=0.0))

    a = np.minimum(0.0, y_lo)
    b = np.maximum(0.0, y_lo)
    ns = mp.strip_layers
    n_cap = max(1, math.ceil(float(b.max()) / dx))
    ref = graded_levels(dx, mp.bulk_edge(), mp.grading)
    nb = len(ref) - 1

    bulk = -1.0 + (ref[None, :] + 1.0) * (a[:, None] + 1.0)
    bulk[:, -1] = a
    t_low = -a
    t_high = G_mesh - b
    low = _block(a, np.zeros_like(a), ns, _active(ns * t_low, thick_mesh, ns))
    cap = _block(np.zeros_like(b), b, n_cap, _active(b, np.full_like(b, dx), n_cap))
    high = _block(b, G_mesh, ns, _active(ns * t_high, thick_mesh, ns))
    Y = np.hstack([bulk, low, cap, high])
    Y[:, 0] = -1.0

    layer_region = np.concatenate([
        np.full(nb, BULK), np.full(ns, STRIP_LOW), np.full(n_cap, CAP), np.full(ns, STRIP_HIGH),
    ])
    info = dict(
        kind="rough", epsilon=eps, dx=dx, n_columns=ncol + 1, levels=Y.shape[1],
        y_zero_level=nb + ns, profile_snap=snap,
        strip_floor_fraction=float(np.mean(thin)),
        strip_measure_perturbation=float(np.sum(np.abs(thick_mesh - thick)) * dx),
        column_levels=Y,
    )
    return _column_mesh(x, Y, layer_region, TOP_ROUGH, info)


def build_cylinder_mesh(resolution: int = 0, top_edge: Optional[float] = None,
                        edge: Optional[float] = None, grading: float = 1.2) -> TriangleMesh:
    """Triangulation of ``(0, 1) x (-1, 0)`` with the top edges tagged GAMMA.

    With only ``resolution`` the grid is uniform ``resolution x resolution``;
    with ``top_edge`` the columns have that spacing and the levels are graded
    from ``top_edge`` at y = 0 to ``edge`` in the bulk.
    """
    if top_edge is None:
        if resolution < 4:
            raise MeshError("cylinder resolution must be >= 4 vertices per side")
        x = np.linspace(0.0, 1.0, resolution + 1)
        ref = np.linspace(-1.0, 0.0, resolution + 1)
    else:
        ncol = max(4, math.ceil(1.0 / top_edge - 1e-9))
        x = np.linspace(0.0, 1.0, ncol + 1)
        ref = graded_levels(1.0 / ncol, edge if edge is not None else 1.0 / ncol, grading)
    Y = np.broadcast_to(ref[None, :], (len(x), len(ref))).copy()
    info = dict(kind="cylinder", n_columns=len(x), levels=len(ref), column_levels=Y)
    return _column_mesh(x, Y, np.full(len(ref) - 1, BULK), GAMMA, info)


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------

class PointLocator:
    """Bucket-grid point location with barycentric inclusion tests."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]
        self.origin = p[:, 0]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.inv = np.empty((len(p), 2, 2))
        self.inv[:, 0, 0] = d2[:, 1] / det
        self.inv[:, 0, 1] = -d2[:, 0] / det
        self.inv[:, 1, 0] = -d1[:, 1] / det
        self.inv[:, 1, 1] = d1[:, 0] / det

        lo = p.min(axis=1)
        hi = p.max(axis=1)
        self.xmin, self.ymin = mesh.vertices.min(axis=0)
        xmax, ymax = mesh.vertices.max(axis=0)
        nb = max(1, int(math.sqrt(len(p))))
        self.nx = self.ny = nb
        self.wx = max(xmax - self.xmin, 1e-300) / nb
        self.wy = max(ymax - self.ymin, 1e-300) / nb
        ix0, iy0 = self._bin(lo[:, 0], lo[:, 1])
        ix1, iy1 = self._bin(hi[:, 0], hi[:, 1])
        cx = ix1 - ix0 + 1
        cy = iy1 - iy0 + 1
        count = cx * cy
        tri = np.repeat(np.arange(len(p)), count)
        local = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
        bx = np.repeat(ix0, count) + local % np.repeat(cx, count)
        by = np.repeat(iy0, count) + local // np.repeat(cx, count)
        key = bx * nb + by
        order = np.argsort(key, kind="stable")
        self.cand = tri[order]
        self.start = np.searchsorted(key[order], np.arange(nb * nb + 1))

    def _bin(self, x, y):
        ix = np.clip(((x - self.xmin) / self.wx).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(((y - self.ymin) / self.wy).astype(np.int64), 0, self.ny - 1)
        return ix, iy

    def locate(self, xs, ys, tol: float = 1e-10):
        """Vectorized location; triangle index -1 where a point is outside."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        ix, iy = self._bin(xs, ys)
        key = ix * self.nx + iy
        s0 = self.start[key]
        n = self.start[key + 1] - s0
        best = np.full(len(xs), -1, dtype=np.int64)
        best_score = np.full(len(xs), -np.inf)
        bary = np.zeros((len(xs), 3))
        for j in range(int(n.max(initial=0))):
            act = np.flatnonzero(n > j)
            t = self.cand[s0[act] + j]
            dxy = np.column_stack([xs[act], ys[act]]) - self.origin[t]
            l1 = self.inv[t, 0, 0] * dxy[:, 0] + self.inv[t, 0, 1] * dxy[:, 1]
            l2 = self.inv[t, 1, 0] * dxy[:, 0] + self.inv[t, 1, 1] * dxy[:, 1]
            l0 = 1.0 - l1 - l2
            score = np.minimum(np.minimum(l0, l1), l2)
            upd = score > best_score[act]
            a = act[upd]
            best_score[a] = score[upd]
            best[a] = t[upd]
            bary[a] = np.column_stack([l0[upd], l1[upd], l2[upd]])
        miss = best_score < -tol
        best[miss] = -1
        bary = np.clip(bary, 0.0, 1.0)
        bary /= bary.sum(axis=1, keepdims=True)
        return best, bary


def locate_point(mesh: TriangleMesh, x: float, y: float, tol: float = 1e-10):
    """Triangle containing ``(x, y)`` and its barycentric coordinates."""
    t, b = mesh.locator.locate([x], [y], tol)
    if t[0] < 0:
        raise PointNotFound(f"point ({x}, {y}) is outside the mesh")
    return int(t[0]), b[0]

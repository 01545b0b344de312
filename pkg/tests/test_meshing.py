import dataclasses
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.spatial.distance import directed_hausdorff

from roughlab.geometry import MeshParams, ProblemConfig, eval_profile, in_strip, strip_bounds
from roughlab.meshing import (BOTTOM, GAMMA, LATERAL, TOP_ROUGH, MeshError, PointNotFound,
                              build_cylinder_mesh, build_rough_mesh, locate_point)

CASES = [
    ProblemConfig(epsilon=0.1, h="const"),
    ProblemConfig(epsilon=0.1, h="sine"),
    ProblemConfig(epsilon=0.05, h="cosine_x", beta=0.5),
    ProblemConfig(epsilon=0.2, h="sine", gamma=0.5, mesh=MeshParams(strip_layers=3)),
]


def edge_counts(mesh):
    t = mesh.triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    return Counter(map(tuple, directed))


def check_topology(mesh):
    assert np.all(mesh.signed_areas > 0)
    directed = edge_counts(mesh)
    assert max(directed.values()) == 1  # consistent orientation, no overlapping copies
    boundary = {e for e in directed if (e[1], e[0]) not in directed}
    tagged = set(map(tuple, mesh.boundary_edges))
    assert tagged == boundary
    assert len(tagged) == len(mesh.boundary_edges)
    # closed loops: every boundary vertex has one incoming and one outgoing edge
    heads = Counter(b for _, b in tagged)
    tails = Counter(a for a, _ in tagged)
    assert heads == tails and set(heads.values()) == {1}
    # a triangulated disk has Euler characteristic 1
    n_edges = len(boundary) + (len(directed) - len(boundary)) // 2
    used = np.unique(mesh.triangles)
    assert len(used) == mesh.n_vertices
    assert mesh.n_vertices - n_edges + mesh.n_triangles == 1


@pytest.mark.parametrize("cfg", CASES, ids=lambda c: f"eps{c.epsilon}-{c.h}")
def test_rough_mesh_topology(cfg):
    check_topology(build_rough_mesh(cfg))


@pytest.mark.parametrize("n", [4, 8, 13])
def test_cylinder_mesh_topology(n):
    check_topology(build_cylinder_mesh(n))


def test_cylinder_structured_counts(cyl8):
    assert cyl8.n_triangles == 2 * 8 * 8
    assert cyl8.total_area() == pytest.approx(1.0, abs=1e-15)
    assert len(cyl8.strip_elements) == 0


def test_cylinder_gamma_has_unit_length(cyl8):
    e = cyl8.edges_tagged(GAMMA)
    v = cyl8.vertices
    assert np.sum(np.linalg.norm(v[e[:, 1]] - v[e[:, 0]], axis=1)) == pytest.approx(1.0, abs=1e-15)
    assert np.all(v[e.ravel(), 1] == 0.0)


def test_cylinder_tags_cover_each_side(cyl8):
    tags = Counter(cyl8.boundary_tags)
    assert tags == {GAMMA: 8, BOTTOM: 8, LATERAL: 16}


def test_cylinder_too_coarse_rejected():
    with pytest.raises(MeshError):
        build_cylinder_mesh(3)


def test_graded_cylinder_area():
    m = build_cylinder_mesh(top_edge=1 / 200, edge=1 / 32)
    check_topology(m)
    assert m.total_area() == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("cfg", CASES, ids=lambda c: f"eps{c.epsilon}-{c.h}")
def test_rough_area_matches_profile_integral(cfg):
    m = build_rough_mesh(cfg)
    exact = 1.0 + quad(lambda x: eval_profile(x, cfg), 0, 1, limit=4000, epsabs=1e-13)[0]
    assert m.total_area() == pytest.approx(exact, abs=1e-6)


@pytest.mark.parametrize("cfg", CASES, ids=lambda c: f"eps{c.epsilon}-{c.h}")
def test_lower_part_is_the_unit_square(cfg):
    m = build_rough_mesh(cfg)
    low = m.lower_mask
    assert np.sum(m.signed_areas[low]) == pytest.approx(1.0, abs=1e-13)
    assert np.all(m.vertices[m.triangles[low], 1] <= 0.0)
    assert np.all(m.vertices[m.triangles[~low], 1] >= 0.0)
    # y = 0 edges of the lower part tile [0, 1]
    t = m.triangles[low]
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    v = m.vertices
    on_top = (v[e[:, 0], 1] == 0) & (v[e[:, 1], 1] == 0)
    # each y = 0 edge belongs to exactly one lower triangle
    top = e[on_top]
    assert len({tuple(sorted(a)) for a in top}) == len(top)
    assert np.sum(np.abs(v[top[:, 1], 0] - v[top[:, 0], 0])) == pytest.approx(1.0, abs=1e-14)


def test_strip_centroids_inside_polyline_strip():
    cfg = ProblemConfig(epsilon=0.1, h="const", mesh=MeshParams(edge=1 / 64, strip_layers=2))
    m = build_rough_mesh(cfg)
    dx = m.info["dx"]
    tri = m.triangles[m.strip_elements]
    xs = m.vertices[tri, 0]
    x0 = xs.min(axis=1)
    x1 = np.minimum(x0 + dx, 1.0)
    c = m.centroids[m.strip_elements]
    lo0, hi0 = strip_bounds(x0, cfg)
    lo1, hi1 = strip_bounds(x1, cfg)
    w = (c[:, 0] - x0) / (x1 - x0)
    lo = (1 - w) * lo0 + w * lo1
    hi = (1 - w) * hi0 + w * hi1
    # where y_lo changes sign inside a column the y = 0 mesh line kinks the polyline
    kink = np.where(np.sign(lo0) != np.sign(lo1), np.maximum(np.abs(lo0), np.abs(lo1)), 0.0)
    tol = kink + m.info["profile_snap"] + 1e-15
    assert np.all(c[:, 1] > lo - tol)
    assert np.all(c[:, 1] < hi + tol)
    assert np.mean(kink > 0) < 0.05


def test_exact_strip_membership_improves_with_refinement():
    fractions = []
    for k in (8, 16, 32):
        cfg = ProblemConfig(epsilon=0.1, h="const", mesh=MeshParams(top_edge=0.1 / k))
        m = build_rough_mesh(cfg)
        c = m.centroids[m.strip_elements]
        fractions.append(np.mean(in_strip(c[:, 0], c[:, 1], cfg)))
    assert fractions[0] < fractions[1] < fractions[2]
    assert fractions[-1] > 0.99


def test_strip_layer_count():
    for layers in (1, 2, 4):
        cfg = ProblemConfig(epsilon=0.1, mesh=MeshParams(strip_layers=layers))
        m = build_rough_mesh(cfg)
        # where the strip lies wholly above zero every column carries `layers` strip layers
        assert len(m.strip_elements) >= 2 * layers * (m.info["n_columns"] - 1) * 0.5
        Y = m.info["column_levels"]
        nb = m.info["y_zero_level"] - layers
        top = Y[:, -layers - 1:]
        full = np.all(np.diff(top, axis=1) > 0, axis=1)
        assert full.mean() > 0.5
        assert np.all(Y[:, nb + layers] == 0.0)  # the y = 0 level


def _hausdorff_top(cfg):
    m = build_rough_mesh(cfg)
    e = m.edges_tagged(TOP_ROUGH)
    verts = np.unique(e)
    order = np.argsort(m.vertices[verts, 0])
    px, py = m.vertices[verts[order]].T
    n = 10 * len(px)
    xs = np.linspace(0, 1, n)
    poly = np.column_stack([xs, np.interp(xs, px, py)])
    exact = np.column_stack([xs, eval_profile(xs, cfg)])
    return max(directed_hausdorff(poly, exact)[0], directed_hausdorff(exact, poly)[0])


@pytest.mark.parametrize("eps", [0.2, 0.1])
def test_hausdorff_halves_under_refinement(eps):
    d = [_hausdorff_top(ProblemConfig(epsilon=eps, mesh=MeshParams(refine=r))) for r in (0, 1, 2)]
    assert d[1] <= 0.5 * d[0]
    assert d[2] <= 0.5 * d[1]


def test_strip_leaving_domain_is_a_configuration_error():
    with pytest.raises(MeshError.__mro__[1]):
        build_rough_mesh(ProblemConfig(epsilon=0.3, gamma=0.01, h="const:20"))


def test_unresolved_oscillation_rejected():
    with pytest.raises(MeshError):
        build_rough_mesh(ProblemConfig(epsilon=0.1, mesh=MeshParams(top_edge=0.1 / 4)))


def test_locate_centroid(cyl8):
    t = 37
    cx, cy = cyl8.centroids[t]
    tri, bary = locate_point(cyl8, cx, cy)
    assert tri == t
    assert np.allclose(bary, 1 / 3, atol=1e-14)


def test_locate_vertex(cyl8):
    x, y = cyl8.vertices[20]
    tri, bary = locate_point(cyl8, x, y)
    assert 20 in cyl8.triangles[tri]
    assert np.isclose(bary.max(), 1.0, atol=1e-12)


def test_locate_outside(cyl8):
    with pytest.raises(PointNotFound):
        locate_point(cyl8, 2.0, 2.0)


@given(x=st.floats(0, 1), y=st.floats(-1, 0))
def test_locate_barycentric_partition(coarse_rough, x, y):
    tri, bary = locate_point(coarse_rough, x, y)
    assert np.all(bary >= -1e-12) and np.all(bary <= 1 + 1e-12)
    assert bary.sum() == pytest.approx(1.0, abs=1e-12)
    v = coarse_rough.vertices[coarse_rough.triangles[tri]]
    assert np.allclose(bary @ v, (x, y), atol=1e-12)


def test_thin_strip_is_floored():
    base = ProblemConfig(epsilon=0.1)
    fns = dataclasses.replace(base.fns, h=lambda x, s: np.maximum(0.0, np.sin(2 * np.pi * s)), h1=1.0)
    cfg = base.replace(functions=fns)
    m = build_rough_mesh(cfg)
    check_topology(m)
    assert 0.3 < m.info["strip_floor_fraction"] < 0.7
    floor = 1e-3 * cfg.scale * fns.h1
    assert m.info["strip_measure_perturbation"] <= floor
    assert m.info["profile_snap"] < floor


def test_vanishing_density_leaves_no_strip():
    cfg = ProblemConfig(epsilon=0.1, h="const:0")
    m = build_rough_mesh(cfg)
    check_topology(m)
    assert len(m.strip_elements) == 0


def test_mesh_is_deterministic():
    cfg = ProblemConfig(epsilon=0.1)
    a, b = build_rough_mesh(cfg), build_rough_mesh(cfg)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)

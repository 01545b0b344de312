import numpy as np
import pytest

from roughlab.fem import FemField, field_error
from roughlab.geometry import MeshParams, ProblemConfig, mu
from roughlab.limit import LimitSolution, boundary_residual, default_limit_mesh, gamma_load, solve_limit
from roughlab.meshing import GAMMA, MeshError, build_cylinder_mesh


def exact(v):
    return np.cosh(v[:, 1] + 1.0) / np.sinh(1.0)


def nodal_error(n):
    sol = solve_limit(ProblemConfig(h="const:1"), build_cylinder_mesh(n))
    return np.max(np.abs(sol.u.values - exact(sol.mesh.vertices))), sol


def test_manufactured_solution_and_trace():
    err, sol = nodal_error(32)
    assert err < 1e-3
    top = np.unique(sol.mesh.edges_tagged(GAMMA))
    np.testing.assert_allclose(sol.u.values[top], 1.0 / np.tanh(1.0), atol=1e-3)


def test_second_order_refinement():
    e16, _ = nodal_error(16)
    e32, _ = nodal_error(32)
    e64, _ = nodal_error(64)
    assert 3.2 <= e16 / e32 <= 4.8
    assert 3.2 <= e32 / e64 <= 4.8


@pytest.mark.parametrize("m", [0.25, 2.0, 3.5])
def test_constant_density_scales_linearly(m, cyl8):
    base = solve_limit(ProblemConfig(h="const:1"), cyl8)
    scaled = solve_limit(ProblemConfig(h=f"const:{m}"), cyl8)
    np.testing.assert_allclose(scaled.u.values, m * base.u.values, rtol=1e-10)


def test_zero_reaction(cyl8):
    sol = solve_limit(ProblemConfig(f="zero"), cyl8)
    assert np.all(sol.u.values == 0.0)
    assert boundary_residual(sol) == 0.0


@pytest.mark.parametrize("p,f", [(2.0, "one"), (3.0, "tanh_shift"), (4.0, "tanh")])
def test_boundary_residual_at_solution(p, f):
    sol = solve_limit(ProblemConfig(p=p, f=f, h="cosine_x"), build_cylinder_mesh(16))
    assert boundary_residual(sol) <= 1e-8


def test_boundary_residual_positive_off_solution(cyl8):
    sol = solve_limit(ProblemConfig(h="const:1"), cyl8)
    off = LimitSolution(sol.u + FemField.interpolate(cyl8, lambda x, y: 0.1), sol.mu_samples, sol.cfg,
                        sol.load, sol.diagnostics)
    assert boundary_residual(off) > 1e-3


@pytest.mark.parametrize("h", ["sine", "cosine_x", "const:0.7"])
@pytest.mark.parametrize("p,f", [(2.0, "one"), (3.0, "tanh_shift")])
def test_numeric_and_exact_mu_agree(h, p, f):
    cfg = ProblemConfig(h=h, p=p, f=f)
    m = build_cylinder_mesh(16)
    a = solve_limit(cfg, m)
    b = solve_limit(cfg, m, exact_mu=True)
    assert field_error(a.u, b.u, p) <= 1e-8


def test_mu_samples_match_geometry():
    cfg = ProblemConfig(h="cosine_x")
    load = gamma_load(cfg, build_cylinder_mesh(8))
    xq = load.gauss_points()[..., 0]
    np.testing.assert_allclose(load.mu_qp, mu(xq, cfg.fns), atol=1e-13)
    np.testing.assert_allclose(load.mu_qp, cfg.fns.mu_exact(xq), atol=1e-10)


def test_missing_gamma_edges_rejected():
    m = build_cylinder_mesh(4)
    keep = m.boundary_tags != GAMMA
    bare = type(m)(m.vertices, m.triangles, m.boundary_edges[keep], m.boundary_tags[keep], m.region,
                   dict(m.info))
    with pytest.raises(MeshError):
        solve_limit(ProblemConfig(), bare)


def test_default_mesh_follows_config():
    cfg = ProblemConfig(epsilon=0.1, mesh=MeshParams(limit_resolution=8))
    assert default_limit_mesh(cfg).n_vertices == 81
    graded = default_limit_mesh(ProblemConfig(epsilon=0.1))
    top = graded.vertices[np.unique(graded.edges_tagged(GAMMA))]
    assert np.diff(np.sort(top[:, 0])).max() <= 0.1 / 8 + 1e-12

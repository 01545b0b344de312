import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughlab.fem import (EdgeLoad, ElementLoad, FemField, NewtonError, SumLoad, VectorLoad, evaluate,
                          field_error, gradient_block, jacobian, newton_solve, norm_W1p, residual)
from roughlab.geometry import MeshParams, ProblemConfig, SolverParams
from roughlab.limit import gamma_load, solve_limit
from roughlab.meshing import GAMMA, TriangleMesh, build_cylinder_mesh, build_rough_mesh, BOTTOM, LATERAL
from roughlab.rough import strip_load


def two_triangle_mesh():
    v = np.array([[0.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    be = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    tags = np.array([BOTTOM, LATERAL, GAMMA, LATERAL])
    return TriangleMesh(v, t, be, tags, np.zeros(2, dtype=np.int64), {"kind": "test"})


def dense_linear_residual(mesh, u):
    """Hand assembly of int grad u . grad phi_i + int u phi_i for P1 (p = 2)."""
    n = len(mesh.vertices)
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    for tri in mesh.triangles:
        P = mesh.vertices[tri]
        # phi_k = c0 + c1 x + c2 y solves phi_k(P_j) = delta_kj
        C = np.linalg.inv(np.column_stack([np.ones(3), P]))
        grads = C[1:].T
        area = 0.5 * abs(np.linalg.det(np.column_stack([np.ones(3), P])))
        for a in range(3):
            for b in range(3):
                K[tri[a], tri[b]] += area * grads[a] @ grads[b]
                M[tri[a], tri[b]] += area / 12.0 * (2.0 if a == b else 1.0)
    return (K + M) @ u


def test_zero_field_zero_residual(coarse_rough):
    u = FemField.zeros(coarse_rough)
    for p in (2, 3, 4.5):
        assert np.all(residual(u, p) == 0.0)


def test_residual_matches_dense_oracle_on_two_triangles():
    mesh = two_triangle_mesh()
    u = FemField.interpolate(mesh, lambda x, y: x)
    r = residual(u, 2.0)
    assert np.allclose(r, dense_linear_residual(mesh, u.values), atol=1e-15)
    # the oracle in closed form: int grad phi_i . (1, 0) + int x phi_i
    assert np.allclose(r, [-0.5 + 1 / 8, 0.5 + 1 / 8, 0.5 + 5 / 24, -0.5 + 1 / 24], atol=1e-15)


def test_residual_matches_dense_oracle_on_rough_mesh(rng):
    mesh = build_rough_mesh(ProblemConfig(epsilon=0.2, mesh=MeshParams(edge=1 / 8)))
    u = rng.standard_normal(mesh.n_vertices)
    assert np.allclose(residual(FemField(mesh, u), 2.0), dense_linear_residual(mesh, u), atol=1e-12)


@given(alpha=st.floats(0.01, 100.0), p=st.sampled_from([2.0, 2.5, 3.0, 4.0]))
def test_residual_homogeneity(coarse_rough, alpha, p):
    u = FemField.interpolate(coarse_rough, lambda x, y: np.sin(3 * x) + y * x)
    r1 = residual(u * alpha, p)
    r0 = residual(u, p)
    assert np.allclose(r1, alpha ** (p - 1) * r0, rtol=1e-12, atol=1e-12 * np.abs(r1).max())


def _fd_check(mesh, p, load, rng):
    u = FemField(mesh, rng.uniform(-1, 1, mesh.n_vertices))
    d = rng.uniform(-1, 1, mesh.n_vertices)
    h = 1e-6
    fd = (residual(FemField(mesh, u.values + h * d), p, load)
          - residual(FemField(mesh, u.values - h * d), p, load)) / (2 * h)
    Jd = jacobian(u, p, 1e-10, load) @ d
    return np.linalg.norm(fd - Jd) / np.linalg.norm(Jd)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_jacobian_matches_finite_differences(coarse_rough, coarse_cfg, rng, p):
    assert _fd_check(coarse_rough, p, None, rng) <= 1e-6


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_jacobian_includes_reaction_derivative(coarse_rough, coarse_cfg, rng, p):
    cfg = coarse_cfg.replace(f="tanh")
    assert _fd_check(coarse_rough, p, strip_load(cfg, coarse_rough), rng) <= 1e-6


def test_jacobian_includes_boundary_load_derivative(rng):
    mesh = build_cylinder_mesh(8)
    cfg = ProblemConfig(f="tanh_shift", h="cosine_x")
    assert _fd_check(mesh, 3.0, gamma_load(cfg, mesh), rng) <= 1e-6


def test_jacobian_linear_case_is_stiffness_plus_mass(coarse_rough, rng):
    K0 = jacobian(FemField.zeros(coarse_rough), 2.0, 1e-10)
    K1 = jacobian(FemField(coarse_rough, rng.standard_normal(coarse_rough.n_vertices)), 2.0, 1e-10)
    assert abs(K0 - K1).max() == 0.0
    u = rng.standard_normal(coarse_rough.n_vertices)
    assert np.allclose(K0 @ u, dense_linear_residual(coarse_rough, u), atol=1e-12)


def test_degenerate_gradient_block():
    mesh = build_cylinder_mesh(4)
    B = gradient_block(FemField.zeros(mesh), 3.0, 1e-10)
    assert np.allclose(B, 1e-10 * np.eye(2), rtol=1e-12, atol=0)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_jacobian_symmetric(coarse_rough, rng, p):
    K = jacobian(FemField(coarse_rough, rng.standard_normal(coarse_rough.n_vertices)), p, 1e-10)
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_jacobian_positive_semidefinite(coarse_rough, rng, p):
    K = jacobian(FemField(coarse_rough, rng.standard_normal(coarse_rough.n_vertices)), p, 1e-10)
    for _ in range(5):
        d = rng.standard_normal(coarse_rough.n_vertices)
        assert d @ (K @ d) >= 0.0


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_vector_monotonicity(rng, p):
    a = rng.standard_normal((10_000, 2)) * rng.exponential(1.0, (10_000, 1))
    b = rng.standard_normal((10_000, 2)) * rng.exponential(1.0, (10_000, 1))

    def flux(z):
        return np.linalg.norm(z, axis=1, keepdims=True) ** (p - 2) * z

    m = np.einsum("nd,nd->n", flux(a) - flux(b), a - b)
    assert m.min() >= 0.0
    if p == 2.0:
        d2 = np.einsum("nd,nd->n", a - b, a - b)
        assert np.max(np.abs(m - d2) / np.maximum(d2, 1e-300)) <= 1e-14


@given(seed=st.integers(0, 2 ** 32 - 1), p=st.sampled_from([2.0, 2.5, 3.0, 4.0]))
def test_discrete_operator_monotone(coarse_rough, seed, p):
    r = np.random.default_rng(seed)
    u = FemField(coarse_rough, r.uniform(-2, 2, coarse_rough.n_vertices))
    v = FemField(coarse_rough, r.uniform(-2, 2, coarse_rough.n_vertices))
    assert (residual(u, p) - residual(v, p)) @ (u.values - v.values) >= -1e-12


def test_norm_examples():
    mesh = build_cylinder_mesh(16)
    one = FemField.interpolate(mesh, lambda x, y: 1.0)
    assert norm_W1p(one, 3.0) == pytest.approx(1.0, abs=1e-14)
    x = FemField.interpolate(mesh, lambda x, y: x)
    # the mid-edge rule integrates x^2 exactly on P1 interpolants of x
    assert norm_W1p(x, 2.0) == pytest.approx(np.sqrt(1 + 1 / 3), abs=1e-14)


def test_norm_lower_region_of_rough_mesh():
    mesh = build_rough_mesh(ProblemConfig(epsilon=0.1))
    one = FemField.interpolate(mesh, lambda x, y: 1.0)
    assert norm_W1p(one, 2.5, "y<0") == pytest.approx(1.0, abs=1e-13)
    assert norm_W1p(one, 2.0) ** 2 == pytest.approx(mesh.total_area(), rel=1e-13)


def test_field_error_trivial_cases():
    rough = build_rough_mesh(ProblemConfig(epsilon=0.1))
    cyl = build_cylinder_mesh(10)
    c_r = FemField.interpolate(rough, lambda x, y: 2.0)
    c_l = FemField.interpolate(cyl, lambda x, y: 2.0)
    # the 1/p root lifts round-off of size 1e-16 to about (1e-16)**(1/p)... of the
    # integrand; barycentric sums of a constant are exact only to a few ulps
    assert field_error(c_r, c_l, 3.0) <= 1e-12
    assert field_error(FemField.zeros(rough), FemField.interpolate(cyl, lambda x, y: 1.0), 2.0) \
        == pytest.approx(1.0, abs=1e-14)


def test_field_error_decreases_under_refinement():
    fn = lambda x, y: np.cos(np.pi * x) * np.exp(y)  # noqa: E731
    errs = []
    for r in (0, 1, 2):
        rough = build_rough_mesh(ProblemConfig(epsilon=0.2, mesh=MeshParams(edge=1 / 8, refine=r)))
        cyl = build_cylinder_mesh(8 * 2 ** r + 3)
        errs.append(field_error(FemField.interpolate(rough, fn), FemField.interpolate(cyl, fn), 2.0))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.6 * errs[1]


def test_evaluate_reproduces_linear_function(coarse_rough, rng):
    u = FemField.interpolate(coarse_rough, lambda x, y: 2 * x - 3 * y + 1)
    xs, ys = rng.uniform(0, 1, 200), rng.uniform(-1, 0, 200)
    vals, grads = evaluate(u, xs, ys)
    assert np.allclose(vals, 2 * xs - 3 * ys + 1, atol=1e-12)
    assert np.allclose(grads, [2, -3], atol=1e-10)


def test_field_rejects_bad_coefficients(cyl8):
    with pytest.raises(ValueError):
        FemField(cyl8, np.zeros(3))
    with pytest.raises(ValueError):
        FemField(cyl8, np.full(cyl8.n_vertices, np.nan))


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------

def _linear_limit(n=16):
    mesh = build_cylinder_mesh(n)
    cfg = ProblemConfig(p=2.0, f="one", h="const")
    return mesh, cfg, gamma_load(cfg, mesh)


def test_newton_linear_problem_one_step():
    mesh, cfg, load = _linear_limit()
    u, diag = newton_solve(FemField.zeros(mesh), 2.0, load)
    assert diag.iterations == 1
    assert diag.damping == [1.0]
    assert diag.converged


def test_newton_accepts_solution_without_iterating():
    mesh, cfg, load = _linear_limit()
    u, _ = newton_solve(FemField.zeros(mesh), 2.0, load)
    u2, diag = newton_solve(u, 2.0, load)
    assert diag.iterations == 0
    assert np.array_equal(u.values, u2.values)


def test_newton_quadratic_convergence():
    mesh = build_cylinder_mesh(12)
    cfg = ProblemConfig(p=3.0, f="tanh_shift", h="cosine_x")
    load = gamma_load(cfg, mesh)
    u2, _ = newton_solve(FemField.zeros(mesh), 2.0, load)
    _, diag = newton_solve(u2, 3.0, load)
    r = np.array(diag.residual_norms) / diag.residual_norms[0]
    assert all(d == 1.0 for d in diag.damping[-3:])
    # in the terminal phase each step squares the relative residual (up to a constant)
    k = int(np.argmax(r < 1e-2))
    assert r[k] < 1e-2 and k + 1 < len(r)
    assert np.log(r[k + 1]) / np.log(r[k]) >= 1.6


def test_newton_invariance_to_initial_guess(rng):
    mesh = build_cylinder_mesh(12)
    cfg = ProblemConfig(p=3.0, f="tanh_shift", h="sine")
    sol = solve_limit(cfg, mesh)
    pert = FemField(mesh, sol.u.values + 0.05 * rng.standard_normal(mesh.n_vertices))
    again = solve_limit(cfg, mesh, initial=pert)
    assert norm_W1p(sol.u - again.u, 3.0) <= 10 * cfg.solver.rtol


def test_delta_sensitivity():
    mesh = build_cylinder_mesh(12)
    cfg = ProblemConfig(p=4.0, f="tanh_shift", h="sine")
    a = solve_limit(cfg, mesh)
    tight = cfg.replace(solver=SolverParams(delta=cfg.solver.delta / 10))
    b = solve_limit(tight, mesh)
    assert norm_W1p(a.u - b.u, 4.0) <= 1e-8 * norm_W1p(a.u, 4.0)


def test_newton_failure_carries_best_iterate():
    mesh = build_cylinder_mesh(8)
    cfg = ProblemConfig(p=3.0, f="tanh_shift")
    load = gamma_load(cfg, mesh)
    with pytest.raises(NewtonError) as info:
        newton_solve(FemField.zeros(mesh), 3.0, load, SolverParams(max_iter=1))
    assert info.value.best is not None
    assert info.value.diagnostics.iterations == 1


def test_sum_and_vector_loads(cyl8):
    b = np.linspace(0, 1, cyl8.n_vertices)
    load = SumLoad(VectorLoad(b), VectorLoad(2 * b))
    assert np.allclose(load.vector(None), 3 * b)
    assert load.matrix(None) is None


def test_element_load_constant_reaction_integrates_area(coarse_rough, coarse_cfg):
    load = ElementLoad(coarse_rough, np.arange(coarse_rough.n_triangles), 1.0,
                       lambda u: np.ones_like(u), lambda u: np.zeros_like(u))
    assert load.vector(np.zeros(coarse_rough.n_vertices)).sum() == pytest.approx(coarse_rough.total_area())


def test_edge_load_integrates_mu_exactly(cyl8):
    e = cyl8.edges_tagged(GAMMA)
    mu_qp = np.full((len(e), 2), 2.5)
    load = EdgeLoad(cyl8, e, mu_qp, lambda u: np.ones_like(u), lambda u: np.zeros_like(u))
    assert load.vector(np.zeros(cyl8.n_vertices)).sum() == pytest.approx(2.5, abs=1e-14)

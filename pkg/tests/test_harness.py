import numpy as np
import pytest
from scipy import integrate

from stingstokes import polytri as pt
from stingstokes.harness import (
    ConvergenceRow, convergence_study, error_norms, hermite_interpolant, manufactured_case, pressure_l2_error,
    s_deriv,
)
from stingstokes.mesh import generate_crisscross
from conftest import cubic_coeffs, global_cubic

CASE = manufactured_case("trig")


def test_s_derivatives_match_finite_differences():
    t = np.linspace(0.05, 0.95, 17)
    h = 1e-5
    for k in range(4):
        fd = (s_deriv(t + h, k) - s_deriv(t - h, k)) / (2 * h)
        assert np.allclose(fd, s_deriv(t, k + 1), rtol=1e-6, atol=1e-6)


def test_trig_velocity_is_divergence_free():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 1, (2, 100))
    (a, _), (_, d) = CASE.grad_u(x, y)
    assert np.abs(a + d).max() <= 1e-12


def test_trig_velocity_vanishes_on_boundary():
    s = np.linspace(0, 1, 5)
    pts = [(s, 0 * s), (s, 0 * s + 1), (0 * s, s), (0 * s + 1, s)]
    for x, y in pts:
        u1, u2 = CASE.u(x, y)
        assert np.abs(u1).max() <= 1e-12 and np.abs(u2).max() <= 1e-12


def test_trig_pressure_has_zero_mean():
    val, _ = integrate.dblquad(lambda y, x: CASE.p(x, y), 0, 1, 0, 1, epsabs=1e-13)
    assert abs(val) <= 1e-10


def test_trig_derivatives_match_finite_differences():
    rng = np.random.default_rng(1)
    x, y = rng.uniform(0.1, 0.9, (2, 10))
    h = 1e-5
    g = CASE.grad_u(x, y)
    for c in range(2):
        fdx = (CASE.u(x + h, y)[c] - CASE.u(x - h, y)[c]) / (2 * h)
        fdy = (CASE.u(x, y + h)[c] - CASE.u(x, y - h)[c]) / (2 * h)
        assert np.allclose(fdx, g[c][0], rtol=1e-6, atol=1e-6)
        assert np.allclose(fdy, g[c][1], rtol=1e-6, atol=1e-6)
    px, py = CASE.grad_p(x, y)
    assert np.allclose((CASE.p(x + h, y) - CASE.p(x - h, y)) / (2 * h), px, rtol=1e-6)
    assert np.allclose((CASE.p(x, y + h) - CASE.p(x, y - h)) / (2 * h), py, rtol=1e-6)
    # f = -lap u - grad p with the Laplacian from second differences of the closed-form gradient
    hh = 1e-4
    f1, f2 = CASE.f(x, y)
    for c, f in ((0, f1), (1, f2)):
        lap = ((CASE.grad_u(x + hh, y)[c][0] - CASE.grad_u(x - hh, y)[c][0])
               + (CASE.grad_u(x, y + hh)[c][1] - CASE.grad_u(x, y - hh)[c][1])) / (2 * hh)
        gp = (px, py)[c]
        assert np.allclose(f, -lap - gp, rtol=1e-5, atol=1e-5)


def test_unknown_case():
    with pytest.raises(ValueError, match="unknown"):
        manufactured_case("poiseuille")


def test_body_force_sign_by_weak_residual():
    """(grad u, grad v) + (p, div v) - (f, v) vanishes for bubble test fields; the flipped sign does not."""
    T = generate_crisscross(8, True)
    rng = np.random.default_rng(5)
    rule = pt.quad_rule(pt.DATA_QUAD_DEGREE)
    X = pt.physical_points(T.coords, rule.points)
    G = pt.bary_gradients(T.coords)
    B = pt.bubble_coefficients()
    gu = CASE.grad_u(X[..., 0], X[..., 1])
    p = CASE.p(X[..., 0], X[..., 1])
    f = CASE.f(X[..., 0], X[..., 1])
    for _ in range(10):
        w = rng.standard_normal((T.n_triangles, 6))
        v = np.einsum("tb,bck->tck", w, B)                          # H^1_0 conforming, not solenoidal
        vq = v @ pt.quad_eval(4, rule.degree)                        # (nt, 2, nq)
        gv = pt.gradient(v, 4, G[:, None]) @ pt.quad_eval(3, rule.degree)
        visc = sum(gu[c][d] * gv[:, c, d] for c in range(2) for d in range(2))
        div = gv[:, 0, 0] + gv[:, 1, 1]
        fv = f[0] * vq[:, 0] + f[1] * vq[:, 1]
        a = rule.integrate(visc, T.areas).sum()
        b = rule.integrate(p * div, T.areas).sum()
        c = rule.integrate(fv, T.areas).sum()
        scale = abs(a) + abs(b) + abs(c)
        assert abs(a + b - c) <= 1e-8 * scale
        assert abs(a - b - c) > 1e-2 * scale


def test_hermite_reproduces_global_cubics():
    rng = np.random.default_rng(3)
    T = generate_crisscross(3, True)
    p = global_cubic(rng)
    exact = cubic_coeffs(T, p)
    # the cubic of triangle 0 extended to the plane is the global cubic itself
    P0 = T.coords[0]
    g0 = pt.gradient(exact[0], 3, pt.bary_gradients(P0))

    def grad_p(x, y):
        X = np.stack(np.broadcast_arrays(x, y), axis=-1)
        g = pt.eval_matrix(2, pt.to_bary(np.broadcast_to(P0, X.shape[:-1] + (3, 2)), X)) @ g0.T
        return g[..., 0], g[..., 1]

    c = hermite_interpolant(T, p, grad_p)
    assert np.abs(c - exact).max() <= 1e-12 * max(1.0, np.abs(exact).max())


def test_hermite_gradient_continuous_at_vertices():
    T = generate_crisscross(4, True)
    c = hermite_interpolant(T, CASE.p, CASE.grad_p)
    G = pt.bary_gradients(T.coords)
    for v in range(0, T.n_vertices, 7):
        gs = [pt.gradient(c[t], 3, G[t]) @ pt.eval_matrix(2, np.eye(3)[T.local_index(t, v)]) for t in T.fans[v]]
        assert max(np.abs(g - gs[0]).max() for g in gs) <= 1e-12 * max(1.0, np.abs(gs[0]).max())


def test_error_norms_of_interpolant_match_interpolation_error():
    T = generate_crisscross(8, True)
    c = hermite_interpolant(T, CASE.p, CASE.grad_p)
    _, ep = error_norms(T, CASE, np.zeros((T.n_triangles, 2, 15)), c)
    assert ep == pytest.approx(pressure_l2_error(T, CASE.p, c), rel=1e-12)


def test_error_norms_of_zero_fields_stable_in_rule_degree():
    T = generate_crisscross(4, True)
    zu, zp = np.zeros((T.n_triangles, 2, 15)), np.zeros((T.n_triangles, 10))
    a = error_norms(T, CASE, zu, zp, degree=14)
    b = error_norms(T, CASE, zu, zp, degree=16)
    assert np.allclose(a, b, rtol=1e-10)
    # reference: ||p||_0 on the unit square by adaptive quadrature
    ref, _ = integrate.dblquad(lambda y, x: CASE.p(x, y) ** 2, 0, 1, 0, 1, epsabs=1e-12)
    assert a[1] == pytest.approx(np.sqrt(ref), rel=1e-9)


def test_convergence_study_rejects_bad_levels():
    with pytest.raises(ValueError):
        convergence_study([4, 2])
    with pytest.raises(ValueError):
        convergence_study([1, 2])


def test_convergence_rows_small_levels():
    rows = convergence_study([2, 4])
    assert isinstance(rows[0], ConvergenceRow)
    assert rows[0].vel_order is None and rows[0].prs_order is None
    assert rows[1].vel_order == pytest.approx(np.log2(rows[0].vel_h1_err / rows[1].vel_h1_err))
    assert rows[1].vel_h1_err < rows[0].vel_h1_err and rows[1].prs_l2_err < rows[0].prs_l2_err

"""Manufactured solutions, interpolation, error norms and convergence studies."""

import logging
import time
from dataclasses import dataclass, field
from math import comb, log2

import numpy as np

from . import polytri as pt
from .mesh import classify_vertices, generate_crisscross, validate
from .pressure import recover_pressure
from .velocity import AnalyticLoad, solve_stokes_velocity

log = logging.getLogger(__name__)


def _sin_deriv(t, k, w):
    return w ** k * np.sin(w * t + k * np.pi / 2)


def s_deriv(t, k):
    """k-th derivative of s(t) = (t^2 - t) sin(2 pi t) by the Leibniz rule."""
    w = 2 * np.pi
    g = (t * t - t, 2 * t - 1, 2.0 + 0 * t)
    return sum(comb(k, i) * g[i] * _sin_deriv(t, k - i, w) for i in range(min(k, 2) + 1))


@dataclass
class ManufacturedCase:
    name: str
    u: callable
    grad_u: callable
    p: callable
    grad_p: callable
    f: callable
    regularity: str = field(default="analytic")


def _trig_case():
    def u(x, y):
        return s_deriv(x, 0) * s_deriv(y, 1), -s_deriv(x, 1) * s_deriv(y, 0)

    def grad_u(x, y):
        # rows: component, columns: d/dx, d/dy
        return ((s_deriv(x, 1) * s_deriv(y, 1), s_deriv(x, 0) * s_deriv(y, 2)),
                (-s_deriv(x, 2) * s_deriv(y, 0), -s_deriv(x, 1) * s_deriv(y, 1)))

    def p(x, y):
        return np.sin(4 * np.pi * x) * np.exp(np.pi * y)

    def grad_p(x, y):
        e = np.exp(np.pi * y)
        return 4 * np.pi * np.cos(4 * np.pi * x) * e, np.pi * np.sin(4 * np.pi * x) * e

    def f(x, y):
        # weak form (grad u, grad v) + (p, div v) = (f, v)  =>  f = -lap u - grad p
        lap1 = s_deriv(x, 2) * s_deriv(y, 1) + s_deriv(x, 0) * s_deriv(y, 3)
        lap2 = -s_deriv(x, 3) * s_deriv(y, 0) - s_deriv(x, 1) * s_deriv(y, 2)
        px, py = grad_p(x, y)
        return -lap1 - px, -lap2 - py

    return ManufacturedCase("trig", u, grad_u, p, grad_p, f)


CASES = {"trig": _trig_case}


def manufactured_case(name):
    try:
        return CASES[name]()
    except KeyError:
        raise ValueError(f"unknown manufactured case {name!r}; known: {sorted(CASES)}") from None


def hermite_interpolant(T, p, grad_p):
    """Cubic Hermite interpolant: value and gradient at vertices, value at the centroid.

    Returns per-triangle cubic coefficients (nt, 10).
    """
    P = T.coords
    G = pt.bary_gradients(P)
    I3 = np.eye(pt.dim(3))
    d1 = pt.gradient(I3[None], 3, G[:, None])        # (nt, 10, 2, 6)
    nt = T.n_triangles
    M = np.empty((nt, 10, 10))
    rhs = np.empty((nt, 10))
    E = np.eye(3)
    for i in range(3):
        M[:, 3 * i] = pt.eval_matrix(3, E[i])
        M[:, 3 * i + 1:3 * i + 3] = np.einsum("tmck,k->tcm", d1, pt.eval_matrix(2, E[i]))
        x, y = P[:, i, 0], P[:, i, 1]
        rhs[:, 3 * i] = p(x, y)
        gx, gy = grad_p(x, y)
        rhs[:, 3 * i + 1] = gx
        rhs[:, 3 * i + 2] = gy
    M[:, 9] = pt.eval_matrix(3, np.full(3, 1 / 3))
    c = P.mean(axis=1)
    rhs[:, 9] = p(c[:, 0], c[:, 1])
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def pressure_l2_error(T, p, coeffs, degree=pt.DATA_QUAD_DEGREE):
    rule = pt.quad_rule(degree)
    X = pt.physical_points(T.coords, rule.points)
    diff = coeffs @ pt.quad_eval(3, degree) - p(X[..., 0], X[..., 1])
    return float(np.sqrt(np.sum(rule.integrate(diff ** 2, T.areas))))


def velocity_h1_error(T, grad_u, velocity_coeffs, degree=pt.DATA_QUAD_DEGREE):
    rule = pt.quad_rule(degree)
    X = pt.physical_points(T.coords, rule.points)
    G = pt.bary_gradients(T.coords)
    gh = pt.gradient(velocity_coeffs, 4, G[:, None]) @ pt.quad_eval(3, degree)  # (nt, 2, 2, nq)
    ex = grad_u(X[..., 0], X[..., 1])
    err2 = 0.0
    for c in range(2):
        for d in range(2):
            err2 = err2 + (gh[:, c, d] - ex[c][d]) ** 2
    return float(np.sqrt(np.sum(rule.integrate(err2, T.areas))))


def error_norms(T, case, velocity, pressure, degree=pt.DATA_QUAD_DEGREE):
    """(|u - u_h|_1, ||p - p_h||_0) with the given quadrature degree."""
    vc = velocity if isinstance(velocity, np.ndarray) else velocity.coeffs
    pc = pressure if isinstance(pressure, np.ndarray) else pressure.coeffs
    return (velocity_h1_error(T, case.grad_u, vc, degree),
            pressure_l2_error(T, case.p, pc, degree))


@dataclass
class Solution:
    mesh: object
    velocity: object
    pressure: object
    components: object
    classes: list


def solve(T, load, theta=None):
    """Velocity solve followed by local pressure recovery."""
    classes = classify_vertices(T, theta)
    report = validate(T, classes)
    from .pressure import ValidationFailure

    if report.multi_corner_triangles:
        raise ValidationFailure(f"triangles with two corners: {report.multi_corner_triangles[:10]}")
    t0 = time.perf_counter()
    u = solve_stokes_velocity(T, load)
    t1 = time.perf_counter()
    p, comps = recover_pressure(T, u, load, classes)
    log.info("velocity %.2fs, pressure %.2fs", t1 - t0, time.perf_counter() - t1)
    return Solution(T, u, p, comps, classes)


@dataclass
class ConvergenceRow:
    n: int
    h: float
    vel_h1_err: float
    vel_order: float = None
    prs_l2_err: float = None
    prs_order: float = None


def convergence_study(levels, case="trig", singular_corners=True, on_solution=None):
    """Run the full pipeline on crisscross meshes and tabulate the errors.

    ``on_solution(n, solution)`` is called after each level, e.g. to audit the
    fields before they are dropped.
    """
    levels = list(levels)
    if any(b <= a for a, b in zip(levels, levels[1:])) or min(levels) < 2:
        raise ValueError("levels must be ascending integers >= 2")
    mc = manufactured_case(case) if isinstance(case, str) else case
    rows = []
    for n in levels:
        T = generate_crisscross(n, singular_corners)
        sol = solve(T, AnalyticLoad(T, mc.f))
        eu, ep = error_norms(T, mc, sol.velocity, sol.pressure)
        if on_solution is not None:
            on_solution(n, sol)
        row = ConvergenceRow(n, T.h, eu, None, ep, None)
        if rows:
            prev = rows[-1]
            ratio = log2(n / prev.n)
            row.vel_order = log2(prev.vel_h1_err / eu) / ratio
            row.prs_order = log2(prev.prs_l2_err / ep) / ratio
        log.info("n=%d |u-uh|_1=%.4e ||p-ph||_0=%.4e", n, eu, ep)
        rows.append(row)
    return rows

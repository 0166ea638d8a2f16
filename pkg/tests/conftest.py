"""Shared fixtures: small meshes, random geometry and the polynomial exactness oracle."""

from dataclasses import dataclass

import numpy as np
import pytest

from stingstokes import polytri as pt
from stingstokes.argyris import ArgyrisSpace, StreamField
from stingstokes.mesh import build_triangulation, classify_vertices, generate_crisscross
from stingstokes.velocity import solve_stokes_velocity, stream_reference_load, velocity_field

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def random_triangle(rng, min_angle_deg=15.0):
    """Counterclockwise random triangle with all angles above ``min_angle_deg``."""
    from stingstokes.mesh import triangle_angles

    while True:
        P = rng.uniform(-2.0, 2.0, size=(3, 2))
        a = pt.signed_area(P)
        if a < 0:
            P = P[[0, 2, 1]]
        if np.degrees(triangle_angles(P).min()) > min_angle_deg:
            return P


def random_quad_mesh(rng):
    """Two triangles (V, A, C) and (V, C, B) sharing the edge V-C of a random convex quad.

    Returns the triangulation; node 0 is V and node 2 is the far endpoint C.
    """
    while True:
        V = np.zeros(2)
        C = np.array([rng.uniform(0.5, 2.0), 0.0])
        A = np.array([rng.uniform(0.2, 0.8) * C[0], -rng.uniform(0.3, 1.5)])
        B = np.array([rng.uniform(0.2, 0.8) * C[0], rng.uniform(0.3, 1.5)])
        rot = rng.uniform(0, 2 * np.pi)
        R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
        nodes = np.array([V, A, C, B]) @ R.T + rng.uniform(-1, 1, 2)
        try:
            T = build_triangulation(nodes, [(0, 1, 2), (0, 2, 3)])
        except ValueError:
            continue
        if np.degrees(T.min_angle()) > 12:
            return T


def global_cubic(rng):
    """Random cubic p(x, y) as a callable plus its monomial coefficients."""
    e = [(a, b) for a in range(4) for b in range(4 - a)]
    c = rng.standard_normal(len(e))

    def p(x, y):
        return sum(ci * x ** a * y ** b for ci, (a, b) in zip(c, e))

    return p


def cubic_coeffs(T, p):
    """Per-triangle barycentric coefficients (nt, 10) of a global cubic."""
    X = pt.physical_points(T.coords, pt.lattice(3))
    return p(X[..., 0], X[..., 1]) @ pt.lattice_inverse(3).T


@dataclass
class ExactnessCase:
    mesh: object
    space: object
    stream: np.ndarray
    pressure: np.ndarray          # (nt, 10), zero mean
    load: object
    velocity: object              # solved
    exact_velocity: object
    classes: list


def make_exactness_case(n, singular_corners, seed=1):
    rng = np.random.default_rng(seed)
    T = generate_crisscross(n, singular_corners)
    S = ArgyrisSpace(T)
    xs = rng.standard_normal(S.n_free)
    pc = cubic_coeffs(T, global_cubic(rng))
    mean = np.sum(pt.integrate(pc, 3, T.areas)) / T.areas.sum()
    pc = pc - mean * pt.constant(3)
    load = stream_reference_load(S, xs, pc)
    u = solve_stokes_velocity(T, load, S)
    ue = velocity_field(StreamField(S, xs))
    return ExactnessCase(T, S, xs, pc, load, u, ue, classify_vertices(T))


@pytest.fixture(scope="session")
def exact8():
    return make_exactness_case(8, True)


@pytest.fixture(scope="session")
def exact4_plain():
    return make_exactness_case(4, False, seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line: ``criterion(k, ok, detail)``; returns ``ok``."""

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])

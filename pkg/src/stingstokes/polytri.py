"""Polynomial algebra on triangles.

Every polynomial of degree ``d`` on a triangle is stored as a coefficient
vector in the homogeneous barycentric monomial basis

    {lambda_1^a lambda_2^b lambda_3^c : a + b + c = d}.

In this basis multiplication, integration and evaluation at barycentric
points do not depend on the triangle's shape; only differentiation needs
the (constant) gradients of the barycentric coordinates. Most routines
therefore work on stacked coefficient arrays with a leading triangle axis,
so whole meshes are processed in one vectorized call.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

# quadrature degrees used across the package
POLY_QUAD_DEGREE = 8
DATA_QUAD_DEGREE = 14
MAX_QUAD_DEGREE = 20

# reference sting 28/5 y^3 - 63/10 y^2 + 9/5 y - 1/10 (y = lambda of the apex)
STING_COEFFS = (-1 / 10, 9 / 5, -63 / 10, 28 / 5)


class DegreeError(ValueError):
    pass


def dim(d):
    return (d + 1) * (d + 2) // 2


@lru_cache(maxsize=None)
def exponents(d):
    """Exponent triples of the degree-``d`` barycentric monomials, shape (dim(d), 3)."""
    out = [(d - b - c, b, c) for b in range(d + 1) for c in range(d + 1 - b)]
    arr = np.array(out, dtype=int).reshape(-1, 3)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _index(d):
    return {tuple(e): i for i, e in enumerate(exponents(d))}


def monomial_index(a, b, c):
    return _index(a + b + c)[(a, b, c)]


@lru_cache(maxsize=None)
def lambda_derivatives(d):
    """Matrices ``D[i]`` with ``D[i] @ c`` the coefficients of d/d(lambda_i) of ``c``.

    Shape (3, dim(d-1), dim(d)).
    """
    if d < 1:
        raise DegreeError("cannot differentiate a constant in the homogeneous basis")
    D = np.zeros((3, dim(d - 1), dim(d)))
    low = _index(d - 1)
    for j, e in enumerate(exponents(d)):
        for i in range(3):
            if e[i] > 0:
                f = list(e)
                f[i] -= 1
                D[i, low[tuple(f)], j] = e[i]
    D.setflags(write=False)
    return D


@lru_cache(maxsize=None)
def elevation(d, k=1):
    """Matrix raising degree ``d`` coefficients to degree ``d + k`` (multiply by (sum lambda)^k)."""
    E = np.eye(dim(d))
    for s in range(d, d + k):
        step = np.zeros((dim(s + 1), dim(s)))
        up = _index(s + 1)
        for j, e in enumerate(exponents(s)):
            for i in range(3):
                f = list(e)
                f[i] += 1
                step[up[tuple(f)], j] += 1.0
        E = step @ E
    E.setflags(write=False)
    return E


@lru_cache(maxsize=None)
def product_tensor(d1, d2):
    """Tensor ``T`` with ``(p*q)[k] = T[k, i, j] p[i] q[j]``."""
    T = np.zeros((dim(d1 + d2), dim(d1), dim(d2)))
    idx = _index(d1 + d2)
    e2 = exponents(d2)
    for i, e in enumerate(exponents(d1)):
        for j, f in enumerate(e2):
            T[idx[tuple(e + f)], i, j] = 1.0
    T.setflags(write=False)
    return T


@lru_cache(maxsize=None)
def moments(d):
    """Integrals of the degree-``d`` monomials over a triangle of unit area.

    Uses int_K lambda^(a,b,c) = 2|K| a! b! c! / (a+b+c+2)!.
    """
    m = np.array([2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(d + 2)
                  for a, b, c in exponents(d)])
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def gram(d1, d2):
    """L2 Gram matrix of the monomial bases on a triangle of unit area."""
    G = np.einsum("kij,k->ij", product_tensor(d1, d2), moments(d1 + d2))
    G.setflags(write=False)
    return G


def eval_matrix(d, bary):
    """Monomial values at barycentric points ``bary`` (..., 3) -> (..., dim(d))."""
    bary = np.asarray(bary, dtype=float)
    e = exponents(d)
    return np.prod(bary[..., None, :] ** e, axis=-1)


@lru_cache(maxsize=None)
def lattice(d):
    """Barycentric lattice points of order ``d`` (unisolvent for degree ``d``)."""
    if d == 0:
        return np.array([[1 / 3, 1 / 3, 1 / 3]])
    return exponents(d) / d


@lru_cache(maxsize=None)
def lattice_inverse(d):
    """Inverse of the monomial Vandermonde on ``lattice(d)``; maps values to coefficients."""
    Vinv = np.linalg.inv(eval_matrix(d, lattice(d)))
    Vinv.setflags(write=False)
    return Vinv


@lru_cache(maxsize=None)
def power_of_lambda(i, k, d):
    """Coefficients of lambda_i^k written in degree ``d`` (k <= d)."""
    c = np.zeros(dim(k))
    e = [0, 0, 0]
    e[i] = k
    c[_index(k)[tuple(e)]] = 1.0
    return elevation(k, d - k) @ c


@lru_cache(maxsize=None)
def sting_coefficients(i):
    """Cubic sting of local vertex ``i``; identical on every triangle (affine invariance)."""
    c = sum(a * power_of_lambda(i, k, 3) for k, a in enumerate(STING_COEFFS))
    c.setflags(write=False)
    return c


@lru_cache(maxsize=None)
def sting_matrix():
    """Rows are the three local sting functions, shape (3, 10)."""
    S = np.stack([sting_coefficients(i) for i in range(3)])
    S.setflags(write=False)
    return S


def constant(d, value=1.0):
    return value * power_of_lambda(0, 0, d)


# --- geometry --------------------------------------------------------------

def signed_area(P):
    """Signed areas of triangles ``P`` (..., 3, 2)."""
    P = np.asarray(P, dtype=float)
    u = P[..., 1, :] - P[..., 0, :]
    v = P[..., 2, :] - P[..., 0, :]
    return 0.5 * (u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])


def bary_gradients(P):
    """Gradients of the barycentric coordinates, shape (..., 3, 2)."""
    P = np.asarray(P, dtype=float)
    area2 = 2.0 * signed_area(P)
    G = np.empty(P.shape)
    for i in range(3):
        a = P[..., (i + 1) % 3, :]
        b = P[..., (i + 2) % 3, :]
        # grad lambda_i = (b - a)^perp_cw / 2|K|
        G[..., i, 0] = (a[..., 1] - b[..., 1]) / area2
        G[..., i, 1] = (b[..., 0] - a[..., 0]) / area2
    return G


def to_bary(P, X):
    """Barycentric coordinates of points ``X`` (..., 2) in triangles ``P`` (..., 3, 2)."""
    G = bary_gradients(P)
    X = np.asarray(X, dtype=float)
    lam = np.einsum("...ik,...k->...i", G, X - P[..., 0, :])
    lam[..., 0] = 1.0 - lam[..., 1] - lam[..., 2]
    return lam


def directional(c, d, weights):
    """Derivative coefficients given ``weights[..., i] = grad(lambda_i) . xi``.

    ``c`` is (..., dim(d)); ``weights`` broadcasts against ``c[..., :3]``.
    """
    D = lambda_derivatives(d)
    dl = np.einsum("ikj,...j->...ik", D, c)
    return np.einsum("...ik,...i->...k", dl, weights)


def gradient(c, d, grads):
    """(x, y) derivatives of ``c`` (..., dim(d)) -> (..., 2, dim(d-1)).

    ``grads`` must broadcast against ``c.shape[:-1] + (3, 2)``.
    """
    D = lambda_derivatives(d)
    dl = np.einsum("ikj,...j->...ik", D, c)
    return np.einsum("...ik,...in->...nk", dl, grads)


def multiply(p, dp, q, dq):
    return np.einsum("kij,...i,...j->...k", product_tensor(dp, dq), p, q)


def integrate(c, d, area):
    return area * (c @ moments(d))


def inner(p, dp, q, dq, area):
    """Exact L2 inner product of stacked polynomials on triangles of ``area``."""
    return area * np.einsum("...i,ij,...j->...", p, gram(dp, dq), q)


def raise_to(c, d, target):
    if target == d:
        return c
    return c @ elevation(d, target - d).T


# --- quadrature ------------------------------------------------------------

@dataclass(frozen=True)
class QuadRule:
    """Triangle quadrature in barycentric points; weights sum to one."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def integrate(self, values, area):
        """``values`` (..., nq) sampled at the rule's points on triangles of ``area``."""
        return area * (values @ self.weights)


def _max_monomial_error(points, weights, degree):
    err = 0.0
    for d in range(degree + 1):
        approx = eval_matrix(d, points).T @ weights
        exact = moments(d)
        err = max(err, float(np.max(np.abs(approx - exact) / exact)))
    return err


@lru_cache(maxsize=None)
def quad_rule(degree):
    """Collapsed Gauss-Jacobi rule exact for total degree ``degree`` (1..20)."""
    if not 1 <= degree <= MAX_QUAD_DEGREE:
        raise DegreeError(f"quadrature degree {degree} outside [1, {MAX_QUAD_DEGREE}]")
    m = degree // 2 + 1
    xu, wu = roots_jacobi(m, 1.0, 0.0)
    xv, wv = roots_legendre(m)
    u = 0.5 * (1.0 + xu)
    v = 0.5 * (1.0 + xv)
    wu = wu / 4.0
    wv = wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    # reference area 1/2 -> normalize to unit sum
    w = 2.0 * np.outer(wu, wv).ravel()
    pts = np.column_stack([1.0 - x - y, x, y])
    if _max_monomial_error(pts, w, degree) > 1e-13:
        raise DegreeError(f"rule of degree {degree} failed its exactness check")
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadRule(pts, w, degree)


@lru_cache(maxsize=None)
def quad_eval(d, degree):
    """Monomial values at the points of ``quad_rule(degree)``, shape (dim(d), nq)."""
    E = eval_matrix(d, quad_rule(degree).points).T.copy()
    E.setflags(write=False)
    return E


def physical_points(P, bary):
    """Map barycentric points (nq, 3) into triangles ``P`` (..., 3, 2) -> (..., nq, 2)."""
    return np.einsum("qi,...in->...qn", bary, P)


# --- single-triangle objects -----------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """x = matrix @ xhat + offset from the reference triangle (0,0),(1,0),(0,1)."""

    matrix: np.ndarray
    offset: np.ndarray

    @classmethod
    def from_vertices(cls, P):
        P = np.asarray(P, dtype=float)
        B = np.column_stack([P[1] - P[0], P[2] - P[0]])
        return cls(B, P[0].copy())

    @property
    def det(self):
        return float(np.linalg.det(self.matrix))

    def __call__(self, xhat):
        return np.asarray(xhat) @ self.matrix.T + self.offset

    def inverse(self, x):
        return np.linalg.solve(self.matrix, (np.asarray(x) - self.offset).T).T


@dataclass
class TriPoly:
    """A polynomial of fixed degree on one triangle.

    ``vertices`` is the (3, 2) coordinate array of the owning triangle,
    ``coeffs`` the barycentric monomial coefficients.
    """

    vertices: np.ndarray
    degree: int
    coeffs: np.ndarray
    triangle: int = -1

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape[-1] != dim(self.degree):
            raise DegreeError(f"degree {self.degree} needs {dim(self.degree)} coefficients")

    @classmethod
    def from_function(cls, vertices, func, degree, triangle=-1):
        """Interpolate ``func(x, y)`` on the degree-``degree`` lattice."""
        vertices = np.asarray(vertices, dtype=float)
        X = lattice(degree) @ vertices
        vals = np.asarray(func(X[:, 0], X[:, 1]), dtype=float)
        return cls(vertices, degree, lattice_inverse(degree) @ vals, triangle)

    @property
    def area(self):
        return float(signed_area(self.vertices))

    def _same(self, other):
        if not np.array_equal(self.vertices, other.vertices):
            raise ValueError("polynomials live on different triangles")

    def raised(self, degree):
        return TriPoly(self.vertices, degree, raise_to(self.coeffs, self.degree, degree), self.triangle)

    def __add__(self, other):
        self._same(other)
        d = max(self.degree, other.degree)
        return TriPoly(self.vertices, d, self.raised(d).coeffs + other.raised(d).coeffs, self.triangle)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, a):
        return TriPoly(self.vertices, self.degree, a * self.coeffs, self.triangle)

    def __mul__(self, other):
        if np.isscalar(other):
            return other * self
        self._same(other)
        return TriPoly(self.vertices, self.degree + other.degree,
                       multiply(self.coeffs, self.degree, other.coeffs, other.degree), self.triangle)

    def __call__(self, x, y):
        X = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)
        lam = to_bary(np.broadcast_to(self.vertices, X.shape[:-1] + (3, 2)), X)
        return eval_matrix(self.degree, lam) @ self.coeffs

    def at_bary(self, lam):
        return eval_matrix(self.degree, lam) @ self.coeffs

    def derivative(self, xi):
        """Directional derivative along the vector ``xi``."""
        if self.degree == 0:
            return TriPoly(self.vertices, 0, np.zeros(1), self.triangle)
        w = bary_gradients(self.vertices) @ np.asarray(xi, dtype=float)
        return TriPoly(self.vertices, self.degree - 1, directional(self.coeffs, self.degree, w), self.triangle)

    def dx(self):
        return self.derivative((1.0, 0.0))

    def dy(self):
        return self.derivative((0.0, 1.0))

    def integral(self):
        return float(integrate(self.coeffs, self.degree, self.area))

    def pullback(self):
        """Coefficients (in x-hat, y-hat monomials of the reference triangle) are
        the same barycentric coefficients; returned as a reference-triangle TriPoly."""
        ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        return TriPoly(ref, self.degree, self.coeffs.copy(), self.triangle)


def inner_product(a, b, rule_degree=POLY_QUAD_DEGREE):
    """L2 inner product of two polynomials on the same triangle.

    Evaluated with the triangle quadrature of ``rule_degree``, which must be
    at least ``a.degree + b.degree``.
    """
    a._same(b)
    need = a.degree + b.degree
    if need > MAX_QUAD_DEGREE:
        raise DegreeError(f"product degree {need} exceeds the available rules")
    rule = quad_rule(max(rule_degree, need, 1))
    return float(rule.integrate(a.at_bary(rule.points) * b.at_bary(rule.points), a.area))


def sting(vertices, local_vertex, triangle=-1):
    """Sting function of the triangle's vertex ``local_vertex`` (0, 1, 2)."""
    if local_vertex not in (0, 1, 2):
        raise ValueError(f"{local_vertex!r} is not a vertex of the triangle")
    return TriPoly(vertices, 3, sting_coefficients(local_vertex).copy(), triangle)


@lru_cache(maxsize=None)
def _bubble_scalars():
    # lambda1 lambda2 lambda3 lambda_i, degree 4
    cubic = np.zeros(dim(3))
    cubic[monomial_index(1, 1, 1)] = 1.0
    return np.stack([multiply(cubic, 3, power_of_lambda(i, 1, 1), 1) for i in range(3)])


def bubble_coefficients():
    """The six bubble fields as (6, 2, 15): index 2*i + k is lambda1 lambda2 lambda3 lambda_i e_k."""
    s = _bubble_scalars()
    B = np.zeros((6, 2, dim(4)))
    for i in range(3):
        for k in range(2):
            B[2 * i + k, k] = s[i]
    return B


def divergence(v, d, grads):
    """Divergence of vector polynomials ``v`` (..., 2, dim(d)) -> (..., dim(d-1)).

    ``grads`` must broadcast against ``v.shape[:-2] + (3, 2)``.
    """
    dl = np.einsum("ikj,...cj->...cik", lambda_derivatives(d), v)
    return np.einsum("...cik,...ic->...k", dl, grads)


def bubble_basis(vertices):
    """Six quartic vector bubbles on a triangle, each as a pair (x, y) of TriPoly."""
    return [(TriPoly(vertices, 4, b[0]), TriPoly(vertices, 4, b[1])) for b in bubble_coefficients()]


def nonsting_coefficients(grads):
    """Divergences of the bubble basis for stacked gradients (..., 3, 2) -> (..., 6, 10)."""
    B = bubble_coefficients()
    D = lambda_derivatives(4)
    dl = np.einsum("ikj,bcj->bcik", D, B)  # (6, 2, 3, 10)
    return np.einsum("bcik,...ic->...bk", dl, grads)


def nonsting_basis(vertices):
    vertices = np.asarray(vertices, dtype=float)
    N = nonsting_coefficients(bary_gradients(vertices))
    return [TriPoly(vertices, 3, c) for c in N]


@dataclass(frozen=True)
class P3Decomposition:
    nonsting: np.ndarray
    sting: np.ndarray
    constant: np.ndarray


@lru_cache(maxsize=None)
def _sting_const_basis():
    return np.vstack([sting_matrix(), constant(3)[None, :]])


def decompose_p3(q):
    """Split cubic coefficients ``q`` (..., 10) into non-sting, sting and constant parts.

    The projection onto span{st_1, st_2, st_3, 1} is a 4x4 Gram solve; since the
    non-sting space is orthogonal to that span, the remainder is the non-sting
    part. The Gram matrix is shape independent in barycentric coordinates.
    """
    q = np.asarray(q, dtype=float)
    S = _sting_const_basis()
    G = S @ gram(3, 3) @ S.T
    rhs = q @ (gram(3, 3) @ S.T)
    sol = np.linalg.solve(G, rhs[..., None])[..., 0] if q.ndim > 1 else np.linalg.solve(G, rhs)
    ns = q - sol @ S
    return P3Decomposition(ns, sol[..., :3], sol[..., 3])


def decompose_tripoly(q):
    """TriPoly front end of ``decompose_p3``: returns (ns TriPoly, alphas, c)."""
    if q.degree > 3:
        raise DegreeError("decompose_p3 needs degree <= 3")
    dec = decompose_p3(q.raised(3).coeffs)
    return TriPoly(q.vertices, 3, dec.nonsting, q.triangle), dec.sting, float(dec.constant)

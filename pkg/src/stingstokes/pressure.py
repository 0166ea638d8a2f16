"""Local recovery of a P3 pressure from a divergence-free P4 velocity.

The pressure is built from three per-triangle pieces (see ``polytri.decompose_p3``):

* a non-sting part, one 6 x 6 solve per triangle against the quartic bubbles;
* sting parts, clustered by vertex and computed in three phases: regular
  vertices (least squares against patch test functions), nearly singular
  ordinary vertices (tangential derivative jumps replace the ill-posed rows)
  and dead corners (one normal derivative jump);
* a piecewise constant part, propagated across the dual graph from
  adjacent differences.

Every equation only touches a vertex patch or a pair of triangles, so each
step is a batch of small dense problems.
"""

import enum
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import polytri as pt
from .mesh import VertexClass, validate, vertex_patch

log = logging.getLogger(__name__)

SINGULAR_RATIO = 1e-10
CLOSED_FORM_RTOL = 1e-8
CYCLE_TOL = 1e-10
STING_MEAN = 1.0 / 100.0       # int_K st_VK = |K| / 100


class ValidationFailure(ValueError):
    """The mesh violates the one-corner-per-triangle assumption."""


class ConsistencyError(RuntimeError):
    """An internal audit failed (rank, closed-form cross-check or cycle sums)."""


class PipelineOrderError(ConsistencyError):
    """A sting coefficient was read before its phase completed."""


class Phase(enum.IntEnum):
    NONSTING = 1
    REGULAR = 2
    NEARLY_SINGULAR = 3
    DEAD_CORNER = 4
    CONSTANT = 5
    ASSEMBLED = 6


PHASE_OF_CLASS = {
    VertexClass.REGULAR: Phase.REGULAR,
    VertexClass.NEARLY_SINGULAR: Phase.NEARLY_SINGULAR,
    VertexClass.DEAD_CORNER: Phase.DEAD_CORNER,
}


# --- data functional -------------------------------------------------------

class DataResidual:
    """v -> (f, v) - (grad u_h, grad v) - (p_ns, div v) for quartic vector fields.

    ``v`` is (m, ..., 2, 15) living on triangles ``tris`` (m,). The last term is
    dropped when ``nonsting`` is None.
    """

    def __init__(self, velocity, load, nonsting=None):
        self.load = load
        self.grads = velocity.space.grads
        self.areas = velocity.space.areas
        self.grad_u = velocity.gradient()           # (nt, 2, 2, 10)
        self.nonsting = nonsting

    def terms(self, tris, v):
        """The three terms (f, v), (grad u_h, grad v), (p_ns, div v) separately."""
        tris = np.asarray(tris)
        v = np.asarray(v, dtype=float)
        vf = v.reshape(v.shape[0], -1, 2, v.shape[-1])
        g = self.grads[tris][:, None]
        gv = pt.gradient(vf, 4, g[:, :, None])       # (m, X, 2, 2, 10)
        G3 = pt.gram(3, 3)
        area = self.areas[tris][:, None]
        load = self.load.apply(tris, vf, 4)
        visc = np.einsum("mcak,kl,mxcal->mx", self.grad_u[tris], G3, gv) * area
        if self.nonsting is None:
            prs = np.zeros_like(visc)
        else:
            div = gv[..., 0, 0, :] + gv[..., 1, 1, :]
            prs = np.einsum("mk,kl,mxl->mx", self.nonsting[tris], G3, div) * area
        shape = v.shape[:-2]
        return load.reshape(shape), visc.reshape(shape), prs.reshape(shape)

    def __call__(self, tris, v):
        load, visc, prs = self.terms(tris, v)
        return load - visc - prs


# --- non-sting component ---------------------------------------------------

def nonsting_component(T, velocity, load, tris=None):
    """Non-sting cubic of each triangle in ``tris`` (default: all), shape (m, 10).

    Solves (p_K, div b) = (f, b) - (grad u_h, grad b) over the six quartic
    bubbles b of K. The Gram matrix of their divergences is SPD.
    """
    tris = np.arange(T.n_triangles) if tris is None else np.atleast_1d(tris)
    grads = velocity.space.grads[tris]
    areas = velocity.space.areas[tris]
    N = pt.nonsting_coefficients(grads)                                 # (m, 6, 10)
    M = np.einsum("mik,kl,mjl->mij", N, pt.gram(3, 3), N) * areas[:, None, None]
    B = np.broadcast_to(pt.bubble_coefficients(), (len(tris), 6, 2, pt.dim(4)))
    rhs = DataResidual(velocity, load)(tris, B)
    c = np.linalg.solve(M, rhs[..., None])[..., 0]
    return np.einsum("mi,mik->mk", c, N)


# --- patch test functions --------------------------------------------------

_EDGE_FRACTIONS = np.array([0.25, 0.5, 0.75])
_GL_POINTS, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)
_GL_POINTS = 0.5 * (_GL_POINTS + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS
_LINEAR = np.stack([pt.power_of_lambda(i, 1, 1) for i in range(3)])   # lambda_i in degree 1


@dataclass
class EdgeTestFunctions:
    """Scalar quartic w for every (interior edge, endpoint V) pair.

    ``coeffs[p, s]`` is w on ``tris[p, s]`` (s = 0: lower-indexed triangle). w
    vanishes on the outer edges of the two triangles, dw/dt = 1 at V and 0 at
    the far endpoint along the unit tangent t from V, its integral over the
    shared edge is zero, and w and grad w vanish at both centroids.
    """

    edge: np.ndarray
    vertex: np.ndarray
    far: np.ndarray
    tris: np.ndarray
    coeffs: np.ndarray
    tangent: np.ndarray
    length: np.ndarray
    index: dict = field(repr=False)

    def lookup(self, e, v):
        return self.index[(int(e), int(v))]


def _local_indices(T, tris, verts):
    hit = T.triangles[tris] == verts[..., None]
    if not np.all(hit.sum(axis=-1) == 1):
        raise ConsistencyError("vertex not found in triangle")
    return np.argmax(hit, axis=-1)


def _point(n, i, j, s):
    """Barycentric points with lambda_i = 1 - s, lambda_j = s, batched over ``n``."""
    lam = np.zeros((n, 3))
    lam[np.arange(n), i] = 1.0 - s
    lam[np.arange(n), j] += s
    return lam


def edge_test_functions(T, grads=None):
    """Build all patch test functions at once (batched 12 x 12 solves)."""
    grads = pt.bary_gradients(T.coords) if grads is None else grads
    ie = T.interior_edges
    E = T.edges[ie]
    edge = np.repeat(ie, 2)
    vertex = E.ravel()
    far = E[:, ::-1].ravel()
    tris = np.repeat(T.edge_triangles[ie], 2, axis=0)
    P = len(edge)
    vec = T.nodes[far] - T.nodes[vertex]
    length = np.linalg.norm(vec, axis=1)
    tangent = vec / length[:, None]

    iv = _local_indices(T, tris, vertex[:, None].repeat(2, 1))
    iw = _local_indices(T, tris, far[:, None].repeat(2, 1))
    # prefactor lambda_V lambda_far in degree 2, then the map from quadratic q to w
    lin = _LINEAR
    pre = pt.multiply(lin[iv], 1, lin[iw], 1)                          # (P, 2, 6)
    Emap = np.einsum("kij,psi->pskj", pt.product_tensor(2, 2), pre)    # (P, 2, 15, 6)
    g = grads[tris]                                                    # (P, 2, 3, 2)
    dE = pt.gradient(np.swapaxes(Emap, -1, -2), 4, g[:, :, None])      # (P, 2, 6, 2, 10)

    A = np.zeros((P, 12, 12))
    rhs = np.zeros((P, 12))
    h = length
    for r, s in enumerate(_EDGE_FRACTIONS):
        for side, sign in ((0, 1.0), (1, -1.0)):
            lam = _point(P, iv[:, side], iw[:, side], s)
            A[:, r, 6 * side:6 * side + 6] = sign * np.einsum("pk,pkj->pj", pt.eval_matrix(4, lam), Emap[:, side])
    # tangential derivative at V and at the far endpoint (side 0), scaled by h
    for r, s in ((3, 0.0), (4, 1.0)):
        lam = _point(P, iv[:, 0], iw[:, 0], s)
        gr = np.einsum("pjck,pk->pjc", dE[:, 0], pt.eval_matrix(3, lam))
        A[:, r, :6] = h[:, None] * np.einsum("pjc,pc->pj", gr, tangent)
    rhs[:, 3] = h
    for s, wq in zip(_GL_POINTS, _GL_WEIGHTS):
        lam = _point(P, iv[:, 0], iw[:, 0], s)
        A[:, 5, :6] += wq * np.einsum("pk,pkj->pj", pt.eval_matrix(4, lam), Emap[:, 0])
    cen = np.full(3, 1.0 / 3.0)
    ev4, ev3 = pt.eval_matrix(4, cen), pt.eval_matrix(3, cen)
    for side in (0, 1):
        r = 6 + 3 * side
        cols = slice(6 * side, 6 * side + 6)
        A[:, r, cols] = np.einsum("k,pkj->pj", ev4, Emap[:, side])
        A[:, r + 1:r + 3, cols] = h[:, None, None] * np.einsum("pjck,k->pcj", dE[:, side], ev3)
    try:
        q = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise ConsistencyError(f"singular patch test function system: {exc}") from exc
    coeffs = np.einsum("pskj,psj->psk", Emap, q.reshape(P, 2, 6))
    index = {(int(e), int(v)): p for p, (e, v) in enumerate(zip(edge, vertex))}
    return EdgeTestFunctions(edge, vertex, far, tris, coeffs, tangent, length, index)


def patch_test_function(T, patch, j, tests=None):
    """w_j of vertex patch ``patch`` for interior edge ``j`` (0-based).

    Returns ``(triangles, coeffs)`` with triangles (K_j, K_{j+1}) in fan order
    and quartic coefficients (2, 15) on each.
    """
    if not 0 <= j < patch.n_interior_edges:
        raise ValueError(f"edge index {j} outside 0..{patch.n_interior_edges - 1}")
    tests = tests or edge_test_functions(T)
    e = T.edge_id(patch.vertex, patch.shared_vertex(j + 1))
    p = tests.lookup(e, patch.vertex)
    Kj, Kn = patch.triangles[j], patch.triangles[(j + 1) % patch.J]
    order = [0, 1] if tests.tris[p, 0] == Kj else [1, 0]
    assert tests.tris[p, order[1]] == Kn
    return np.array([Kj, Kn]), tests.coeffs[p, order]


# --- sting systems ---------------------------------------------------------

@dataclass
class StingSystem:
    """Small dense system for the sting coefficients of one vertex.

    ``alpha[i]`` multiplies st_{V, triangles[i]}.
    """

    vertex: int
    kind: VertexClass
    triangles: np.ndarray
    matrix: np.ndarray
    rhs: np.ndarray
    singular_values: np.ndarray = None
    alpha: np.ndarray = None
    residual: float = None

    def solve(self, require_full_rank=False):
        U, s, Vt = np.linalg.svd(self.matrix, full_matrices=False)
        self.singular_values = s
        if s[-1] <= SINGULAR_RATIO * s[0]:
            msg = (f"vertex {self.vertex} ({self.kind.value}): smallest singular value "
                   f"{s[-1]:.3g} vs largest {s[0]:.3g}")
            if require_full_rank:
                raise ConsistencyError(msg)
            log.warning(msg)
        self.alpha = Vt.T @ ((U.T @ self.rhs) / s)
        self.residual = float(np.linalg.norm(self.matrix @ self.alpha - self.rhs))
        return self.alpha


class StingStore:
    """Sting coefficients (nt, 3) with phase bookkeeping.

    Coefficients of a vertex may only be written during the phase of its class
    and read in a strictly later phase. Reads are logged as
    ``(phase, reader vertex, read vertex)`` in ``trace``.
    """

    def __init__(self, T, classes):
        self.mesh = T
        self.classes = list(classes)
        self.alpha = np.zeros((T.n_triangles, 3))
        self.done = np.zeros(T.n_vertices, dtype=bool)
        self.phase = Phase.NONSTING
        self.trace = []

    def begin(self, phase):
        if phase <= self.phase:
            raise PipelineOrderError(f"phase {phase.name} requested after {self.phase.name}")
        pending = [v for v, c in enumerate(self.classes) if PHASE_OF_CLASS[c] < phase and not self.done[v]]
        if pending:
            raise PipelineOrderError(f"phase {phase.name} started with {len(pending)} earlier vertices "
                                     f"missing (first: {pending[0]})")
        self.phase = phase

    def write(self, v, triangles, alpha):
        if PHASE_OF_CLASS[self.classes[v]] != self.phase:
            raise PipelineOrderError(f"vertex {v} ({self.classes[v].value}) written in phase {self.phase.name}")
        li = _local_indices(self.mesh, np.asarray(triangles), np.full(len(triangles), v))
        self.alpha[triangles, li] = alpha
        self.done[v] = True

    def read(self, v, t, reader=-1):
        """Coefficient of st_{v, t}, or 0 if ``v`` is not a vertex of ``t``."""
        if PHASE_OF_CLASS[self.classes[v]] >= self.phase or not self.done[v]:
            raise PipelineOrderError(f"vertex {v} ({self.classes[v].value}) read during phase "
                                     f"{self.phase.name} before it was computed")
        self.trace.append((self.phase, int(reader), int(v)))
        hit = np.flatnonzero(self.mesh.triangles[t] == v)
        return float(self.alpha[t, hit[0]]) if len(hit) else 0.0

    def cubic(self, v, t, reader=-1):
        """Sting part of vertex ``v`` on triangle ``t`` as cubic coefficients."""
        hit = np.flatnonzero(self.mesh.triangles[t] == v)
        if not len(hit):
            return np.zeros(pt.dim(3))
        return self.read(v, t, reader) * pt.sting_coefficients(int(hit[0]))


class _PatchRows:
    """Per-pair quantities shared by the sting systems of both edge endpoints."""

    def __init__(self, T, velocity, load, nonsting, tests):
        self.T = T
        self.tests = tests
        grads = velocity.space.grads
        areas = velocity.space.areas
        P = len(tests.edge)
        t = tests.tangent
        xi = np.stack([t, np.stack([-t[:, 1], t[:, 0]], axis=1)], axis=1)   # (P, 2 dirs, 2)
        v = np.einsum("psk,pdc->psdck", tests.coeffs, xi)                     # (P, 2 sides, 2 dirs, 2, 15)
        res = DataResidual(velocity, load, nonsting)
        self.data = res(tests.tris[:, 0], v[:, 0]) + res(tests.tris[:, 1], v[:, 1])   # (P, 2 dirs)
        g = grads[tests.tris]                                                # (P, 2, 3, 2)
        gw = pt.gradient(tests.coeffs, 4, g)                                 # (P, 2, 2, 10)
        div = np.einsum("psck,pdc->psdk", gw, xi)                            # (P, 2, 2, 10)
        iv = _local_indices(T, tests.tris, tests.vertex[:, None].repeat(2, 1))
        S = pt.sting_matrix()[iv]                                            # (P, 2, 10)
        a = areas[tests.tris]
        self.sting = np.einsum("psk,kl,psdl->psd", S, pt.gram(3, 3), div) * a[..., None]
        lamV = np.eye(3)[iv]
        divV = np.einsum("psdk,psk->psd", div, pt.eval_matrix(3, lamV))
        closed = a[..., None] * STING_MEAN * divV
        scale = np.abs(closed).max(axis=(1, 2), keepdims=True)
        bad = np.abs(self.sting - closed) > CLOSED_FORM_RTOL * scale
        if np.any(bad):
            p = int(np.argwhere(bad)[0, 0])
            raise ConsistencyError(f"sting entry of pair {p} disagrees with |K|/100 div w(V)")
        self.divV = divV

    def entries(self, e, v, Kj, Kn):
        """Matrix entries on (K_j, K_{j+1}) and data for the rows (t, t_perp) of edge ``e``."""
        p = self.tests.lookup(e, v)
        tri = self.tests.tris[p]
        order = [0, 1] if tri[0] == Kj else [1, 0]
        if tri[order[1]] != Kn:
            raise ConsistencyError(f"edge {e} is not shared by triangles {Kj}, {Kn}")
        return self.sting[p, order], self.data[p]


def sting_regular(T, patch, rows):
    """Least-squares sting coefficients of a regular vertex (2 J~ rows, J unknowns)."""
    J, Jt = patch.J, patch.n_interior_edges
    A = np.zeros((2 * Jt, J))
    b = np.zeros(2 * Jt)
    for j in range(Jt):
        jn = (j + 1) % J
        e = T.edge_id(patch.vertex, patch.shared_vertex(j + 1))
        M, d = rows.entries(e, patch.vertex, patch.triangles[j], patch.triangles[jn])
        A[j, j], A[j, jn] = M[0, 0], M[1, 0]
        A[Jt + j, j], A[Jt + j, jn] = M[0, 1], M[1, 1]
        b[j], b[Jt + j] = d
    sysm = StingSystem(patch.vertex, VertexClass.REGULAR, patch.triangles.copy(), A, b)
    sysm.solve(require_full_rank=True)
    return sysm


def _tangential_derivative_at(T, t, q, v, tangent):
    """d/dt of cubic ``q`` on triangle ``t`` at its vertex ``v``."""
    g = pt.gradient(np.asarray(q, float), 3, pt.bary_gradients(T.coords[t]))  # (2, 6)
    lam = np.zeros(3)
    lam[T.local_index(t, v)] = 1.0
    return float(tangent @ (g @ pt.eval_matrix(2, lam)))


def jump_tangential(T, patch, j, q):
    """|e|^3 (d/dt q|K_j (V) - d/dt q|K_{j+1} (V)) across interior edge ``j`` (0-based).

    ``q`` is a pair of cubic coefficient vectors (or TriPoly) on (K_j, K_{j+1}).
    """
    qa, qb = (getattr(x, "coeffs", x) for x in q)
    Kj, Kn = patch.triangles[j], patch.triangles[(j + 1) % patch.J]
    ell = patch.lengths[j + 1]
    t = patch.tangents[j + 1]
    V = patch.vertex
    return ell ** 3 * (_tangential_derivative_at(T, Kj, qa, V, t) - _tangential_derivative_at(T, Kn, qb, V, t))


def sting_nearly_singular(T, patch, rows, nonsting, store):
    """Sting coefficients of a nearly singular ordinary vertex.

    Rows 0..J~-1 test against w_j t_j; rows J~..2J~-1 ask the tangential
    derivative jump of the unknown sting part to cancel that of the non-sting
    part plus the (regular) neighbour's sting part.
    """
    J, Jt = patch.J, patch.n_interior_edges
    V = patch.vertex
    A = np.zeros((2 * Jt, J))
    b = np.zeros(2 * Jt)
    iV = [T.local_index(t, V) for t in patch.triangles]
    for j in range(Jt):
        jn = (j + 1) % J
        Kj, Kn = patch.triangles[j], patch.triangles[jn]
        Vj = patch.shared_vertex(j + 1)
        if store.classes[Vj] is not VertexClass.REGULAR:
            raise PipelineOrderError(f"nearly singular vertex {V} borders non-regular vertex {Vj}")
        e = T.edge_id(V, Vj)
        M, d = rows.entries(e, V, Kj, Kn)
        A[j, j], A[j, jn] = M[0, 0], M[1, 0]
        b[j] = d[0]
        st_a = pt.sting_coefficients(iV[j])
        st_b = pt.sting_coefficients(iV[jn])
        A[Jt + j, j] = jump_tangential(T, patch, j, (st_a, np.zeros(pt.dim(3))))
        A[Jt + j, jn] = jump_tangential(T, patch, j, (np.zeros(pt.dim(3)), st_b))
        qa = nonsting[Kj] + store.cubic(Vj, Kj, V)
        qb = nonsting[Kn] + store.cubic(Vj, Kn, V)
        b[Jt + j] = -jump_tangential(T, patch, j, (qa, qb))
    sysm = StingSystem(V, VertexClass.NEARLY_SINGULAR, patch.triangles.copy(), A, b)
    sysm.solve()
    return sysm


@dataclass(frozen=True)
class DeadCornerGeometry:
    vertex: int
    K1: int
    K: int
    W1: int
    W2: int
    W3: int
    normal: np.ndarray
    ell: float


def dead_corner_geometry(T, v):
    """K1 (the only triangle at ``v``), its neighbour K across W1 W2 and the third vertex W3."""
    fan = T.fans[v]
    if len(fan) != 1:
        raise ValueError(f"vertex {v} touches {len(fan)} triangles, not a dead corner")
    K1 = int(fan[0])
    i = T.local_index(K1, v)
    W1, W2 = int(T.triangles[K1, (i + 1) % 3]), int(T.triangles[K1, (i + 2) % 3])
    e = T.triangle_edges[K1, i]
    pair = T.edge_triangles[e]
    if pair[1] < 0:
        raise ValidationFailure(f"dead corner {v}: edge opposite it lies on the boundary")
    K = int(pair[0] if pair[1] == K1 else pair[1])
    W3 = int(next(w for w in T.triangles[K] if w not in (W1, W2)))
    d = T.nodes[W2] - T.nodes[W1]
    elen = np.linalg.norm(d)
    n = np.array([d[1], -d[0]]) / elen        # outward from K1 (counterclockwise K1)
    ell = 2.0 * T.areas[K1] / elen
    return DeadCornerGeometry(int(v), K1, K, W1, W2, W3, n, float(ell))


def jump_normal_corner(T, geom, q):
    """ell^3 (d/dn q|K1 (W1) - d/dn q|K (W1)) for a cubic pair ``q`` on (K1, K)."""
    qa, qb = (getattr(x, "coeffs", x) for x in q)
    da = _tangential_derivative_at(T, geom.K1, qa, geom.W1, geom.normal)
    db = _tangential_derivative_at(T, geom.K, qb, geom.W1, geom.normal)
    return geom.ell ** 3 * (da - db)


def sting_dead_corner(T, geom, nonsting, store):
    """Single sting coefficient of a dead corner from the normal jump at W1."""
    K1, K = geom.K1, geom.K
    for w in (geom.W1, geom.W2, geom.W3):
        if store.classes[w] is VertexClass.DEAD_CORNER:
            raise ValidationFailure(f"dead corner {geom.vertex} neighbours dead corner {w}")
    qa = nonsting[K1].copy()
    qb = nonsting[K].copy()
    for w in (geom.W1, geom.W2, geom.W3):
        qa += store.cubic(w, K1, geom.vertex)
        qb += store.cubic(w, K, geom.vertex)
    rhs = -jump_normal_corner(T, geom, (qa, qb))
    st = pt.sting_coefficients(T.local_index(K1, geom.vertex))
    coef = jump_normal_corner(T, geom, (st, np.zeros(pt.dim(3))))
    closed = -9.0 / 5.0 * geom.ell ** 2
    if abs(coef - closed) > CLOSED_FORM_RTOL * abs(closed):
        raise ConsistencyError(f"dead corner {geom.vertex}: jump of its sting {coef} != {closed}")
    sysm = StingSystem(geom.vertex, VertexClass.DEAD_CORNER, np.array([K1]),
                       np.array([[coef]]), np.array([rhs]))
    sysm.alpha = np.array([rhs / coef])
    sysm.singular_values = np.array([abs(coef)])
    sysm.residual = 0.0
    return sysm


# --- constant component ----------------------------------------------------

def edge_pair_test_function(T, e):
    """(30/|E|) (lambda_a lambda_b)^2 nu_E on both triangles of interior edge ``e``.

    nu_E is the unit normal pointing from the lower-indexed triangle into the
    other one. Returns ``(triangles, coeffs)`` with coeffs (2, 2, 15).
    """
    tris, coeffs = _edge_pair_batch(T, np.atleast_1d(e))
    return tris[0], coeffs[0]


def _edge_pair_batch(T, edges):
    tris = T.edge_triangles[edges]
    if np.any(tris[:, 1] < 0):
        raise ValueError("edge pair test functions need interior edges")
    ab = T.edges[edges]
    d = T.nodes[ab[:, 1]] - T.nodes[ab[:, 0]]
    elen = np.linalg.norm(d, axis=1)
    n = np.stack([d[:, 1], -d[:, 0]], axis=1) / elen[:, None]
    # orient n outward from the first triangle: it points away from that triangle's third vertex
    K1 = T.triangles[tris[:, 0]]
    third = np.array([next(w for w in tri if w not in pair) for tri, pair in zip(K1, ab)])
    away = np.einsum("ec,ec->e", n, T.nodes[ab[:, 0]] - T.nodes[third])
    n[away < 0] *= -1.0
    ia = _local_indices(T, tris, ab[:, :1].repeat(2, 1))
    ib = _local_indices(T, tris, ab[:, 1:].repeat(2, 1))
    lin = _LINEAR
    prod = pt.multiply(lin[ia], 1, lin[ib], 1)                      # (E, 2, 6)
    sq = pt.multiply(prod, 2, prod, 2)                              # (E, 2, 15)
    coeffs = (30.0 / elen)[:, None, None, None] * np.einsum("esk,ec->esck", sq, n)
    return tris, coeffs


@dataclass
class ConstantComponent:
    values: np.ndarray
    differences: np.ndarray
    tree_edges: np.ndarray
    cycle_residuals: np.ndarray
    scale: float


def _edge_differences(T, residual):
    """Adjacent differences C_K1 - C_K2 and the magnitude of the terms behind them."""
    ie = T.interior_edges
    tris, coeffs = _edge_pair_batch(T, ie)
    parts = [residual.terms(tris[:, s], coeffs[:, s]) for s in (0, 1)]
    diff = sum(a - b - c for a, b, c in parts)
    mag = sum(np.abs(a) + np.abs(b) + np.abs(c) for a, b, c in parts)
    return ie, tris, diff, mag


def _bfs_constants(T, ie, tris, diff, members, anchor):
    """Propagate C_K1 - C_K2 = diff from ``anchor`` over triangles in ``members``."""
    nt = T.n_triangles
    C = np.full(nt, np.nan)
    adj = [[] for _ in range(nt)]
    for k, (a, b) in enumerate(tris):
        if members[a] and members[b]:
            adj[a].append(k)
            adj[b].append(k)
    C[anchor] = 0.0
    tree = []
    queue = deque([anchor])
    while queue:
        K = queue.popleft()
        for k in adj[K]:
            a, b = tris[k]
            other = b if a == K else a
            if np.isnan(C[other]):
                C[other] = C[K] - diff[k] if a == K else C[K] + diff[k]
                tree.append(k)
                queue.append(other)
    return C, tree


def constant_component(T, residual, partitions=None):
    """Piecewise constants with zero area-weighted mean.

    ``residual`` is the data functional including the non-sting part. By
    default differences are propagated by breadth-first search from triangle
    0. With ``partitions`` (a label per triangle) each part is swept from its
    lowest triangle and the parts are then glued through shared edges.
    """
    ie, tris, diff, mag = _edge_differences(T, residual)
    nt = T.n_triangles
    if partitions is None:
        C, tree = _bfs_constants(T, ie, tris, diff, np.ones(nt, dtype=bool), 0)
    else:
        labels = np.asarray(partitions)
        C = np.full(nt, np.nan)
        tree = []
        for lab in np.unique(labels):
            members = labels == lab
            Cp, tp = _bfs_constants(T, ie, tris, diff, members, int(np.flatnonzero(members)[0]))
            sel = members & ~np.isnan(Cp)
            if sel.sum() != members.sum():
                raise ConsistencyError(f"partition {lab} is not edge-connected")
            C[sel] = Cp[sel]
            tree += tp
        # glue parts: BFS over the partition graph with one crossing edge per link
        offset = {labels[0]: 0.0}
        queue = deque([labels[0]])
        cross = [k for k, (a, b) in enumerate(tris) if labels[a] != labels[b]]
        while queue:
            lab = queue.popleft()
            for k in cross:
                a, b = tris[k]
                la, lb = labels[a], labels[b]
                if lab not in (la, lb):
                    continue
                other = lb if la == lab else la
                if other in offset:
                    continue
                # C_a - C_b = diff with C = local + offset
                if la == lab:
                    offset[other] = C[a] + offset[lab] - diff[k] - C[b]
                else:
                    offset[other] = C[b] + offset[lab] + diff[k] - C[a]
                tree.append(k)
                queue.append(other)
        if len(offset) != len(np.unique(labels)):
            raise ConsistencyError("partition graph is disconnected")
        C = C + np.array([offset[lab] for lab in labels])
    if np.any(np.isnan(C)):
        raise ConsistencyError("dual graph is disconnected")
    C = C - np.sum(C * T.areas) / T.areas.sum()
    resid = (C[tris[:, 0]] - C[tris[:, 1]]) - diff
    # data scale: size of the terms whose cancellation produces the differences
    scale = float(max(mag.max(initial=0.0), np.finfo(float).tiny))
    return ConstantComponent(C, diff, np.array(sorted(tree), dtype=int), resid, scale)


# --- assembly --------------------------------------------------------------

@dataclass
class PressureComponents:
    """All pieces of the recovered pressure, per triangle."""

    nonsting: np.ndarray                 # (nt, 10)
    sting: np.ndarray                    # (nt, 3): coefficient of st_{vertex i of K, K}
    constants: np.ndarray                # (nt,)
    sting_mean: float
    systems: dict = field(default_factory=dict, repr=False)
    constant_audit: ConstantComponent = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)

    def sting_cubics(self):
        return self.sting @ pt.sting_matrix()


@dataclass
class PressureField:
    """Per-triangle cubic pressure, coefficients (nt, 10)."""

    mesh: object
    coeffs: np.ndarray

    def at_bary(self, lam):
        return self.coeffs @ pt.eval_matrix(3, lam).T

    def __call__(self, t, x, y):
        lam = pt.to_bary(self.mesh.coords[t], np.array([x, y], dtype=float))
        return float(self.coeffs[t] @ pt.eval_matrix(3, lam))

    def tripoly(self, t):
        return pt.TriPoly(self.mesh.coords[t], 3, self.coeffs[t].copy(), t)

    def integral(self):
        return float(np.sum(pt.integrate(self.coeffs, 3, self.mesh.areas)))

    def l2_norm(self):
        return float(np.sqrt(np.sum(pt.inner(self.coeffs, 3, self.coeffs, 3, self.mesh.areas))))


def sting_mean(T, sting):
    """Mean over the domain of the sting part, exact from int_K st_VK = |K|/100."""
    return float(np.sum(sting.sum(axis=1) * T.areas) * STING_MEAN / T.areas.sum())


def assemble_pressure(T, comps):
    """p_h = non-sting + sting + constants - mean of the sting part."""
    if comps.nonsting is None or comps.sting is None or comps.constants is None:
        raise ConsistencyError("pressure components incomplete")
    coeffs = (comps.nonsting + comps.sting_cubics()
              + (comps.constants - comps.sting_mean)[:, None] * pt.constant(3)[None, :])
    return PressureField(T, coeffs)


def recover_pressure(T, velocity, load, classes, partitions=None, audit=True):
    """Run the whole local recovery; returns ``(PressureField, PressureComponents)``."""
    report = validate(T, classes)
    if report.multi_corner_triangles:
        raise ValidationFailure(f"triangles touching two corners: {report.multi_corner_triangles[:10]}")
    if report.singular_pairs:
        raise ConsistencyError(f"interior edges joining nearly singular vertices: {report.singular_pairs[:10]}")

    ns = nonsting_component(T, velocity, load)
    tests = edge_test_functions(T, velocity.space.grads)
    rows = _PatchRows(T, velocity, load, ns, tests)
    store = StingStore(T, classes)
    systems = {}

    store.begin(Phase.REGULAR)
    for v, c in enumerate(classes):
        if c is VertexClass.REGULAR:
            patch = vertex_patch(T, v)
            systems[v] = sting_regular(T, patch, rows)
            store.write(v, patch.triangles, systems[v].alpha)

    store.begin(Phase.NEARLY_SINGULAR)
    for v, c in enumerate(classes):
        if c is VertexClass.NEARLY_SINGULAR:
            patch = vertex_patch(T, v)
            systems[v] = sting_nearly_singular(T, patch, rows, ns, store)
            store.write(v, patch.triangles, systems[v].alpha)

    store.begin(Phase.DEAD_CORNER)
    for v, c in enumerate(classes):
        if c is VertexClass.DEAD_CORNER:
            geom = dead_corner_geometry(T, v)
            systems[v] = sting_dead_corner(T, geom, ns, store)
            store.write(v, systems[v].triangles, systems[v].alpha)

    store.begin(Phase.CONSTANT)
    cc = constant_component(T, DataResidual(velocity, load, ns), partitions)
    if audit:
        worst = float(np.abs(cc.cycle_residuals).max(initial=0.0))
        if worst > CYCLE_TOL * cc.scale:
            raise ConsistencyError(f"constant component cycle audit: {worst:.3g} > {CYCLE_TOL} x {cc.scale:.3g}")
    store.begin(Phase.ASSEMBLED)

    comps = PressureComponents(ns, store.alpha.copy(), cc.values, sting_mean(T, store.alpha),
                               systems, cc, store.trace)
    return assemble_pressure(T, comps), comps

"""C1 Argyris quintic stream functions with clamped (H^2_0) boundary conditions.

Local degrees of freedom on a triangle, in this order::

    0..17   for each vertex i: value, d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2
    18..20  outward normal derivative at the midpoint of the edge opposite vertex k

The nodal basis is obtained by inverting the 21 x 21 DOF matrix of the
barycentric quintic monomials. Derivative rows are scaled by the triangle
diameter so the matrix stays well conditioned for shape-regular triangles.
"""

from dataclasses import dataclass

import numpy as np

from . import polytri as pt

N_LOCAL = 21
COND_LIMIT = 1e10


class ConditioningError(RuntimeError):
    pass


def _dof_matrix(P):
    """DOF functionals applied to the degree-5 monomials, shape (nt, 21, 21)."""
    nt = len(P)
    G = pt.bary_gradients(P)
    I5 = np.eye(pt.dim(5))
    d1 = pt.gradient(I5[None], 5, G[:, None])                  # (nt, 21, 2, 15)
    d2 = pt.gradient(d1, 4, G[:, None, None])                  # (nt, 21, 2, 2, 10)
    E = np.eye(3)
    V = np.empty((nt, N_LOCAL, N_LOCAL))
    for i in range(3):
        e5 = pt.eval_matrix(5, E[i])
        e4 = pt.eval_matrix(4, E[i])
        e3 = pt.eval_matrix(3, E[i])
        r = 6 * i
        V[:, r] = e5
        V[:, r + 1:r + 3] = np.einsum("tmck,k->tcm", d1, e4)
        h = np.einsum("tmabk,k->tabm", d2, e3)
        V[:, r + 3] = h[:, 0, 0]
        V[:, r + 4] = h[:, 0, 1]
        V[:, r + 5] = h[:, 1, 1]
    normals = edge_normals(P)
    for k in range(3):
        mid = np.full(3, 0.5)
        mid[k] = 0.0
        e4 = pt.eval_matrix(4, mid)
        grad_mid = np.einsum("tmck,k->tmc", d1, e4)
        V[:, 18 + k] = np.einsum("tmc,tc->tm", grad_mid, normals[:, k])
    return V


def edge_normals(P):
    """Unit outward normals of the edges opposite each vertex, shape (..., 3, 2)."""
    G = pt.bary_gradients(P)
    return -G / np.linalg.norm(G, axis=-1, keepdims=True)


def diameters(P):
    return np.linalg.norm(P - np.roll(P, 1, axis=-2), axis=-1).max(axis=-1)


def _dof_scales(h):
    s = np.ones(h.shape + (N_LOCAL,))
    for i in range(3):
        s[..., 6 * i + 1:6 * i + 3] = h[..., None]
        s[..., 6 * i + 3:6 * i + 6] = h[..., None] ** 2
    s[..., 18:] = h[..., None]
    return s


def local_basis(P):
    """Nodal basis coefficients for triangles ``P`` (nt, 3, 2).

    Returns (nt, 21, 21); entry [t, j] is the degree-5 barycentric coefficient
    vector of the basis function dual to local DOF j.
    """
    P = np.asarray(P, dtype=float)
    single = P.ndim == 2
    if single:
        P = P[None]
    V = _dof_matrix(P)
    s = _dof_scales(diameters(P))
    Vs = V * s[:, :, None]
    cond = np.linalg.cond(Vs)
    if np.any(cond > COND_LIMIT):
        from .mesh import triangle_angles

        bad = int(np.argmax(cond))
        raise ConditioningError(
            f"Argyris DOF matrix of triangle {bad} is ill-conditioned (cond={cond[bad]:.3g}, "
            f"min angle {np.degrees(triangle_angles(P[bad]).min()):.3g} deg)")
    B = np.linalg.inv(Vs)                     # columns: scaled-DOF basis
    B = np.swapaxes(B, 1, 2) * s[:, :, None]
    return B[0] if single else B


def local_nodal_basis(vertices):
    """The 21 local basis functions of one triangle as TriPoly objects."""
    vertices = np.asarray(vertices, dtype=float)
    B = local_basis(vertices)
    return [pt.TriPoly(vertices, 5, b) for b in B]


def apply_dofs(P, coeffs):
    """Evaluate the 21 local DOFs of quintics ``coeffs`` (nt, 21) on triangles ``P``."""
    return np.einsum("tij,tj->ti", _dof_matrix(np.asarray(P, float)), coeffs)


@dataclass
class ArgyrisDofMap:
    """Free-DOF numbering and the local -> global incidence.

    ``local_to_global[t, j]`` is the global free DOF feeding local DOF j of
    triangle t (or -1 when the local DOF is constrained to zero) and
    ``local_coeff[t, j]`` the factor it enters with.

    Free DOFs are stored in length-scaled form: a k-th derivative DOF at a
    vertex is multiplied by ``vertex_scale**k`` and an edge normal derivative
    by the edge length, which keeps the stiffness matrix well balanced.
    """

    n_free: int
    local_to_global: np.ndarray
    local_coeff: np.ndarray
    kinds: list
    vertex_dofs: list
    edge_dof: np.ndarray
    vertex_scale: np.ndarray
    edge_scale: np.ndarray

    def local_values(self, x):
        x = np.asarray(x, dtype=float)  # extended-precision iterates are rounded here
        vals = np.where(self.local_to_global >= 0, x[np.maximum(self.local_to_global, 0)], 0.0)
        return vals * self.local_coeff


VERTEX_KINDS = ("value", "dx", "dy", "dxx", "dxy", "dyy")


def _boundary_normal(T, v):
    for e in T.boundary_edges:
        a, b = T.edges[e]
        if v in (a, b):
            t = T.nodes[b] - T.nodes[a]
            return np.array([-t[1], t[0]]) / np.linalg.norm(t)
    raise ValueError(f"vertex {v} has no boundary edge")


def build_dof_map(T):
    """Number the free DOFs of the clamped Argyris space on ``T``.

    Interior vertices carry six Cartesian DOFs. At a boundary vertex that is
    not a corner the Hessian is taken in the (tangent, normal) frame and only
    the second normal derivative is free; corners carry none. Interior edges
    carry one normal derivative, oriented by the outward normal of the
    lower-indexed neighbouring triangle; boundary edges carry none.
    """
    nt = T.n_triangles
    l2g = -np.ones((nt, N_LOCAL), dtype=int)
    coef = np.zeros((nt, N_LOCAL))
    kinds = []
    vertex_dofs = []
    nxt = 0
    nn_weights = {}
    for v in range(T.n_vertices):
        if not T.boundary[v]:
            ids = list(range(nxt, nxt + 6))
            kinds += [(k, v) for k in VERTEX_KINDS]
            nxt += 6
        elif not T.corner[v]:
            ids = [nxt]
            kinds.append(("dnn", v))
            n = _boundary_normal(T, v)
            nn_weights[v] = (n[0] ** 2, n[0] * n[1], n[1] ** 2)
            nxt += 1
        else:
            ids = []
        vertex_dofs.append(ids)
    edge_dof = -np.ones(len(T.edges), dtype=int)
    for e in T.interior_edges:
        edge_dof[e] = nxt
        kinds.append(("dnu", int(e)))
        nxt += 1

    elen = np.linalg.norm(T.nodes[T.edges[:, 1]] - T.nodes[T.edges[:, 0]], axis=1)
    hv = np.zeros(T.n_vertices)
    np.maximum.at(hv, T.edges[:, 0], elen)
    np.maximum.at(hv, T.edges[:, 1], elen)

    for t, tri in enumerate(T.triangles):
        for i, v in enumerate(tri):
            ids = vertex_dofs[v]
            r = 6 * i
            s1, s2 = 1.0 / hv[v], 1.0 / hv[v] ** 2
            if len(ids) == 6:
                l2g[t, r:r + 6] = ids
                coef[t, r:r + 6] = (1.0, s1, s1, s2, s2, s2)
            elif len(ids) == 1:
                l2g[t, r + 3:r + 6] = ids[0]
                coef[t, r + 3:r + 6] = np.array(nn_weights[v]) * s2
        for k in range(3):
            e = T.triangle_edges[t, k]
            if edge_dof[e] >= 0:
                l2g[t, 18 + k] = edge_dof[e]
                sign = 1.0 if T.edge_triangles[e, 0] == t else -1.0
                coef[t, 18 + k] = sign / elen[e]
    return ArgyrisDofMap(nxt, l2g, coef, kinds, vertex_dofs, edge_dof, hv, elen)


def expected_free_dofs(T):
    c = T.entity_counts()
    return 6 * c["interior_vertices"] + c["interior_edges"] + c["boundary_vertices"] - c["corners"]


class ArgyrisSpace:
    """Mesh, DOF map and cached local bases bundled together."""

    def __init__(self, T):
        self.mesh = T
        self.dofmap = build_dof_map(T)
        self.coords = T.coords
        self.areas = T.areas
        self.grads = pt.bary_gradients(self.coords)
        self.basis = local_basis(self.coords)

    @property
    def n_free(self):
        return self.dofmap.n_free

    def expand(self, x):
        """Per-triangle quintic coefficients (nt, 21) of the stream function ``x``."""
        return np.einsum("tjm,tj->tm", self.basis, self.dofmap.local_values(x))

    def curl_basis(self):
        """Curls of all local basis functions, (nt, 21, 2, 15)."""
        g = pt.gradient(self.basis, 5, self.grads[:, None])
        return np.stack([g[..., 1, :], -g[..., 0, :]], axis=-2)

    def hessian_basis(self):
        g = pt.gradient(self.basis, 5, self.grads[:, None])
        return pt.gradient(g, 4, self.grads[:, None, None])


@dataclass
class StreamField:
    space: ArgyrisSpace
    coeffs: np.ndarray

    def local(self):
        return self.space.expand(self.coeffs)

    def tripoly(self, t):
        return pt.TriPoly(self.space.coords[t], 5, self.local()[t], t)


def curl_coefficients(phi, grads):
    """Curl (phi_y, -phi_x) of quintics ``phi`` (..., 21) -> (..., 2, 15)."""
    g = pt.gradient(phi, 5, grads)
    return np.stack([g[..., 1, :], -g[..., 0, :]], axis=-2)


def curl_field(s, t):
    """Velocity pair (u_x, u_y) on triangle ``t`` from stream field ``s``."""
    phi = s.local()[t]
    c = curl_coefficients(phi, s.space.grads[t])
    P = s.space.coords[t]
    return pt.TriPoly(P, 4, c[0], t), pt.TriPoly(P, 4, c[1], t)

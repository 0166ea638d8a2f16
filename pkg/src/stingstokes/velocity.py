"""Divergence-free P4 velocity from the stream-function (velocity-only) system."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import polytri as pt
from .argyris import ArgyrisSpace, StreamField, curl_coefficients

RESIDUAL_TOL = 1e-12


class SolverError(RuntimeError):
    pass


def _flatten(v):
    """(m, ..., 2, n) -> (m, X, 2, n) plus the original batch shape."""
    return v.reshape(v.shape[0], -1, 2, v.shape[-1]), v.shape[:-2]


class AnalyticLoad:
    """Body force ``f(x, y) -> (f1, f2)`` integrated with the high-degree rule.

    The force is reduced once per polynomial degree to its moments against the
    barycentric monomials, so each application is a small contraction.
    """

    def __init__(self, mesh, f, degree=pt.DATA_QUAD_DEGREE):
        self.mesh = mesh
        self.f = f
        self.rule = pt.quad_rule(degree)
        self._moments = {}
        self.areas = mesh.areas

    def moments(self, d):
        if d not in self._moments:
            X = pt.physical_points(self.mesh.coords, self.rule.points)
            f1, f2 = self.f(X[..., 0], X[..., 1])
            F = np.stack(np.broadcast_arrays(f1, f2), axis=1) * self.rule.weights  # (nt, 2, nq)
            self._moments[d] = F @ pt.quad_eval(d, self.rule.degree).T
        return self._moments[d]

    def apply(self, tris, v, d):
        """(f, v)_K for vector polynomials ``v`` (m, ..., 2, dim(d)) on triangles ``tris`` (m,)."""
        tris = np.asarray(tris)
        vf, shape = _flatten(np.asarray(v, dtype=float))
        out = np.einsum("mxck,mck->mx", vf, self.moments(d)[tris]) * self.areas[tris][:, None]
        return out.reshape(shape)


class ReferenceLoad:
    """Generalized load v -> (grad u*, grad v) + (p*, div v) from per-triangle polynomials.

    ``u_coeffs`` is (nt, 2, dim(du)), ``p_coeffs`` is (nt, dim(dp)). Everything is
    integrated exactly.
    """

    def __init__(self, mesh, u_coeffs, du, p_coeffs, dp):
        self.mesh = mesh
        self.du, self.dp = du, dp
        self.areas = mesh.areas
        self.grads = pt.bary_gradients(mesh.coords)
        self.u = np.asarray(u_coeffs, dtype=float)
        self.p = np.asarray(p_coeffs, dtype=float)
        self.grad_u = pt.gradient(self.u, du, self.grads[:, None])  # (nt, 2, 2, n)

    def apply(self, tris, v, d):
        tris = np.asarray(tris)
        vf, shape = _flatten(np.asarray(v, dtype=float))
        g = self.grads[tris][:, None]
        gv = pt.gradient(vf, d, g[:, :, None])                       # (m, X, 2, 2, n)
        div = gv[..., 0, 0, :] + gv[..., 1, 1, :]
        a = np.einsum("mcak,kl,mxcal->mx", self.grad_u[tris], pt.gram(self.du - 1, d - 1), gv)
        b = np.einsum("mk,kl,mxl->mx", self.p[tris], pt.gram(self.dp, d - 1), div)
        return ((a + b) * self.areas[tris][:, None]).reshape(shape)


class ZeroLoad:
    def apply(self, tris, v, d):
        return np.zeros(np.shape(v)[:-2])


def stream_reference_load(space, x_star, p_coeffs=None, dp=3):
    """Load built from u* = curl of the stream field ``x_star`` and a pressure p*."""
    T = space.mesh
    u = curl_coefficients(space.expand(x_star), space.grads)
    if p_coeffs is None:
        p_coeffs = np.zeros((T.n_triangles, pt.dim(dp)))
    return ReferenceLoad(T, u, 4, p_coeffs, dp)


@dataclass
class SpdSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray


def element_matrices(space):
    """H^2 (Hessian contraction) element matrices, (nt, 21, 21)."""
    H = space.hessian_basis()
    A = np.einsum("tiabk,kl,tjabl->tij", H, pt.gram(3, 3), H) * space.areas[:, None, None]
    return 0.5 * (A + np.swapaxes(A, 1, 2))


def element_rhs(space, load):
    nt = space.mesh.n_triangles
    return load.apply(np.arange(nt), space.curl_basis(), 4)


def assemble(space, load):
    """Assemble the SPD stream-function system for ``load``."""
    dm = space.dofmap
    Ae = element_matrices(space)
    be = element_rhs(space, load)
    l2g, c = dm.local_to_global, dm.local_coeff
    Ae = Ae * c[:, :, None] * c[:, None, :]
    mask = (l2g[:, :, None] >= 0) & (l2g[:, None, :] >= 0)
    rows = np.broadcast_to(l2g[:, :, None], Ae.shape)[mask]
    cols = np.broadcast_to(l2g[:, None, :], Ae.shape)[mask]
    A = sp.coo_matrix((Ae[mask], (rows, cols)), shape=(dm.n_free, dm.n_free)).tocsr()
    upper = sp.triu(A, format="csr")
    A = (upper + sp.triu(A, k=1, format="csr").T).tocsr()
    A.sort_indices()
    b = np.zeros(dm.n_free)
    ok = l2g >= 0
    np.add.at(b, l2g[ok], (be * c)[ok])
    return SpdSystem(A, b)


def _residual(A, x, b):
    """b - A x accumulated in extended precision."""
    ld = np.longdouble
    return b.astype(ld) - A.astype(ld) @ x


def solve_velocity(space, system, max_refine=6):
    """Sparse LU solve (COLAMD ordering) plus mixed-precision iterative refinement.

    The residual floor of a double-precision iterate grows like h^-4 for this
    fourth-order operator, so the iterate is accumulated in ``np.longdouble``
    and residuals are formed in the same precision. The returned stream field
    keeps the extended-precision coefficients.
    """
    A, b = system.matrix, system.rhs
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return StreamField(space, np.zeros_like(b))
    try:
        lu = splu(A.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    x = lu.solve(b).astype(np.longdouble)
    for _ in range(max_refine):
        r = _residual(A, x, b)
        res = float(np.linalg.norm(r.astype(float))) / nb
        if res <= RESIDUAL_TOL:
            break
        x = x + lu.solve(r.astype(float))
    res = float(np.linalg.norm(_residual(A, x, b).astype(float))) / nb
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SolverError(f"relative residual {res:.3g} above {RESIDUAL_TOL}")
    return StreamField(space, x)


def relative_residual(system, x):
    """Relative residual of ``x`` for ``system``, computed in extended precision."""
    nb = np.linalg.norm(system.rhs)
    r = _residual(system.matrix, np.asarray(x, dtype=np.longdouble), system.rhs)
    return float(np.linalg.norm(r.astype(float))) / nb if nb else float(np.linalg.norm(r.astype(float)))


@dataclass
class VelocityField:
    """Per-triangle quartic velocity, coefficients (nt, 2, 15)."""

    space: ArgyrisSpace
    coeffs: np.ndarray
    stream: StreamField

    def divergence(self):
        return pt.divergence(self.coeffs, 4, self.space.grads)

    def gradient(self):
        """(nt, 2 components, 2 directions, 10)."""
        return pt.gradient(self.coeffs, 4, self.space.grads[:, None])

    def at_bary(self, lam):
        return np.einsum("tck,qk->tqc", self.coeffs, pt.eval_matrix(4, lam))

    def __call__(self, t, x, y):
        P = self.space.coords[t]
        lam = pt.to_bary(P, np.array([x, y], dtype=float))
        return self.coeffs[t] @ pt.eval_matrix(4, lam)

    def tripoly(self, t):
        P = self.space.coords[t]
        return pt.TriPoly(P, 4, self.coeffs[t, 0], t), pt.TriPoly(P, 4, self.coeffs[t, 1], t)


def velocity_field(s):
    return VelocityField(s.space, curl_coefficients(s.local(), s.space.grads), s)


def solve_stokes_velocity(T, load, space=None):
    space = space or ArgyrisSpace(T)
    return velocity_field(solve_velocity(space, assemble(space, load)))

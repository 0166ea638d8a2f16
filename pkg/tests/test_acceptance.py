"""Acceptance criteria 1-9, one test each, one printed PASS/FAIL line each.

Tolerances are pinned at their stated values; nothing here is relaxed.
"""

import time

import numpy as np
import pytest

from stingstokes import polytri as pt
from stingstokes.argyris import build_dof_map
from stingstokes.harness import convergence_study, hermite_interpolant, manufactured_case, pressure_l2_error
from stingstokes.mesh import VertexClass, generate_crisscross, vertex_patch
from stingstokes.pressure import dead_corner_geometry, jump_normal_corner, jump_tangential, recover_pressure
from conftest import random_quad_mesh, random_triangle

# reference error table: n -> (|u - u_h|_1, ||p - p_h||_0)
TABLE = {8: (7.3894e-4, 4.3010e-3), 16: (3.7236e-5, 1.8565e-4),
         32: (2.2793e-6, 1.0805e-5), 64: (1.3859e-7, 6.5962e-7)}
ERROR_FACTOR = 3.0
ORDER_RANGE = (3.7, 4.8)
RUNTIME_LIMIT = 180.0


def max_divergence_ratio(velocity):
    div = velocity.divergence()
    return float(np.abs(div).max() / (np.abs(velocity.coeffs).max() * np.abs(velocity.space.grads).max()))


@pytest.fixture(scope="module")
def table_run():
    audits = {}

    def keep(n, sol):
        cc = sol.components.constant_audit
        audits[n] = {"div": max_divergence_ratio(sol.velocity),
                     "cycle": float(np.abs(cc.cycle_residuals).max()), "scale": cc.scale}

    t0 = time.perf_counter()
    rows = convergence_study(sorted(TABLE), "trig", singular_corners=True, on_solution=keep)
    return rows, audits, time.perf_counter() - t0


def test_criterion_1_error_table(table_run, criterion):
    rows, _, elapsed = table_run
    bad = []
    for r in rows:
        ru, rp = r.vel_h1_err / TABLE[r.n][0], r.prs_l2_err / TABLE[r.n][1]
        for name, ratio in (("vel", ru), ("prs", rp)):
            if not 1 / ERROR_FACTOR <= ratio <= ERROR_FACTOR:
                bad.append(f"n={r.n} {name} x{ratio:.2f}")
        for name, order in (("vel", r.vel_order), ("prs", r.prs_order)):
            if order is not None and not ORDER_RANGE[0] <= order <= ORDER_RANGE[1]:
                bad.append(f"n={r.n} {name} order {order:.2f}")
    if elapsed > RUNTIME_LIMIT:
        bad.append(f"runtime {elapsed:.0f}s")
    table = "; ".join(f"n={r.n} {r.vel_h1_err:.4e}/{r.prs_l2_err:.4e}" for r in rows)
    ok = criterion(1, not bad, f"{table}; {elapsed:.0f}s" + (f"; out of bounds: {', '.join(bad)}" if bad else ""))
    assert ok, bad


def test_criterion_2_sting_identity(criterion):
    rng = np.random.default_rng(2)
    exps = [(a, b) for a in range(4) for b in range(4 - a)]
    worst = 0.0
    for _ in range(100):
        P = random_triangle(rng)
        area = pt.signed_area(P)
        # sup norm sampled on a fine lattice of K (a lower bound, so the check is not loosened)
        Xs = pt.physical_points(P, pt.lattice(30))
        for a, b in exps:
            q = pt.TriPoly.from_function(P, lambda x, y: x ** a * y ** b, 3)
            qinf = np.abs(Xs[:, 0] ** a * Xs[:, 1] ** b).max()
            for i in range(3):
                lhs = pt.inner_product(pt.sting(P, i), q)
                rhs = area / 100 * P[i, 0] ** a * P[i, 1] ** b
                worst = max(worst, abs(lhs - rhs) / (area * qinf))
    ok = criterion(2, worst <= 1e-12, f"max |(st,q) - |K|/100 q(V)| / (|K| |q|_inf) = {worst:.2e} (tol 1e-12)")
    assert ok


def test_criterion_3_decomposition(criterion):
    rng = np.random.default_rng(3)
    worst_rec = worst_orth = 0.0
    for _ in range(100):
        P = random_triangle(rng)
        q = pt.TriPoly(P, 3, rng.standard_normal(10))
        ns, alpha, c = pt.decompose_tripoly(q)
        back = ns + sum((alpha[i] * pt.sting(P, i) for i in range(1, 3)), alpha[0] * pt.sting(P, 0))
        back = back + pt.TriPoly(P, 0, [c])
        qn = np.sqrt(pt.inner_product(q, q))
        diff = back - q
        worst_rec = max(worst_rec, np.sqrt(pt.inner_product(diff, diff)) / qn)
        nn = np.sqrt(pt.inner_product(ns, ns))
        for other in [pt.sting(P, i) for i in range(3)] + [pt.TriPoly(P, 0, [1.0])]:
            on = np.sqrt(pt.inner_product(other, other))
            worst_orth = max(worst_orth, abs(pt.inner_product(ns, other)) / max(nn * on, 1e-300))
    ok = criterion(3, worst_rec <= 1e-12 and worst_orth <= 1e-12,
                   f"reconstruction {worst_rec:.2e}, orthogonality {worst_orth:.2e} (tol 1e-12)")
    assert ok


def _entity_counts(T):
    """Counts from the raw cell array, independent of the triangulation tables."""
    tri = T.triangles
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    edges, mult = np.unique(e, axis=0, return_counts=True)
    bedges = edges[mult == 1]
    bverts = np.unique(bedges)
    x = T.nodes[bverts]
    # corners of the unit square
    corners = np.sum((np.isclose(x[:, 0], 0) | np.isclose(x[:, 0], 1)) & (np.isclose(x[:, 1], 0) | np.isclose(x[:, 1], 1)))
    return T.n_vertices - len(bverts), int((mult == 2).sum()), len(bverts), int(corners)


def test_criterion_4_dof_count(criterion):
    bad = []
    for n in (2, 4, 8, 16):
        for sc in (True, False):
            T = generate_crisscross(n, sc)
            vin, ein, vb, vc = _entity_counts(T)
            expect = 6 * vin + ein + vb - vc
            got = build_dof_map(T).n_free
            if got != expect:
                bad.append(f"n={n} sc={sc}: {got} != {expect}")
    ok = criterion(4, not bad, "free DOFs == 6V_in + E_in + V_bdy - V_cnr on 8 meshes" + (f"; {bad}" if bad else ""))
    assert ok


def test_criterion_5_divergence_free(table_run, exact8, exact4_plain, criterion):
    _, audits, _ = table_run
    ratios = {f"trig n={n}": a["div"] for n, a in audits.items()}
    ratios["exactness n=8"] = max_divergence_ratio(exact8.velocity)
    ratios["exactness n=4 plain"] = max_divergence_ratio(exact4_plain.velocity)
    worst = max(ratios.values())
    ok = criterion(5, worst <= 1e-13, f"max |div coeff| / coefficient scale = {worst:.2e} over {len(ratios)} solves (tol 1e-13)")
    assert ok, ratios


def test_criterion_6_jump_closed_forms(criterion):
    rng = np.random.default_rng(6)
    worst_t = worst_n = 0.0
    for _ in range(100):
        T = random_quad_mesh(rng)
        patch = vertex_patch(T, 0)
        Ka, Kb = patch.triangles[:2]
        ell = patch.lengths[1]
        e1, e2 = rng.standard_normal(2)
        qa = e1 * pt.sting_coefficients(T.local_index(Ka, 0))
        qb = e2 * pt.sting_coefficients(T.local_index(Kb, 0))
        expect = -6 * ell ** 2 * e1 + 6 * ell ** 2 * e2
        worst_t = max(worst_t, abs(jump_tangential(T, patch, 0, (qa, qb)) - expect) / abs(expect))
        # node 1 lies in the first triangle only: a dead corner facing the shared edge
        g = dead_corner_geometry(T, 1)
        st = pt.sting_coefficients(T.local_index(g.K1, 1))
        closed = -9 / 5 * g.ell ** 2
        worst_n = max(worst_n, abs(jump_normal_corner(T, g, (st, np.zeros(10))) - closed) / abs(closed))
    ok = criterion(6, worst_t <= 1e-12 and worst_n <= 1e-12,
                   f"tangential {worst_t:.2e}, corner normal {worst_n:.2e} relative (tol 1e-12)")
    assert ok


def test_criterion_7_polynomial_exactness(exact8, criterion):
    c = exact8
    T = c.mesh
    p, comps = recover_pressure(T, c.velocity, c.load, c.classes)
    d = p.coeffs - c.pressure
    err = float(np.sqrt(np.sum(pt.inner(d, 3, d, 3, T.areas))))
    kinds = {c.classes[v] for v in comps.systems}
    ok = criterion(7, err <= 1e-9 and kinds == set(VertexClass),
                   f"||p* - p_h||_0 = {err:.2e} (tol 1e-9); sting paths used: {sorted(k.value for k in kinds)}")
    assert ok


def test_criterion_8_hermite_order(criterion):
    case = manufactured_case("trig")
    errs = []
    for n in (8, 16, 32, 64):
        T = generate_crisscross(n, True)
        errs.append(pressure_l2_error(T, case.p, hermite_interpolant(T, case.p, case.grad_p)))
    slopes = [np.log2(a / b) for a, b in zip(errs, errs[1:])]
    ok = criterion(8, min(slopes) >= 3.8, f"slopes {', '.join(f'{s:.2f}' for s in slopes)} (need >= 3.8)")
    assert ok


def test_criterion_9_cycle_audit(table_run, criterion):
    _, audits, _ = table_run
    parts = []
    ok = True
    for n in (8, 16):
        a = audits[n]
        ok &= a["cycle"] <= 1e-10 * a["scale"]
        parts.append(f"n={n} {a['cycle']:.2e} vs scale {a['scale']:.2e}")
    ok = criterion(9, ok, "max cycle sum: " + "; ".join(parts) + " (tol 1e-10 x scale)")
    assert ok

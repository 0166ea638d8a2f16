"""Text formats: mesh files, pressure coefficients, convergence CSV and VTU samples."""

import csv
from pathlib import Path

import numpy as np

from . import polytri as pt


def write_mesh(path, T):
    with open(path, "w") as fh:
        fh.write(f"{T.n_vertices} {T.n_triangles}\n")
        for x, y in T.nodes:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in T.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh_arrays(path):
    with open(path) as fh:
        tokens = fh.read().split()
    try:
        nv, nt = int(tokens[0]), int(tokens[1])
        vals = tokens[2:]
        if len(vals) != 2 * nv + 3 * nt:
            raise ValueError(f"expected {2 * nv + 3 * nt} numbers after the header, got {len(vals)}")
        nodes = np.array([float(v) for v in vals[:2 * nv]]).reshape(nv, 2)
        cells = np.array([int(v) for v in vals[2 * nv:]]).reshape(nt, 3)
    except (IndexError, ValueError) as exc:
        from .mesh import MeshError

        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return nodes, cells


def read_mesh(path):
    from .mesh import build_triangulation

    return build_triangulation(*read_mesh_arrays(path))


def write_pressure(path, pressure):
    """Per-triangle cubic coefficients (barycentric monomial basis), one triangle per line."""
    np.savetxt(path, pressure.coeffs, fmt="%.17g")


def read_pressure(path):
    return np.loadtxt(path, ndmin=2)


def write_velocity(path, velocity):
    """Per-triangle quartic coefficients: 15 for u_x followed by 15 for u_y."""
    np.savetxt(path, velocity.coeffs.reshape(len(velocity.coeffs), -1), fmt="%.17g")


CSV_COLUMNS = ["n", "h", "vel_h1_err", "vel_order", "prs_l2_err", "prs_order"]


def _fmt(x):
    return "" if x is None else f"{x:.17g}"


def write_convergence_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.n, _fmt(r.h), _fmt(r.vel_h1_err), _fmt(r.vel_order),
                        _fmt(r.prs_l2_err), _fmt(r.prs_order)])


def write_vtu(path, T, velocity, pressure, samples=4):
    """Sample the fields on a uniform barycentric lattice inside each triangle.

    Each triangle becomes ``samples**2`` linear sub-triangles; points on shared
    edges are duplicated so the discontinuous pressure is kept per triangle.
    """
    m = samples
    lat = np.array([(m - b - c, b, c) for b in range(m + 1) for c in range(m + 1 - b)], float) / m
    index = {}
    for k, (a, b, c) in enumerate(np.rint(lat * m).astype(int)):
        index[(b, c)] = k
    sub = []
    for b in range(m):
        for c in range(m - b):
            sub.append((index[(b, c)], index[(b + 1, c)], index[(b, c + 1)]))
            if b + c < m - 1:
                sub.append((index[(b + 1, c)], index[(b + 1, c + 1)], index[(b, c + 1)]))
    sub = np.array(sub)
    npl = len(lat)
    P = T.coords
    X = pt.physical_points(P, lat)  # (nt, npl, 2)
    U = np.einsum("tcj,qj->tqc", velocity.coeffs, pt.eval_matrix(4, lat))
    p = pressure.coeffs @ pt.eval_matrix(3, lat).T
    pts = X.reshape(-1, 2)
    conn = (sub[None, :, :] + npl * np.arange(T.n_triangles)[:, None, None]).reshape(-1, 3)
    ncell = len(conn)

    def arr(a):
        return " ".join(f"{v:.9g}" for v in np.ravel(a))

    pts3 = np.column_stack([pts, np.zeros(len(pts))])
    vel3 = np.column_stack([U.reshape(-1, 2), np.zeros(len(pts))])
    body = f"""<?xml version="1.0"?>
<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">
  <UnstructuredGrid>
    <Piece NumberOfPoints="{len(pts)}" NumberOfCells="{ncell}">
      <PointData Scalars="pressure" Vectors="velocity">
        <DataArray type="Float64" Name="pressure" format="ascii">{arr(p)}</DataArray>
        <DataArray type="Float64" Name="velocity" NumberOfComponents="3" format="ascii">{arr(vel3)}</DataArray>
      </PointData>
      <Points>
        <DataArray type="Float64" NumberOfComponents="3" format="ascii">{arr(pts3)}</DataArray>
      </Points>
      <Cells>
        <DataArray type="Int64" Name="connectivity" format="ascii">{" ".join(map(str, conn.ravel()))}</DataArray>
        <DataArray type="Int64" Name="offsets" format="ascii">{" ".join(map(str, 3 * np.arange(1, ncell + 1)))}</DataArray>
        <DataArray type="UInt8" Name="types" format="ascii">{" ".join(["5"] * ncell)}</DataArray>
      </Cells>
    </Piece>
  </UnstructuredGrid>
</VTKFile>
"""
    Path(path).write_text(body)

"""Triangulations, vertex fans and singular-vertex classification."""

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .polytri import signed_area

CORNER_TOL = 1e-9


class MeshError(ValueError):
    """Raised for invalid mesh input (bad indices, degenerate or non-manifold cells)."""


class VertexClass(enum.Enum):
    REGULAR = "regular"
    NEARLY_SINGULAR = "nearly_singular_ordinary"
    DEAD_CORNER = "dead_corner"


@dataclass(frozen=True)
class VertexPatch:
    """Counterclockwise fan of triangles around one vertex.

    ``triangles[j]`` is K_{j+1}; interior edge j (0-based) is shared by
    ``triangles[j]`` and ``triangles[(j + 1) % J]`` and joins the vertex to
    ``ring[j + 1]``. ``ring`` holds V_0 .. V_J for boundary vertices and
    V_0 .. V_J with V_0 == V_J for interior ones.
    """

    vertex: int
    triangles: np.ndarray
    ring: np.ndarray
    interior: bool
    angles: np.ndarray
    lengths: np.ndarray
    tangents: np.ndarray

    @property
    def J(self):
        return len(self.triangles)

    @property
    def n_interior_edges(self):
        return self.J if self.interior else self.J - 1

    def shared_vertex(self, j):
        """Far endpoint V_j of interior edge ``j`` (1-based, as in the fan notation)."""
        return int(self.ring[j])


@dataclass
class Triangulation:
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(repr=False)
    edge_triangles: np.ndarray = field(repr=False)
    triangle_edges: np.ndarray = field(repr=False)
    fans: list = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    corner: np.ndarray = field(repr=False)

    @property
    def n_vertices(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def coords(self):
        """Triangle vertex coordinates, shape (nt, 3, 2)."""
        return self.nodes[self.triangles]

    @property
    def areas(self):
        return signed_area(self.coords)

    @property
    def h(self):
        P = self.coords
        d = np.linalg.norm(P - np.roll(P, 1, axis=1), axis=-1)
        return float(d.max())

    @property
    def interior_edges(self):
        return np.flatnonzero(self.edge_triangles[:, 1] >= 0)

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_triangles[:, 1] < 0)

    def entity_counts(self):
        nb = int(self.boundary.sum())
        return {
            "interior_vertices": self.n_vertices - nb,
            "boundary_vertices": nb,
            "corners": int(self.corner.sum()),
            "interior_edges": len(self.interior_edges),
            "boundary_edges": len(self.boundary_edges),
            "triangles": self.n_triangles,
        }

    @cached_property
    def angles(self):
        """Interior angle of every triangle at each of its vertices, (nt, 3)."""
        return triangle_angles(self.coords)

    def min_angle(self):
        return float(self.angles.min())

    def local_index(self, t, v):
        hit = np.flatnonzero(self.triangles[t] == v)
        if len(hit) != 1:
            raise ValueError(f"vertex {v} is not a vertex of triangle {t}")
        return int(hit[0])

    def edge_id(self, a, b):
        return self._edge_lookup[(min(a, b), max(a, b))]

    def __post_init__(self):
        self._edge_lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}


def triangle_angles(P):
    """Interior angles (..., 3) at each vertex of triangles ``P`` (..., 3, 2)."""
    u = np.roll(P, -1, axis=-2) - P
    w = np.roll(P, 1, axis=-2) - P
    cross = u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0]
    dot = (u * w).sum(-1)
    return np.abs(np.arctan2(cross, dot))


def build_triangulation(nodes, cells):
    """Validate raw node/cell arrays and derive all adjacency tables.

    Triangles are reoriented counterclockwise. Raises ``MeshError`` for
    invalid indices, coincident nodes, zero-area or non-manifold cells and
    a disconnected triangle-adjacency graph.
    """
    nodes = np.array(nodes, dtype=float)
    tris = np.array(cells, dtype=int)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise MeshError("nodes must be an (nv, 2) array")
    if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
        raise MeshError("need at least one (i, j, k) cell")
    if tris.min() < 0 or tris.max() >= len(nodes):
        raise MeshError("cell index out of range")
    if np.any(tris[:, 0] == tris[:, 1]) or np.any(tris[:, 1] == tris[:, 2]) or np.any(tris[:, 0] == tris[:, 2]):
        raise MeshError("cell with repeated vertex")

    diam = float(np.linalg.norm(nodes.max(0) - nodes.min(0)))
    if cKDTree(nodes).query_pairs(1e-12 * diam):
        raise MeshError("coincident nodes")

    area = signed_area(nodes[tris])
    if np.any(np.abs(area) <= 1e-14 * diam ** 2):
        raise MeshError(f"zero-area triangle(s): {np.flatnonzero(np.abs(area) <= 1e-14 * diam ** 2)[:5]}")
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    # edge k of a triangle is opposite its local vertex k
    nt = len(tris)
    local = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1)
    keys = np.sort(local.reshape(-1, 2), axis=1)
    edges, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if counts.max() > 2:
        raise MeshError("non-manifold edge with three or more triangles")
    tri_edges = inv.reshape(nt, 3)
    edge_tris = -np.ones((len(edges), 2), dtype=int)
    for slot, e in enumerate(inv):
        t = slot // 3
        if edge_tris[e, 0] < 0:
            edge_tris[e, 0] = t
        else:
            edge_tris[e, 1] = t
    # lower-indexed triangle first
    swap = (edge_tris[:, 1] >= 0) & (edge_tris[:, 1] < edge_tris[:, 0])
    edge_tris[swap] = edge_tris[swap][:, ::-1]

    _check_connected(nt, edge_tris)

    nv = len(nodes)
    boundary = np.zeros(nv, dtype=bool)
    bedges = edges[edge_tris[:, 1] < 0]
    boundary[bedges.ravel()] = True
    fans = _build_fans(nv, tris, boundary)
    corner = _detect_corners(nodes, bedges, nv)
    return Triangulation(nodes, tris, edges, edge_tris, tri_edges, fans, boundary, corner)


def _check_connected(nt, edge_tris):
    adj = [[] for _ in range(nt)]
    for a, b in edge_tris:
        if b >= 0:
            adj[a].append(b)
            adj[b].append(a)
    seen = np.zeros(nt, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        t = queue.popleft()
        for s in adj[t]:
            if not seen[s]:
                seen[s] = True
                queue.append(s)
    if not seen.all():
        raise MeshError("triangle adjacency graph is disconnected")


def _build_fans(nv, tris, boundary):
    incident = [[] for _ in range(nv)]
    for t, tri in enumerate(tris):
        for v in tri:
            incident[v].append(t)
    fans = []
    for v in range(nv):
        ts = incident[v]
        if not ts:
            raise MeshError(f"vertex {v} belongs to no triangle")
        # for K = (v, a, b) counterclockwise the next triangle around v starts with edge v-b
        first_of = {}
        lead = {}
        for t in ts:
            i = int(np.flatnonzero(tris[t] == v)[0])
            a, b = int(tris[t][(i + 1) % 3]), int(tris[t][(i + 2) % 3])
            if a in first_of:
                raise MeshError(f"inconsistent orientation around vertex {v}")
            first_of[a] = t
            lead[t] = b
        seconds = set(lead.values())
        starts = [t for a, t in first_of.items() if a not in seconds]
        if boundary[v]:
            if len(starts) != 1:
                raise MeshError(f"vertex {v} is non-manifold")
            t = starts[0]
        else:
            if starts:
                raise MeshError(f"vertex {v} has an open fan but no boundary edge")
            t = min(ts)
        order = [t]
        while len(order) < len(ts):
            nxt = first_of.get(lead[order[-1]])
            if nxt is None or nxt in order:
                raise MeshError(f"vertex {v} is non-manifold")
            order.append(nxt)
        fans.append(np.array(order, dtype=int))
    return fans


def _detect_corners(nodes, bedges, nv):
    corner = np.zeros(nv, dtype=bool)
    tangents = [[] for _ in range(nv)]
    for a, b in bedges:
        t = nodes[b] - nodes[a]
        t = t / np.linalg.norm(t)
        tangents[a].append(t)
        tangents[b].append(t)
    for v, ts in enumerate(tangents):
        if len(ts) == 2:
            cross = ts[0][0] * ts[1][1] - ts[0][1] * ts[1][0]
            corner[v] = abs(cross) > CORNER_TOL
        elif len(ts) > 2:
            raise MeshError(f"boundary vertex {v} touches {len(ts)} boundary edges")
    return corner


def vertex_patch(T, v):
    fan = T.fans[v]
    tris = T.triangles[fan]
    loc = np.argmax(tris == v, axis=1)
    rows = np.arange(len(fan))
    ring = np.concatenate([tris[:1, (loc[0] + 1) % 3], tris[rows, (loc + 2) % 3]]).astype(int)
    P = T.nodes
    vec = P[ring] - P[v]
    lengths = np.linalg.norm(vec, axis=1)
    tangents = vec / lengths[:, None]
    angles = T.angles[fan, loc]
    return VertexPatch(int(v), fan, ring, not bool(T.boundary[v]), angles, lengths, tangents)


def upsilon(T, v):
    """Sums of angles at ``v`` of consecutive fan triangles sharing an edge."""
    patch = vertex_patch(T, v)
    th = patch.angles
    J = patch.J
    return [float(th[j] + th[(j + 1) % J]) for j in range(patch.n_interior_edges)]


def default_theta(T):
    return T.min_angle()


def classify_vertices(T, theta=None):
    """Map each vertex to its ``VertexClass`` for the angle threshold ``theta``."""
    amin = T.min_angle()
    if theta is None:
        theta = amin
    if not 0.0 < theta <= amin * (1.0 + 1e-12):
        raise ValueError(f"theta={theta} outside (0, {amin}] (smallest mesh angle)")
    classes = []
    for v in range(T.n_vertices):
        if len(T.fans[v]) == 1:
            classes.append(VertexClass.DEAD_CORNER)
        elif all(abs(s - np.pi) < theta for s in upsilon(T, v)):
            classes.append(VertexClass.NEARLY_SINGULAR)
        else:
            classes.append(VertexClass.REGULAR)
    return classes


@dataclass
class ValidationReport:
    multi_corner_triangles: list
    singular_pairs: list

    @property
    def ok(self):
        return not self.multi_corner_triangles and not self.singular_pairs


def validate(T, classes):
    """Report triangles with two or more corners and interior edges joining two
    nearly singular vertices."""
    ncorner = T.corner[T.triangles].sum(axis=1)
    multi = [int(t) for t in np.flatnonzero(ncorner >= 2)]
    pairs = []
    for e in T.interior_edges:
        a, b = T.edges[e]
        if classes[a] is VertexClass.NEARLY_SINGULAR and classes[b] is VertexClass.NEARLY_SINGULAR:
            pairs.append((int(a), int(b)))
    return ValidationReport(multi, pairs)


def generate_crisscross(n, singular_corners=True):
    """Crisscross triangulation of the unit square with ``n`` x ``n`` cells.

    Every cell is split into four triangles around an interior point. For a
    non-corner cell that point is the cell center (an exactly singular vertex).
    With ``singular_corners`` each corner cell is cut along the diagonal not
    through the domain corner, isolating that corner in a single triangle, and
    the other half is split into three triangles at its centroid.
    """
    if n < 2:
        raise MeshError("crisscross mesh needs n >= 2")
    h = 1.0 / n
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    nodes = [np.column_stack([X.ravel(), Y.ravel()])]
    gid = lambda i, j: i * (n + 1) + j  # noqa: E731
    next_id = (n + 1) ** 2
    cells = []
    corner_cells = {(0, 0), (n - 1, 0), (0, n - 1), (n - 1, n - 1)}
    extra = []
    for i in range(n):
        for j in range(n):
            sw, se, ne, nw = gid(i, j), gid(i + 1, j), gid(i + 1, j + 1), gid(i, j + 1)
            if singular_corners and (i, j) in corner_cells:
                ring = [sw, se, ne, nw]
                # domain corner of this cell
                k = {(0, 0): 0, (n - 1, 0): 1, (n - 1, n - 1): 2, (0, n - 1): 3}[(i, j)]
                c, a, opp, b = ring[k], ring[(k + 1) % 4], ring[(k + 2) % 4], ring[(k + 3) % 4]
                cells.append((c, a, b))
                pts = np.array([[X.ravel()[q], Y.ravel()[q]] for q in (a, opp, b)])
                extra.append(pts.mean(axis=0))
                m = next_id
                next_id += 1
                cells += [(a, opp, m), (opp, b, m), (b, a, m)]
            else:
                extra.append([(i + 0.5) * h, (j + 0.5) * h])
                m = next_id
                next_id += 1
                cells += [(sw, se, m), (se, ne, m), (ne, nw, m), (nw, sw, m)]
    nodes.append(np.array(extra))
    return build_triangulation(np.vstack(nodes), cells)


def parse_mesh_spec(spec, singular_corners=True):
    """``crisscross:N`` or a path to a mesh text file."""
    from .io import read_mesh

    if spec.startswith("crisscross:"):
        return generate_crisscross(int(spec.split(":", 1)[1]), singular_corners)
    return read_mesh(spec)

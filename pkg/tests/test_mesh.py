import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stingstokes import io
from stingstokes.mesh import (
    MeshError, VertexClass, build_triangulation, classify_vertices, generate_crisscross, parse_mesh_spec,
    upsilon, validate, vertex_patch,
)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def counts(T):
    return T.entity_counts()


def test_single_triangle():
    T = build_triangulation([[0, 0], [1, 0], [0, 1]], [(0, 1, 2)])
    c = counts(T)
    assert (T.n_triangles, c["boundary_edges"], c["corners"], c["interior_edges"]) == (1, 3, 3, 0)


def test_two_triangle_square():
    T = build_triangulation(SQUARE, [(0, 1, 2), (0, 2, 3)])
    c = counts(T)
    assert (T.n_triangles, c["interior_edges"], c["corners"]) == (2, 1, 4)


def test_plain_crisscross_n2_counts():
    T = generate_crisscross(2, singular_corners=False)
    c = counts(T)
    assert T.n_triangles == 16
    assert c["interior_edges"] == 20
    assert c["interior_vertices"] == 5
    assert c["boundary_vertices"] == 8
    assert c["corners"] == 4


def test_clockwise_input_is_reoriented():
    T = build_triangulation([[0, 0], [0, 1], [1, 0]], [(0, 1, 2)])
    assert T.areas[0] > 0


@pytest.mark.parametrize("nodes,cells,msg", [
    ([[0, 0], [1, 0], [0, 1]], [(0, 1, 5)], "out of range"),
    ([[0, 0], [1, 0], [2, 0]], [(0, 1, 2)], "zero-area"),
    ([[0, 0], [1, 0], [0, 1], [0, 1]], [(0, 1, 2), (1, 3, 0)], "coincident"),
    ([[0, 0], [1, 0], [0, 1], [1, 1], [-1, -1]], [(0, 1, 2), (1, 3, 2), (0, 1, 4), (1, 0, 3)], "non-manifold"),
    ([[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6]], [(0, 1, 2), (3, 4, 5)], "disconnected"),
])
def test_build_errors(nodes, cells, msg):
    with pytest.raises(MeshError, match=msg):
        build_triangulation(nodes, cells)


def test_build_needs_a_cell():
    with pytest.raises(MeshError):
        build_triangulation([[0, 0]], np.zeros((0, 3), dtype=int))


def test_upsilon_cell_center_is_singular():
    T = generate_crisscross(2, singular_corners=False)
    center = T.n_vertices - 1
    assert np.allclose(upsilon(T, center), [np.pi] * 4, atol=1e-14)


def test_upsilon_plain_grid_vertex():
    T = generate_crisscross(2, singular_corners=False)
    mid = 4                       # grid point (0.5, 0.5)
    assert np.allclose(T.nodes[mid], [0.5, 0.5])
    ups = upsilon(T, mid)
    assert len(ups) == 8 and np.allclose(ups, np.pi / 2, atol=1e-14)


def test_upsilon_dead_corner_empty():
    T = generate_crisscross(4, singular_corners=True)
    assert upsilon(T, 0) == []


def test_classify_examples():
    T = generate_crisscross(2, singular_corners=False)
    cls = classify_vertices(T)
    assert cls[T.n_vertices - 1] is VertexClass.NEARLY_SINGULAR
    assert cls[4] is VertexClass.REGULAR
    T = generate_crisscross(8, singular_corners=True)
    cls = classify_vertices(T)
    assert cls[0] is VertexClass.DEAD_CORNER
    assert sum(c is VertexClass.DEAD_CORNER for c in cls) == 4


@pytest.mark.parametrize("theta", [0.0, -0.1, 1.0])
def test_classify_rejects_bad_theta(theta):
    with pytest.raises(ValueError):
        classify_vertices(generate_crisscross(2, False), theta)


def test_classification_is_deterministic():
    T = generate_crisscross(4, True)
    assert classify_vertices(T, 0.3) == classify_vertices(T, 0.3)


def test_class_invariants():
    T = generate_crisscross(6, True)
    theta = T.min_angle()
    for v, c in enumerate(classify_vertices(T)):
        patch = vertex_patch(T, v)
        assert (c is VertexClass.DEAD_CORNER) == (patch.J == 1) == (patch.n_interior_edges == 0)
        if c is VertexClass.NEARLY_SINGULAR:
            assert patch.J >= 2 and all(abs(s - np.pi) < theta for s in upsilon(T, v))


def test_validate_two_triangle_square_fails():
    T = build_triangulation(SQUARE, [(0, 1, 2), (0, 2, 3)])
    rep = validate(T, classify_vertices(T))
    assert rep.multi_corner_triangles == [0, 1] and not rep.ok


@pytest.mark.parametrize("n,sc", [(2, False), (8, True)])
def test_validate_passes(n, sc):
    T = generate_crisscross(n, sc)
    assert validate(T, classify_vertices(T)).ok


def test_validate_singular_corners_all_levels():
    for n in range(2, 65):
        T = generate_crisscross(n, True)
        rep = validate(T, classify_vertices(T))
        assert rep.ok, n


def test_vertex_patch_interior_five():
    # regular pentagon fan around the origin
    ang = 2 * np.pi * np.arange(5) / 5
    nodes = np.vstack([[0, 0], np.column_stack([np.cos(ang), np.sin(ang)])])
    T = build_triangulation(nodes, [(0, 1 + k, 1 + (k + 1) % 5) for k in range(5)])
    p = vertex_patch(T, 0)
    assert (p.J, p.n_interior_edges) == (5, 5)
    assert p.angles.sum() == pytest.approx(2 * np.pi, abs=1e-12)


def test_vertex_patch_boundary_three():
    nodes = [[0, 0], [1, 0], [1, 1], [0, 1], [-1, 0.5]]
    T = build_triangulation(nodes, [(0, 1, 2), (0, 2, 3), (0, 3, 4)])
    p = vertex_patch(T, 0)
    assert (p.J, p.n_interior_edges) == (3, 2)
    assert p.angles.sum() < 2 * np.pi
    # fan starts at a boundary edge
    assert T.edge_triangles[T.edge_id(0, int(p.ring[0])), 1] < 0


def test_vertex_patch_dead_corner():
    T = generate_crisscross(3, True)
    p = vertex_patch(T, 0)
    assert (p.J, p.n_interior_edges) == (1, 0)


def test_fans_close_and_tangents_unit():
    T = generate_crisscross(5, True)
    for v in range(T.n_vertices):
        p = vertex_patch(T, v)
        assert np.allclose(np.linalg.norm(p.tangents, axis=1), 1.0, atol=1e-15)
        for j in range(p.n_interior_edges):
            a, b = T.triangles[p.triangles[j]], T.triangles[p.triangles[(j + 1) % p.J]]
            assert {v, p.shared_vertex(j + 1)} <= set(a) & set(b)
        if p.interior:
            assert p.angles.sum() == pytest.approx(2 * np.pi, abs=1e-10)


@pytest.mark.parametrize("n", [2, 3, 8])
@pytest.mark.parametrize("sc", [True, False])
def test_crisscross_counts_and_euler(n, sc):
    T = generate_crisscross(n, sc)
    assert T.n_triangles == 4 * n * n
    assert T.n_vertices - len(T.edges) + T.n_triangles == 1
    assert np.all(T.areas > 0)
    assert np.all(T.corner <= T.boundary)


def test_crisscross_needs_two_cells():
    with pytest.raises(MeshError):
        generate_crisscross(1)


def test_mesh_file_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    T = generate_crisscross(3, True)
    nodes = T.nodes + 1e-3 * rng.standard_normal(T.nodes.shape) * ~T.boundary[:, None]
    T = build_triangulation(nodes, T.triangles)
    path = tmp_path / "m.txt"
    io.write_mesh(path, T)
    T2 = parse_mesh_spec(str(path))
    assert np.array_equal(T2.nodes, T.nodes)
    assert np.array_equal(T2.triangles, T.triangles)


def test_malformed_mesh_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3 1\n0 0\n1 0\n")
    with pytest.raises(MeshError):
        io.read_mesh(path)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 12), sc=st.booleans())
def test_generated_meshes_are_valid(n, sc):
    T = generate_crisscross(n, sc)
    cls = classify_vertices(T)
    assert validate(T, cls).ok
    assert sum(c is VertexClass.DEAD_CORNER for c in cls) == (4 if sc else 0)

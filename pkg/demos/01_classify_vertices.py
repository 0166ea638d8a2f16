"""Vertex classes on a crisscross mesh.

The two diagonals of every cell cross at its centre, so four triangles meet
there with opposite angles summing to pi: an exactly singular vertex, caught
by the nearly singular test. Grid vertices are regular. Re-cutting the four
corner cells of the square removes their singular centres and leaves each
corner of the square inside a single triangle (a dead corner).
"""

from collections import Counter

from stingstokes import classify_vertices, generate_crisscross, validate

for corners in (True, False):
    T = generate_crisscross(4, corners)
    classes = classify_vertices(T)
    counts = Counter(c.value for c in classes)
    label = "singular corners" if corners else "plain corners"
    print(f"n=4, {label}: {T.n_triangles} triangles, min angle {T.min_angle():.4f} rad")
    for name in ("regular", "nearly_singular_ordinary", "dead_corner"):
        print(f"  {name:26s} {counts.get(name, 0)}")
    report = validate(T, classes)
    print(f"  triangles touching two corners: {len(report.multi_corner_triangles)}")

import numpy as np
import pytest

from garmdyn.mesh import (
    GarmentTemplate,
    build_edges,
    load_obj_template,
    mesh_laplacian,
    save_obj_template,
    vertex_normals,
)


def test_laplacian_path_graph_hand_values():
    # 4 vertices on a line at 0, 1, 2, 4; chain one-ring
    p = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [4, 0, 0]], dtype=float)
    ring = [[1], [0, 2], [1, 3], [2]]
    # hand-evaluated centroid formula: v_i - mean(neighbors)
    expected = np.array([[-1, 0, 0], [0, 0, 0], [-0.5, 0, 0], [2, 0, 0]], dtype=float)
    np.testing.assert_allclose(mesh_laplacian(p, ring), expected)


def test_laplacian_centroid_vertex_zero():
    p = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]], dtype=float)
    ring = [[1, 2, 3, 4], [0], [0], [0], [0]]
    np.testing.assert_allclose(mesh_laplacian(p, ring)[0], np.zeros(3), atol=1e-15)


def test_laplacian_translation_invariance(skirt_template):
    rng = np.random.default_rng(0)
    p = skirt_template.vertices
    t = rng.normal(size=3)
    d0 = mesh_laplacian(p, skirt_template.one_ring)
    d1 = mesh_laplacian(p + t, skirt_template.one_ring)
    np.testing.assert_allclose(d0, d1, atol=1e-12)


def test_laplacian_linearity_and_constant_zero(skirt_template):
    rng = np.random.default_rng(1)
    ring = skirt_template.one_ring
    n = skirt_template.n_vertices
    p = rng.normal(size=(n, 3))
    q = rng.normal(size=(n, 3))
    a, b = 2.5, -1.25
    np.testing.assert_allclose(
        mesh_laplacian(a * p + b * q, ring),
        a * mesh_laplacian(p, ring) + b * mesh_laplacian(q, ring),
        atol=1e-12,
    )
    const = np.tile(rng.normal(size=3), (n, 1))
    np.testing.assert_allclose(mesh_laplacian(const, ring), 0.0, atol=1e-12)


def test_laplacian_rejects_isolated_vertex():
    p = np.zeros((2, 3))
    with pytest.raises(ValueError):
        mesh_laplacian(p, [[1], []])


def test_vertex_normals_planar_ccw():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    f = np.array([[0, 1, 2], [0, 2, 3]])
    np.testing.assert_allclose(vertex_normals(v, f), np.tile([0, 0, 1.0], (4, 1)), atol=1e-12)


def test_vertex_normals_cube_corner_hand_accumulation():
    # corner of a unit cube: three unit quads meeting at the origin vertex
    v = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [1, 0, 1], [0, 1, 1]],
        dtype=float,
    )
    f = np.array(
        [[0, 1, 4], [0, 4, 2],   # z=0 face, oriented toward +z
         [0, 2, 6], [0, 6, 3],   # x=0 face, oriented toward +x
         [0, 3, 5], [0, 5, 1]]   # y=0 face, oriented toward +y
    )
    # hand accumulation at vertex 0: the three unit-square faces contribute
    # equal-area normals +z, +x, +y, so the result is their normalized sum
    expect = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    np.testing.assert_allclose(vertex_normals(v, f)[0], expect, atol=1e-12)


def test_vertex_normals_mirror_flips():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(5, 3))
    f = np.array([[0, 1, 2], [2, 1, 3], [2, 3, 4]])
    n = vertex_normals(v, f)
    v_mirrored = v.copy()
    v_mirrored[:, 0] *= -1  # mirror then same face order flips orientation
    n_m = vertex_normals(v_mirrored, f)
    back = n_m.copy()
    back[:, 0] *= -1
    np.testing.assert_allclose(back, -n, atol=1e-12)


def test_template_rejects_isolated_vertex():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], dtype=float)
    f = np.array([[0, 1, 2]])
    uv = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0.5]])
    with pytest.raises(ValueError, match="isolated|connected"):
        GarmentTemplate(vertices=v, faces=f, uv_coords=uv)


def test_template_rejects_disconnected_pieces():
    v = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [3, 0, 0], [4, 0, 0], [3, 1, 0]], dtype=float
    )
    f = np.array([[0, 1, 2], [3, 4, 5]])
    uv = np.array([[0, 0], [0.4, 0], [0, 0.4], [0.6, 0.6], [1, 0.6], [0.6, 1]])
    with pytest.raises(ValueError, match="connected"):
        GarmentTemplate(vertices=v, faces=f, uv_coords=uv)


def test_edges_unique_and_symmetric(skirt_template):
    e = build_edges(skirt_template.faces)
    assert np.all(e[:, 0] < e[:, 1])
    assert len(np.unique(e, axis=0)) == len(e)
    # every face edge is present
    for a, b, c in skirt_template.faces[:20]:
        for pair in ((a, b), (b, c), (c, a)):
            lo, hi = min(pair), max(pair)
            assert ((e[:, 0] == lo) & (e[:, 1] == hi)).any()


def test_obj_round_trip(tmp_path, skirt_template):
    path = tmp_path / "template.obj"
    save_obj_template(skirt_template, path)
    loaded = load_obj_template(path)
    np.testing.assert_array_equal(loaded.vertices, skirt_template.vertices)
    np.testing.assert_array_equal(loaded.faces, skirt_template.faces)
    np.testing.assert_array_equal(loaded.uv_coords, skirt_template.uv_coords)

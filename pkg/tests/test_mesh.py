import math

import numpy as np
import pytest

from paultrap import mesh as msh


def test_sphere_area_and_normals():
    m = msh.uv_sphere((0, 0, 0), 1.0, n_theta=48, n_phi=96)
    assert m.areas().sum() == pytest.approx(4 * math.pi, rel=2e-3)
    outward = np.einsum("ij,ij->i", m.normals(), m.centroids())
    assert np.all(outward > 0)


def test_box_is_closed_and_oriented():
    m = msh.box((0.1, -0.2, 0.3), (1.0, 2.0, 3.0))
    assert not msh.validate_mesh(m)
    assert m.areas().sum() == pytest.approx(2 * (2 + 3 + 6), rel=1e-12)
    # winding number: 4pi inside, 0 outside
    w = msh.solid_angles(m, [[0.1, -0.2, 0.3], [5.0, 0.0, 0.0]])
    assert w[0] == pytest.approx(4 * math.pi, rel=1e-9)
    assert w[1] == pytest.approx(0.0, abs=1e-9)


def test_ray_hits_sphere():
    m = msh.uv_sphere((0, 0, 0), 1.0, n_theta=64, n_phi=128)
    d = msh.ray_hits(m, [[5.0, 0.0, 0.0]], [[-1.0, 0.0, 0.0]])
    assert d[0] == pytest.approx(4.0, abs=2e-3)
    d = msh.ray_hits(m, [[5.0, 0.0, 0.0]], [[1.0, 0.0, 0.0]])
    assert np.isinf(d[0])


def test_disk_annulus_area():
    m = msh.disk((0, 0, 1), (0, 0, 1), 2.0, n_r=16, n_phi=96,
                 inner_radius=1.0)
    assert m.areas().sum() == pytest.approx(3 * math.pi, rel=2e-3)


def test_extrude_polygon_prism():
    square = [[0, 0], [1, 0], [1, 1], [0, 1]]
    m = msh.extrude_polygon(square, [0.0, 0.5, 1.0])
    assert not msh.validate_mesh(m)
    assert m.areas().sum() == pytest.approx(6.0, rel=1e-12)


def test_weld_merges_duplicate_vertices():
    a = msh.rectangle_plate((0, 0, 0), (0, 0, 1), (1, 0, 0), 1, 1, 2, 2)
    b = msh.rectangle_plate((1, 0, 0), (0, 0, 1), (1, 0, 0), 1, 1, 2, 2)
    merged = msh.weld(msh.merge([a, b]))
    assert len(merged.vertices) == 2 * 9 - 3


def test_stl_roundtrip(tmp_path):
    m = msh.box((0, 0, 0), (1, 1, 1))
    path = tmp_path / "box.stl"
    msh.write_stl(m, path)
    back = msh.read_stl(path)
    assert back.n_triangles == m.n_triangles
    assert back.areas().sum() == pytest.approx(m.areas().sum(), rel=1e-6)


def test_json_roundtrip(tmp_path):
    m = msh.uv_sphere((0, 0, 0), 0.5, n_theta=8, n_phi=16)
    path = tmp_path / "m.json"
    msh.write_mesh_json(m, path)
    back = msh.read_mesh_json(path)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.triangles, m.triangles)


def test_point_triangle_distance():
    m = msh.rectangle_plate((0, 0, 0), (0, 0, 1), (1, 0, 0), 2, 2, 1, 1)
    d = msh.point_triangle_distance(np.array([[0.0, 0.0, 0.5],
                                              [3.0, 0.0, 0.0]]), m)
    assert d[0] == pytest.approx(0.5, abs=1e-12)
    assert d[1] == pytest.approx(2.0, abs=1e-12)

import dataclasses
import math

import numpy as np
import pytest

from paultrap import geometry as geo
from paultrap import mesh as msh


def test_default_params_valid_and_roundtrip(tmp_path, default_params):
    p = default_params
    p.validate()
    assert p.r0 == pytest.approx(177e-6, abs=1e-9)
    path = tmp_path / "trap.json"
    p.save(path)
    assert geo.ParametricTrapParams.load(path) == p


def test_param_validation_rejects_bad_values(default_params):
    with pytest.raises(geo.InvalidParameterError):
        dataclasses.replace(default_params, blade_separation=-1.0).validate()
    with pytest.raises(geo.InvalidParameterError):
        # resolution too coarse to resolve the blade tip facet
        dataclasses.replace(default_params,
                            mesh_resolution=5e-5).validate()


def test_build_scaling_scales_r0(default_params):
    trap = geo.build_linear_trap(default_params)
    scaled = geo.build_linear_trap(default_params.scaled(2.0))
    r1 = trap.characteristic_radius()
    r2 = scaled.characteristic_radius()
    assert r2 == pytest.approx(2.0 * r1, rel=1e-9)
    assert r1 == pytest.approx(default_params.r0, rel=1e-6)


def test_build_symmetry_and_meshes(default_trap):
    names = set(default_trap.names)
    assert {"rf_a", "rf_b", "rfgnd_a", "rfgnd_b", "ground"} <= names
    assert sum(1 for n in names if n.startswith("endcap")) == 4
    for e in default_trap.electrodes:
        assert not msh.validate_mesh(e.mesh), e.name
    # rf blades are point images of each other through the origin
    a = default_trap.electrode("rf_a").mesh
    b = default_trap.electrode("rf_b").mesh
    assert np.allclose(np.sort(np.abs(a.vertices), axis=0),
                       np.sort(np.abs(b.vertices), axis=0), atol=1e-12)


def test_numerical_aperture_empty_geometry():
    assert geo.numerical_aperture([], (0, 0, 0), (0, 1, 0)) == 1.0


def test_numerical_aperture_monotone_with_occluders():
    plate = msh.rectangle_plate((0, 0.01, 0), (0, 1, 0), (1, 0, 0),
                                0.004, 0.004, 4, 4)
    base = geo.numerical_aperture([plate], (0, 0, 0), (0, 1, 0))
    second = msh.rectangle_plate((0.003, 0.008, 0), (0, 1, 0), (1, 0, 0),
                                 0.006, 0.006, 4, 4)
    both = geo.numerical_aperture([plate, second], (0, 0, 0), (0, 1, 0))
    assert both <= base + 1e-12
    assert 0.0 < base < 1.0


def test_numerical_aperture_circular_stop_analytic():
    # viewport-limited case: sin(atan(r/d)) chosen to give exactly 0.18
    d = 0.1
    r = d * math.tan(math.asin(0.18))
    stop = geo.CircularStop((0, d, 0), (0, 1, 0), r)
    na = geo.numerical_aperture([], (0, 0, 0), (0, 1, 0), stops=(stop,))
    assert na == pytest.approx(0.18, abs=2e-3)


def test_numerical_aperture_seed_stability():
    plate = msh.rectangle_plate((0, 0.02, 0), (0, 1, 0), (1, 0, 0),
                                0.02, 0.02, 4, 4)
    values = [geo.numerical_aperture([plate], (0, 0, 0), (0, 1, 0), seed=s)
              for s in (1, 2, 3)]
    assert max(values) - min(values) <= 0.01


def test_origin_inside_electrode_rejected():
    box = msh.box((0, 0, 0), (1, 1, 1))
    with pytest.raises(geo.GeometryError):
        geo.numerical_aperture([box], (0, 0, 0), (0, 0, 1))


def test_overetch_offset_sphere():
    m = msh.uv_sphere((0, 0, 0), 100e-6, n_theta=32, n_phi=64)
    out = geo.apply_overetch_offset(m, lambda depth: 1e-6)
    radii = np.linalg.norm(out.vertices, axis=1)
    assert np.all(np.abs(radii - 101e-6) < 1e-8)
    # zero model is the identity
    same = geo.apply_overetch_offset(m, lambda depth: 0.0)
    np.testing.assert_allclose(same.vertices, m.vertices, atol=0)


def test_overetch_linear_in_depth_tilts_wall():
    # vertical wall at x=0 spanning 100 um below the substrate surface z=0
    slope = 0.02
    wall = msh.rectangle_plate((0, 0, -50e-6), (1, 0, 0), (0, 1, 0),
                               100e-6, 100e-6, 4, 4)
    out = geo.apply_overetch_offset(wall, lambda depth: slope * depth)
    np.testing.assert_allclose(out.vertices[:, 0],
                               slope * (-wall.vertices[:, 2]), atol=1e-15)


def test_overetch_rejects_negative_model():
    m = msh.uv_sphere((0, 0, 0), 100e-6, n_theta=8, n_phi=16)
    with pytest.raises(geo.GeometryError):
        geo.apply_overetch_offset(m, lambda depth: -1e-6)

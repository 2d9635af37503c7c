import math

import numpy as np
import pytest

from paultrap import analysis
from paultrap.constants import ELEMENTARY_CHARGE

TWO_PI = 2 * math.pi


def test_drive_config_roundtrip(tmp_path, table1_drive):
    path = tmp_path / "drive.json"
    table1_drive.save(path)
    back = analysis.DriveConfig.load(path)
    assert back.omega_rf == pytest.approx(table1_drive.omega_rf)
    assert back.u_rf == pytest.approx(table1_drive.u_rf)
    assert back.dc_voltages == table1_drive.dc_voltages
    assert back.species.mass == pytest.approx(table1_drive.species.mass)


def test_table1_secular_frequencies(table1_characterization):
    char = table1_characterization
    f = char.secular_frequencies / TWO_PI
    ax = char.axial_index
    ra, rb = char.radial_indices
    # frozen regression values for the default trap mesh
    assert f[ax] == pytest.approx(315.79e3, rel=2e-3)
    assert sorted((f[ra], f[rb])) == pytest.approx([1.9845e6, 1.9878e6],
                                                   rel=2e-3)
    # design targets: 2pi x 311 kHz axial, 2pi x 1.97 MHz radial
    assert f[ax] == pytest.approx(311e3, rel=0.05)
    assert f[ra] == pytest.approx(1.97e6, rel=0.05)
    assert f[rb] == pytest.approx(1.97e6, rel=0.05)
    # radial splitting below 1 %
    assert abs(f[ra] - f[rb]) / max(f[ra], f[rb]) < 0.01


def test_table1_mathieu_parameters(table1_characterization):
    char = table1_characterization
    ra, rb = char.radial_indices
    q_rad = sorted(char.mathieu_q[[ra, rb]])
    assert q_rad[0] == pytest.approx(-0.357, abs=2e-3)
    assert q_rad[1] == pytest.approx(0.358, abs=2e-3)
    assert char.mathieu_a[char.axial_index] == pytest.approx(1.594e-3,
                                                             rel=5e-3)
    assert bool(np.all(char.stable))


def test_table1_trap_depth(table1_characterization):
    assert table1_characterization.depth_ev == pytest.approx(0.458, rel=5e-3)
    assert table1_characterization.depth_ev == pytest.approx(0.48, rel=0.10)
    assert table1_characterization.saddle is not None


def test_rf_null_near_origin(table1_characterization):
    # symmetric trap: null on the z axis, near the geometric center
    null = table1_characterization.rf_null
    assert np.all(np.abs(null[:2]) < 2e-6)
    assert abs(null[2]) < 5e-6


def test_principal_axes_orthonormal(table1_characterization):
    A = table1_characterization.axes
    np.testing.assert_allclose(A @ A.T, np.eye(3), atol=1e-9)
    # the axial principal axis is along z
    assert abs(A[table1_characterization.axial_index, 2]) > 0.999


def test_pseudopotential_quadratic_near_null(default_fields, table1_drive,
                                             table1_characterization):
    # along each principal axis, psi(x) - psi(0) ~ (m/2) w^2 x^2 / e
    char = table1_characterization
    m = table1_drive.species.mass
    phi0 = analysis.pseudopotential(default_fields, table1_drive,
                                    char.rf_null[None, :])[0]
    for i in range(3):
        w = char.secular_frequencies[i]
        d = char.axes[i]
        s = 2e-6
        # average +s and -s to cancel the linear dc term (the dc minimum
        # sits a few microns from the rf null)
        pts = np.vstack([char.rf_null + s * d, char.rf_null - s * d])
        dv = analysis.pseudopotential(default_fields, table1_drive,
                                      pts).mean() - phi0
        expect = 0.5 * m * w ** 2 * s ** 2 / ELEMENTARY_CHARGE
        assert dv == pytest.approx(expect, rel=0.05)


def test_pseudopotential_scales_with_urf_squared(default_fields, table1_drive):
    import dataclasses
    p = np.array([[1e-5, 0.0, 0.0]])
    no_dc = dataclasses.replace(table1_drive, dc_voltages={})
    fields = analysis.TrapFields(default_fields._fs, no_dc)
    base = analysis.pseudopotential(fields, no_dc, p)[0]
    half = dataclasses.replace(no_dc, u_rf=15.0)
    fields_half = analysis.TrapFields(default_fields._fs, half)
    v = analysis.pseudopotential(fields_half, half, p)[0]
    assert v == pytest.approx(base / 4, rel=1e-9)


def test_stability_check_known_points():
    assert analysis.stability_check(0.2, 0.0)
    assert analysis.stability_check(-0.2, 0.0)
    assert analysis.stability_check(0.5, 0.01)
    assert not analysis.stability_check(1.0, 0.0)
    # negative a with small q: exponential runaway along that axis
    assert not analysis.stability_check(0.2, -0.5)


def test_stability_boundary_first_region():
    # a = 0 boundary of the first Mathieu stability region
    q_star = analysis.stability_boundary(a=0.0)
    assert 0.90 <= q_star <= 0.92


def test_find_rf_null_reports_nonconvergence(default_fields, table1_drive):
    with pytest.raises(analysis.NullNotFoundError):
        analysis.find_rf_null(default_fields, table1_drive,
                              np.array([2e-5, -1.5e-5, 1e-5]), max_iter=1)


def test_grid_fields_consistent_with_bem(default_fields, grid_fields,
                                         table1_drive):
    pts = np.array([[5e-6, -7e-6, 1.2e-5], [0.0, 1.5e-5, -2e-5]])
    np.testing.assert_allclose(grid_fields.rf_field(pts),
                               default_fields.rf_field(pts), rtol=2e-3,
                               atol=1.0)
    np.testing.assert_allclose(grid_fields.dc_potential(pts),
                               default_fields.dc_potential(pts), rtol=2e-3,
                               atol=1e-4)

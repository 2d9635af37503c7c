import math

import numpy as np
import pytest

from paultrap import analysis
from paultrap import dynamics as dyn

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def center_trajectory(grid_fields, table1_drive):
    # 200 us from a small diagonal displacement excites all three modes
    start = dyn.IonState(np.array([3e-6, 3e-6, 1e-5]), np.zeros(3))
    return dyn.integrate(grid_fields, table1_drive, start, 200e-6)


def test_motion_stays_bounded(center_trajectory):
    r = np.linalg.norm(center_trajectory.positions, axis=1)
    assert r.max() < 3e-5


def test_secular_frequencies_match_characterization(center_trajectory,
                                                    table1_characterization):
    # the pseudopotential curvature underestimates the exact Mathieu
    # frequency by ~q^2/8 (about 1.6 % at q = 0.36), so the radial modes
    # get a looser tolerance than the nearly-harmonic axial mode
    char = table1_characterization
    for i in range(3):
        w_fft = dyn.secular_frequency(center_trajectory, char.axes[i])
        rel = 0.01 if i == char.axial_index else 0.04
        assert w_fft == pytest.approx(char.secular_frequencies[i], rel=rel)


def test_spectrum_micromotion_sidebands(center_trajectory, table1_drive,
                                        table1_characterization):
    char = table1_characterization
    i = char.radial_indices[0]
    freqs, amps = dyn.secular_spectrum(center_trajectory, char.axes[i])
    w_sec = freqs[0]
    # the dominant peak is the secular line ...
    assert w_sec == pytest.approx(char.secular_frequencies[i], rel=0.04)
    # ... and a drive-frequency sideband at Omega - w_sec is present
    target = table1_drive.omega_rf - w_sec
    assert np.any(np.abs(freqs - target) < 0.02 * target)


def test_time_reversal(grid_fields, table1_drive):
    start = dyn.IonState(np.array([2e-6, -3e-6, 5e-6]), np.zeros(3))
    fwd = dyn.integrate(grid_fields, table1_drive, start, 20e-6)
    back = dyn.integrate(grid_fields, table1_drive, fwd.final_state,
                         -20e-6)
    np.testing.assert_allclose(back.final_state.position, start.position,
                               atol=1e-10)
    np.testing.assert_allclose(back.final_state.velocity, start.velocity,
                               atol=1e-4)


def test_dt_validation(grid_fields, table1_drive):
    start = dyn.IonState(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        dyn.integrate(grid_fields, table1_drive, start, 1e-6,
                      dt=1e-6)  # far fewer than 40 samples per rf cycle
    with pytest.raises(ValueError):
        dyn.integrate(grid_fields, table1_drive, start, 1e-6, dt=-1e-9)


def test_escape_detection(grid_fields, table1_drive):
    # enough radial kinetic energy to leave the cached region
    start = dyn.IonState(np.zeros(3), np.array([800.0, 0.0, 0.0]))
    with pytest.raises(dyn.IonEscapedError):
        dyn.integrate(grid_fields, table1_drive, start, 50e-6)


def test_trajectory_binary_roundtrip(tmp_path, center_trajectory):
    path = tmp_path / "traj.bin"
    center_trajectory.save(path)
    with open(path, "rb") as f:
        assert f.read(4) == b"PTTJ"
    back = dyn.Trajectory.load(path)
    np.testing.assert_array_equal(back.times, center_trajectory.times)
    np.testing.assert_array_equal(back.positions,
                                  center_trajectory.positions)
    np.testing.assert_array_equal(back.velocities,
                                  center_trajectory.velocities)
    assert back.omega_rf == center_trajectory.omega_rf


def test_trajectory_csv_export(tmp_path, center_trajectory):
    path = tmp_path / "traj.csv"
    center_trajectory.to_csv(path)
    with open(path) as f:
        header = f.readline().strip()
    assert header == "t_s,x_m,y_m,z_m,vx_m_per_s,vy_m_per_s,vz_m_per_s"
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(center_trajectory.times), 7)
    np.testing.assert_allclose(data[:, 1:4], center_trajectory.positions,
                               rtol=1e-6, atol=1e-18)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(dyn.DynamicsError):
        dyn.Trajectory.load(path)


def test_secular_equilibrium_matches_minimum(grid_fields, table1_drive,
                                             table1_characterization):
    eq = dyn.secular_equilibrium(grid_fields, table1_drive, np.zeros(3))
    # within a couple of microns of the rf null (dc shifts it slightly)
    assert np.linalg.norm(eq - table1_characterization.rf_null) < 1e-5


def test_micromotion_grows_with_dc_offset(grid_fields, table1_drive):
    base = dyn.micromotion_amplitude(grid_fields, table1_drive, cycles=200)
    pushed = dyn.micromotion_amplitude(
        grid_fields, table1_drive, dc_offsets={"rfgnd_a": 0.5}, cycles=200)
    assert np.max(pushed) > 3 * max(np.max(base), 1e-10)

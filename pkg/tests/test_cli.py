import json
import math

import numpy as np
import pytest

from paultrap import cli
from paultrap import evaporation as ev
from paultrap import fitting as ft
from paultrap import geometry as geo
from paultrap import mesh as msh

OMEGA_RF = 2 * math.pi * 15.82e6
Q_PER_VOLT = 0.357 / 30.0
A_PER_VOLT = 1.594e-3 / 60.0


def _write_sim(path):
    sim = {"q_per_volt": [0.0, -Q_PER_VOLT, Q_PER_VOLT],
           "a_per_volt": [A_PER_VOLT, -A_PER_VOLT / 2, -A_PER_VOLT / 2],
           "omega_rf_rad_per_s": OMEGA_RF}
    path.write_text(json.dumps(sim))


def _write_radial_csv(path, eta=0.95, b=2e-4, amplification=20.36):
    u = np.linspace(0.5, 2.0, 9)
    q = Q_PER_VOLT * amplification * u
    w = ft.radial_model(eta, b, q, -A_PER_VOLT / 2 * 60.0, OMEGA_RF)
    with open(path, "w") as f:
        f.write("voltage_V, omega_Hz, sigma_Hz\n")
        for ui, wi in zip(u, w):
            f.write(f"{ui:.17g}, {wi / (2 * math.pi):.17g}, 500\n")


def _write_axial_csv(path, eta=0.92, b=1e-5):
    u = np.linspace(20.0, 80.0, 7)
    w = np.sqrt(OMEGA_RF ** 2 / 4.0 * (eta * A_PER_VOLT * u + b))
    with open(path, "w") as f:
        f.write("voltage_V, omega_Hz, sigma_Hz\n")
        for ui, wi in zip(u, w):
            f.write(f"{ui:.17g}, {wi / (2 * math.pi):.17g}, 200\n")


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--version"])
    assert e.value.code == 0


def test_geometry_command(tmp_path, default_params, capsys):
    params = tmp_path / "trap.json"
    default_params.save(params)
    report = tmp_path / "geometry.json"
    stl = tmp_path / "trap.stl"
    rc = cli.main(["geometry", "--params", str(params),
                   "--report", str(report), "--stl", str(stl),
                   "--na-axes", "y"])
    assert rc == 0
    with open(report) as f:
        d = json.load(f)
    assert d["r0_m"] == pytest.approx(177e-6, abs=1e-9)
    assert d["numerical_aperture"]["y"] == pytest.approx(0.665, abs=0.03)
    assert "timestamp" not in json.dumps(d)
    assert msh.read_stl(stl).n_triangles == d["n_triangles"]


def test_geometry_missing_params(tmp_path, capsys):
    rc = cli.main(["geometry", "--params", str(tmp_path / "nope.json"),
                   "--report", str(tmp_path / "r.json")])
    assert rc == 3


def test_fit_command_deterministic(tmp_path, capsys):
    sim = tmp_path / "sim.json"
    _write_sim(sim)
    radial = tmp_path / "radial.csv"
    _write_radial_csv(radial)
    axial = tmp_path / "axial.csv"
    _write_axial_csv(axial)
    resonator = tmp_path / "res.json"
    resonator.write_text(json.dumps(
        {"q_factor": 82.91, "q_sigma": 0.83, "resistance_ohm": 5.0,
         "resistance_sigma_ohm": 2.0, "power_W": 0.10389,
         "power_sigma_W": 0.0, "u_in_V": 1.0, "u_in_sigma_V": 0.0}))
    report = tmp_path / "fit.json"
    argv = ["fit", "--sim", str(sim), "--radial-csv", str(radial),
            "--radial-axes", "2", "--axial-csv", str(axial),
            "--resonator", str(resonator), "--report", str(report)]
    assert cli.main(argv) == 0
    first = report.read_bytes()
    with open(report) as f:
        d = json.load(f)
    assert d["resonator"]["kappa"] == pytest.approx(math.sqrt(82.91 * 5.0))
    # P chosen so A = Q sqrt(2 P R) = 84.5 -> eta recovered with that A
    A = d["resonator"]["amplification"]
    assert d["fits"]["radial_2"]["eta"] == pytest.approx(
        0.95 * 20.36 / A, rel=1e-6)
    assert d["fits"]["axial"]["eta"] == pytest.approx(0.92, rel=1e-9)
    assert "timestamp" not in json.dumps(d)
    # byte-identical on re-run
    assert cli.main(argv) == 0
    assert report.read_bytes() == first


def test_fit_radial_without_amplification(tmp_path, capsys):
    sim = tmp_path / "sim.json"
    _write_sim(sim)
    radial = tmp_path / "radial.csv"
    _write_radial_csv(radial)
    rc = cli.main(["fit", "--sim", str(sim), "--radial-csv", str(radial),
                   "--radial-axes", "2",
                   "--report", str(tmp_path / "fit.json")])
    assert rc == 1


def test_evaporate_command(tmp_path, capsys):
    mesh, pads = ev.trench_test_geometry(serifs=True)
    mesh_path = tmp_path / "trench.json"
    msh.write_mesh_json(mesh, mesh_path)
    pads_path = tmp_path / "pads.json"
    pads_path.write_text(json.dumps({k: np.asarray(v).tolist()
                                     for k, v in pads.items()}))
    out = tmp_path / "coverage.csv"
    summary = tmp_path / "summary.json"
    rc = cli.main(["evaporate", "--geometry", str(mesh_path),
                   "--tilt-deg", "60", "--samples", "180",
                   "--out", str(out), "--summary", str(summary),
                   "--pads", str(pads_path)])
    assert rc == 0
    with open(summary) as f:
        d = json.load(f)
    assert d["isolation"]["isolated"] is True
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "triangle,thickness_m"
    assert len(lines) == mesh.n_triangles + 1


def test_plotdata_omega_vs_urf(tmp_path, capsys):
    report = tmp_path / "analyze.json"
    report.write_text(json.dumps({
        "characterization": {"mathieu_q": [0.0, -0.357, 0.358],
                             "mathieu_a": [1.594e-3, -8e-4, -8e-4]},
        "drive": {"u_rf": {"value": 30.0, "unit": "V"},
                  "omega_rf": {"value": 15.82e6, "unit": "Hz"}}}))
    rc = cli.main(["plotdata", "--kind", "omega_vs_urf",
                   "--report", str(report), "--outdir", str(tmp_path)])
    assert rc == 0
    files = list(tmp_path.glob("omega_vs_urf*.csv"))
    assert len(files) == 1
    data = np.loadtxt(files[0], delimiter=",", skiprows=1)
    assert data.shape == (51, 4)
    # omega_y at the nominal voltage reproduces the Mathieu estimate
    i = np.argmin(np.abs(data[:, 0] - 30.0))
    expect = math.sqrt((2 * math.pi * 15.82e6) ** 2 / 4.0
                       * (0.357 ** 2 / 2.0 - 8e-4)) / (2 * math.pi)
    assert data[i, 2] == pytest.approx(expect, rel=1e-6)


def test_pipeline_missing_input(tmp_path, capsys):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps(
        {"paths": {"sim_coefficients": str(tmp_path / "nope.json")},
         "options": {}}))
    rc = cli.main(["pipeline", "--manifest", str(manifest),
                   "--stages", "fit"])
    assert rc == 3


def test_pipeline_unknown_stage(tmp_path, capsys):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"paths": {}, "options": {}}))
    rc = cli.main(["pipeline", "--manifest", str(manifest),
                   "--stages", "frobnicate"])
    assert rc == 1


def test_pipeline_stale_cache(tmp_path, default_params, capsys):
    params = tmp_path / "trap.json"
    default_params.save(params)
    drive = tmp_path / "drive.json"
    drive.write_text(json.dumps({
        "omega_rf": {"value": 15.82e6, "unit": "Hz"},
        "u_rf": {"value": 30.0, "unit": "V"},
        "dc_voltages": {"endcap_1": 60.0}, "species": "ca40"}))
    cache = tmp_path / "cache.bin"
    cache.write_bytes(b"placeholder")
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({
        "paths": {"geometry_config": str(params),
                  "drive_config": str(drive),
                  "field_cache": str(cache),
                  "analyze_report": str(tmp_path / "analyze.json")},
        "options": {},
        # hash recorded by a previous solve run, before the geometry edit
        "hashes": {"geometry_config": "0" * 64}}))
    rc = cli.main(["pipeline", "--manifest", str(manifest),
                   "--stages", "analyze"])
    assert rc == 4
    assert not (tmp_path / "analyze.json").exists()

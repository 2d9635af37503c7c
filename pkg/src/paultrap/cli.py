"""Command-line pipeline: geometry -> solve -> analyze -> dynamics ->
compensate -> fit -> evaporate, with cached field grids and deterministic
JSON/CSV reports.

Reports carry no wall-clock timestamps; run history (with timestamps) lives
only in the project manifest, so re-running a stage with unchanged inputs
reproduces its reports byte for byte. All report files end in a trailing
newline and use sorted JSON keys.

Relative cache paths resolve against $PAULTRAP_CACHE_DIR when set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import analysis
from . import compensation as comp
from . import dynamics as dyn
from . import evaporation as ev
from . import fieldsolver as fs
from . import fitting as ft
from . import geometry as geo
from . import gridcache as gc
from . import mesh as msh

CACHE_DIR_ENV = "PAULTRAP_CACHE_DIR"
DEFAULT_SEED = 12345
STAGES = ("geometry", "solve", "analyze", "dynamics", "compensate",
          "fit", "evaporate")


class CliError(Exception):
    exit_code = 1


class MissingInputError(CliError):
    exit_code = 3


class StaleCacheError(CliError):
    exit_code = 4


def _cache_path(path):
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(os.environ.get(CACHE_DIR_ENV, "."), path)


def _require(path, what):
    if path is None:
        raise MissingInputError(f"{what} not configured")
    if not os.path.exists(path):
        raise MissingInputError(f"{what} not found: {path}")
    return path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def write_report(path, payload: dict, inputs: dict | None = None):
    """Deterministic JSON report; metadata holds version and input hashes."""
    payload = dict(payload)
    payload["metadata"] = {
        "tool_version": __version__,
        "input_sha256": {k: _sha256(v) for k, v in sorted(
            (inputs or {}).items()) if v and os.path.exists(v)},
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")


def _load_json(path, what):
    with open(_require(path, what)) as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ProjectManifest:
    path: str
    version: str = __version__
    seed: int = DEFAULT_SEED
    paths: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)   # per-stage settings
    hashes: dict = field(default_factory=dict)    # recorded input hashes
    history: dict = field(default_factory=dict)   # stage -> last-run UTC

    @classmethod
    def load(cls, path) -> "ProjectManifest":
        d = _load_json(path, "manifest")
        return cls(path=path, version=d.get("version", __version__),
                   seed=int(d.get("seed", DEFAULT_SEED)),
                   paths=d.get("paths", {}), options=d.get("options", {}),
                   hashes=d.get("hashes", {}), history=d.get("history", {}))

    def save(self):
        d = {"version": self.version, "seed": self.seed, "paths": self.paths,
             "options": self.options, "hashes": self.hashes,
             "history": self.history}
        with open(self.path, "w") as f:
            json.dump(d, f, indent=2, sort_keys=True)
            f.write("\n")

    def resolve(self, key, what=None):
        p = self.paths.get(key)
        if key in ("field_cache",):
            p = _cache_path(p)
        if what is not None:
            _require(p, what)
        return p

    def record(self, stage, input_keys):
        for key in input_keys:
            p = self.resolve(key)
            if p and os.path.exists(p):
                self.hashes[key] = _sha256(p)
        self.history[stage] = datetime.now(timezone.utc).isoformat()
        self.save()

    def check_fresh(self, key, consumer_stage):
        """The recorded hash (from the producing stage) must still match."""
        p = self.resolve(key)
        if p is None or not os.path.exists(p):
            return
        recorded = self.hashes.get(key)
        if recorded is not None and recorded != _sha256(p):
            raise StaleCacheError(
                f"stage '{consumer_stage}': {key} ({p}) changed since the "
                f"cache was produced; re-run 'solve'")


# ---------------------------------------------------------------------------
# shared loading helpers

def _load_params(path) -> geo.ParametricTrapParams:
    return geo.ParametricTrapParams.load(_require(path, "geometry config"))


def _load_drive(path) -> analysis.DriveConfig:
    return analysis.DriveConfig.load(_require(path, "drive config"))


def _trap_fields_from_cache(cache_path, params_path, drive_path):
    grid = gc.read_grid(_require(_cache_path(cache_path), "field cache"))
    params = _load_params(params_path)
    drive = _load_drive(drive_path)
    system = fs.assemble(geo.build_linear_trap(params))
    fields = analysis.TrapFields(grid, drive, system=system)
    return fields, drive, params, grid


def _default_region(params):
    r0 = params.r0
    lo = np.array([-0.55 * r0, -0.55 * r0, -0.9 * r0])
    return lo, -lo


# ---------------------------------------------------------------------------
# subcommands

def cmd_geometry(args) -> int:
    params = _load_params(args.params)
    trap = geo.build_linear_trap(params)
    report = {
        "r0_m": params.r0,
        "n_triangles": trap.total_triangles(),
        "electrodes": {e.name: {"role": e.role.name.lower(),
                                "n_triangles": e.mesh.n_triangles}
                       for e in trap.electrodes},
    }
    if args.na_axes:
        na = {}
        for label in args.na_axes.split(","):
            axis = {"x": (1, 0, 0), "y": (0, 1, 0), "z": (0, 0, 1)}[label]
            na[label] = geo.numerical_aperture(trap, (0, 0, 0), axis,
                                               seed=args.seed)
        report["numerical_aperture"] = na
    if args.stl:
        msh.write_stl(trap.merged_mesh(), args.stl)
    write_report(args.report, report, {"geometry_config": args.params})
    print(f"geometry: {trap.total_triangles()} triangles, "
          f"r0 = {params.r0 * 1e6:.1f} um")
    return 0


def cmd_solve(args) -> int:
    params = _load_params(args.geometry)
    if args.resolution is not None:
        import dataclasses
        params = dataclasses.replace(params, mesh_resolution=args.resolution)
        params.validate()
    trap = geo.build_linear_trap(params)
    system = fs.assemble(trap)
    fieldset = fs.solve_all(system)
    if args.region is not None:
        vals = [float(v) for v in args.region.split(",")]
        if len(vals) != 6:
            raise CliError("--region wants x0,y0,z0,x1,y1,z1 in meters")
        region = (np.array(vals[:3]), np.array(vals[3:]))
    else:
        region = _default_region(params)
    spacing = args.spacing if args.spacing is not None else params.r0 / 40.0
    grid = gc.cache_grid(fieldset, region, spacing, geometry=trap)
    out = _cache_path(args.out)
    gc.write_grid(grid, out)
    print(f"solve: {system.n_panels} panels, grid {grid.shape} -> {out}")
    return 0


def cmd_analyze(args) -> int:
    fields, drive, params, grid = _trap_fields_from_cache(
        args.cache, args.geometry, args.drive)
    char = analysis.characterize(fields, drive, params.r0,
                                 with_depth=args.depth)
    report = {"drive": drive.to_dict(),
              "characterization": char.to_dict(),
              "r0_m": params.r0}
    write_report(args.report, report,
                 {"geometry_config": args.geometry, "drive_config": args.drive,
                  "field_cache": _cache_path(args.cache)})
    f_hz = char.secular_frequencies / (2 * math.pi)
    print("analyze: secular frequencies "
          + ", ".join(f"{v / 1e6:.4f} MHz" for v in f_hz))
    return 0


def cmd_dynamics(args) -> int:
    fields, drive, params, grid = _trap_fields_from_cache(
        args.cache, args.geometry, args.drive)
    start = np.array([float(v) for v in args.start.split(",")])
    if len(start) != 3:
        raise CliError("--start wants x,y,z in meters")
    duration = args.cycles * 2 * math.pi / drive.omega_rf
    traj = dyn.integrate(fields, drive, dyn.IonState(start, np.zeros(3)),
                         duration)
    traj.to_csv(args.out)
    freqs = {}
    for k, label in enumerate("xyz"):
        axis = np.zeros(3)
        axis[k] = 1.0
        try:
            freqs[label] = dyn.secular_frequency(traj, axis) / (2 * math.pi)
        except dyn.DynamicsError:
            freqs[label] = None
    if args.report:
        write_report(args.report,
                     {"secular_frequencies_Hz": freqs,
                      "n_samples": len(traj.times),
                      "duration_s": duration},
                     {"field_cache": _cache_path(args.cache),
                      "drive_config": args.drive})
    print(f"dynamics: {len(traj.times)} samples -> {args.out}")
    return 0


def cmd_compensate(args) -> int:
    params = _load_params(args.geometry)
    drive = _load_drive(args.drive)
    patches = comp.load_patches(args.patches)
    trap = geo.build_linear_trap(params)
    if args.substrates:
        trap = comp.with_cavity_substrates(trap)
    names = [e.name for e in trap.electrodes
             if not e.name.startswith("substrate")]
    system = fs.assemble(trap)
    fieldset = fs.solve_all(system, electrodes=names, keep_operator=True)
    fields = analysis.TrapFields(fieldset, drive)
    solution = comp.compensate(fields, drive, patches, r0=params.r0)
    report = solution.to_dict()
    write_report(args.report, report,
                 {"geometry_config": args.geometry,
                  "drive_config": args.drive, "patches": args.patches})
    worst = max(abs(v) for v in solution.offsets.values()) \
        if solution.offsets else 0.0
    print(f"compensate: max offset {worst:.3f} V -> {args.report}")
    return 0


def cmd_fit(args) -> int:
    sim_d = _load_json(args.sim, "simulated coefficients")
    sim = ft.SimulatedCoefficients.from_dict(sim_d)
    omega_rf = float(sim_d["omega_rf_rad_per_s"])
    report = {"fits": {}}
    amplification = args.amplification
    if args.resonator:
        r = _load_json(args.resonator, "resonator parameters")
        rp = ft.ResonatorParams(
            r["q_factor"], r.get("q_sigma", 0.0),
            r["resistance_ohm"], r.get("resistance_sigma_ohm", 0.0),
            r["power_W"], r.get("power_sigma_W", 0.0),
            r["u_in_V"], r.get("u_in_sigma_V", 0.0))
        A, A_sigma = ft.resonator_amplification(rp)
        report["resonator"] = {
            "kappa": ft.resonator_kappa(rp.q_factor, rp.resistance),
            "amplification": A, "amplification_sigma": A_sigma}
        if amplification is None:
            amplification = A
    fits = {}
    if args.radial_csv:
        if amplification is None:
            raise CliError("radial fit needs --amplification or --resonator")
        for axis, path in zip(args.radial_axes, args.radial_csv):
            series = ft.MeasurementSeries.from_csv(
                path, ft.RF_INPUT_VOLTAGE, omega_rf)
            fits[f"radial_{axis}"] = ft.fit_radial(series, sim, amplification,
                                                   axis=int(axis))
    if args.axial_csv:
        series = ft.MeasurementSeries.from_csv(
            args.axial_csv, ft.DC_VOLTAGE, omega_rf)
        fits["axial"] = ft.fit_axial(series, sim, axis=args.axial_axis)
    for label, f in fits.items():
        report["fits"][label] = f.to_dict()
    if fits:
        report["comparison"] = ft.compare_to_simulation(fits)
    inputs = {"sim_coefficients": args.sim}
    if args.axial_csv:
        inputs["axial_csv"] = args.axial_csv
    for i, p in enumerate(args.radial_csv or []):
        inputs[f"radial_csv_{i}"] = p
    write_report(args.report, report, inputs)
    print(f"fit: {len(fits)} series -> {args.report}")
    return 0


def _load_any_geometry(path):
    """Trap params JSON, mesh JSON, or STL -> (object for coverage)."""
    _require(path, "geometry")
    if path.endswith(".stl"):
        return msh.read_stl(path)
    with open(path) as f:
        d = json.load(f)
    if "vertices" in d and "triangles" in d:
        return msh.mesh_from_dict(d)
    return geo.build_linear_trap(geo.ParametricTrapParams.from_dict(d))


def cmd_evaporate(args) -> int:
    geometry = _load_any_geometry(args.geometry)
    config = ev.EvaporationConfig(tilt=math.radians(args.tilt_deg),
                                  samples=args.samples)
    cov = ev.coverage(geometry, config)
    cov.to_csv(args.out)
    if args.summary:
        payload = cov.summary()
        if args.pads:
            pads = {k: np.asarray(v, dtype=int)
                    for k, v in _load_json(args.pads, "pad labels").items()}
            graph = ev.connectivity(cov, pads, threshold=args.threshold)
            payload["isolation"] = {
                "isolated": graph.isolated,
                "n_components": graph.n_components,
                "shorted_pairs": [list(p) for p in graph.shorted_pairs()],
                "threshold_m": args.threshold}
        write_report(args.summary, payload, {"geometry": args.geometry})
    print(f"evaporate: {cov.mesh.n_triangles} triangles -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# plot data emission

def _emit_pseudopotential_xy(report, args, out_path):
    char = report.get("characterization") or {}
    if "rf_null_m" not in char:
        raise CliError("report lacks characterization.rf_null_m")
    fields, drive, params, grid = _trap_fields_from_cache(
        args.cache, args.geometry, args.drive)
    z0 = char["rf_null_m"][2]
    lo, hi = grid.origin, grid.upper
    n = 61
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, z0)], axis=1)
    phi = analysis.pseudopotential(fields, drive, pts)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x_m", "y_m", "pseudopotential_eV"])
        for p, v in zip(pts, phi):
            w.writerow([f"{p[0]:.9e}", f"{p[1]:.9e}", f"{v:.9e}"])


def _emit_omega_vs_urf(report, args, out_path):
    char = report.get("characterization") or {}
    drive_d = report.get("drive") or {}
    if "mathieu_q" not in char or "u_rf" not in drive_d:
        raise CliError("report lacks mathieu parameters / drive voltage")
    q0 = np.asarray(char["mathieu_q"], dtype=float)
    a = np.asarray(char["mathieu_a"], dtype=float)
    u0 = float(drive_d["u_rf"]["value"])
    omega_rf = 2 * math.pi * float(drive_d["omega_rf"]["value"])
    volts = np.linspace(0.5 * u0, 1.5 * u0, 51)
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["u_rf_V", "omega_x_Hz", "omega_y_Hz", "omega_z_Hz"])
        for u in volts:
            w2 = omega_rf ** 2 / 4.0 * ((q0 * u / u0) ** 2 / 2.0 + a)
            om = np.sqrt(np.clip(w2, 0.0, None)) / (2 * math.pi)
            w.writerow([f"{u:.6e}"] + [f"{v:.9e}" for v in om])


_PLOT_KINDS = {"pseudopotential_xy": _emit_pseudopotential_xy,
               "omega_vs_urf": _emit_omega_vs_urf}


def cmd_plotdata(args) -> int:
    if args.kind not in _PLOT_KINDS:
        raise CliError(f"unknown plotdata kind '{args.kind}' "
                       f"(choose from {sorted(_PLOT_KINDS)})")
    report = _load_json(args.report, "report")
    if not report or set(report) <= {"metadata"}:
        raise CliError("report is empty; nothing to emit")
    os.makedirs(args.outdir, exist_ok=True)
    out = os.path.join(args.outdir, f"{args.kind}.csv")
    _PLOT_KINDS[args.kind](report, args, out)
    print(f"plotdata: {out}")
    return 0


# ---------------------------------------------------------------------------
# pipeline

def _stage_args(manifest: ProjectManifest, stage: str) -> argparse.Namespace:
    p = manifest.paths
    opt = manifest.options.get(stage, {})
    common = {
        "geometry": p.get("geometry_config"),
        "drive": p.get("drive_config"),
        "cache": p.get("field_cache"),
    }
    if stage == "geometry":
        return argparse.Namespace(
            params=p.get("geometry_config"), report=p.get("geometry_report"),
            stl=opt.get("stl"), na_axes=opt.get("na_axes"),
            seed=manifest.seed)
    if stage == "solve":
        return argparse.Namespace(
            **common, out=p.get("field_cache"),
            resolution=opt.get("resolution"), region=opt.get("region"),
            spacing=opt.get("spacing"))
    if stage == "analyze":
        return argparse.Namespace(**common, report=p.get("analyze_report"),
                                  depth=bool(opt.get("depth", False)))
    if stage == "dynamics":
        return argparse.Namespace(
            **common, out=p.get("trajectory_csv"),
            report=p.get("dynamics_report"),
            start=opt.get("start", "1e-6,1e-6,2e-6"),
            cycles=int(opt.get("cycles", 400)))
    if stage == "compensate":
        return argparse.Namespace(
            geometry=p.get("geometry_config"), drive=p.get("drive_config"),
            patches=p.get("patches"), report=p.get("compensate_report"),
            substrates=bool(opt.get("substrates", True)))
    if stage == "fit":
        return argparse.Namespace(
            sim=p.get("sim_coefficients"), resonator=p.get("resonator"),
            radial_csv=p.get("radial_csv"), axial_csv=p.get("axial_csv"),
            radial_axes=opt.get("radial_axes", ["1", "2"]),
            axial_axis=int(opt.get("axial_axis", 0)),
            amplification=opt.get("amplification"),
            report=p.get("fit_report"))
    if stage == "evaporate":
        return argparse.Namespace(
            geometry=p.get("geometry_config"),
            out=p.get("coverage_csv"), summary=p.get("evaporate_summary"),
            pads=p.get("pads"), threshold=float(opt.get("threshold", 50e-9)),
            tilt_deg=float(opt.get("tilt_deg", 60.0)),
            samples=int(opt.get("samples", 360)))
    raise CliError(f"unknown stage '{stage}'")


_STAGE_FUNCS = {"geometry": cmd_geometry, "solve": cmd_solve,
                "analyze": cmd_analyze, "dynamics": cmd_dynamics,
                "compensate": cmd_compensate, "fit": cmd_fit,
                "evaporate": cmd_evaporate}

_STAGE_INPUTS = {
    "geometry": ["geometry_config"],
    "solve": ["geometry_config"],
    "analyze": ["geometry_config", "drive_config", "field_cache"],
    "dynamics": ["geometry_config", "drive_config", "field_cache"],
    "compensate": ["geometry_config", "drive_config", "patches"],
    "fit": ["sim_coefficients"],
    "evaporate": ["geometry_config"],
}


def run_pipeline(manifest_path, stages=None) -> int:
    manifest = ProjectManifest.load(manifest_path)
    if stages is None:
        stages = [s for s in STAGES
                  if all(manifest.paths.get(k) for k in _STAGE_INPUTS[s])]
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise CliError(f"unknown stages: {sorted(unknown)}")
    stages = [s for s in STAGES if s in stages]
    for stage in stages:
        for key in _STAGE_INPUTS[stage]:
            manifest.resolve(key, what=f"stage '{stage}' input {key}")
        if stage in ("analyze", "dynamics"):
            manifest.check_fresh("geometry_config", stage)
        try:
            rc = _STAGE_FUNCS[stage](_stage_args(manifest, stage))
        except CliError:
            raise
        except Exception as exc:
            raise CliError(f"stage '{stage}' failed: {exc}") from exc
        if rc != 0:
            raise CliError(f"stage '{stage}' exited with status {rc}")
        if stage == "solve":
            manifest.record(stage, ["geometry_config", "field_cache"])
        else:
            manifest.record(stage, [])
    return 0


def cmd_pipeline(args) -> int:
    stages = args.stages.split(",") if args.stages else None
    return run_pipeline(args.manifest, stages)


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="paultrap",
        description="Linear Paul trap design and characterization pipeline")
    ap.add_argument("--version", action="version",
                    version=f"paultrap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geometry", help="build and validate a trap geometry")
    g.add_argument("--params", required=True, help="trap parameter JSON")
    g.add_argument("--report", required=True, help="output report JSON")
    g.add_argument("--stl", help="optional merged-mesh STL output")
    g.add_argument("--na-axes", help="comma list of axes (x,y,z) for "
                                     "numerical-aperture computation")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)

    s = sub.add_parser("solve", help="BEM solve and field-grid caching")
    s.add_argument("--geometry", required=True)
    s.add_argument("--resolution", type=float, help="mesh resolution (m)")
    s.add_argument("--region", help="x0,y0,z0,x1,y1,z1 grid bounds (m)")
    s.add_argument("--spacing", type=float, help="grid spacing (m)")
    s.add_argument("--out", required=True, help="field cache output path")

    a = sub.add_parser("analyze", help="secular frequencies and stability")
    a.add_argument("--cache", required=True)
    a.add_argument("--geometry", required=True)
    a.add_argument("--drive", required=True)
    a.add_argument("--report", required=True)
    a.add_argument("--depth", action="store_true",
                   help="also search for the trap depth (needs a cache "
                        "region reaching past the saddle)")

    d = sub.add_parser("dynamics", help="time-domain ion trajectory")
    d.add_argument("--cache", required=True)
    d.add_argument("--geometry", required=True)
    d.add_argument("--drive", required=True)
    d.add_argument("--start", default="1e-6,1e-6,2e-6", help="x,y,z (m)")
    d.add_argument("--cycles", type=int, default=400, help="rf cycles")
    d.add_argument("--out", required=True, help="trajectory CSV")
    d.add_argument("--report", help="optional spectrum report JSON")

    c = sub.add_parser("compensate", help="stray-charge compensation")
    c.add_argument("--geometry", required=True)
    c.add_argument("--drive", required=True)
    c.add_argument("--patches", required=True, help="charged-patch JSON")
    c.add_argument("--report", required=True)
    c.add_argument("--no-substrates", dest="substrates", action="store_false",
                   help="omit the grounded cavity mounting substrates")

    f = sub.add_parser("fit", help="measurement-model fits (Eqs. 1-4)")
    f.add_argument("--sim", required=True,
                   help="simulated coefficients JSON (q_per_volt, "
                        "a_per_volt, omega_rf_rad_per_s)")
    f.add_argument("--radial-csv", nargs="*", default=None,
                   help="radial series CSVs (voltage_V, omega_Hz, sigma_Hz)")
    f.add_argument("--radial-axes", nargs="*", default=["1", "2"],
                   help="axis index per radial CSV")
    f.add_argument("--axial-csv", help="axial series CSV")
    f.add_argument("--axial-axis", type=int, default=0)
    f.add_argument("--resonator", help="resonator parameter JSON")
    f.add_argument("--amplification", type=float,
                   help="rf amplification factor A (else from --resonator)")
    f.add_argument("--report", required=True)

    e = sub.add_parser("evaporate", help="directional metalization coverage")
    e.add_argument("--geometry", required=True,
                   help="trap params JSON, mesh JSON, or STL")
    e.add_argument("--tilt-deg", type=float, default=60.0)
    e.add_argument("--samples", type=int, default=360)
    e.add_argument("--out", required=True, help="coverage CSV")
    e.add_argument("--summary", help="summary report JSON")
    e.add_argument("--pads", help="pad-label JSON for connectivity")
    e.add_argument("--threshold", type=float, default=50e-9)

    pl = sub.add_parser("pipeline", help="run stages from a manifest")
    pl.add_argument("--manifest", required=True)
    pl.add_argument("--stages", help="comma list, default: all configured")

    pd = sub.add_parser("plotdata", help="emit plot-ready CSV from a report")
    pd.add_argument("--kind", required=True,
                    help="pseudopotential_xy | omega_vs_urf")
    pd.add_argument("--report", required=True)
    pd.add_argument("--outdir", default=".")
    pd.add_argument("--cache", help="field cache (pseudopotential_xy)")
    pd.add_argument("--geometry", help="trap params (pseudopotential_xy)")
    pd.add_argument("--drive", help="drive config (pseudopotential_xy)")
    return ap


_COMMANDS = {"geometry": cmd_geometry, "solve": cmd_solve,
             "analyze": cmd_analyze, "dynamics": cmd_dynamics,
             "compensate": cmd_compensate, "fit": cmd_fit,
             "evaporate": cmd_evaporate, "pipeline": cmd_pipeline,
             "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (geo.GeometryError, fs.SolverError, analysis.AnalysisError,
            dyn.DynamicsError, comp.CompensationError, ft.FitError,
            ev.EvaporationError, gc.GridError, msh.MeshError,
            OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

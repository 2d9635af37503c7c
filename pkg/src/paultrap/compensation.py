"""Stray fields from charged dielectric patches and dc compensation.

Charged fiber-mirror facets (or any uniformly charged surface) are modeled
as fixed source charges; the grounded trap electrodes respond with induced
surface charge (the grounded-conductor problem, reusing the solver's LU
factors). Compensation superposes dc offsets on designated electrodes to
null the total static field at the rf null.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import COULOMB_K, ELEMENTARY_CHARGE
from .mesh import SurfaceMesh, disk
from .fieldsolver import FieldSet, panel_integrals
from .geometry import ElectrodeRole
from .analysis import TrapFields, DriveConfig, find_rf_null, characterize

# 1 e/um^2 in C/m^2
E_PER_UM2 = ELEMENTARY_CHARGE / 1e-12


class CompensationError(RuntimeError):
    pass


class RankDeficientError(CompensationError):
    pass


@dataclass(frozen=True)
class ChargedPatch:
    """Uniformly charged surface region (fixed free charge, not a conductor).

    density is stored in C/m^2; use from_e_per_um2 for the paper's unit.
    """
    mesh: SurfaceMesh
    density: float       # C/m^2
    name: str = "patch"

    def __post_init__(self):
        if not math.isfinite(self.density):
            raise ValueError("patch density must be finite")
        if self.mesh.n_triangles == 0 or not np.all(self.mesh.areas() > 0):
            raise ValueError("patch mesh must have positive area")

    @classmethod
    def from_e_per_um2(cls, mesh: SurfaceMesh, density_e_um2: float,
                       name: str = "patch") -> "ChargedPatch":
        return cls(mesh, density_e_um2 * E_PER_UM2, name)

    @property
    def total_charge(self) -> float:
        return float(self.density * np.sum(self.mesh.areas()))

    def scaled(self, s: float) -> "ChargedPatch":
        return ChargedPatch(self.mesh, self.density * s, self.name)


def patch_fields(patches, points, want_field=True):
    """Free-space potential and field of the patch charges alone, by exact
    analytic integration over every patch triangle."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phi = np.zeros(len(pts))
    E = np.zeros((len(pts), 3)) if want_field else None
    for patch in patches:
        a, b, c = patch.mesh.corners()
        for s in range(0, len(pts), 256):
            p = pts[s:s + 256]
            # all (point, triangle) pairs of this chunk
            rows = np.repeat(np.arange(len(p)), len(a))
            cols = np.tile(np.arange(len(a)), len(p))
            I, G = panel_integrals(a[cols], b[cols], c[cols], p[rows],
                                   want_field=want_field)
            np.add.at(phi, s + rows, COULOMB_K * patch.density * I)
            if want_field:
                np.add.at(E, s + rows, -COULOMB_K * patch.density * G)
    return phi, E


@dataclass
class StraySolution:
    """Grounded-conductor response to a fixed patch-charge distribution."""
    fieldset: FieldSet
    patches: tuple
    sigma_induced: np.ndarray

    def potential(self, points) -> np.ndarray:
        phi_p, _ = patch_fields(self.patches, points, want_field=False)
        phi_i, _ = self.fieldset.evaluate_sigma(self.sigma_induced, points,
                                                want_field=False)
        return phi_p + phi_i

    def field(self, points) -> np.ndarray:
        _, E_p = patch_fields(self.patches, points)
        _, E_i = self.fieldset.evaluate_sigma(self.sigma_induced, points)
        return E_p + E_i


def solve_stray(fieldset: FieldSet | None, patches) -> StraySolution:
    """Solve for the electrode charges induced by the patches (electrodes
    all at 0 V). With fieldset None the free-space problem is returned."""
    patches = tuple(patches)
    if fieldset is None or fieldset.system.n_panels == 0:
        class _Free:
            system = None

            @staticmethod
            def evaluate_sigma(sigma, points, want_field=True):
                pts = np.atleast_2d(points)
                return (np.zeros(len(pts)),
                        np.zeros((len(pts), 3)) if want_field else None)
        return StraySolution(_Free(), patches, np.zeros(0))
    phi_p, _ = patch_fields(patches, fieldset.system.centroids,
                            want_field=False)
    sigma = fieldset.solve_grounded(phi_p)
    return StraySolution(fieldset, patches, sigma)


def stray_field(fieldset: FieldSet | None, patches, points) -> np.ndarray:
    """Static field (V/m) of the patches with all electrodes grounded."""
    sol = solve_stray(fieldset, patches)
    E = sol.field(np.atleast_2d(points))
    return E[0] if np.asarray(points).ndim == 1 else E


# ---------------------------------------------------------------------------
# the bundled Appendix A scenario: charged fiber-mirror facets

def fiber_facet_patches(cavity_length=350e-6, fiber_diameter=125e-6,
                        densities_e_um2=(50.0, 50.0), axis=(1.0, 0.0, 0.0),
                        n_r=5, n_phi=24):
    """Fiber-facet disks on the cavity axis, facing the ion.

    One disk per mirror at +-cavity_length/2 along axis. Note that equal
    densities on both mirrors give zero net field at the trap center by
    mirror symmetry; the worst-case compensation demand corresponds to a
    single charged facet (densities (sigma, 0)).
    """
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    patches = []
    for sign, dens, tag in ((+1.0, densities_e_um2[0], "facet_pos"),
                            (-1.0, densities_e_um2[1], "facet_neg")):
        center = sign * (cavity_length / 2.0) * axis
        m = disk(center, -sign * axis, fiber_diameter / 2.0,
                 n_r=n_r, n_phi=n_phi)
        patches.append(ChargedPatch.from_e_per_um2(m, dens, tag))
    return patches


def _lathe(profile, axis, n_phi=32):
    """Surface of revolution of a (station, radius) profile about axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    from .mesh import _perp, _grid_triangles
    u = _perp(axis)
    v = np.cross(axis, u)
    phi = np.linspace(0.0, 2 * math.pi, n_phi + 1)
    verts = []
    for x, r in profile:
        ring = (x * axis[None, :]
                + r * (np.cos(phi)[:, None] * u[None, :]
                       + np.sin(phi)[:, None] * v[None, :]))
        verts.append(ring)
    verts = np.vstack(verts)
    tris = _grid_triangles(len(profile) - 1, n_phi, 0)
    return SurfaceMesh(verts, tris)


def cavity_substrate_mesh(cavity_length=350e-6, fiber_radius=62.5e-6,
                          recess=3e-5, cone_half_angle=0.6458,
                          length=6e-4, sign=+1.0, axis=(1.0, 0.0, 0.0),
                          n_phi=32):
    """Grounded, metalized cavity-substrate tip on one side of the trap.

    The fiber sits recessed by `recess` inside the grounded bore, so the
    mirror facet (at cavity_length / 2) is shielded by the bore walls; the
    front face is an annulus around the bore, continued by a conical skirt
    whose half-angle keeps the substrate inside the free slot between the
    blade fins.
    """
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x_facet = cavity_length / 2.0
    x_front = x_facet - recess
    x_back = x_front + length
    tan = math.tan(cone_half_angle)
    front = disk(sign * x_front * axis, -sign * axis, x_front * tan,
                 n_r=3, n_phi=n_phi, inner_radius=fiber_radius)
    parts = [front]
    if recess > 0:
        bore = _lathe([(sign * x, fiber_radius)
                       for x in np.linspace(x_front, x_facet, 4)],
                      axis, n_phi=n_phi)
        parts.append(bore)
    stations = np.linspace(x_front, x_back, 7)
    parts.append(_lathe([(sign * x, x * tan) for x in stations],
                        axis, n_phi=n_phi))
    from . import mesh as msh
    return msh.merge(parts)


def with_cavity_substrates(geometry, cavity_length=350e-6,
                           fiber_radius=62.5e-6, **kwargs):
    """Trap geometry extended with the two grounded substrate tips."""
    from .geometry import TrapGeometry, Electrode
    subs = []
    for sign, name in ((+1.0, "substrate_pos"), (-1.0, "substrate_neg")):
        m = cavity_substrate_mesh(cavity_length, fiber_radius,
                                  sign=sign, **kwargs)
        subs.append(Electrode(name, m, ElectrodeRole.GROUND))
    return TrapGeometry(tuple(geometry.electrodes) + tuple(subs))


# ---------------------------------------------------------------------------
# compensation

@dataclass
class CompensationSolution:
    offsets: dict                      # electrode -> V
    stray_field_at_null: np.ndarray    # (3,) V/m
    residual_field: np.ndarray         # (3,) V/m after compensation
    displacement: np.ndarray           # (3,) m, uncompensated equilibrium shift
    residual_displacement: float       # m, |shift| after compensation
    micromotion: np.ndarray            # (3,) m, uncompensated, first order
    residual_micromotion: np.ndarray   # (3,) m, after compensation
    null: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def to_dict(self) -> dict:
        return {
            "offsets_V": {k: float(v) for k, v in sorted(self.offsets.items())},
            "stray_field_V_per_m": [float(x) for x in self.stray_field_at_null],
            "residual_field_V_per_m": [float(x) for x in self.residual_field],
            "displacement_m": [float(x) for x in self.displacement],
            "residual_displacement_m": float(self.residual_displacement),
            "micromotion_m": [float(x) for x in self.micromotion],
            "residual_micromotion_m": [float(x)
                                       for x in self.residual_micromotion],
            "rf_null_m": [float(x) for x in self.null],
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")


def _first_order_response(char, E, species):
    """Equilibrium shift and micromotion for a static field E at the null.

    delta_i = q_e (E . u_i) / (m omega_i^2) along each principal axis;
    micromotion amplitude ~ |q_i / 2| x |delta_i| (first-order Mathieu).
    """
    shift = np.zeros(3)
    mm = np.zeros(3)
    for i in range(3):
        u = char.axes[i]
        d = (species.charge * float(E @ u)
             / (species.mass * char.secular_frequencies[i] ** 2))
        shift += d * u
        mm[i] = abs(char.mathieu_q[i] / 2.0 * d)
    return shift, mm


def compensate(fields: TrapFields, drive: DriveConfig, patches,
               electrodes=None, characterization=None,
               r0=1.77e-4) -> CompensationSolution:
    """Least-squares dc offsets nulling the stray static field at the rf null.

    The minimization target is the field (not the displacement); the two are
    equivalent to first order and the field target keeps the problem a single
    linear solve. Default compensation set: the RF_GROUND pair.
    """
    if fields._fs is None:
        raise CompensationError("compensate needs a FieldSet-backed "
                                "TrapFields (stray solve is a BEM problem)")
    fieldset = fields._fs
    if electrodes is None:
        # dc offsets on both blade pairs: each pair differentially moves the
        # ion along its own diagonal, together spanning the radial plane
        electrodes = (fieldset.system.electrodes_with_role(ElectrodeRole.RF)
                      + fieldset.system.electrodes_with_role(
                          ElectrodeRole.RF_GROUND))
    electrodes = list(electrodes)
    if len(electrodes) < 2:
        raise RankDeficientError(
            "need at least 2 compensation electrodes for radial control")
    null = find_rf_null(fields, drive, np.zeros(3))
    char = characterization
    if char is None:
        char = characterize(fields, drive, r0, guess=null, with_depth=False)
    patches = tuple(patches)
    if patches:
        E_s = stray_field(fieldset, patches, null)
    else:
        E_s = np.zeros(3)
    # basis fields of the compensation electrodes at the null, V/m per volt
    B = np.column_stack([fields.basis_field(n, null[None, :])[0]
                         for n in electrodes])
    sv = np.linalg.svd(B, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise RankDeficientError(
            f"compensation electrodes {electrodes} do not span independent "
            f"field directions at the null")
    # rcond trims directions the electrode set can barely drive (pair
    # common modes, the axial direction): components of the stray field
    # along directions with < 1% of the peak per-volt authority are left
    # uncompensated rather than fought with huge voltages
    v, *_ = np.linalg.lstsq(B, -E_s, rcond=1e-2)
    E_res = E_s + B @ v
    shift0, mm0 = _first_order_response(char, E_s, drive.species)
    shift1, mm1 = _first_order_response(char, E_res, drive.species)
    offsets = ({n: float(x) for n, x in zip(electrodes, v)}
               if patches else {n: 0.0 for n in electrodes})
    return CompensationSolution(
        offsets=offsets,
        stray_field_at_null=E_s,
        residual_field=E_res,
        displacement=shift0,
        residual_displacement=float(np.linalg.norm(shift1)),
        micromotion=mm0,
        residual_micromotion=mm1,
        null=null)


# ---------------------------------------------------------------------------
# JSON patch specs (External Interfaces)

def load_patches(path):
    """Patch list from JSON: [{"kind": "disk", "center_m": [...],
    "normal": [...], "radius_m": r, "density_e_per_um2": s, "name": ...}]."""
    with open(path) as f:
        spec = json.load(f)
    patches = []
    for i, p in enumerate(spec if isinstance(spec, list) else spec["patches"]):
        if p.get("kind", "disk") != "disk":
            raise CompensationError(f"unknown patch kind '{p.get('kind')}'")
        m = disk(p["center_m"], p["normal"], p["radius_m"],
                 n_r=int(p.get("n_r", 5)), n_phi=int(p.get("n_phi", 24)))
        patches.append(ChargedPatch.from_e_per_um2(
            m, float(p["density_e_per_um2"]), p.get("name", f"patch_{i}")))
    return patches

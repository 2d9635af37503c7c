"""Parametric blade-trap geometry, optical access, and etch-offset tools.

Coordinate frame: z is the trap axis, x/y radial. The four radial blades are
thin fins mirror-symmetric about the x and y axes, their bisectors at azimuth
blade_axis_angle from +-x; the quadrant I/III pair carries rf, the other pair
is rf-grounded. Four dc endcap finger pairs sit near the +-x slots, axially
displaced from the center. All lengths are meters, angles radians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace
from enum import Enum

import numpy as np

from . import mesh as msh
from .mesh import SurfaceMesh, validate_mesh

GEOMETRY_SCHEMA_VERSION = 1


class GeometryError(ValueError):
    pass


class InvalidParameterError(GeometryError):
    def __init__(self, name, message):
        self.parameter = name
        super().__init__(f"invalid parameter '{name}': {message}")


class ElectrodeRole(Enum):
    RF = "rf"
    RF_GROUND = "rf_ground"
    DC_ENDCAP_1 = "dc_endcap_1"
    DC_ENDCAP_2 = "dc_endcap_2"
    DC_ENDCAP_3 = "dc_endcap_3"
    DC_ENDCAP_4 = "dc_endcap_4"
    GROUND = "ground"


@dataclass(frozen=True)
class Electrode:
    name: str
    mesh: SurfaceMesh
    role: ElectrodeRole


@dataclass(frozen=True)
class TrapGeometry:
    electrodes: tuple

    def __post_init__(self):
        names = [e.name for e in self.electrodes]
        if len(set(names)) != len(names):
            raise GeometryError("duplicate electrode names")

    @property
    def names(self):
        return [e.name for e in self.electrodes]

    def electrode(self, name: str) -> Electrode:
        for e in self.electrodes:
            if e.name == name:
                return e
        raise KeyError(name)

    def by_role(self, role: ElectrodeRole):
        return [e for e in self.electrodes if e.role is role]

    def merged_mesh(self) -> SurfaceMesh:
        return msh.merge([e.mesh for e in self.electrodes])

    def characteristic_radius(self, center=(0.0, 0.0, 0.0)) -> float:
        """Minimum distance from center to any electrode surface (r0)."""
        c = np.asarray(center, dtype=float)[None, :]
        return float(min(msh.point_triangle_distance(c, e.mesh)[0]
                         for e in self.electrodes))

    def total_triangles(self) -> int:
        return sum(e.mesh.n_triangles for e in self.electrodes)


@dataclass(frozen=True)
class ParametricTrapParams:
    """Knobs of the monolithic blade trap builder.

    blade_separation sets r0 (= blade_separation / 2). Each blade is a thin
    radial fin of thickness blade_tip_width whose bisector sits at azimuth
    blade_axis_angle (quadrant-I blade); the flat tip facet faces the ion at
    r0. The fin silhouette seen from the axis spans blade_axis_angle
    +- atan(tip_width / (2 r0)), which sets the optical-access edges toward
    the +-x fiber slots and the +-y objective gaps. Defaults are
    calibration-tuned to the bundled config (see data/default_trap.json).
    """
    blade_separation: float = 354e-6
    blade_length: float = 1.5e-3
    blade_tip_width: float = 87.74e-6
    blade_outer_radius: float = 1.0e-3
    blade_axis_angle: float = math.radians(34.3)
    endcap_axial_gap: float = 0.9e-3
    endcap_length: float = 1.5e-4
    endcap_tip_axis_distance: float = 1.16e-4
    endcap_outer_radius: float = 8.0e-4
    endcap_half_angle: float = math.radians(10.0)
    # Finger azimuth, tuned so the fingers' own cos(2*theta) moment cancels
    # the x^2-y^2 term the unequal slot/gap openings imprint on the dc
    # potential (radial-degeneracy protection).
    endcap_center_angle: float = math.radians(12.0)
    ground_end_z: float = 3.0e-3
    ground_end_hole_radius: float = 4.5e-4
    ground_end_outer_radius: float = 2.0e-3
    ground_side_radius: float = 1.4e-3
    trench_positions: tuple = ()
    mesh_resolution: float = 2.0e-5

    _length_fields = ("blade_separation", "blade_length", "blade_tip_width",
                      "blade_outer_radius", "endcap_axial_gap", "endcap_length",
                      "endcap_tip_axis_distance", "endcap_outer_radius",
                      "ground_end_z", "ground_end_hole_radius",
                      "ground_end_outer_radius", "ground_side_radius",
                      "mesh_resolution")

    @property
    def r0(self) -> float:
        return self.blade_separation / 2.0

    def validate(self):
        for name in self._length_fields:
            if not getattr(self, name) > 0:
                raise InvalidParameterError(name, "must be positive")
        if self.mesh_resolution > self.blade_tip_width / 4.0:
            raise InvalidParameterError(
                "mesh_resolution", "must be <= blade_tip_width / 4")
        half = self._blade_half_angle()
        if not (half < self.blade_axis_angle < math.pi / 2 - half):
            raise InvalidParameterError(
                "blade_axis_angle",
                "fin silhouette crosses the +-x slot or the +-y gap")
        if self.blade_outer_radius <= self.r0:
            raise InvalidParameterError(
                "blade_outer_radius", "must exceed blade_separation / 2")
        if self.ground_side_radius <= self.blade_outer_radius:
            raise InvalidParameterError(
                "ground_side_radius", "must exceed blade_outer_radius")
        if self.endcap_outer_radius <= self.endcap_tip_axis_distance:
            raise InvalidParameterError(
                "endcap_outer_radius", "must exceed endcap_tip_axis_distance")
        if not (self.endcap_half_angle <= self.endcap_center_angle
                <= math.pi / 2 - self.endcap_half_angle):
            raise InvalidParameterError(
                "endcap_center_angle",
                "mirror-image finger pairs must not overlap")

    def _blade_half_angle(self) -> float:
        """Azimuthal half-width of the fin silhouette seen from the axis."""
        return math.atan(self.blade_tip_width / (2.0 * self.r0))

    def scaled(self, s: float) -> "ParametricTrapParams":
        kw = {name: getattr(self, name) * s for name in self._length_fields}
        kw["trench_positions"] = tuple(z * s for z in self.trench_positions)
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trench_positions"] = list(self.trench_positions)
        d["schema_version"] = GEOMETRY_SCHEMA_VERSION
        d["units"] = "SI"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParametricTrapParams":
        d = dict(d)
        version = d.pop("schema_version", GEOMETRY_SCHEMA_VERSION)
        if version != GEOMETRY_SCHEMA_VERSION:
            raise GeometryError(f"unsupported geometry schema version {version}")
        d.pop("units", None)
        d["trench_positions"] = tuple(d.get("trench_positions", ()))
        return cls(**d)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ParametricTrapParams":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def default(cls) -> "ParametricTrapParams":
        from importlib.resources import files
        cfg = files("paultrap.data").joinpath("default_trap.json")
        return cls.from_dict(json.loads(cfg.read_text()))


# ---------------------------------------------------------------------------
# builder

def _arc(r, a0, a1, h):
    """2D arc points from a0 to a1 at radius r, spacing ~h (both ends incl.)."""
    n = max(1, int(math.ceil(abs(a1 - a0) * r / h)))
    ang = np.linspace(a0, a1, n + 1)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def _line2d(p0, p1, h):
    n = max(1, int(math.ceil(np.linalg.norm(np.subtract(p1, p0)) / h)))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return np.asarray(p0) + t * (np.subtract(p1, p0))


def _sector_loop(r_in, r_out, a0, a1, h_in, h_side, h_out):
    """CCW loop of an annular sector polygon (a1 > a0)."""
    inner = _arc(r_in, a1, a0, h_in)          # traverse inner arc backwards
    side0 = _line2d(inner[-1], [r_out * math.cos(a0), r_out * math.sin(a0)], h_side)
    outer = _arc(r_out, a0, a1, h_out)
    side1 = _line2d(outer[-1], inner[0], h_side)
    # shoelace must be positive (CCW) for outward extrusion normals
    return _ccw(np.vstack([inner[:-1], side0[:-1], outer[:-1], side1[:-1]]))


def _rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ccw(loop):
    x, y = loop[:, 0], loop[:, 1]
    if np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
        loop = loop[::-1]
    return loop


def _fin_loop(r_in, r_out, thickness, h):
    """CCW cross-section of a radial fin along +x: flat tip facet at r_in,
    flanks from r_in to r_out, graded fine near the tip."""
    t2 = thickness / 2.0
    u = msh.graded_stations(r_in, r_out, fine_h=2 * h, coarse_h=10 * h,
                            focus=r_in, fine_span=2.0 * thickness)
    tip = _line2d([r_in, t2], [r_in, -t2], h)
    side0 = np.stack([u, np.full_like(u, -t2)], axis=1)
    outer = _line2d([r_out, -t2], [r_out, t2], 6 * h)
    side1 = np.stack([u[::-1], np.full_like(u, t2)], axis=1)
    return _ccw(np.vstack([tip[:-1], side0[:-1], outer[:-1], side1[:-1]]))


def _blade_mesh(p: ParametricTrapParams, rotation: float) -> SurfaceMesh:
    h = p.mesh_resolution
    loop = _fin_loop(p.r0, p.blade_outer_radius, p.blade_tip_width, h)
    z = msh.graded_stations(-p.blade_length / 2, p.blade_length / 2,
                            fine_h=3 * h, coarse_h=p.blade_length / 8,
                            focus=0.0, fine_span=0.15 * p.blade_length)
    m = msh.extrude_polygon(loop, z)
    return m.transformed(rotation=_rot_z(rotation))


def _endcap_mesh(p: ParametricTrapParams, center_angle: float,
                 positive_z: bool) -> SurfaceMesh:
    # each endcap electrode is a diametral pair of fingers so the static
    # radial curvature stays symmetric between x and y (radial degeneracy)
    h = p.mesh_resolution
    z0, z1 = p.endcap_axial_gap, p.endcap_axial_gap + p.endcap_length
    if not positive_z:
        z0, z1 = -z1, -z0
    z = np.linspace(z0, z1, max(2, int(math.ceil((z1 - z0) / (4 * h))) + 1))
    parts = []
    for ang in (center_angle, center_angle + math.pi):
        loop = _sector_loop(p.endcap_tip_axis_distance, p.endcap_outer_radius,
                            ang - p.endcap_half_angle,
                            ang + p.endcap_half_angle,
                            h_in=2 * h, h_side=5 * h, h_out=10 * h)
        parts.append(msh.extrude_polygon(loop, z))
    return msh.merge(parts)


def _ground_side_plate(p: ParametricTrapParams, a0, a1, n_a=5, n_z=8) -> SurfaceMesh:
    ang = np.linspace(a0, a1, n_a + 1)
    z = np.linspace(-p.blade_length / 2, p.blade_length / 2, n_z + 1)
    r = p.ground_side_radius
    verts = np.array([[r * math.cos(a), r * math.sin(a), zz]
                      for a in ang for zz in z])
    m = SurfaceMesh(verts, msh._grid_triangles(n_a, n_z, 0))
    c = m.centroids()
    radial = c.copy()
    radial[:, 2] = 0.0
    if np.einsum("ij,ij->i", m.normals(), radial).mean() < 0:
        m = msh.flip(m)
    return m


def build_linear_trap(params: ParametricTrapParams) -> TrapGeometry:
    """Build the four-blade linear trap with dc endcap fingers and grounds."""
    params.validate()
    p = params
    electrodes = []
    mid = p.blade_axis_angle  # blade bisector azimuth, quadrant I
    # the other three blades follow by the rotations that keep the +-x slots
    # and +-y gaps mirror-symmetric about both radial axes
    rf_rotations = (mid, mid + math.pi)
    rfg_rotations = (math.pi - mid, 2 * math.pi - mid)
    for name, rot in zip(("rf_a", "rf_b"), rf_rotations):
        electrodes.append(Electrode(name, _blade_mesh(p, rot), ElectrodeRole.RF))
    for name, rot in zip(("rfgnd_a", "rfgnd_b"), rfg_rotations):
        electrodes.append(Electrode(name, _blade_mesh(p, rot),
                                    ElectrodeRole.RF_GROUND))
    # endcap fingers at the tuned azimuth (see endcap_center_angle); one
    # electrode per (mirror pair, z side), each a diametral finger pair
    ca = p.endcap_center_angle
    caps = [("endcap_1", ca, True, ElectrodeRole.DC_ENDCAP_1),
            ("endcap_2", math.pi - ca, True, ElectrodeRole.DC_ENDCAP_2),
            ("endcap_3", ca, False, ElectrodeRole.DC_ENDCAP_3),
            ("endcap_4", math.pi - ca, False, ElectrodeRole.DC_ENDCAP_4)]
    for name, ang, pos, role in caps:
        electrodes.append(Electrode(name, _endcap_mesh(p, ang, pos), role))
    ground_parts = []
    half = 0.9 * p._blade_half_angle()
    for ang in (mid, mid + math.pi, math.pi - mid, 2 * math.pi - mid):
        # stay inside the blade's silhouette so optical access is unchanged
        ground_parts.append(_ground_side_plate(p, ang - half, ang + half))
    for sign in (+1.0, -1.0):
        ground_parts.append(msh.disk(
            [0.0, 0.0, sign * p.ground_end_z], [0.0, 0.0, sign],
            p.ground_end_outer_radius, n_r=3, n_phi=16,
            inner_radius=p.ground_end_hole_radius))
    electrodes.append(Electrode("ground", msh.merge(ground_parts),
                                ElectrodeRole.GROUND))
    geom = TrapGeometry(tuple(electrodes))
    for e in electrodes:
        defects = validate_mesh(e.mesh)
        if defects:
            raise GeometryError(f"builder produced defective mesh for "
                                f"{e.name}: {defects[:5]}")
    return geom


# ---------------------------------------------------------------------------
# numerical aperture

@dataclass(frozen=True)
class CircularStop:
    """Aperture stop: an opaque plane with a circular hole."""
    center: tuple
    normal: tuple
    aperture_radius: float

    def blocks(self, origins, directions) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        o = np.atleast_2d(origins)
        d = np.atleast_2d(directions)
        dn = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - o) @ n) / dn
        crosses = np.isfinite(t) & (t > 0)
        hit = o + t[:, None] * d
        radial = hit - c - ((hit - c) @ n)[:, None] * n[None, :]
        return crosses & (np.linalg.norm(radial, axis=1) > self.aperture_radius)


def _cap_directions(axis, theta, n_samples, rng=None):
    """Deterministic Fibonacci coverage of the spherical cap about axis,
    plus a ring on the cone boundary (where the constraint binds)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    u = msh._perp(axis)
    v = np.cross(axis, u)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    k = np.arange(n_samples)
    # uniform in solid angle over the cap
    cosang = 1.0 - (k + 0.5) / n_samples * (1.0 - math.cos(theta))
    phi = k * golden
    if rng is not None:
        phi = phi + rng.uniform(0.0, 2 * math.pi)
        cosang = 1.0 - rng.uniform(0, 1, n_samples) * (1.0 - math.cos(theta))
    sinang = np.sqrt(np.clip(1.0 - cosang ** 2, 0.0, None))
    n_ring = max(16, n_samples // 8)
    ring_phi = np.linspace(0.0, 2 * math.pi, n_ring, endpoint=False)
    cosang = np.concatenate([cosang, np.full(n_ring, math.cos(theta))])
    sinang = np.concatenate([sinang, np.full(n_ring, math.sin(theta))])
    phi = np.concatenate([phi, ring_phi])
    return (cosang[:, None] * axis[None, :]
            + sinang[:, None] * (np.cos(phi)[:, None] * u[None, :]
                                 + np.sin(phi)[:, None] * v[None, :]))


def point_inside(mesh: SurfaceMesh, point) -> bool:
    """Generalized winding number test; robust for open ground sheets."""
    w = msh.solid_angles(mesh, np.atleast_2d(point))[0] / (4.0 * math.pi)
    return abs(w) > 0.5


def numerical_aperture(geometry, origin, axis, stops=(), n_samples=600,
                       seed=None, max_radius=0.1, tol=1e-4) -> float:
    """sin of the largest cone half-angle about axis whose rays all escape.

    geometry: TrapGeometry or iterable of SurfaceMesh. Rays escape when they
    reach the bounding sphere (max_radius) without hitting any mesh or stop.
    Bisection to an angular resolution of tol radians; the documented sampling
    density (n_samples=600 plus a boundary ring) holds the seed-to-seed spread
    below +-0.005 in NA.
    """
    if hasattr(geometry, "electrodes"):
        meshes = [e.mesh for e in geometry.electrodes]
    else:
        meshes = list(geometry)
    meshes = [m for m in meshes if m.n_triangles > 0]
    origin = np.asarray(origin, dtype=float)
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    for m in meshes:
        if point_inside(m, origin):
            raise GeometryError("origin lies inside an electrode")
    rng = np.random.default_rng(seed) if seed is not None else None

    def clear(theta: float) -> bool:
        dirs = _cap_directions(axis, theta, n_samples, rng)
        o = np.broadcast_to(origin, dirs.shape)
        dist = np.full(len(dirs), np.inf)
        for m in meshes:
            dist = np.minimum(dist, msh.ray_hits(m, o, dirs))
        if np.any(dist < max_radius):
            return False
        for stop in stops:
            if np.any(stop.blocks(o, dirs)):
                return False
        return True

    lo, hi = 0.0, math.pi / 2
    if clear(hi):
        return 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if clear(mid):
            lo = mid
        else:
            hi = mid
    return math.sin(0.5 * (lo + hi))


# ---------------------------------------------------------------------------
# over-etch offset

class SelfIntersectionError(GeometryError):
    def __init__(self, pairs):
        self.pairs = pairs
        super().__init__(f"offset mesh self-intersects: {len(pairs)} triangle "
                         f"pairs, first {pairs[:5]}")


def apply_overetch_offset(mesh: SurfaceMesh, model,
                          surface_point=(0.0, 0.0, 0.0),
                          surface_normal=(0.0, 0.0, 1.0),
                          check_intersections=True) -> SurfaceMesh:
    """Displace each vertex along its normal by model(depth).

    depth is the distance below the substrate surface plane (clamped at 0
    above it). model must be non-negative and bounded on the depths present.
    """
    n_s = np.asarray(surface_normal, dtype=float)
    n_s = n_s / np.linalg.norm(n_s)
    p_s = np.asarray(surface_point, dtype=float)
    depth = np.clip((p_s - mesh.vertices) @ n_s, 0.0, None)
    off = np.array([float(model(d)) for d in depth])
    if np.any(off < 0) or not np.all(np.isfinite(off)):
        raise GeometryError("offset model must be non-negative and bounded")
    out = SurfaceMesh(mesh.vertices + off[:, None] * mesh.vertex_normals(),
                      mesh.triangles.copy())
    if check_intersections and np.any(off > 0):
        pairs = self_intersections(out)
        if pairs:
            raise SelfIntersectionError(pairs)
    return out


def self_intersections(mesh: SurfaceMesh, limit=50) -> list:
    """Non-adjacent triangle pairs that cross (edge-through-face test)."""
    a, b, c = mesh.corners()
    lo = np.minimum(np.minimum(a, b), c)
    hi = np.maximum(np.maximum(a, b), c)
    n = mesh.n_triangles
    pairs = []
    t = mesh.triangles
    for i in range(n):
        overlap = np.nonzero(np.all((lo[i + 1:] <= hi[i]) & (hi[i + 1:] >= lo[i]),
                                    axis=1))[0] + i + 1
        for j in overlap:
            if len(set(t[i]) & set(t[j])) > 0:
                continue
            if _tri_tri_cross(a[i], b[i], c[i], a[j], b[j], c[j]):
                pairs.append((i, int(j)))
                if len(pairs) >= limit:
                    return pairs
    return pairs


def _tri_tri_cross(a0, b0, c0, a1, b1, c1) -> bool:
    return (_edges_cross_tri(a0, b0, c0, a1, b1, c1)
            or _edges_cross_tri(a1, b1, c1, a0, b0, c0))


def _edges_cross_tri(a, b, c, p, q, r) -> bool:
    tri = SurfaceMesh(np.array([p, q, r]), np.array([[0, 1, 2]]))
    for s, e in ((a, b), (b, c), (c, a)):
        d = e - s
        ln = np.linalg.norm(d)
        if ln == 0:
            continue
        t = msh.ray_hits(tri, s[None, :], (d / ln)[None, :])[0]
        if t < ln * (1 - 1e-10):
            return True
    return False

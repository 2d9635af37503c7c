"""Triangle surface meshes: construction primitives, validation, ray casting, IO.

Conventions: vertices are (n, 3) float64 arrays in meters, triangles are
(m, 3) int arrays of vertex indices, counter-clockwise when viewed from the
outside (outward normals).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DEGENERATE_AREA = 1e-18  # m^2, below this a triangle counts as degenerate


class MeshError(ValueError):
    pass


@dataclass
class MeshDefect:
    kind: str
    triangle: int

    def __repr__(self):
        return f"{self.kind}({self.triangle})"


@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices",
                           np.ascontiguousarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "triangles",
                           np.ascontiguousarray(self.triangles, dtype=np.int64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be (n, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (m, 3)")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self):
        """Per-triangle corner coordinates, three (m, 3) arrays."""
        v = self.vertices
        t = self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def face_cross(self) -> np.ndarray:
        a, b, c = self.corners()
        return np.cross(b - a, c - a)

    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def normals(self) -> np.ndarray:
        cr = self.face_cross()
        n = np.linalg.norm(cr, axis=1)
        n = np.where(n > 0, n, 1.0)
        return cr / n[:, None]

    def centroids(self) -> np.ndarray:
        a, b, c = self.corners()
        return (a + b + c) / 3.0

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals (unit where defined)."""
        cr = self.face_cross()  # length = 2*area, already area-weighted
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.triangles[:, k], cr)
        norms = np.linalg.norm(vn, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        return vn / norms[:, None]

    def transformed(self, rotation=None, translation=None) -> "SurfaceMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return SurfaceMesh(v, self.triangles.copy())

    def scaled(self, s: float) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices * float(s), self.triangles.copy())

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def merge(meshes) -> SurfaceMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return SurfaceMesh(np.vstack(verts), np.vstack(tris))


def weld(mesh: SurfaceMesh, tol: float = 1e-12) -> SurfaceMesh:
    """Merge vertices closer than tol so shared edges become topological."""
    key = np.round(mesh.vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True,
                                  return_inverse=True)
    return SurfaceMesh(mesh.vertices[first], inverse[mesh.triangles])


def validate_mesh(mesh: SurfaceMesh) -> list:
    """Return a list of named defects; empty iff the mesh is sound."""
    defects = []
    nv = len(mesh.vertices)
    bad_index = np.any((mesh.triangles < 0) | (mesh.triangles >= nv), axis=1)
    for i in np.nonzero(bad_index)[0]:
        defects.append(MeshDefect("IndexOutOfRange", int(i)))
    if not np.all(np.isfinite(mesh.vertices)):
        defects.append(MeshDefect("NonFiniteVertex", -1))
        return defects
    ok = ~bad_index
    areas = mesh.areas()
    t = mesh.triangles
    repeated = ((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2])
                | (t[:, 0] == t[:, 2]))
    for i in np.nonzero(ok & (repeated | (areas <= DEGENERATE_AREA)))[0]:
        defects.append(MeshDefect("DegenerateTriangle", int(i)))
    return defects


# ---------------------------------------------------------------------------
# primitives

def _grid_triangles(nu: int, nv: int, offset: int) -> np.ndarray:
    """Triangulate a (nu+1) x (nv+1) structured vertex grid."""
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    v00 = (i * (nv + 1) + j).ravel() + offset
    v01 = v00 + 1
    v10 = v00 + (nv + 1)
    v11 = v10 + 1
    t1 = np.stack([v00, v10, v11], axis=1)
    t2 = np.stack([v00, v11, v01], axis=1)
    return np.vstack([t1, t2])


def quad_patch(p00, p10, p11, p01, nu: int, nv: int) -> SurfaceMesh:
    """Bilinear quad patch subdivided nu x nv; normal along (p10-p00)x(p01-p00)."""
    p00, p10, p11, p01 = (np.asarray(p, dtype=float) for p in (p00, p10, p11, p01))
    u = np.linspace(0.0, 1.0, nu + 1)[:, None, None]
    v = np.linspace(0.0, 1.0, nv + 1)[None, :, None]
    pts = ((1 - u) * (1 - v) * p00 + u * (1 - v) * p10
           + u * v * p11 + (1 - u) * v * p01)
    return SurfaceMesh(pts.reshape(-1, 3), _grid_triangles(nu, nv, 0))


def rectangle_plate(center, normal, u_axis, size_u, size_v, nu, nv) -> SurfaceMesh:
    """Flat rectangle; outward normal as given."""
    n = _unit(normal)
    u = _unit(u_axis)
    v = np.cross(n, u)
    c = np.asarray(center, dtype=float)
    hu, hv = size_u / 2.0, size_v / 2.0
    return quad_patch(c - hu * u - hv * v, c + hu * u - hv * v,
                      c + hu * u + hv * v, c - hu * u + hv * v, nu, nv)


def box(center, size, n=(2, 2, 2)) -> SurfaceMesh:
    """Axis-aligned box with outward normals, n subdivisions per axis."""
    c = np.asarray(center, dtype=float)
    s = np.asarray(size, dtype=float) / 2.0
    faces = []
    axes = np.eye(3)
    subs = np.asarray(n, dtype=int)
    for ax in range(3):
        u_ax, v_ax = (ax + 1) % 3, (ax + 2) % 3
        for sign in (+1.0, -1.0):
            u = axes[u_ax] * sign  # flip one axis to keep normals outward
            faces.append(rectangle_plate(c + sign * s[ax] * axes[ax],
                                         sign * axes[ax], u,
                                         2 * s[u_ax], 2 * s[v_ax],
                                         subs[u_ax], subs[v_ax]))
    return weld(merge(faces), tol=1e-15)


def uv_sphere(center, radius, n_theta=24, n_phi=48) -> SurfaceMesh:
    c = np.asarray(center, dtype=float)
    verts = [c + np.array([0.0, 0.0, radius])]
    for i in range(1, n_theta):
        th = np.pi * i / n_theta
        for j in range(n_phi):
            ph = 2 * np.pi * j / n_phi
            verts.append(c + radius * np.array(
                [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)]))
    verts.append(c + np.array([0.0, 0.0, -radius]))
    verts = np.array(verts)
    tris = []
    def ring(i, j):
        return 1 + (i - 1) * n_phi + (j % n_phi)
    for j in range(n_phi):
        tris.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_theta - 1):
        for j in range(n_phi):
            a, b = ring(i, j), ring(i, j + 1)
            d, e = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append([a, d, e])
            tris.append([a, e, b])
    last = len(verts) - 1
    for j in range(n_phi):
        tris.append([last, ring(n_theta - 1, j + 1), ring(n_theta - 1, j)])
    return SurfaceMesh(verts, np.array(tris))


def disk(center, normal, radius, n_r=4, n_phi=24, inner_radius=0.0) -> SurfaceMesh:
    """Flat disk or annulus with the given outward normal."""
    n = _unit(normal)
    u = _perp(n)
    v = np.cross(n, u)
    c = np.asarray(center, dtype=float)
    radii = np.linspace(inner_radius, radius, n_r + 1)
    if inner_radius == 0.0:
        radii = radii[1:]
    phis = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    rings = [c + r * (np.cos(p) * u + np.sin(p) * v)
             for r in radii for p in phis]
    verts = np.array(rings)
    tris = []
    n_rings = len(radii)
    def idx(i, j):
        return i * n_phi + (j % n_phi)
    if inner_radius == 0.0:
        verts = np.vstack([[c], verts])
        for j in range(n_phi):
            tris.append([0, 1 + idx(0, j), 1 + idx(0, j + 1)])
        base = 1
    else:
        base = 0
    for i in range(n_rings - 1):
        for j in range(n_phi):
            a, b = base + idx(i, j), base + idx(i, j + 1)
            d, e = base + idx(i + 1, j), base + idx(i + 1, j + 1)
            tris.append([a, d, e])
            tris.append([a, e, b])
    m = SurfaceMesh(verts, np.array(tris))
    # orient normals along n
    if np.dot(m.normals().mean(axis=0), n) < 0:
        m = flip(m)
    return m


def flip(mesh: SurfaceMesh) -> SurfaceMesh:
    t = mesh.triangles.copy()
    t[:, [1, 2]] = t[:, [2, 1]]
    return SurfaceMesh(mesh.vertices.copy(), t)


def extrude_polygon(points2d, z_stations, edge_divisions=None,
                    caps=True) -> SurfaceMesh:
    """Extrude a CCW 2D polygon (in the xy plane) along z.

    z_stations: increasing array of z values (grading is the caller's choice).
    edge_divisions: per-edge subdivision counts (len == len(points2d)).
    The polygon must be star-shaped about its vertex centroid for the caps.
    CCW polygons get outward side normals.
    """
    pts = np.asarray(points2d, dtype=float)
    ne = len(pts)
    if edge_divisions is None:
        edge_divisions = [1] * ne
    z = np.asarray(z_stations, dtype=float)
    # build subdivided boundary loop
    loop = []
    for i in range(ne):
        a, b = pts[i], pts[(i + 1) % ne]
        k = max(1, int(edge_divisions[i]))
        for s in range(k):
            loop.append(a + (b - a) * (s / k))
    loop = np.array(loop)
    nl = len(loop)
    nz = len(z)
    verts = np.zeros((nl * nz, 3))
    for iz, zz in enumerate(z):
        verts[iz * nl:(iz + 1) * nl, :2] = loop
        verts[iz * nl:(iz + 1) * nl, 2] = zz
    tris = []
    for iz in range(nz - 1):
        for j in range(nl):
            a = iz * nl + j
            b = iz * nl + (j + 1) % nl
            c = (iz + 1) * nl + (j + 1) % nl
            d = (iz + 1) * nl + j
            tris.append([a, b, c])
            tris.append([a, c, d])
    if caps:
        centroid = loop.mean(axis=0)
        i_bot = len(verts)
        verts = np.vstack([verts, [[centroid[0], centroid[1], z[0]]]])
        for j in range(nl):
            tris.append([i_bot, (j + 1) % nl, j])
        i_top = len(verts)
        verts = np.vstack([verts, [[centroid[0], centroid[1], z[-1]]]])
        top0 = (nz - 1) * nl
        for j in range(nl):
            tris.append([i_top, top0 + j, top0 + (j + 1) % nl])
    return SurfaceMesh(verts, np.array(tris))


def graded_stations(lo: float, hi: float, fine_h: float, coarse_h: float,
                    focus: float = 0.0, fine_span: float = 0.0) -> np.ndarray:
    """Monotone station array from lo to hi, step fine_h within fine_span of
    focus, growing to coarse_h outside."""
    out = [lo]
    x = lo
    while x < hi:
        d = abs(x - focus)
        if d <= fine_span:
            h = fine_h
        else:
            h = min(coarse_h, fine_h + (d - fine_span) * 0.5)
        x = min(hi, x + h)
        out.append(x)
    return np.array(out)


# ---------------------------------------------------------------------------
# ray casting

def ray_hits(mesh: SurfaceMesh, origins, directions, eps=1e-15):
    """Moller-Trumbore: smallest positive hit distance per ray (inf if none).

    origins, directions: (R, 3). Returns (R,) distances.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    a, b, c = mesh.corners()
    e1 = b - a       # (T, 3)
    e2 = c - a
    best = np.full(len(o), np.inf)
    # chunk over rays to bound memory
    chunk = max(1, int(4e6 // max(1, len(a))))
    for s in range(0, len(o), chunk):
        oo = o[s:s + chunk][:, None, :]       # (r,1,3)
        dd = d[s:s + chunk][:, None, :]
        p = np.cross(dd, e2[None, :, :])      # (r,T,3)
        det = np.einsum("rtk,tk->rt", p, e1)
        inv = np.where(np.abs(det) > eps, 1.0 / np.where(det == 0, 1, det), 0.0)
        valid = np.abs(det) > eps
        tvec = oo - a[None, :, :]
        u = np.einsum("rtk,rtk->rt", tvec, p) * inv
        q = np.cross(tvec, e1[None, :, :])
        v = np.einsum("rtk,rtk->rt", q, dd) * inv
        t = np.einsum("rtk,tk->rt", q, e2) * inv
        hit = (valid & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12)
               & (t > eps))
        t = np.where(hit, t, np.inf)
        best[s:s + chunk] = t.min(axis=1)
    return best


def solid_angles(mesh: SurfaceMesh, points) -> np.ndarray:
    """Signed solid angle of the whole mesh seen from each point (sr).

    Van Oosterom-Strackee per triangle; positive when the outward normal
    faces away from the point. 4*pi for a point inside a closed mesh.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a, b, c = mesh.corners()
    total = np.zeros(len(p))
    chunk = max(1, int(2e6 // max(1, len(a))))
    for s in range(0, len(p), chunk):
        r1 = a[None] - p[s:s + chunk][:, None, :]
        r2 = b[None] - p[s:s + chunk][:, None, :]
        r3 = c[None] - p[s:s + chunk][:, None, :]
        n1 = np.linalg.norm(r1, axis=-1)
        n2 = np.linalg.norm(r2, axis=-1)
        n3 = np.linalg.norm(r3, axis=-1)
        num = np.einsum("ptk,ptk->pt", r1, np.cross(r2, r3))
        den = (n1 * n2 * n3 + np.einsum("ptk,ptk->pt", r1, r2) * n3
               + np.einsum("ptk,ptk->pt", r1, r3) * n2
               + np.einsum("ptk,ptk->pt", r2, r3) * n1)
        total[s:s + chunk] = 2.0 * np.arctan2(num, den).sum(axis=1)
    return total


# ---------------------------------------------------------------------------
# IO

def write_stl(mesh: SurfaceMesh, path, name="mesh"):
    a, b, c = mesh.corners()
    n = mesh.normals()
    with open(path, "w") as f:
        f.write(f"solid {name}\n")
        for i in range(mesh.n_triangles):
            f.write(f"  facet normal {n[i,0]:.9e} {n[i,1]:.9e} {n[i,2]:.9e}\n")
            f.write("    outer loop\n")
            for p in (a[i], b[i], c[i]):
                f.write(f"      vertex {p[0]:.9e} {p[1]:.9e} {p[2]:.9e}\n")
            f.write("    endloop\n  endfacet\n")
        f.write(f"endsolid {name}\n")


def read_stl(path) -> SurfaceMesh:
    verts = []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if parts and parts[0] == "vertex":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
    verts = np.array(verts)
    tris = np.arange(len(verts)).reshape(-1, 3)
    return weld(SurfaceMesh(verts, tris), tol=1e-15)


def mesh_to_dict(mesh: SurfaceMesh) -> dict:
    return {"vertices": mesh.vertices.tolist(),
            "triangles": mesh.triangles.tolist()}


def mesh_from_dict(d: dict) -> SurfaceMesh:
    return SurfaceMesh(np.array(d["vertices"], dtype=float),
                       np.array(d["triangles"], dtype=int))


def write_mesh_json(mesh: SurfaceMesh, path):
    with open(path, "w") as f:
        json.dump(mesh_to_dict(mesh), f)


def read_mesh_json(path) -> SurfaceMesh:
    with open(path) as f:
        return mesh_from_dict(json.load(f))


# ---------------------------------------------------------------------------
# small vector helpers

def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise MeshError("zero vector")
    return v / n


def _perp(n):
    """Any unit vector perpendicular to unit n."""
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    return _unit(np.cross(n, ref))


def point_triangle_distance(points, mesh: SurfaceMesh) -> np.ndarray:
    """Exact min distance from each point to the mesh surface. (P,) array."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a, b, c = mesh.corners()
    best = np.full(len(p), np.inf)
    chunk = max(1, int(2e6 // max(1, len(a))))
    for s in range(0, len(p), chunk):
        pp = p[s:s + chunk][:, None, :]
        d = _pt_tri_dist_block(pp, a[None], b[None], c[None])
        best[s:s + chunk] = d.min(axis=1)
    return best


def _pt_tri_dist_block(p, a, b, c):
    # Ericson-style closest point on triangle, vectorized
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...k,...k->...", ab, ap)
    d2 = np.einsum("...k,...k->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...k,...k->...", ab, bp)
    d4 = np.einsum("...k,...k->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...k,...k->...", ab, cp)
    d6 = np.einsum("...k,...k->...", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4
    denom = va + vb + vc
    denom = np.where(denom == 0, 1.0, denom)
    v = np.clip(vb / denom, 0.0, 1.0)
    w = np.clip(vc / denom, 0.0, 1.0)
    # interior closest point
    closest = a + v[..., None] * ab + w[..., None] * ac
    # region tests override with edge/vertex projections
    t_ab = np.clip(np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 == 0, 1, d1 - d3), 0.0), 0, 1)
    t_ac = np.clip(np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 == 0, 1, d2 - d6), 0.0), 0, 1)
    num_bc = d4 - d3
    den_bc = (d4 - d3) + (d5 - d6)
    t_bc = np.clip(np.where(den_bc != 0, num_bc / np.where(den_bc == 0, 1, den_bc), 0.0), 0, 1)
    on_vertex_a = (d1 <= 0) & (d2 <= 0)
    on_vertex_b = (d3 >= 0) & (d4 <= d3)
    on_vertex_c = (d6 >= 0) & (d5 <= d6)
    on_ab = (~on_vertex_a & ~on_vertex_b & (vc <= 0) & (d1 >= 0) & (d3 <= 0))
    on_ac = (~on_vertex_a & ~on_vertex_c & (vb <= 0) & (d2 >= 0) & (d6 <= 0))
    on_bc = (~on_vertex_b & ~on_vertex_c & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))
    closest = np.where(on_ab[..., None], a + t_ab[..., None] * ab, closest)
    closest = np.where(on_ac[..., None], a + t_ac[..., None] * ac, closest)
    closest = np.where(on_bc[..., None], b + t_bc[..., None] * (c - b), closest)
    closest = np.where(on_vertex_a[..., None], np.broadcast_to(a, closest.shape), closest)
    closest = np.where(on_vertex_b[..., None], np.broadcast_to(b, closest.shape), closest)
    closest = np.where(on_vertex_c[..., None], np.broadcast_to(c, closest.shape), closest)
    return np.linalg.norm(p - closest, axis=-1)

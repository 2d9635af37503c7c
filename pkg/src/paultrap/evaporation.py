"""Directional e-beam metalization: line-of-sight coverage on a tilted,
rotating geometry, and conductive-connectivity analysis of the deposit.

Deposition model is purely ballistic with a cosine flux law: during a full
rotation, each triangle accumulates (nominal / samples) * max(0, cos alpha)
per rotation sample, and only when the ray from its centroid toward the
source is unobstructed by the rest of the geometry. No re-emission, surface
diffusion, or sticking physics. The rotation rate itself does not enter the
time-averaged model and is not a parameter.

Electrodes stay isolated after coating because trenches interrupt the
conductive film: any surface strip that never sees the beam (for example the
underside of a serif overhang, which faces away from every source position)
stays bare and severs the film. `connectivity` checks this by flood-filling
coated triangles across shared edges.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import mesh as msh
from .mesh import SurfaceMesh


class EvaporationError(ValueError):
    pass


@dataclass(frozen=True)
class EvaporationConfig:
    """Tilt is the angle between the beam and the rotation axis."""
    tilt: float = math.pi / 3.0
    samples: int = 360
    nominal_thickness: float = 2.0e-6     # 2 um gold (10 nm Ti adhesion
                                          # folded into one conductive layer)
    axis: tuple = (0.0, 0.0, 1.0)         # rotation axis (trap axis)

    def __post_init__(self):
        if not 0.0 <= self.tilt < math.pi / 2.0:
            raise EvaporationError("tilt must lie in [0, pi/2)")
        if self.samples < 1 or (self.samples < 8 and self.tilt > 0):
            raise EvaporationError("need >= 8 rotation samples")
        if not self.nominal_thickness > 0:
            raise EvaporationError("nominal thickness must be positive")
        a = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(a)
        if not n > 0:
            raise EvaporationError("rotation axis must be nonzero")
        object.__setattr__(self, "axis", tuple(a / n))

    def source_directions(self) -> np.ndarray:
        """(samples, 3) unit vectors from the geometry toward the source."""
        a = np.asarray(self.axis)
        u = msh._perp(a)
        v = np.cross(a, u)
        th = np.arange(self.samples) * (2.0 * math.pi / self.samples)
        return (math.sin(self.tilt) * (np.cos(th)[:, None] * u
                                       + np.sin(th)[:, None] * v)
                + math.cos(self.tilt) * a)


@dataclass(frozen=True)
class CoverageMap:
    mesh: SurfaceMesh
    thickness: np.ndarray             # (n_triangles,) m
    config: EvaporationConfig
    electrode_slices: dict = field(default_factory=dict)  # name -> slice

    def __post_init__(self):
        object.__setattr__(self, "thickness",
                           np.asarray(self.thickness, dtype=float))
        if len(self.thickness) != self.mesh.n_triangles:
            raise EvaporationError("thickness length != triangle count")
        if np.any(self.thickness < 0):
            raise EvaporationError("negative thickness")

    def electrode_thickness(self, name: str) -> np.ndarray:
        return self.thickness[self.electrode_slices[name]]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["triangle", "thickness_m"])
            for i, t in enumerate(self.thickness):
                w.writerow([i, f"{t:.9e}"])

    def summary(self) -> dict:
        out = {"nominal_thickness_m": self.config.nominal_thickness,
               "tilt_rad": self.config.tilt,
               "samples": self.config.samples,
               "min_thickness_m": float(self.thickness.min())
               if len(self.thickness) else 0.0,
               "mean_thickness_m": float(self.thickness.mean())
               if len(self.thickness) else 0.0,
               "electrodes": {}}
        for name, sl in sorted(self.electrode_slices.items()):
            t = self.thickness[sl]
            out["electrodes"][name] = {"min_thickness_m": float(t.min()),
                                       "mean_thickness_m": float(t.mean())}
        return out

    def save_summary(self, path):
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2, sort_keys=True)
            f.write("\n")


def _as_mesh(geometry):
    if isinstance(geometry, SurfaceMesh):
        return geometry, {}
    # TrapGeometry-like: electrodes with .name/.mesh
    slices = {}
    offset = 0
    for e in geometry.electrodes:
        n = e.mesh.n_triangles
        slices[e.name] = slice(offset, offset + n)
        offset += n
    return geometry.merged_mesh(), slices


def coverage(geometry, config: EvaporationConfig,
             subset=None) -> CoverageMap:
    """Deposited thickness per triangle after one full rotation.

    subset optionally restricts which triangles are evaluated (their indices
    into the merged mesh); occlusion is always tested against the full
    geometry. Triangles outside the subset report zero thickness.
    """
    full, slices = _as_mesh(geometry)
    normals = full.normals()
    cen = full.centroids()
    if subset is None:
        idx = np.arange(full.n_triangles)
    else:
        idx = np.asarray(subset, dtype=int)
    lo, hi = full.bounds()
    offset = 1e-6 * float(np.max(hi - lo) or 1.0)

    thickness = np.zeros(full.n_triangles)
    per_sample = config.nominal_thickness / config.samples
    for s in config.source_directions():
        cosa = normals[idx] @ s
        lit = cosa > 0.0
        if not np.any(lit):
            continue
        sub = idx[lit]
        origins = cen[sub] + offset * s
        dist = msh.ray_hits(full, origins, np.broadcast_to(s, origins.shape))
        clear = ~np.isfinite(dist)
        thickness[sub[clear]] += per_sample * cosa[lit][clear]
    return CoverageMap(full, thickness, config, slices)


# ---------------------------------------------------------------------------
# connectivity

@dataclass(frozen=True)
class ConductiveGraph:
    labels: np.ndarray          # (n_triangles,) component id, -1 = bare
    n_components: int
    component_pads: dict        # component id -> sorted tuple of pad names
    threshold: float

    @property
    def isolated(self) -> bool:
        return all(len(p) <= 1 for p in self.component_pads.values())

    def shorted_pairs(self):
        pairs = set()
        for pads in self.component_pads.values():
            for i in range(len(pads)):
                for j in range(i + 1, len(pads)):
                    pairs.add((pads[i], pads[j]))
        return sorted(pairs)

    def pad_component(self, pad: str):
        for comp, pads in self.component_pads.items():
            if pad in pads:
                return comp
        return None


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[rj] = ri


def _edge_keys(mesh: SurfaceMesh, decimals=12):
    """Per-triangle edge keys from rounded vertex coordinates, so meshes
    assembled from separately built patches still connect along seams."""
    v = np.round(mesh.vertices, decimals)
    key = {}
    vid = np.empty(len(v), dtype=int)
    for i, row in enumerate(map(tuple, v)):
        vid[i] = key.setdefault(row, len(key))
    t = vid[mesh.triangles]
    edges = []
    for k in range(3):
        a, b = t[:, k], t[:, (k + 1) % 3]
        edges.append(np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1))
    return np.stack(edges, axis=1)      # (n_tri, 3, 2)


def connectivity(cov: CoverageMap, pads: dict,
                 threshold: float = 50e-9) -> ConductiveGraph:
    """Connected components of the coated film across shared triangle edges.

    pads: name -> triangle indices considered part of that electrode pad.
    A design is isolated when no component touches two different pads.
    """
    if not threshold > 0:
        raise EvaporationError("threshold must be positive")
    conductive = cov.thickness >= threshold
    n = cov.mesh.n_triangles
    uf = _UnionFind(n)
    edges = _edge_keys(cov.mesh)
    owner = {}
    for i in np.flatnonzero(conductive):
        for e in map(tuple, edges[i]):
            j = owner.setdefault(e, i)
            if j != i:
                uf.union(i, j)
    labels = np.full(n, -1, dtype=int)
    roots = {}
    for i in np.flatnonzero(conductive):
        r = uf.find(i)
        labels[i] = roots.setdefault(r, len(roots))
    comp_pads = {c: set() for c in range(len(roots))}
    for name, tri in pads.items():
        for i in np.atleast_1d(np.asarray(tri, dtype=int)):
            if labels[i] >= 0:
                comp_pads[labels[i]].add(name)
    comp_pads = {c: tuple(sorted(p)) for c, p in comp_pads.items()}
    return ConductiveGraph(labels, len(roots), comp_pads, threshold)


# ---------------------------------------------------------------------------
# trench test geometry (standalone, per the typical published trench scale)

def trench_test_geometry(plate_width: float = 200e-6,
                         trench_width: float = 40e-6,
                         trench_depth: float = 20e-6,
                         length: float = 160e-6,
                         serifs: bool = True,
                         serif_overhang: float = 8e-6,
                         serif_thickness: float = 6e-6,
                         n_len: int = 6):
    """Two coplanar pads separated by a trench running along y.

    With `serifs`, a ledge overhangs each trench wall; its underside faces
    away from every beam position of a top-side evaporation and stays bare,
    severing the film between pad and trench wall. Without serifs the
    straight walls are in direct view at glancing tilts and the film shorts
    the pads. Returns (mesh, pads) with pads = {"pad_a": idx, "pad_b": idx}.

    All patches share subdivision along y so `connectivity` joins them.
    """
    if not 0 < trench_width < plate_width:
        raise EvaporationError("trench must be narrower than the plate")
    if serifs and not 0 < 2 * serif_overhang < trench_width:
        raise EvaporationError("serif overhangs must not meet")
    if serifs and not 0 < serif_thickness < trench_depth:
        raise EvaporationError("serif thickness must be < trench depth")
    w2, W2, L2, d = (trench_width / 2.0, plate_width / 2.0,
                     length / 2.0, trench_depth)

    def strip(x0, z0, x1, z1, nu, normal_sign=1):
        # patch swept along y between (x0, z0) and (x1, z1)
        p00 = [x0, -L2, z0]
        p10 = [x1, -L2, z1]
        p11 = [x1, L2, z1]
        p01 = [x0, L2, z0]
        m = msh.quad_patch(p00, p10, p11, p01, nu, n_len)
        return m if normal_sign > 0 else msh.flip(m)

    pieces = []

    def add(m):
        start = sum(p.n_triangles for p in pieces)
        pieces.append(m)
        return np.arange(start, start + m.n_triangles)

    pad_a = add(strip(-W2, 0.0, -w2, 0.0, 8))                    # faces +z
    pad_b = add(strip(w2, 0.0, W2, 0.0, 8))
    if serifs:
        xs = w2 - serif_overhang
        # left side: ledge inner face, underside, wall below ledge
        add(strip(-xs, 0.0, -xs, -serif_thickness, 2))           # faces +x
        add(strip(-xs, -serif_thickness, -w2, -serif_thickness, 3))  # -z
        add(strip(-w2, -serif_thickness, -w2, -d, 4))            # faces +x
        # right side mirror
        add(strip(xs, 0.0, xs, -serif_thickness, 2, -1))         # faces -x
        add(strip(xs, -serif_thickness, w2, -serif_thickness, 3, -1))
        add(strip(w2, -serif_thickness, w2, -d, 4, -1))
    else:
        add(strip(-w2, 0.0, -w2, -d, 4))                         # faces +x
        add(strip(w2, 0.0, w2, -d, 4, -1))                       # faces -x
    add(strip(-w2, -d, w2, -d, 6))                               # floor
    merged = msh.merge(pieces)
    return merged, {"pad_a": pad_a, "pad_b": pad_b}

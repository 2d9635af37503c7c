"""Cached field grids: regular 3D grids of per-basis potentials and fields
with cubic interpolation, plus a versioned binary container for reload.

Interpolation uses scipy's RegularGridInterpolator with method="cubic",
i.e. separable piecewise-cubic interpolation on the regular grid — the
documented tricubic equivalent required by the FieldGrid invariant.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .fieldsolver import FieldSet, evaluate_many

MAGIC = b"PTFC"
FORMAT_VERSION = 1


class GridError(RuntimeError):
    pass


class RegionOverlapsElectrodeError(GridError):
    pass


@dataclass
class FieldGrid:
    """Regular grid of per-electrode unit-voltage potentials and fields."""
    origin: np.ndarray            # (3,)
    spacing: np.ndarray           # (3,)
    shape: tuple                  # (nx, ny, nz)
    electrode_names: tuple
    potentials: np.ndarray        # (nb, nx, ny, nz), V per applied volt
    fields: np.ndarray            # (nb, nx, ny, nz, 3), V/m per applied volt
    _interp: dict = field(default_factory=dict, repr=False, compare=False)

    def axes(self):
        return tuple(self.origin[i] + self.spacing[i] * np.arange(self.shape[i])
                     for i in range(3))

    @property
    def upper(self):
        return self.origin + self.spacing * (np.array(self.shape) - 1)

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.all((p >= self.origin - 1e-15) & (p <= self.upper + 1e-15),
                      axis=1)

    def _interpolator(self, key, values):
        if key not in self._interp:
            method = "cubic" if min(self.shape) >= 4 else "linear"
            self._interp[key] = RegularGridInterpolator(
                self.axes(), values, method=method, bounds_error=True)
        return self._interp[key]

    def _index(self, electrode: str) -> int:
        try:
            return self.electrode_names.index(electrode)
        except ValueError:
            raise KeyError(f"electrode '{electrode}' not in grid") from None

    def potential_basis(self, electrode: str, points) -> np.ndarray:
        b = self._index(electrode)
        return self._interpolator(("p", b), self.potentials[b])(
            np.atleast_2d(points))

    def field_basis(self, electrode: str, points) -> np.ndarray:
        b = self._index(electrode)
        out = np.empty((len(np.atleast_2d(points)), 3))
        for k in range(3):
            out[:, k] = self._interpolator(("f", b, k),
                                           self.fields[b, ..., k])(
                np.atleast_2d(points))
        return out

    def _weights(self, voltages: dict) -> np.ndarray:
        w = np.zeros(len(self.electrode_names))
        for name, v in voltages.items():
            w[self._index(name)] = v
        return w

    def potential_for(self, voltages: dict, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        w = self._weights(voltages)
        out = np.zeros(len(pts))
        for b, wb in enumerate(w):
            if wb != 0.0:
                out += wb * self._interpolator(("p", b),
                                               self.potentials[b])(pts)
        return out[0] if np.asarray(points).ndim == 1 else out

    def field_for(self, voltages: dict, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        w = self._weights(voltages)
        out = np.zeros((len(pts), 3))
        for b, wb in enumerate(w):
            if wb == 0.0:
                continue
            for k in range(3):
                out[:, k] += wb * self._interpolator(
                    ("f", b, k), self.fields[b, ..., k])(pts)
        return out[0] if np.asarray(points).ndim == 1 else out


def _region_clear(fieldset: FieldSet, geometry, lo, hi):
    """Reject regions whose corner/center probes fall inside an electrode."""
    if geometry is None:
        return
    probes = [lo, hi, (lo + hi) / 2]
    for cx in (lo[0], hi[0]):
        for cy in (lo[1], hi[1]):
            for cz in (lo[2], hi[2]):
                probes.append(np.array([cx, cy, cz]))
    from .geometry import point_inside
    for e in geometry.electrodes:
        for p in probes:
            if point_inside(e.mesh, p):
                raise RegionOverlapsElectrodeError(
                    f"region probe {p} lies inside electrode '{e.name}'")


def cache_grid(fieldset: FieldSet, region, spacing, geometry=None,
               electrodes=None) -> FieldGrid:
    """Evaluate every basis on a regular grid over region=(lo, hi).

    The too-close evaluation guard doubles as the electrode-overlap check:
    a grid node inside or on an electrode raises before any values are
    cached. Pass the TrapGeometry for the additional interior-probe test.
    """
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    if np.any(hi <= lo):
        raise GridError("region upper bound must exceed lower bound")
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), 3).copy()
    _region_clear(fieldset, geometry, lo, hi)
    shape = tuple(int(np.floor((hi[i] - lo[i]) / spacing[i] + 1e-9)) + 1
                  for i in range(3))
    axes = [lo[i] + spacing[i] * np.arange(shape[i]) for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if electrodes is None:
        electrodes = [n for n in fieldset.system.electrode_names
                      if n in fieldset.solutions]
    sig = np.vstack([fieldset.solutions[n].sigma for n in electrodes])
    try:
        phi, E = evaluate_many(fieldset.system, sig, pts)
    except Exception as exc:
        from .fieldsolver import EvaluationTooCloseError
        if isinstance(exc, EvaluationTooCloseError):
            raise RegionOverlapsElectrodeError(str(exc)) from exc
        raise
    nb = len(electrodes)
    return FieldGrid(lo, spacing, shape, tuple(electrodes),
                     phi.reshape((nb,) + shape),
                     E.reshape((nb,) + shape + (3,)))


# ---------------------------------------------------------------------------
# binary container: magic, version, header-length, JSON header, then the
# potential and field arrays as little-endian float64 in header-given order

def write_grid(grid: FieldGrid, path, sidecar=True):
    header = {
        "format": "paultrap-field-cache",
        "version": FORMAT_VERSION,
        "origin_m": list(map(float, grid.origin)),
        "spacing_m": list(map(float, grid.spacing)),
        "shape": list(grid.shape),
        "electrodes": list(grid.electrode_names),
        "arrays": ["potentials", "fields"],
        "dtype": "<f8",
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        f.write(np.ascontiguousarray(grid.potentials, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(grid.fields, dtype="<f8").tobytes())
    if sidecar:
        with open(str(path) + ".json", "w") as f:
            json.dump(header, f, sort_keys=True, indent=2)
            f.write("\n")


def read_grid(path) -> FieldGrid:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise GridError(f"{path}: not a field-cache file (bad magic)")
        version, = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise GridError(f"{path}: unsupported version {version}")
        hlen, = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        shape = tuple(header["shape"])
        nb = len(header["electrodes"])
        n = nb * int(np.prod(shape))
        pot = np.frombuffer(f.read(8 * n), dtype="<f8").reshape((nb,) + shape)
        fld = np.frombuffer(f.read(8 * 3 * n),
                            dtype="<f8").reshape((nb,) + shape + (3,))
    return FieldGrid(np.array(header["origin_m"]),
                     np.array(header["spacing_m"]), shape,
                     tuple(header["electrodes"]), pot.copy(), fld.copy())

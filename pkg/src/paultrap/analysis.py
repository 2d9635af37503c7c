"""Trap characterization from basis fields: pseudopotential, rf null,
secular frequencies and principal axes, Mathieu q/a, stability, trap depth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .constants import ELEMENTARY_CHARGE, CA40_MASS
from .geometry import ElectrodeRole
from .fieldsolver import EvaluationTooCloseError

HESSIAN_STEP_FRACTION = 1.0 / 200.0   # of r0, before Richardson refinement
NULL_TOLERANCE = 1e-3                 # V/m of rf field per applied volt


class AnalysisError(RuntimeError):
    pass


class NullNotFoundError(AnalysisError):
    pass


class UnboundedRegionError(AnalysisError):
    pass


@dataclass(frozen=True)
class IonSpecies:
    mass: float     # kg
    charge: float   # C

    def __post_init__(self):
        if not (self.mass > 0):
            raise ValueError("ion mass must be positive")
        if self.charge == 0:
            raise ValueError("ion charge must be nonzero")

    @classmethod
    def ca40(cls) -> "IonSpecies":
        return cls(CA40_MASS, ELEMENTARY_CHARGE)


@dataclass(frozen=True)
class DriveConfig:
    """Rf drive and dc voltages. U_rf is the peak voltage on the RF pair."""
    omega_rf: float                  # rad/s
    u_rf: float                      # V peak
    dc_voltages: dict                # electrode name -> V
    species: IonSpecies
    endcap_shorted: str | None = None   # electrode forced to 0 V

    def __post_init__(self):
        if not (self.omega_rf > 0):
            raise ValueError("omega_rf must be positive")

    def rf_voltages(self, system) -> dict:
        v = {n: self.u_rf for n in system.electrodes_with_role(ElectrodeRole.RF)}
        if not v:
            raise AnalysisError("no RF-role electrodes in system")
        return v

    def static_voltages(self) -> dict:
        v = dict(self.dc_voltages)
        if self.endcap_shorted is not None:
            v[self.endcap_shorted] = 0.0
        return v

    @classmethod
    def table1(cls, endcap_volts=60.0, endcap_shorted=None) -> "DriveConfig":
        """Table I drive: 2*pi*15.82 MHz, 30 V peak, 60 V endcaps, 40Ca+."""
        dc = {f"endcap_{i}": endcap_volts for i in (1, 2, 3, 4)}
        return cls(2 * math.pi * 15.82e6, 30.0, dc, IonSpecies.ca40(),
                   endcap_shorted)

    def to_dict(self) -> dict:
        return {
            "omega_rf": {"value": self.omega_rf / (2 * math.pi),
                         "unit": "Hz"},
            "u_rf": {"value": self.u_rf, "unit": "V"},
            "dc_voltages": {k: {"value": v, "unit": "V"}
                            for k, v in sorted(self.dc_voltages.items())},
            "species": {"mass_kg": self.species.mass,
                        "charge_C": self.species.charge},
            "endcap_shorted": self.endcap_shorted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DriveConfig":
        def angular(entry):
            unit = entry.get("unit", "Hz")
            if unit == "Hz":
                return 2 * math.pi * float(entry["value"])
            if unit in ("rad/s", "rad_per_s"):
                return float(entry["value"])
            raise ValueError(f"unknown frequency unit '{unit}'")

        def volts(entry):
            if isinstance(entry, dict):
                if entry.get("unit", "V") != "V":
                    raise ValueError(f"unknown voltage unit '{entry['unit']}'")
                return float(entry["value"])
            return float(entry)

        sp = d.get("species")
        species = (IonSpecies(float(sp["mass_kg"]), float(sp["charge_C"]))
                   if sp else IonSpecies.ca40())
        return cls(angular(d["omega_rf"]), volts(d["u_rf"]),
                   {k: volts(v) for k, v in d.get("dc_voltages", {}).items()},
                   species, d.get("endcap_shorted"))

    @classmethod
    def load(cls, path) -> "DriveConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")


class TrapFields:
    """Adapter giving rf/dc potentials and fields from either a FieldSet
    (direct BEM evaluation) or a FieldGrid (interpolated)."""

    def __init__(self, source, drive: DriveConfig, system=None):
        self.drive = drive
        from .fieldsolver import FieldSet
        if isinstance(source, FieldSet):
            self._fs = source
            self._grid = None
            system = source.system
        else:
            self._fs = None
            self._grid = source
            if system is None:
                raise AnalysisError("FieldGrid source needs the PanelSystem "
                                    "for electrode roles")
        self.system = system
        rf_names = system.electrodes_with_role(ElectrodeRole.RF)
        self.rf_voltages = {n: drive.u_rf for n in rf_names}
        self.dc_voltages = {k: v for k, v in drive.static_voltages().items()
                            if v != 0.0}

    def with_offsets(self, dc_offsets: dict) -> "TrapFields":
        """Same field source with extra dc volts added per electrode."""
        from dataclasses import replace
        dc = dict(self.drive.dc_voltages)
        for name, v in dc_offsets.items():
            dc[name] = dc.get(name, 0.0) + v
        drive = replace(self.drive, dc_voltages=dc)
        source = self._fs if self._fs is not None else self._grid
        return TrapFields(source, drive, system=self.system)

    def basis_field(self, electrode: str, points) -> np.ndarray:
        """Field of one electrode at 1 V, all others grounded (V/m)."""
        if self._fs is not None:
            return self._fs.field(np.atleast_2d(points), {electrode: 1.0})
        return np.atleast_2d(self._grid.field_basis(electrode,
                                                    np.atleast_2d(points)))

    def rf_field(self, points) -> np.ndarray:
        """Peak rf field amplitude vector, V/m."""
        if self._fs is not None:
            return self._fs.field(np.atleast_2d(points), self.rf_voltages)
        return np.atleast_2d(self._grid.field_for(self.rf_voltages,
                                                  np.atleast_2d(points)))

    def dc_field(self, points) -> np.ndarray:
        if not self.dc_voltages:
            return np.zeros_like(np.atleast_2d(points), dtype=float)
        if self._fs is not None:
            return self._fs.field(np.atleast_2d(points), self.dc_voltages)
        return np.atleast_2d(self._grid.field_for(self.dc_voltages,
                                                  np.atleast_2d(points)))

    def dc_potential(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        if not self.dc_voltages:
            return np.zeros(len(pts))
        if self._fs is not None:
            return self._fs.potential(pts, self.dc_voltages)
        return np.atleast_1d(self._grid.potential_for(self.dc_voltages, pts))

    def rf_potential(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self._fs is not None:
            return self._fs.potential(pts, self.rf_voltages)
        return np.atleast_1d(self._grid.potential_for(self.rf_voltages, pts))


def pseudopotential(fields: TrapFields, drive: DriveConfig, points) -> np.ndarray:
    """Total effective potential in eV: rf pseudopotential plus dc energy.

    Phi = q^2 |E_rf|^2 / (4 m Omega^2) + q V_dc, with E_rf the peak field.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    q = drive.species.charge
    m = drive.species.mass
    E = fields.rf_field(pts)
    e2 = np.einsum("pk,pk->p", E, E)
    joules = (q * q * e2 / (4.0 * m * drive.omega_rf ** 2)
              + q * fields.dc_potential(pts))
    ev = joules / ELEMENTARY_CHARGE
    return ev[0] if np.asarray(points).ndim == 1 else ev


def find_rf_null(fields: TrapFields, drive: DriveConfig, guess,
                 tol=NULL_TOLERANCE, max_iter=100) -> np.ndarray:
    """Damped Gauss-Newton minimization of |E_rf|^2.

    The Jacobian dE/dx comes from central differences of the analytic field;
    the step is halved until |E_rf| decreases (documented damping).
    """
    x = np.asarray(guess, dtype=float).copy()
    scale = abs(drive.u_rf) if drive.u_rf != 0 else 1.0
    h = 1e-6  # m, field-Jacobian step
    for _ in range(max_iter):
        E = fields.rf_field(x[None, :])[0]
        if np.linalg.norm(E) < tol * scale:
            return x
        J = np.empty((3, 3))
        for k in range(3):
            dx = np.zeros(3)
            dx[k] = h
            J[:, k] = (fields.rf_field((x + dx)[None, :])[0]
                       - fields.rf_field((x - dx)[None, :])[0]) / (2 * h)
        try:
            step = np.linalg.solve(J, -E)
        except np.linalg.LinAlgError:
            step = -J.T @ E / max(np.linalg.norm(J) ** 2, 1e-300)
        f0 = float(E @ E)
        lam = 1.0
        for _ in range(30):
            En = fields.rf_field((x + lam * step)[None, :])[0]
            if float(En @ En) < f0:
                break
            lam *= 0.5
        x = x + lam * step
    E = fields.rf_field(x[None, :])[0]
    if np.linalg.norm(E) < tol * scale:
        return x
    raise NullNotFoundError(
        f"rf-null search did not converge in {max_iter} iterations; "
        f"|E_rf| = {np.linalg.norm(E):.3e} V/m at {x}")


def _hessian(f, x0, h):
    """Central-difference Hessian with one Richardson refinement."""
    def hess(step):
        H = np.empty((3, 3))
        f0 = f(x0)
        for i in range(3):
            ei = np.zeros(3)
            ei[i] = step
            H[i, i] = (f(x0 + ei) - 2 * f0 + f(x0 - ei)) / step ** 2
            for j in range(i + 1, 3):
                ej = np.zeros(3)
                ej[j] = step
                H[i, j] = H[j, i] = (f(x0 + ei + ej) - f(x0 + ei - ej)
                                     - f(x0 - ei + ej) + f(x0 - ei - ej)) \
                    / (4 * step ** 2)
        return H
    H1 = hess(h)
    H2 = hess(2 * h)
    return (4.0 * H1 - H2) / 3.0


def _second_derivative_along(f, x0, direction, h):
    d = np.asarray(direction, dtype=float)

    def along(step):
        return (f(x0 + step * d) - 2 * f(x0) + f(x0 - step * d)) / step ** 2

    return (4.0 * along(h) - along(2 * h)) / 3.0


@dataclass
class TrapCharacterization:
    rf_null: np.ndarray
    axes: np.ndarray                  # rows are principal unit vectors
    secular_frequencies: np.ndarray   # rad/s, same order as axes
    mathieu_q: np.ndarray
    mathieu_a: np.ndarray
    stable: np.ndarray                # bool per axis
    depth_ev: float | None = None
    saddle: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def radial_indices(self):
        """The two axes most orthogonal to z."""
        return tuple(np.argsort(np.abs(self.axes[:, 2]))[:2])

    @property
    def axial_index(self):
        return int(np.argmax(np.abs(self.axes[:, 2])))

    def to_dict(self) -> dict:
        d = {
            "rf_null_m": [float(v) for v in self.rf_null],
            "principal_axes": [[float(v) for v in row] for row in self.axes],
            "secular_frequencies_Hz": [float(w / (2 * math.pi))
                                       for w in self.secular_frequencies],
            "mathieu_q": [float(v) for v in self.mathieu_q],
            "mathieu_a": [float(v) for v in self.mathieu_a],
            "stable": [bool(v) for v in self.stable],
        }
        if self.depth_ev is not None:
            d["trap_depth_eV"] = float(self.depth_ev)
        if self.saddle is not None:
            d["saddle_m"] = [float(v) for v in self.saddle]
        d.update(self.extras)
        return d


def characterize(fields: TrapFields, drive: DriveConfig, r0: float,
                 guess=(0.0, 0.0, 0.0), with_depth=False) -> TrapCharacterization:
    """Secular frequencies, axes, and Mathieu parameters at the rf null."""
    null = find_rf_null(fields, drive, np.asarray(guess, dtype=float))
    q_e = drive.species.charge
    m = drive.species.mass
    h = r0 * HESSIAN_STEP_FRACTION

    def phi_joule(x):
        return float(pseudopotential(fields, drive, x)) * ELEMENTARY_CHARGE

    H = _hessian(phi_joule, null, h)
    H = 0.5 * (H + H.T)
    evals, evecs = np.linalg.eigh(H)

    def phi_rf(x):
        return float(fields.rf_potential(x[None, :])[0])

    def phi_dc(x):
        return float(fields.dc_potential(x[None, :])[0])

    # The symmetric trap leaves the radial eigenpair degenerate, so axes
    # from eigh are arbitrary within that plane. Tie-break by diagonalizing
    # the rf-potential Hessian restricted to the near-degenerate subspace:
    # this aligns the radial axes with the rf quadrupole (toward the RF
    # blades), where the Mathieu q is meaningful.
    evals = evals.copy()
    evecs = evecs.copy()
    groups = []
    i = 0
    scale = np.max(np.abs(evals)) or 1.0
    while i < 3:
        j = i
        while j + 1 < 3 and abs(evals[j + 1] - evals[i]) < 0.05 * scale:
            j += 1
        groups.append((i, j))
        i = j + 1
    Hrf = _hessian(phi_rf, null, h)
    Hrf = 0.5 * (Hrf + Hrf.T)
    for (i0, i1) in groups:
        if i1 > i0:
            sub = evecs[:, i0:i1 + 1]
            w, v = np.linalg.eigh(sub.T @ Hrf @ sub)
            evecs[:, i0:i1 + 1] = sub @ v
    axes = evecs.T.copy()
    # sign convention: radial axes toward +x/+y half-planes, axial toward +z
    order = np.argsort(np.abs(axes[:, 2]))  # radial axes first
    for idx in order[:2]:
        ref = axes[idx][:2]
        if (abs(ref[0]) >= abs(ref[1]) and ref[0] < 0) or \
           (abs(ref[1]) > abs(ref[0]) and ref[1] < 0):
            axes[idx] = -axes[idx]
    if axes[order[2]] @ np.array([0.0, 0.0, 1.0]) < 0:
        axes[order[2]] = -axes[order[2]]
    evals = np.array([axes[k] @ H @ axes[k] for k in range(3)])

    omega = np.where(evals > 0, np.sqrt(np.abs(evals) / m), np.nan)
    stable_curv = evals > 0

    qs = np.empty(3)
    a_s = np.empty(3)
    for i in range(3):
        d2rf = _second_derivative_along(phi_rf, null, axes[i], h)
        d2dc = _second_derivative_along(phi_dc, null, axes[i], h)
        qs[i] = 2.0 * q_e * d2rf / (m * drive.omega_rf ** 2)
        a_s[i] = 4.0 * q_e * d2dc / (m * drive.omega_rf ** 2)
    stable = np.array([stability_check(qs[i], a_s[i]) and bool(stable_curv[i])
                       for i in range(3)])
    char = TrapCharacterization(null, axes, omega, qs, a_s, stable)
    if with_depth:
        depth, saddle = trap_depth(fields, drive, r0, null=null)
        char.depth_ev = depth
        char.saddle = saddle
    return char


def trap_depth(fields: TrapFields, drive: DriveConfig, r0: float,
               null=None, n_directions=72, max_radius=None,
               step=None) -> tuple:
    """Lowest escape barrier of the pseudopotential, in eV.

    Scans radial rays through the null plus the two axial directions; each
    ray is marched outward until the potential falls below the running
    maximum or the surface guard trips. The lowest barrier point is refined
    by Newton iterations on the gradient (saddle search).
    """
    if null is None:
        null = find_rf_null(fields, drive, np.zeros(3))
    if max_radius is None:
        max_radius = 12.0 * r0
    if step is None:
        step = r0 / 30.0

    def phi_pt(p):
        return float(pseudopotential(fields, drive, p))

    # depth is measured from the total-potential minimum, which the dc
    # fields displace slightly from the rf null
    x0 = np.asarray(null, dtype=float).copy()
    h0 = r0 / 400.0
    for _ in range(60):
        g = np.empty(3)
        for k in range(3):
            dx = np.zeros(3)
            dx[k] = h0
            g[k] = (phi_pt(x0 + dx) - phi_pt(x0 - dx)) / (2 * h0)
        H = _hessian(phi_pt, x0, h0)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        n = np.linalg.norm(delta)
        if n > r0:
            delta *= r0 / n
        if phi_pt(x0 + delta) <= phi_pt(x0):
            x0 = x0 + delta
        if np.linalg.norm(delta) < 1e-11:
            break
    phi0 = phi_pt(x0)

    directions = [np.array([math.cos(a), math.sin(a), 0.0])
                  for a in np.linspace(0, 2 * math.pi, n_directions,
                                       endpoint=False)]
    directions += [np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0])]

    best = None
    blocked_only = True
    for d in directions:
        peak = phi0
        peak_x = x0
        r = step
        while r <= max_radius:
            x = x0 + r * d
            try:
                val = phi_pt(x)
            except EvaluationTooCloseError:
                break  # ray terminates on an electrode: no escape this way
            if val > peak:
                peak = val
                peak_x = x
            elif peak > phi0 and val < phi0 + 0.5 * (peak - phi0):
                # came down well below the barrier: this ray escapes
                blocked_only = False
                if best is None or peak - phi0 < best[0]:
                    best = (peak - phi0, peak_x)
                break
            r += step
    if best is None:
        if blocked_only:
            raise UnboundedRegionError(
                "no escape detected within the scan radius; enlarge the "
                "cached region / max_radius to locate the saddle")
        raise AnalysisError("no barrier found on any escape ray")
    # Newton refinement of the saddle: solve grad Phi = 0 near the peak
    x = np.asarray(best[1], dtype=float).copy()
    h = r0 / 400.0
    phi = phi_pt

    for _ in range(40):
        g = np.empty(3)
        for k in range(3):
            dx = np.zeros(3)
            dx[k] = h
            g[k] = (phi(x + dx) - phi(x - dx)) / (2 * h)
        H = _hessian(phi, x, h)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        n = np.linalg.norm(delta)
        if n > 2 * r0:
            delta *= 2 * r0 / n
        x = x + delta
        if np.linalg.norm(delta) < 1e-10:
            break
    try:
        refined = phi(x)
        H = _hessian(phi, x, h)
        if (np.linalg.norm(x - best[1]) < 3 * r0
                and np.any(np.linalg.eigvalsh(H) < 0)
                and refined > phi0):
            return refined - phi0, x
    except EvaluationTooCloseError:
        pass
    return best[0], np.asarray(best[1])


def stability_check(q, a) -> bool:
    """Floquet stability of u'' + (a - 2 q cos 2 tau) u = 0.

    Integrates the monodromy matrix over one period (tau in [0, pi]);
    stable iff |trace| < 2. The no-drive case q = a = 0 is marginal and
    reported unstable by convention (no confinement).
    """
    if not (np.isfinite(q) and np.isfinite(a)):
        return False
    if q == 0.0 and a == 0.0:
        return False

    def rhs(tau, y):
        u1, v1, u2, v2 = y
        k = -(a - 2.0 * q * math.cos(2.0 * tau))
        return [v1, k * u1, v2, k * u2]

    sol = solve_ivp(rhs, (0.0, math.pi), [1.0, 0.0, 0.0, 1.0],
                    rtol=1e-10, atol=1e-12, dense_output=False)
    if not sol.success:
        return False
    u1, v1, u2, v2 = sol.y[:, -1]
    return abs(u1 + v2) < 2.0


def stability_boundary(a=0.0, q_lo=0.5, q_hi=1.2, tol=1e-4) -> float:
    """Bisect the first stability boundary in q at fixed a."""
    if not stability_check(q_lo, a) or stability_check(q_hi, a):
        raise AnalysisError("bisection bracket does not straddle the boundary")
    while q_hi - q_lo > tol:
        mid = 0.5 * (q_lo + q_hi)
        if stability_check(mid, a):
            q_lo = mid
        else:
            q_hi = mid
    return 0.5 * (q_lo + q_hi)

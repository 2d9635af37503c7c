"""Time-domain ion dynamics in the full rf + dc fields.

Velocity-Verlet integration with the drive analytic in time,
F(x, t) = q_e [E_dc(x) + E_rf(x) cos(Omega t)], spatial fields interpolated
(grid sources) or evaluated analytically (BEM sources). Serves as an
independent oracle for the pseudopotential results: secular frequencies from
trajectory spectra, micromotion amplitudes, and simulated tickle scans.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import find_peaks

from .analysis import TrapFields, DriveConfig

SAMPLES_PER_RF_CYCLE = 40          # Trajectory invariant: >= 40 per rf cycle
TICKLE_MAX_FRACTION = 0.01         # tickle amplitude <= 1% of U_rf by default
TRAJECTORY_MAGIC = b"PTTJ"
TRAJECTORY_VERSION = 1


class DynamicsError(RuntimeError):
    pass


class IonEscapedError(DynamicsError):
    def __init__(self, position, time):
        self.position = np.asarray(position)
        self.time = float(time)
        super().__init__(f"ion left the field region at t = {time:.3e} s, "
                         f"position {np.asarray(position)}")


class TrajectoryTooShortError(DynamicsError):
    pass


@dataclass(frozen=True)
class IonState:
    """Phase-space sample of the ion."""
    position: np.ndarray   # (3,) m
    velocity: np.ndarray   # (3,) m/s
    time: float = 0.0      # s

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity",
                           np.asarray(self.velocity, dtype=float))
        if not (np.all(np.isfinite(self.position))
                and np.all(np.isfinite(self.velocity))
                and math.isfinite(self.time)):
            raise ValueError("IonState components must be finite")


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled trajectory; dt <= 2 pi / (40 Omega_rf)."""
    times: np.ndarray        # (n,)
    positions: np.ndarray    # (n, 3)
    velocities: np.ndarray   # (n, 3)
    omega_rf: float          # rad/s, recorded for the sampling invariant

    def __post_init__(self):
        if len(self.times) >= 2 and self.omega_rf > 0:
            dt = abs(self.times[1] - self.times[0])
            if dt > 2 * math.pi / (SAMPLES_PER_RF_CYCLE * self.omega_rf) * (1 + 1e-9):
                raise ValueError("sample interval exceeds 1/40 rf cycle")

    @property
    def sample_interval(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def final_state(self) -> IonState:
        return IonState(self.positions[-1], self.velocities[-1],
                        float(self.times[-1]))

    def project(self, axis) -> np.ndarray:
        axis = np.asarray(axis, dtype=float)
        return self.positions @ (axis / np.linalg.norm(axis))

    def to_csv(self, path):
        header = "t_s,x_m,y_m,z_m,vx_m_per_s,vy_m_per_s,vz_m_per_s"
        data = np.column_stack([self.times, self.positions, self.velocities])
        np.savetxt(path, data, delimiter=",", header=header, comments="")

    def save(self, path):
        header = json.dumps({"format": "paultrap-trajectory",
                             "version": TRAJECTORY_VERSION,
                             "n_samples": len(self.times),
                             "omega_rf_rad_per_s": self.omega_rf,
                             "arrays": ["times", "positions", "velocities"],
                             "dtype": "<f8"}, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(TRAJECTORY_MAGIC)
            f.write(struct.pack("<I", TRAJECTORY_VERSION))
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            for arr in (self.times, self.positions, self.velocities):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Trajectory":
        with open(path, "rb") as f:
            if f.read(4) != TRAJECTORY_MAGIC:
                raise DynamicsError(f"{path}: not a trajectory file")
            version, = struct.unpack("<I", f.read(4))
            if version != TRAJECTORY_VERSION:
                raise DynamicsError(f"{path}: unsupported version {version}")
            hlen, = struct.unpack("<I", f.read(4))
            hdr = json.loads(f.read(hlen).decode())
            n = hdr["n_samples"]
            t = np.frombuffer(f.read(8 * n), dtype="<f8")
            x = np.frombuffer(f.read(24 * n), dtype="<f8").reshape(n, 3)
            v = np.frombuffer(f.read(24 * n), dtype="<f8").reshape(n, 3)
        return cls(t.copy(), x.copy(), v.copy(),
                   hdr["omega_rf_rad_per_s"])


# ---------------------------------------------------------------------------
# fast per-step field evaluation

class _FieldSampler:
    """Single-point E_rf / E_dc evaluator compiled from a TrapFields.

    Grid sources collapse to one vector-valued interpolant per component set
    (one call per step); BEM sources fall back to analytic evaluation.
    """

    def __init__(self, fields: TrapFields):
        self._fields = fields
        grid = getattr(fields, "_grid", None)
        self._rf = self._dc = None
        self._lo = self._hi = None
        if grid is not None:
            self._lo, self._hi = grid.origin, grid.upper
            self._rf = self._combined(grid, fields.rf_voltages)
            self._dc = self._combined(grid, fields.dc_voltages)

    @staticmethod
    def _combined(grid, voltages):
        total = np.zeros(grid.shape + (3,))
        for name, v in voltages.items():
            if v != 0.0:
                total += v * grid.fields[grid.electrode_names.index(name)]
        method = "cubic" if min(grid.shape) >= 4 else "linear"
        return RegularGridInterpolator(grid.axes(), total, method=method,
                                       bounds_error=True)

    def inside(self, x) -> bool:
        if self._lo is None:
            return True
        return bool(np.all(x >= self._lo) and np.all(x <= self._hi))

    def rf(self, x) -> np.ndarray:
        if self._rf is not None:
            return self._rf(x[None, :])[0]
        return np.asarray(self._fields.rf_field(x[None, :]))[0]

    def dc(self, x) -> np.ndarray:
        if self._dc is not None:
            return self._dc(x[None, :])[0]
        return np.asarray(self._fields.dc_field(x[None, :]))[0]


def integrate(fields, drive: DriveConfig, initial: IonState, duration: float,
              dt: float | None = None, extra_field=None,
              escape_radius: float = 0.01) -> Trajectory:
    """Velocity-Verlet integration of the driven motion.

    E(x, t) = E_dc(x) + E_rf(x) cos(Omega_rf t) [+ extra_field(x, t)], the
    cosine factor exact in time. Second order; time-reversible (negative dt
    integrates backwards). Raises IonEscapedError when the ion leaves the
    cached grid region or the escape_radius sphere.
    """
    omega = drive.omega_rf
    dt_max = 2 * math.pi / (SAMPLES_PER_RF_CYCLE * omega)
    if dt is None:
        dt = math.copysign(dt_max, duration)
    if abs(dt) > dt_max * (1 + 1e-12):
        raise ValueError(f"dt must satisfy >= {SAMPLES_PER_RF_CYCLE} samples "
                         f"per rf cycle (dt <= {dt_max:.3e} s)")
    if duration * dt <= 0:
        raise ValueError("duration and dt must have the same sign")
    n_steps = int(round(duration / dt))
    sampler = _FieldSampler(fields)
    qm = drive.species.charge / drive.species.mass

    def accel(x, t):
        if not sampler.inside(x) or np.dot(x, x) > escape_radius ** 2:
            raise IonEscapedError(x, t)
        E = sampler.dc(x) + sampler.rf(x) * math.cos(omega * t)
        if extra_field is not None:
            E = E + extra_field(x, t)
        return qm * E

    times = np.empty(n_steps + 1)
    positions = np.empty((n_steps + 1, 3))
    velocities = np.empty((n_steps + 1, 3))
    x = np.array(initial.position, dtype=float)
    v = np.array(initial.velocity, dtype=float)
    t = float(initial.time)
    a = accel(x, t)
    times[0], positions[0], velocities[0] = t, x, v
    for i in range(1, n_steps + 1):
        x = x + v * dt + 0.5 * a * dt * dt
        t = initial.time + i * dt
        a_new = accel(x, t)
        v = v + 0.5 * (a + a_new) * dt
        a = a_new
        times[i], positions[i], velocities[i] = t, x, v
    return Trajectory(times, positions, velocities, omega)


# ---------------------------------------------------------------------------
# spectral analysis

def secular_spectrum(traj: Trajectory, axis):
    """Peak angular frequencies (rad/s) of the projected position, sorted by
    descending amplitude, from a Hann-windowed FFT.

    The dominant low-frequency peak is the secular frequency; peaks near
    Omega_rf +- omega are the micromotion sidebands.
    """
    if len(traj.times) < 64:
        raise TrajectoryTooShortError(
            f"need >= 64 samples for a spectrum, got {len(traj.times)}")
    u = traj.project(axis)
    u = u - np.mean(u)
    w = np.hanning(len(u))
    amp = np.abs(np.fft.rfft(u * w))
    freqs = 2 * math.pi * np.fft.rfftfreq(len(u), d=abs(traj.sample_interval))
    idx, _ = find_peaks(amp)
    if len(idx) == 0:
        idx = np.array([int(np.argmax(amp[1:])) + 1])
    order = np.argsort(amp[idx])[::-1]
    return freqs[idx][order], amp[idx][order]


def secular_frequency(traj: Trajectory, axis, omega_rf: float | None = None):
    """Dominant sub-drive spectral peak (rad/s), quadratically refined."""
    freqs, amps = secular_spectrum(traj, axis)
    cut = (omega_rf if omega_rf is not None else traj.omega_rf) / 2.0
    low = freqs < cut
    if not np.any(low):
        raise TrajectoryTooShortError("no secular peak below half the drive")
    f0 = freqs[low][0]
    # parabolic interpolation around the winning bin for sub-bin resolution
    u = traj.project(axis)
    u = (u - np.mean(u)) * np.hanning(len(u))
    amp = np.abs(np.fft.rfft(u))
    df = 2 * math.pi / (len(u) * abs(traj.sample_interval))
    k = int(round(f0 / df))
    if 1 <= k < len(amp) - 1:
        denom = amp[k - 1] - 2 * amp[k] + amp[k + 1]
        if denom != 0:
            f0 = (k + 0.5 * (amp[k - 1] - amp[k + 1]) / denom) * df
    return f0


# ---------------------------------------------------------------------------
# equilibrium and micromotion

def secular_equilibrium(fields: TrapFields, drive: DriveConfig, guess,
                        step=2e-6, tol=1e-10, max_iter=60) -> np.ndarray:
    """Minimum of the secular potential (pseudopotential + dc), by damped
    Newton on its finite-difference gradient."""
    from .analysis import pseudopotential
    x = np.asarray(guess, dtype=float).copy()

    def grad_hess(x0):
        g = np.empty(3)
        H = np.empty((3, 3))
        f0 = pseudopotential(fields, drive, x0)
        for i in range(3):
            ei = np.zeros(3)
            ei[i] = step
            fp, fm = (pseudopotential(fields, drive, x0 + ei),
                      pseudopotential(fields, drive, x0 - ei))
            g[i] = (fp - fm) / (2 * step)
            H[i, i] = (fp - 2 * f0 + fm) / step ** 2
            for j in range(i + 1, 3):
                ej = np.zeros(3)
                ej[j] = step
                H[i, j] = H[j, i] = (
                    pseudopotential(fields, drive, x0 + ei + ej)
                    - pseudopotential(fields, drive, x0 + ei - ej)
                    - pseudopotential(fields, drive, x0 - ei + ej)
                    + pseudopotential(fields, drive, x0 - ei - ej)
                ) / (4 * step ** 2)
        return g, H

    for _ in range(max_iter):
        g, H = grad_hess(x)
        if np.linalg.norm(g) * step < tol:
            return x
        try:
            dx = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            dx = -g * step / max(np.linalg.norm(g), 1e-300)
        lam = 1.0
        f0 = pseudopotential(fields, drive, x)
        for _ in range(25):
            if pseudopotential(fields, drive, x + lam * dx) < f0 + 1e-18:
                break
            lam *= 0.5
        x = x + lam * dx
    return x


def _lockin_amplitude(traj: Trajectory, omega: float, fraction=0.5):
    """Per-axis amplitude of the omega component over the trailing window."""
    dt = abs(traj.sample_interval)
    period = 2 * math.pi / omega
    n_tail = max(int(len(traj.times) * fraction), 2)
    n_cycles = max(int(n_tail * dt / period), 1)
    n = int(round(n_cycles * period / dt))
    t = traj.times[-n:]
    x = traj.positions[-n:]
    ph = np.exp(-1j * omega * t)
    return 2.0 * np.abs((x * ph[:, None]).mean(axis=0))


def micromotion_amplitude(fields: TrapFields, drive: DriveConfig,
                          dc_offsets: dict | None = None, guess=None,
                          cycles: int = 400) -> np.ndarray:
    """Driven-motion amplitude at Omega_rf per axis (m), from integration.

    The ion starts at rest at the secular equilibrium of the offset
    configuration; the amplitude is the lock-in magnitude of the position at
    the drive frequency over the trailing half of the run. First-order
    theory: amplitude ~ (q_i / 2) x displacement from the rf null.
    """
    f2 = fields.with_offsets(dc_offsets) if dc_offsets else fields
    x0 = np.zeros(3) if guess is None else np.asarray(guess, dtype=float)
    eq = secular_equilibrium(f2, drive, x0)
    period = 2 * math.pi / drive.omega_rf
    traj = integrate(f2, drive, IonState(eq, np.zeros(3)), cycles * period)
    return _lockin_amplitude(traj, drive.omega_rf)


# ---------------------------------------------------------------------------
# tickle scans

@dataclass(frozen=True)
class TickleConfig:
    """Small excitation drive on one electrode, scanned in frequency."""
    electrode: str
    amplitude: float               # V
    freq_lo: float                 # rad/s
    freq_hi: float                 # rad/s
    freq_step: float               # rad/s
    integration_time: float        # s per scan point
    max_fraction: float = TICKLE_MAX_FRACTION

    def validate(self, drive: DriveConfig):
        if self.freq_step <= 0 or self.freq_hi <= self.freq_lo:
            raise ValueError("tickle scan range/step invalid")
        if self.integration_time <= 0:
            raise ValueError("integration_time must be positive")
        if abs(self.amplitude) > self.max_fraction * abs(drive.u_rf):
            raise ValueError(
                f"tickle amplitude {self.amplitude} V exceeds "
                f"{self.max_fraction:.0%} of U_rf = {drive.u_rf} V")

    def frequencies(self) -> np.ndarray:
        n = int(math.floor((self.freq_hi - self.freq_lo) / self.freq_step
                           + 1e-9)) + 1
        return self.freq_lo + self.freq_step * np.arange(n)


def tickle_scan(fields: TrapFields, drive: DriveConfig,
                config: TickleConfig, start=None):
    """Response curve (scan frequency -> excitation energy, J).

    For each frequency the ion is integrated from rest at the trap center
    with amplitude x cos(omega_tickle t) added on the target electrode; the
    response is the kinetic energy averaged over the last 20% of the window
    (the transient is discarded). The curve peaks at the secular frequency
    of the motion the electrode preferentially excites.
    """
    config.validate(drive)
    x0 = np.zeros(3) if start is None else np.asarray(start, dtype=float)
    grid = getattr(fields, "_grid", None)
    if grid is not None:
        name = config.electrode
        b = grid.electrode_names.index(name)
        method = "cubic" if min(grid.shape) >= 4 else "linear"
        basis = RegularGridInterpolator(grid.axes(), grid.fields[b],
                                        method=method, bounds_error=True)

        def unit_field(x):
            return basis(x[None, :])[0]
    else:
        def unit_field(x):
            return fields.basis_field(config.electrode, x[None, :])[0]

    m = drive.species.mass
    freqs = config.frequencies()
    response = np.empty(len(freqs))
    for i, w in enumerate(freqs):
        if config.amplitude == 0.0:
            amp_field = None
        else:
            def amp_field(x, t, _w=w):
                return config.amplitude * math.cos(_w * t) * unit_field(x)
        traj = integrate(fields, drive, IonState(x0, np.zeros(3)),
                         config.integration_time, extra_field=amp_field)
        n_tail = max(int(0.2 * len(traj.times)), 2)
        v2 = np.einsum("ij,ij->i", traj.velocities[-n_tail:],
                       traj.velocities[-n_tail:])
        response[i] = 0.5 * m * float(np.mean(v2))
    return freqs, response


def tickle_curve_to_csv(freqs, response, path):
    np.savetxt(path, np.column_stack([freqs / (2 * math.pi), response]),
               delimiter=",", header="freq_Hz,response_J", comments="")

"""Secular-frequency measurement model: imperfection-coefficient fits and
helical-resonator amplification with uncertainty propagation.

Radial model:  omega_rad^2 = (Omega^2 / 4) [ (eta_rad q)^2 / 2 + a_rad + b_rad ]
Axial model:   omega_ax^2  = (Omega^2 / 4) [ eta_ax a_ax + b_ax ]
Resonator:     A = kappa sqrt(2 P Q) / U_in,  kappa = sqrt(Q R)

eta < 1 means the measured confinement is weaker than the simulation
predicts; b absorbs voltage-independent offsets.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


class FitError(RuntimeError):
    pass


class InsufficientSamplesError(FitError):
    pass


class SingularDesignError(FitError):
    pass


class NonConvergenceError(FitError):
    pass


RF_INPUT_VOLTAGE = "rf_input_voltage"
DC_VOLTAGE = "dc_voltage"


@dataclass(frozen=True)
class MeasurementSeries:
    """Secular frequency vs drive voltage, with 1-sigma uncertainties."""
    kind: str                      # RF_INPUT_VOLTAGE or DC_VOLTAGE
    voltages: np.ndarray           # (n,) V, strictly increasing
    omegas: np.ndarray             # (n,) rad/s
    sigmas: np.ndarray             # (n,) rad/s, > 0
    omega_rf: float                # rad/s drive frequency

    def __post_init__(self):
        for name in ("voltages", "omegas", "sigmas"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        if self.kind not in (RF_INPUT_VOLTAGE, DC_VOLTAGE):
            raise ValueError(f"unknown series kind '{self.kind}'")
        n = len(self.voltages)
        if n < 3:
            raise InsufficientSamplesError(f"need >= 3 samples, got {n}")
        if not (len(self.omegas) == len(self.sigmas) == n):
            raise ValueError("voltages/omegas/sigmas length mismatch")
        if np.any(np.diff(self.voltages) <= 0):
            raise ValueError("voltages must be strictly increasing")
        if np.any(self.sigmas <= 0):
            raise ValueError("sigma_omega must be positive")
        if not self.omega_rf > 0:
            raise ValueError("omega_rf must be positive")

    @classmethod
    def from_csv(cls, path, kind, omega_rf) -> "MeasurementSeries":
        """CSV with header `voltage_V, omega_Hz, sigma_Hz`."""
        volts, om, sg = [], [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f, skipinitialspace=True)
            cols = {"voltage_V", "omega_Hz", "sigma_Hz"}
            if reader.fieldnames is None or not cols <= set(
                    n.strip() for n in reader.fieldnames):
                raise FitError(f"{path}: expected header "
                               f"'voltage_V, omega_Hz, sigma_Hz'")
            for row in reader:
                row = {k.strip(): v for k, v in row.items() if k}
                volts.append(float(row["voltage_V"]))
                om.append(2 * math.pi * float(row["omega_Hz"]))
                sg.append(2 * math.pi * float(row["sigma_Hz"]))
        return cls(kind, np.array(volts), np.array(om), np.array(sg),
                   float(omega_rf))


@dataclass(frozen=True)
class SimulatedCoefficients:
    """Per-axis Mathieu parameters per applied volt, from the simulation."""
    q_per_volt: np.ndarray   # (3,) 1/V of U_rf, trap-axis order
    a_per_volt: np.ndarray   # (3,) 1/V of U_dc (endcap volts)

    def __post_init__(self):
        object.__setattr__(self, "q_per_volt",
                           np.asarray(self.q_per_volt, dtype=float))
        object.__setattr__(self, "a_per_volt",
                           np.asarray(self.a_per_volt, dtype=float))
        if not (np.all(np.isfinite(self.q_per_volt))
                and np.all(np.isfinite(self.a_per_volt))):
            raise ValueError("coefficients must be finite")

    @classmethod
    def from_characterization(cls, char, drive) -> "SimulatedCoefficients":
        u_dc = max((abs(v) for v in drive.dc_voltages.values()), default=1.0)
        return cls(char.mathieu_q / drive.u_rf, char.mathieu_a / u_dc)

    def to_dict(self) -> dict:
        return {"q_per_volt": [float(x) for x in self.q_per_volt],
                "a_per_volt": [float(x) for x in self.a_per_volt]}

    @classmethod
    def from_dict(cls, d) -> "SimulatedCoefficients":
        return cls(d["q_per_volt"], d["a_per_volt"])


@dataclass(frozen=True)
class FitResult:
    eta: float
    b: float
    covariance: np.ndarray      # (2, 2) over (eta, b)
    reduced_chisq: float
    n_samples: int
    kind: str

    @property
    def eta_sigma(self) -> float:
        return math.sqrt(max(self.covariance[0, 0], 0.0))

    @property
    def b_sigma(self) -> float:
        return math.sqrt(max(self.covariance[1, 1], 0.0))

    def to_dict(self) -> dict:
        return {"eta": self.eta, "b": self.b,
                "eta_sigma": self.eta_sigma, "b_sigma": self.b_sigma,
                "covariance": [[float(x) for x in row]
                               for row in self.covariance],
                "reduced_chisq": self.reduced_chisq,
                "n_samples": self.n_samples, "kind": self.kind}


def radial_model(eta, b, q, a_rad, omega_rf):
    """omega from Eq. (1); q may be an array per sample."""
    w2 = omega_rf ** 2 / 4.0 * ((eta * q) ** 2 / 2.0 + a_rad + b)
    return np.sqrt(np.clip(w2, 0.0, None))


def fit_radial(series: MeasurementSeries, sim: SimulatedCoefficients,
               amplification: float, axis: int = 1, a_rad: float | None = None,
               dc_volts: float = 60.0, max_iter: int = 200,
               tol: float = 1e-14) -> FitResult:
    """Weighted Gauss-Newton fit of (eta_rad, b_rad) on omega vs U_in.

    q per sample = q_per_volt[axis] x amplification x U_in; a_rad is held
    fixed at the simulated value for the experimental dc setting (the rf
    amplitude is the only quantity varied). Weights are 1/sigma_omega: the
    reported uncertainties are on omega, so the fit is run on omega rather
    than omega^2.
    """
    if series.kind != RF_INPUT_VOLTAGE:
        raise FitError("fit_radial needs an RF_INPUT_VOLTAGE series")
    q = sim.q_per_volt[axis] * amplification * series.voltages
    if a_rad is None:
        a_rad = float(sim.a_per_volt[axis] * dc_volts)
    om = series.omega_rf
    w = 1.0 / series.sigmas

    # starting point: linear inversion of the omega^2 model
    X = np.column_stack([q ** 2 / 2.0, np.ones_like(q)])
    y = 4.0 * series.omegas ** 2 / om ** 2 - a_rad
    try:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(str(exc)) from exc
    eta = math.sqrt(max(beta[0], 1e-12))
    b = float(beta[1])

    prev = np.inf
    for _ in range(max_iter):
        model = radial_model(eta, b, q, a_rad, om)
        safe = np.where(model > 0, model, np.inf)
        r = w * (model - series.omegas)
        # d omega / d eta = Omega^2 eta q^2 / (8 omega); d omega / d b =
        # Omega^2 / (8 omega)
        J = np.column_stack([w * om ** 2 * eta * q ** 2 / (8.0 * safe),
                             w * om ** 2 / (8.0 * safe)])
        try:
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError(str(exc)) from exc
        eta += float(step[0])
        b += float(step[1])
        chi2 = float(r @ r)
        if abs(prev - chi2) <= tol * max(chi2, 1.0) and np.all(
                np.abs(step) < 1e-12 * max(abs(eta), 1.0) + 1e-15):
            break
        prev = chi2
    else:
        if not abs(prev - chi2) <= 1e-8 * max(chi2, 1.0):
            raise NonConvergenceError(
                f"Gauss-Newton did not converge in {max_iter} iterations")
    model = radial_model(eta, b, q, a_rad, om)
    r = w * (model - series.omegas)
    J = np.column_stack([w * om ** 2 * eta * q ** 2 / (8.0 * model),
                         w * om ** 2 / (8.0 * model)])
    cov = _covariance(J)
    dof = max(len(q) - 2, 1)
    return FitResult(abs(eta), b, cov, float(r @ r) / dof, len(q),
                     RF_INPUT_VOLTAGE)


def fit_axial(series: MeasurementSeries, sim: SimulatedCoefficients,
              axis: int = 0) -> FitResult:
    """Closed-form weighted linear least squares of (eta_ax, b_ax) on
    omega^2 = (Omega^2 / 4)(eta a_ax + b_ax), a_ax linear in U_dc.

    sigma_{omega^2} = 2 omega sigma_omega by first-order propagation.
    """
    if series.kind != DC_VOLTAGE:
        raise FitError("fit_axial needs a DC_VOLTAGE series")
    a = sim.a_per_volt[axis] * series.voltages
    om = series.omega_rf
    y = series.omegas ** 2
    sig_y = 2.0 * series.omegas * series.sigmas
    sig_y = np.where(sig_y > 0, sig_y, np.min(sig_y[sig_y > 0], initial=1.0))
    X = np.column_stack([om ** 2 / 4.0 * a, om ** 2 / 4.0 * np.ones_like(a)])
    Xw = X / sig_y[:, None]
    yw = y / sig_y
    XtX = Xw.T @ Xw
    if np.linalg.cond(XtX) > 1e14:
        # degenerate design (e.g. eta unidentifiable); solve in the least-
        # squares sense and report the near-singular covariance
        beta, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
        cov = np.linalg.pinv(XtX)
    else:
        try:
            beta = np.linalg.solve(XtX, Xw.T @ yw)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError(str(exc)) from exc
        cov = np.linalg.inv(XtX)
    r = Xw @ beta - yw
    dof = max(len(a) - 2, 1)
    return FitResult(float(beta[0]), float(beta[1]), cov,
                     float(r @ r) / dof, len(a), DC_VOLTAGE)


def _covariance(J) -> np.ndarray:
    JtJ = J.T @ J
    try:
        return np.linalg.inv(JtJ)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(JtJ)


# ---------------------------------------------------------------------------
# helical resonator

@dataclass(frozen=True)
class ResonatorParams:
    """Quality factor, equivalent resistance, input power and voltage."""
    q_factor: float
    q_sigma: float
    resistance: float        # ohm
    resistance_sigma: float
    power: float             # W
    power_sigma: float
    u_in: float              # V
    u_in_sigma: float

    def __post_init__(self):
        for name in ("q_factor", "resistance", "power", "u_in"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def resonator_kappa(q_factor: float, resistance: float) -> float:
    """Eq. (4): kappa = sqrt(Q R)."""
    return math.sqrt(q_factor * resistance)


def resonator_amplification(params: ResonatorParams):
    """Eq. (3): A = kappa sqrt(2 P Q) / U_in = Q sqrt(2 P R) / U_in,
    with first-order uncertainty propagation over (Q, R, P, U_in).

    A is homogeneous of degree -1 in U_in; R's relative error enters at
    half weight through kappa = sqrt(Q R).
    """
    p = params
    A = p.q_factor * math.sqrt(2.0 * p.power * p.resistance) / p.u_in
    rel2 = ((p.q_sigma / p.q_factor) ** 2
            + (p.resistance_sigma / (2.0 * p.resistance)) ** 2
            + (p.power_sigma / (2.0 * p.power)) ** 2
            + (p.u_in_sigma / p.u_in) ** 2)
    return A, A * math.sqrt(rel2)


# ---------------------------------------------------------------------------
# paper-style summary

def compare_to_simulation(fits, b_merge_threshold=0.01) -> dict:
    """Classify eta per axis against 1 and summarize b consistency.

    fits: dict axis-label -> FitResult. Radial b values within
    b_merge_threshold (relative) are reported as negligible and averaged.
    """
    report = {"axes": {}, "b_radial": None}
    for label, fit in fits.items():
        s = fit.eta_sigma
        if abs(fit.eta - 1.0) <= s:
            verdict = "consistent with simulation"
        elif fit.eta < 1.0:
            verdict = "weaker than simulation"
        else:
            verdict = "stronger than simulation"
        report["axes"][label] = {"eta": fit.eta, "eta_sigma": s,
                                 "b": fit.b, "b_sigma": fit.b_sigma,
                                 "verdict": verdict}
    radial = [f for f in fits.values() if f.kind == RF_INPUT_VOLTAGE]
    if len(radial) == 2:
        b1, b2 = radial[0].b, radial[1].b
        scale = max(abs(b1), abs(b2), 1e-300)
        diff = abs(b1 - b2) / scale
        report["b_radial"] = {
            "difference_relative": diff,
            "negligible": bool(diff < b_merge_threshold),
            "average": 0.5 * (b1 + b2) if diff < b_merge_threshold else None,
        }
    return report

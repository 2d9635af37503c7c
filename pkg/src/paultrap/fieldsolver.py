"""Collocation BEM for conductor electrostatics.

Constant charge density on flat triangular panels; the potential and field of
each panel are analytic (exact line-integral form plus the signed solid
angle), so gradients are analytic rather than finite differences. Influence
entries beyond two source-panel diameters use a centroid multipole expansion
(monopole plus the panel's quadrupole moment, keeping E consistent with
-grad(phi)); closer entries (including self terms) use the analytic
integrals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial import cKDTree

from .constants import COULOMB_K
from .geometry import TrapGeometry, ElectrodeRole
from .mesh import SurfaceMesh, validate_mesh

NEAR_FIELD_DIAMETERS = 2.0     # analytic region (matrix assembly and inner evaluation)
BLEND_DIAMETERS = 4.0          # evaluation blends analytic -> point charge out to here
RESIDUAL_TOLERANCE = 1e-6


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    pass


class NonConvergenceError(SolverError):
    pass


class EvaluationTooCloseError(SolverError):
    pass


# ---------------------------------------------------------------------------
# analytic panel integrals

def _dot_rows(a, b):
    return np.einsum("kj,kj->k", a, b)


def _cross_rows(a, b):
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _norm_rows(a):
    return np.sqrt(_dot_rows(a, a))


def panel_integrals(pa, pb, pc, pts, want_field=True):
    """Potential integral I = int dA'/|r-r'| and its gradient for unit
    charge density, one (panel, point) pair per row. Multiply by
    COULOMB_K * sigma for volts; E = -COULOMB_K * sigma * G."""
    pa, pb, pc, pts = (np.asarray(x, dtype=float) for x in (pa, pb, pc, pts))
    n = _cross_rows(pb - pa, pc - pa)
    n = n / _norm_rows(n)[:, None]
    d = _dot_rows(pts - pa, n)
    rho = pts - d[:, None] * n
    I = np.zeros(len(pts))
    Gm = np.zeros_like(pts) if want_field else None
    for v1, v2 in ((pa, pb), (pb, pc), (pc, pa)):
        s = v2 - v1
        ls = _norm_rows(s)[:, None]
        sh = s / ls
        mh = _cross_rows(sh, n)
        t = _dot_rows(v1 - rho, mh)
        lm = _dot_rows(v1 - rho, sh)
        lp = _dot_rows(v2 - rho, sh)
        Rm = _norm_rows(pts - v1)
        Rp = _norm_rows(pts - v2)
        den1 = Rm + lm
        den2 = Rp - lp
        use1 = den1 >= den2  # pick the numerically stable branch
        with np.errstate(divide="ignore", invalid="ignore"):
            L = np.where(use1,
                         np.log(np.where(den1 > 0, (Rp + lp) / np.where(den1 == 0, 1, den1), 1.0)),
                         np.log(np.where(den2 > 0, (Rm - lm) / np.where(den2 == 0, 1, den2), 1.0)))
        L = np.where(t * t + d * d < (1e-14 * ls[:, 0]) ** 2, 0.0, L)
        I += t * L
        if want_field:
            Gm += mh * L[:, None]
    r1, r2, r3 = pa - pts, pb - pts, pc - pts
    n1 = _norm_rows(r1)
    n2 = _norm_rows(r2)
    n3 = _norm_rows(r3)
    num = _dot_rows(r1, _cross_rows(r2, r3))
    den = (n1 * n2 * n3 + _dot_rows(r1, r2) * n3
           + _dot_rows(r1, r3) * n2
           + _dot_rows(r2, r3) * n1)
    omega = 2.0 * np.arctan2(num, den)
    I = I + d * omega
    if not want_field:
        return I, None
    G = -Gm + n * omega[:, None]
    return I, G


# ---------------------------------------------------------------------------
# panel system

@dataclass(frozen=True)
class PanelSystem:
    corners_a: np.ndarray
    corners_b: np.ndarray
    corners_c: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    normals: np.ndarray
    diameters: np.ndarray
    electrode_index: np.ndarray          # per-panel index into electrode_names
    electrode_names: tuple
    electrode_roles: tuple               # ElectrodeRole per electrode

    @property
    def n_panels(self) -> int:
        return len(self.areas)

    def panels_of(self, electrode: str) -> np.ndarray:
        return np.nonzero(self.electrode_index
                          == self.electrode_names.index(electrode))[0]

    def role_of(self, electrode: str) -> ElectrodeRole:
        return self.electrode_roles[self.electrode_names.index(electrode)]

    def electrodes_with_role(self, role: ElectrodeRole):
        return [n for n, r in zip(self.electrode_names, self.electrode_roles)
                if r is role]

    def total_area(self) -> float:
        return float(self.areas.sum())


def assemble(geometry: TrapGeometry) -> PanelSystem:
    """Aggregate electrode meshes into one panel set (one panel = one triangle)."""
    if not geometry.electrodes or geometry.total_triangles() == 0:
        raise SolverError("geometry has no panels")
    A, B, C, idx = [], [], [], []
    names, roles = [], []
    for k, e in enumerate(geometry.electrodes):
        defects = validate_mesh(e.mesh)
        if defects:
            raise SingularSystemError(f"electrode {e.name}: {defects[:5]}")
        a, b, c = e.mesh.corners()
        A.append(a)
        B.append(b)
        C.append(c)
        idx.append(np.full(len(a), k))
        names.append(e.name)
        roles.append(e.role)
    a = np.vstack(A)
    b = np.vstack(B)
    c = np.vstack(C)
    cross = np.cross(b - a, c - a)
    norm = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norm
    normals = cross / norm[:, None]
    diam = np.maximum(np.maximum(np.linalg.norm(b - a, axis=1),
                                 np.linalg.norm(c - b, axis=1)),
                      np.linalg.norm(a - c, axis=1))
    return PanelSystem(a, b, c, areas, (a + b + c) / 3.0, normals, diam,
                       np.concatenate(idx), tuple(names), tuple(roles))


@dataclass(frozen=True)
class BasisSolution:
    """Surface charge density for 1 V on one electrode, 0 V on the rest."""
    electrode: str
    sigma: np.ndarray        # C/m^2 per applied volt, one entry per panel
    residual: float

    def scaled(self, v: float) -> "BasisSolution":
        return BasisSolution(self.electrode, self.sigma * v, self.residual)


def _quadrupole_moments(system: PanelSystem):
    """Central second-moment tensor M = integral (r-c)(r-c)^T dA per panel
    and its trace. For a triangle with edge vectors e1, e2 from one vertex,
    the area-normalized covariance is e1e1'/18 + e2e2'/18 - (e1e2'+e2e1')/36.
    """
    e1 = system.corners_b - system.corners_a
    e2 = system.corners_c - system.corners_a
    cov = (np.einsum("ji,jk->jik", e1, e1) + np.einsum("ji,jk->jik", e2, e2)) / 18.0 \
        - (np.einsum("ji,jk->jik", e1, e2) + np.einsum("ji,jk->jik", e2, e1)) / 36.0
    M = cov * system.areas[:, None, None]
    return M, np.trace(M, axis1=1, axis2=2)


def _quadrupole_phi_E(M, tr, diff, dist, want_field=True):
    """Quadrupole correction per unit charge density.

    phi_q = (3 r'Mr) / (2 d^5) - tr(M) / (2 d^3) and its exact negative
    gradient, with r = point - centroid. Terms are kept as separate powers
    of d so dist = inf cleanly yields zero.
    diff: (..., 3); dist: (...); M: (..., 3, 3); tr: (...).
    """
    Mr = np.einsum("...ik,...k->...i", M, diff)
    qf = np.einsum("...i,...i->...", diff, Mr)
    d3 = dist ** 3
    d5 = d3 * dist * dist
    phi_q = 1.5 * qf / d5 - 0.5 * tr / d3
    if not want_field:
        return phi_q, None
    d7 = d5 * dist * dist
    E_q = (7.5 * qf / d7 - 1.5 * tr / d5)[..., None] * diff \
        - (3.0 / d5)[..., None] * Mr
    return phi_q, E_q


def _near_pairs(system: PanelSystem, points, cutoff_scale=NEAR_FIELD_DIAMETERS,
                chunk=1024):
    """(point_row, panel_col) pairs within cutoff_scale source diameters."""
    tree = cKDTree(system.centroids)
    r_near = cutoff_scale * float(system.diameters.max())
    out_rows, out_cols = [], []
    for s in range(0, len(points), chunk):
        groups = tree.query_ball_point(points[s:s + chunk], r_near)
        rows, cols = [], []
        for i, g in enumerate(groups):
            if g:
                rows.append(np.full(len(g), s + i))
                cols.append(np.array(g, dtype=int))
        if not rows:
            continue
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        dist = np.linalg.norm(points[rows] - system.centroids[cols], axis=1)
        keep = dist <= cutoff_scale * system.diameters[cols]
        out_rows.append(rows[keep])
        out_cols.append(cols[keep])
    if not out_rows:
        return (np.empty(0, dtype=int), np.empty(0, dtype=int))
    return np.concatenate(out_rows), np.concatenate(out_cols)


def _near_pair_blocks(system: PanelSystem, points,
                      cutoff_scale=NEAR_FIELD_DIAMETERS,
                      max_pairs=400_000, panel_chunk=128):
    """Yield (point_row, panel_col) pair blocks of bounded size, panel-major.

    Searches a tree over the evaluation points with a per-panel radius, so
    coarse panels (whose near zone can cover an entire evaluation grid) only
    ever contribute one bounded block at a time.
    """
    if len(points) == 0 or system.n_panels == 0:
        return
    tree = cKDTree(points)
    rows, cols, total = [], [], 0
    for s in range(0, system.n_panels, panel_chunk):
        cent = system.centroids[s:s + panel_chunk]
        radii = cutoff_scale * system.diameters[s:s + panel_chunk]
        groups = tree.query_ball_point(cent, radii, workers=-1)
        for j, g in enumerate(groups):
            if not g:
                continue
            rows.append(np.asarray(g, dtype=int))
            cols.append(np.full(len(g), s + j, dtype=int))
            total += len(g)
            if total >= max_pairs:
                yield np.concatenate(rows), np.concatenate(cols)
                rows, cols, total = [], [], 0
    if rows:
        yield np.concatenate(rows), np.concatenate(cols)


def influence_matrix(system: PanelSystem, chunk=512) -> np.ndarray:
    """Potential at panel centroids per unit charge density (volts per C/m^2)."""
    c = system.centroids
    n = system.n_panels
    M = np.empty((n, n))
    Mq, tr = _quadrupole_moments(system)
    # far field: centroid monopole + quadrupole (row-chunked to bound memory)
    for s in range(0, n, chunk):
        diff = c[s:s + chunk, None, :] - c[None, :, :]
        d = np.linalg.norm(diff, axis=2)
        for i in range(len(d)):
            d[i, s + i] = np.inf
        phi_q, _ = _quadrupole_phi_E(Mq[None, :], tr[None, :], diff, d,
                                     want_field=False)
        M[s:s + chunk] = COULOMB_K * (system.areas[None, :] / d + phi_q)
    rows, cols = _near_pairs(system, c)
    for s in range(0, len(rows), 200000):
        r = rows[s:s + 200000]
        k = cols[s:s + 200000]
        I, _ = panel_integrals(system.corners_a[k], system.corners_b[k],
                               system.corners_c[k], c[r], want_field=False)
        M[r, k] = COULOMB_K * I
    return M


class FieldSet:
    """Panel system plus its per-electrode basis solutions; superposition
    evaluation of potentials and analytic fields."""

    def __init__(self, system: PanelSystem, solutions: dict, operator=None):
        self.system = system
        self.solutions = dict(solutions)
        self.operator = operator   # LU factors of the influence matrix

    def solve_grounded(self, rhs_potential: np.ndarray) -> np.ndarray:
        """Induced charge density with all electrodes grounded and an
        external potential rhs_potential imposed at the panel centroids:
        solves M sigma = -rhs. Requires solve_all(keep_operator=True)."""
        if self.operator is None:
            raise SolverError("influence operator not retained; re-run "
                              "solve_all with keep_operator=True")
        return lu_solve(self.operator, -np.asarray(rhs_potential, dtype=float))

    @property
    def electrode_names(self):
        return self.system.electrode_names

    def sigma_for(self, voltages: dict) -> np.ndarray:
        sigma = np.zeros(self.system.n_panels)
        for name, v in voltages.items():
            if name not in self.solutions:
                raise KeyError(f"no basis solution for electrode '{name}'")
            if v != 0.0:
                sigma = sigma + v * self.solutions[name].sigma
        return sigma

    def evaluate_sigma(self, sigma: np.ndarray, points, want_field=True,
                       guard=True):
        return evaluate_charges(self.system, sigma, points,
                                want_field=want_field, guard=guard)

    def potential(self, points, voltages: dict) -> np.ndarray:
        phi, _ = self.evaluate_sigma(self.sigma_for(voltages), points,
                                     want_field=False)
        return phi

    def field(self, points, voltages: dict) -> np.ndarray:
        _, E = self.evaluate_sigma(self.sigma_for(voltages), points)
        return E

    def basis_values(self, points, want_field=True, guard=True):
        """Per-unit-volt potential and field of every basis at the points,
        in electrode_names order."""
        names = [n for n in self.system.electrode_names if n in self.solutions]
        sig = np.vstack([self.solutions[n].sigma for n in names])
        phi, E = evaluate_many(self.system, sig, points,
                               want_field=want_field, guard=guard)
        return names, phi, E

    def induced_charge(self, electrode: str, sigma: np.ndarray) -> float:
        sel = self.system.panels_of(electrode)
        return float(np.sum(sigma[sel] * self.system.areas[sel]))

    def capacitance_matrix(self) -> np.ndarray:
        names = self.system.electrode_names
        C = np.zeros((len(names), len(names)))
        for j, nj in enumerate(names):
            sig = self.solutions[nj].sigma
            for i, ni in enumerate(names):
                C[i, j] = self.induced_charge(ni, sig)
        return C


def solve_all(system: PanelSystem, electrodes=None,
              keep_operator=False) -> FieldSet:
    """Factor the influence matrix once and solve every requested electrode."""
    if electrodes is None:
        electrodes = system.electrode_names
    if np.any(system.areas <= 0) or not np.all(np.isfinite(system.areas)):
        raise SingularSystemError("degenerate panels in system")
    M = influence_matrix(system)
    try:
        lu = lu_factor(M)
    except Exception as exc:  # LinAlgError
        raise SingularSystemError(str(exc)) from exc
    solutions = {}
    for name in electrodes:
        if name not in system.electrode_names:
            raise KeyError(f"unknown electrode '{name}'")
        b = (system.electrode_index
             == system.electrode_names.index(name)).astype(float)
        sigma = lu_solve(lu, b)
        resid = float(np.max(np.abs(M @ sigma - b)))
        if not np.isfinite(resid) or resid > RESIDUAL_TOLERANCE:
            raise NonConvergenceError(
                f"collocation residual {resid:.3e} exceeds "
                f"{RESIDUAL_TOLERANCE:.0e} for electrode '{name}'")
        solutions[name] = BasisSolution(name, sigma, resid)
    return FieldSet(system, solutions, operator=lu if keep_operator else None)


def solve_basis(system: PanelSystem, electrode: str) -> BasisSolution:
    return solve_all(system, [electrode]).solutions[electrode]


def evaluate_many(system: PanelSystem, sigmas: np.ndarray, points,
                  want_field=True, guard=True, chunk=256):
    """Potentials (V) and fields (V/m) of several panel charge distributions
    at once: sigmas has shape (n_basis, n_panels).

    Far panels as centroid point charges, near panels analytic; the field is
    the analytic gradient throughout. Points closer to a panel than a tenth
    of its diameter are rejected (guard=True).
    """
    sigmas = np.atleast_2d(np.asarray(sigmas, dtype=float))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nb = len(sigmas)
    phi = np.zeros((nb, len(pts)))
    E = np.zeros((nb, len(pts), 3)) if want_field else None
    Q = sigmas * system.areas[None, :]  # point-charge strengths per basis
    c = system.centroids
    Mq, tr = _quadrupole_moments(system)
    for s in range(0, len(pts), chunk):
        diff = pts[s:s + chunk][:, None, :] - c[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        dist = np.where(dist == 0, np.inf, dist)
        phi_q, E_q = _quadrupole_phi_E(Mq[None, :], tr[None, :], diff, dist,
                                       want_field=want_field)
        phi[:, s:s + chunk] = COULOMB_K * (Q @ (1.0 / dist).T
                                           + sigmas @ phi_q.T)
        if want_field:
            w = diff / dist[:, :, None] ** 3
            E[:, s:s + chunk] = COULOMB_K * (
                np.einsum("bj,pjk->bpk", Q, w)
                + np.einsum("bj,pjk->bpk", sigmas, E_q))
    # Swap the point-charge contribution of near panels for the analytic
    # one, with a C^2 smootherstep blend over [NEAR, BLEND] diameters so
    # evaluated potentials/fields stay smooth for finite differencing.
    # Pairs stream panel-wise in bounded blocks: a large panel is "near"
    # a very large neighborhood, so the full pair set can dwarf memory.
    for r_s, c_s in _near_pair_blocks(system, pts,
                                      cutoff_scale=BLEND_DIAMETERS):
        d_near = _norm_rows(pts[r_s] - c[c_s])
        if guard:
            too_close = d_near < system.diameters[c_s] / 10.0
            if np.any(too_close):
                i = r_s[np.argmax(too_close)]
                raise EvaluationTooCloseError(
                    f"point {pts[i]} is within a tenth of a panel diameter "
                    f"of a panel surface")
        I, G = panel_integrals(system.corners_a[c_s], system.corners_b[c_s],
                               system.corners_c[c_s], pts[r_s],
                               want_field=want_field)
        u = ((d_near / system.diameters[c_s] - NEAR_FIELD_DIAMETERS)
             / (BLEND_DIAMETERS - NEAR_FIELD_DIAMETERS))
        u = np.clip(u, 0.0, 1.0)
        w = 1.0 - u ** 3 * (u * (6.0 * u - 15.0) + 10.0)
        # bincount-based scatter-add: far cheaper than np.add.at here
        rvec = pts[r_s] - c[c_s]
        unit_pc = rvec / d_near[:, None] ** 3
        phi_q, E_q = _quadrupole_phi_E(Mq[c_s], tr[c_s], rvec, d_near,
                                       want_field=want_field)
        for b in range(nb):
            dphi = COULOMB_K * w * (sigmas[b, c_s] * I - Q[b, c_s] / d_near
                                    - sigmas[b, c_s] * phi_q)
            phi[b] += np.bincount(r_s, weights=dphi, minlength=len(pts))
            if want_field:
                dE = COULOMB_K * w[:, None] * (
                    -(sigmas[b, c_s][:, None] * G)
                    - Q[b, c_s][:, None] * unit_pc
                    - sigmas[b, c_s][:, None] * E_q)
                for k in range(3):
                    E[b, :, k] += np.bincount(r_s, weights=dE[:, k],
                                              minlength=len(pts))
    return phi, E


def evaluate_charges(system: PanelSystem, sigma: np.ndarray, points,
                     want_field=True, guard=True, chunk=256):
    """Single-distribution wrapper over evaluate_many."""
    phi, E = evaluate_many(system, np.asarray(sigma)[None, :], points,
                           want_field=want_field, guard=guard, chunk=chunk)
    if np.asarray(points).ndim == 1:
        return phi[0, 0], (E[0, 0] if want_field else None)
    return phi[0], (E[0] if want_field else None)


def evaluate(system: PanelSystem, solutions, voltages: dict, points,
             want_field=True):
    """Superpose basis solutions at the given voltages and evaluate."""
    if isinstance(solutions, dict):
        sols = solutions
    else:
        sols = {s.electrode: s for s in solutions}
    fs = FieldSet(system, sols)
    sigma = fs.sigma_for(voltages)
    return evaluate_charges(system, sigma, points, want_field=want_field)

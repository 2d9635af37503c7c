import math

import numpy as np
import pytest

from paultrap import fieldsolver as fs
from paultrap import geometry as geo
from paultrap import gridcache as gc
from paultrap import mesh as msh
from paultrap.constants import COULOMB_K, EPSILON_0


def _sphere_geometry(radius=1e-3, n_theta=24, n_phi=48, name="sphere"):
    m = msh.uv_sphere((0, 0, 0), radius, n_theta=n_theta, n_phi=n_phi)
    return geo.TrapGeometry((geo.Electrode(name, m, geo.ElectrodeRole.RF),))


@pytest.fixture(scope="module")
def sphere_solution():
    g = _sphere_geometry()
    system = fs.assemble(g)
    return system, fs.solve_all(system)


def test_panel_integral_matches_point_charge_far_away():
    pa = np.array([[0.0, 0.0, 0.0]])
    pb = np.array([[1e-4, 0.0, 0.0]])
    pc = np.array([[0.0, 1e-4, 0.0]])
    pt = np.array([[0.3, 0.4, 0.5]])
    I, G = fs.panel_integrals(pa, pb, pc, pt)
    area = 0.5e-8
    d = np.linalg.norm(pt[0] - (pa[0] + pb[0] + pc[0]) / 3.0)
    assert I[0] == pytest.approx(area / d, rel=1e-7)
    # gradient against the point-charge field direction
    expected = -area * (pt[0] - (pa[0] + pb[0] + pc[0]) / 3.0) / d ** 3
    np.testing.assert_allclose(G[0], expected, rtol=1e-6)


def test_panel_integral_self_term_square_plate():
    # unit-side square from two triangles, evaluated at its center:
    # I = 4 ln(1 + sqrt(2)) for a unit square (standard closed form)
    pa = np.array([[-0.5, -0.5, 0.0], [-0.5, -0.5, 0.0]])
    pb = np.array([[0.5, -0.5, 0.0], [0.5, 0.5, 0.0]])
    pc = np.array([[0.5, 0.5, 0.0], [-0.5, 0.5, 0.0]])
    pt = np.zeros((2, 3))
    I, _ = fs.panel_integrals(pa, pb, pc, pt)
    assert I.sum() == pytest.approx(4 * math.log(1 + math.sqrt(2)), rel=1e-12)


def test_sphere_capacitance(sphere_solution):
    system, fieldset = sphere_solution
    sigma = fieldset.solutions["sphere"].sigma
    q_total = float((sigma * system.areas).sum())
    c_exact = 4 * math.pi * EPSILON_0 * 1e-3
    assert q_total == pytest.approx(c_exact, rel=0.01)
    assert fieldset.solutions["sphere"].residual <= 1e-6


def test_sphere_exterior_potential_and_field(sphere_solution):
    system, fieldset = sphere_solution
    r = 3e-3
    pts = np.array([[r, 0, 0], [0, r, 0], [0, 0, r], [r / 2, r / 2, r / 2]])
    phi = fieldset.potential(pts, {"sphere": 1.0})
    d = np.linalg.norm(pts, axis=1)
    np.testing.assert_allclose(phi, 1e-3 / d, rtol=0.01)
    E = fieldset.field(pts, {"sphere": 1.0})
    expected = 1e-3 * pts / d[:, None] ** 3
    np.testing.assert_allclose(E, expected, rtol=0.01, atol=1e-3)


def test_two_sphere_capacitance_matrix_symmetry():
    m1 = msh.uv_sphere((-2e-3, 0, 0), 5e-4, n_theta=16, n_phi=32)
    m2 = msh.uv_sphere((2e-3, 0, 0), 5e-4, n_theta=16, n_phi=32)
    g = geo.TrapGeometry((geo.Electrode("a", m1, geo.ElectrodeRole.RF),
                          geo.Electrode("b", m2, geo.ElectrodeRole.GROUND)))
    system = fs.assemble(g)
    fieldset = fs.solve_all(system)
    C = fieldset.capacitance_matrix()
    assert abs(C[0, 1] - C[1, 0]) <= 0.01 * abs(C[0, 1])
    assert C[0, 0] > 0 and C[1, 1] > 0 and C[0, 1] < 0


def test_superposition_linearity(sphere_solution):
    system, fieldset = sphere_solution
    pts = np.array([[2e-3, 1e-3, 0.0]])
    phi1 = fieldset.potential(pts, {"sphere": 1.0})
    phi5 = fieldset.potential(pts, {"sphere": 5.0})
    assert phi5[0] == pytest.approx(5 * phi1[0], rel=1e-12)


def test_evaluation_guard_trips_near_surface(sphere_solution):
    system, fieldset = sphere_solution
    pt = system.centroids[0] + 1e-9 * system.normals[0]
    with pytest.raises(fs.EvaluationTooCloseError):
        fieldset.potential(pt[None, :], {"sphere": 1.0})


def test_solve_grounded_requires_operator(sphere_solution):
    system, fieldset = sphere_solution
    with pytest.raises(fs.SolverError):
        fieldset.solve_grounded(np.zeros(system.n_panels))
    kept = fs.solve_all(system, keep_operator=True)
    sigma = kept.solve_grounded(-np.ones(system.n_panels))
    # grounded sphere in unit imposed potential = sphere held at -(-1) V
    np.testing.assert_allclose(sigma, kept.solutions["sphere"].sigma,
                               rtol=1e-9)


def test_field_blend_is_smooth(sphere_solution):
    # potential along a radial line crossing the blend zone has no kinks:
    # second differences stay bounded
    system, fieldset = sphere_solution
    r = np.linspace(1.5e-3, 9e-3, 400)
    pts = np.stack([r, np.zeros_like(r), np.zeros_like(r)], axis=1)
    phi = fieldset.potential(pts, {"sphere": 1.0})
    d2 = np.diff(phi, 2)
    assert np.max(np.abs(d2)) < 50 * np.median(np.abs(d2) + 1e-18)


def test_grid_cache_bit_exact_roundtrip(tmp_path, sphere_solution):
    system, fieldset = sphere_solution
    lo = np.array([2e-3, -5e-4, -5e-4])
    hi = np.array([3e-3, 5e-4, 5e-4])
    grid = gc.cache_grid(fieldset, (lo, hi), 2.5e-4)
    path = tmp_path / "grid.bin"
    gc.write_grid(grid, path)
    back = gc.read_grid(path)
    np.testing.assert_array_equal(back.potentials, grid.potentials)
    np.testing.assert_array_equal(back.fields, grid.fields)
    assert back.electrode_names == grid.electrode_names
    # stored node values are exact; interpolated queries track the direct
    # evaluation (scipy's cubic tensor spline is not nodal-exact)
    node = lo + 2.5e-4 * np.array([1, 1, 1])
    assert back.potentials[0, 1, 1, 1] == pytest.approx(
        fieldset.potential(node[None, :], {"sphere": 1.0})[0], rel=1e-12)
    assert back.potential_basis("sphere", node[None, :])[0] == pytest.approx(
        fieldset.potential(node[None, :], {"sphere": 1.0})[0], rel=1e-4)
    mid = lo + 2.5e-4 * np.array([1.5, 1.3, 0.7])
    assert back.potential_basis("sphere", mid[None, :])[0] == pytest.approx(
        fieldset.potential(mid[None, :], {"sphere": 1.0})[0], rel=5e-3)


def test_grid_region_overlapping_electrode_rejected(sphere_solution):
    system, fieldset = sphere_solution
    lo = np.array([-2e-3, -2e-3, -2e-3])
    with pytest.raises(gc.GridError):
        gc.cache_grid(fieldset, (lo, -lo), 5e-4,
                      geometry=_sphere_geometry())


def test_grid_harmonicity(sphere_solution):
    # 6-point discrete Laplacian of the cached potential vanishes as O(h^2)
    system, fieldset = sphere_solution
    center = np.array([3e-3, 0.0, 0.0])
    errs = []
    for h in (4e-4, 2e-4):
        offsets = np.array([[0, 0, 0], [h, 0, 0], [-h, 0, 0], [0, h, 0],
                            [0, -h, 0], [0, 0, h], [0, 0, -h]], dtype=float)
        phi = fieldset.potential(center + offsets, {"sphere": 1.0})
        lap = (phi[1:].sum() - 6 * phi[0]) / h ** 2
        errs.append(abs(lap) * h ** 2 / abs(phi[0]))
    assert errs[1] < 0.3 * errs[0]


def test_parallel_plate_field():
    # two square plates, small gap: interior field ~ V / gap
    side, gap = 4e-3, 2e-4
    top = msh.rectangle_plate((0, 0, gap / 2), (0, 0, 1), (1, 0, 0),
                              side, side, 24, 24)
    bot = msh.rectangle_plate((0, 0, -gap / 2), (0, 0, -1), (1, 0, 0),
                              side, side, 24, 24)
    g = geo.TrapGeometry((geo.Electrode("top", top, geo.ElectrodeRole.RF),
                          geo.Electrode("bot", bot, geo.ElectrodeRole.GROUND)))
    system = fs.assemble(g)
    fieldset = fs.solve_all(system)
    E = fieldset.field(np.array([[0.0, 0.0, 0.0]]),
                       {"top": 1.0, "bot": -1.0})
    assert E[0, 2] == pytest.approx(-2.0 / gap, rel=0.03)
    assert abs(E[0, 0]) < 0.01 * abs(E[0, 2])

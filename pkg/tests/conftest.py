"""Shared fixtures.

The default-trap BEM solve is expensive (~12k panels, dense LU), so it runs
once per session and every test that needs trap fields shares it. The small
center grid backs the dynamics tests; trap-scale evaluations use the BEM
field set directly.
"""

import numpy as np
import pytest

from paultrap import analysis
from paultrap import fieldsolver as fs
from paultrap import geometry as geo
from paultrap import gridcache as gc


@pytest.fixture(scope="session")
def default_params():
    return geo.ParametricTrapParams.default()


@pytest.fixture(scope="session")
def default_trap(default_params):
    return geo.build_linear_trap(default_params)


@pytest.fixture(scope="session")
def default_solution(default_trap):
    system = fs.assemble(default_trap)
    fieldset = fs.solve_all(system)
    return system, fieldset


@pytest.fixture(scope="session")
def cavity_solution(default_trap):
    """Default trap plus the two grounded cavity-substrate tips; the
    operator is retained for the grounded stray-charge solves."""
    from paultrap import compensation as comp
    geom = comp.with_cavity_substrates(default_trap)
    system = fs.assemble(geom)
    fieldset = fs.solve_all(system, keep_operator=True)
    return geom, system, fieldset


@pytest.fixture(scope="session")
def table1_drive():
    return analysis.DriveConfig.table1()


@pytest.fixture(scope="session")
def default_fields(default_solution, table1_drive):
    return analysis.TrapFields(default_solution[1], table1_drive)


@pytest.fixture(scope="session")
def table1_characterization(default_fields, table1_drive, default_params):
    return analysis.characterize(default_fields, table1_drive,
                                 default_params.r0, with_depth=True)


@pytest.fixture(scope="session")
def center_grid(default_solution, default_trap):
    lo = np.array([-3.0e-5, -3.0e-5, -6.0e-5])
    return gc.cache_grid(default_solution[1], (lo, -lo), 2.5e-6,
                         geometry=default_trap)


@pytest.fixture(scope="session")
def grid_fields(center_grid, default_solution, table1_drive):
    return analysis.TrapFields(center_grid, table1_drive,
                               system=default_solution[0])

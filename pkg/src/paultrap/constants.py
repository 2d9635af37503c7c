"""Physical constants (CODATA 2018) and ion species data. Strict SI."""

EPSILON_0 = 8.8541878128e-12   # F/m
ELEMENTARY_CHARGE = 1.602176634e-19  # C
ATOMIC_MASS = 1.66053906660e-27      # kg
COULOMB_K = 1.0 / (4.0 * 3.141592653589793 * EPSILON_0)

# 40Ca+ (mass of the neutral atom in u; electron-mass correction is far
# below every tolerance used in this package)
CA40_MASS = 39.9625909 * ATOMIC_MASS

"""Physical constants (CODATA 2018), kept in one table so every module agrees."""

import math

ELEMENTARY_CHARGE = 1.602176634e-19  # C, exact
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
PLANCK = 6.62607015e-34  # J s, exact
HBAR = PLANCK / (2.0 * math.pi)
BOLTZMANN = 1.380649e-23  # J/K, exact
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m
COULOMB_CONSTANT = 1.0 / (4.0 * math.pi * VACUUM_PERMITTIVITY)

TWO_PI = 2.0 * math.pi

# 24Mg+ cooling line
MG24_MASS_U = 23.985041697
MG_WAVELENGTH = 280e-9
MG_LINEWIDTH = TWO_PI * 43e6

"""Trap geometry, fields, species and the ideal Penning-trap mode frequencies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .constants import (ATOMIC_MASS_UNIT, ELEMENTARY_CHARGE, MG24_MASS_U,
                        MG_LINEWIDTH, MG_WAVELENGTH, TWO_PI)
from .errors import UnstableTrap, Unreachable


@dataclass(frozen=True)
class ParticleSpecies:
    charge: float
    mass: float
    transition_wavelength: float = MG_WAVELENGTH
    natural_linewidth: float = MG_LINEWIDTH

    def __post_init__(self):
        if not self.charge > 0:
            raise ValueError("only positive ions are supported")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.natural_linewidth > 0:
            raise ValueError("natural linewidth must be positive")

    @classmethod
    def from_units(cls, mass_u, charge_e=1.0, **kw):
        return cls(charge=charge_e * ELEMENTARY_CHARGE,
                   mass=mass_u * ATOMIC_MASS_UNIT, **kw)

    @property
    def wavenumber(self):
        return TWO_PI / self.transition_wavelength


MG24 = ParticleSpecies.from_units(MG24_MASS_U)


@dataclass(frozen=True)
class TrapGeometry:
    r0: float = 5e-3
    z0: float = field(default=5e-3 / math.sqrt(2.0))

    def __post_init__(self):
        if not (self.r0 > 0 and self.z0 > 0):
            raise ValueError("r0 and z0 must be positive")

    @classmethod
    def ideal(cls, r0):
        """Hyperbolic trap with z0 = r0/sqrt(2)."""
        return cls(r0=r0, z0=r0 / math.sqrt(2.0))

    @property
    def R_sq(self):
        return self.r0 * self.r0 + 2.0 * self.z0 * self.z0


@dataclass(frozen=True)
class TrapFields:
    B: float = 1.0
    V: float = 4.7

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")
        if self.V < 0:
            raise ValueError("trap voltage must be non-negative")


@dataclass(frozen=True)
class ModeFrequencies:
    """Angular frequencies in rad/s; ``hz`` gives the cyclic values."""

    omega_c: float
    omega_z: float
    omega_1: float
    omega_c_prime: float
    omega_m: float

    def hz(self):
        return {name: getattr(self, name) / TWO_PI for name in
                ("omega_c", "omega_z", "omega_1", "omega_c_prime", "omega_m")}


def derive_frequencies(species: ParticleSpecies, geometry: TrapGeometry,
                       fields: TrapFields) -> ModeFrequencies:
    """Cyclotron, axial and the two radial eigenfrequencies of an ideal trap.

    The magnetron frequency is taken from the product identity
    ``omega_c' * omega_m = omega_z**2 / 2`` instead of ``omega_c/2 - omega_1``;
    that subtraction cancels catastrophically at small V.
    """
    q_over_m = species.charge / species.mass
    omega_c = q_over_m * fields.B
    omega_z = math.sqrt(4.0 * q_over_m * fields.V / geometry.R_sq)
    half_wz_sq = 0.5 * omega_z * omega_z
    half_c = 0.5 * omega_c
    a = omega_z / math.sqrt(2.0)
    omega_1_sq = (half_c - a) * (half_c + a)
    if omega_1_sq < 0:
        v_max = omega_c * omega_c * geometry.R_sq / (8.0 * q_over_m)
        raise UnstableTrap(
            f"V = {fields.V:g} V exceeds the stability limit {v_max:.6g} V "
            f"at B = {fields.B:g} T", max_stable_voltage=v_max)
    omega_1 = math.sqrt(omega_1_sq)
    omega_c_prime = half_c + omega_1
    omega_m = half_wz_sq / omega_c_prime
    return ModeFrequencies(omega_c, omega_z, omega_1, omega_c_prime, omega_m)


def voltage_for_magnetron_frequency(species: ParticleSpecies,
                                    geometry: TrapGeometry, B: float,
                                    target_f_m: float) -> float:
    """Trap voltage giving magnetron frequency ``target_f_m`` (Hz) at field B."""
    omega_c = species.charge * B / species.mass
    omega_m = TWO_PI * target_f_m
    if target_f_m < 0:
        raise ValueError("target frequency must be non-negative")
    # targets within rounding of omega_c/2 sit on the stability limit
    if omega_m >= 0.5 * omega_c * (1.0 - 1e-12):
        raise Unreachable(
            f"f_m = {target_f_m:g} Hz is not below f_c/2 = "
            f"{omega_c / (2 * TWO_PI):g} Hz")
    # omega_z^2 / 2 = omega_m * (omega_c - omega_m)
    return (omega_m * (omega_c - omega_m) * species.mass * geometry.R_sq
            / (2.0 * species.charge))


def field_for_cyclotron_frequency(species: ParticleSpecies, f_c: float) -> float:
    """Magnetic field (T) whose true cyclotron frequency is ``f_c`` Hz."""
    return TWO_PI * f_c * species.mass / species.charge

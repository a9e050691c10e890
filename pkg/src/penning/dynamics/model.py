"""Field, force and scattering models for the lab-frame simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..constants import COULOMB_CONSTANT, HBAR
from ..errors import Overlap
from ..trap import ModeFrequencies, ParticleSpecies, TrapFields, TrapGeometry

_MIN_SEPARATION = 1e-9


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("direction must be non-zero")
    return v / n


@dataclass(frozen=True)
class IonState:
    position: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.position))
                and np.all(np.isfinite(self.velocity))):
            raise ValueError("ion state must be finite")


@dataclass(frozen=True)
class LaserParams:
    """Gaussian cooling beam.

    The beam axis runs along ``direction`` through the point
    ``offset * n_perp``, where n_perp = z x direction (normalised) lies in the
    radial plane. ``direction`` may carry an axial component so that one
    beam also cools the axial mode.
    """

    detuning: float = -math.pi * 43e6
    saturation: float = 1.0
    waist: float = 50e-6
    offset: float = 25e-6
    direction: tuple = (1.0, 0.0, 0.0)
    wavelength: float = 280e-9

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(_unit(self.direction)))
        if not self.waist > 0:
            raise ValueError("beam waist must be positive")
        if self.saturation < 0:
            raise ValueError("saturation must be >= 0")

    @property
    def k_hat(self):
        return np.array(self.direction)

    @property
    def wavenumber(self):
        return 2.0 * math.pi / self.wavelength

    @property
    def offset_axis(self):
        n = np.cross([0.0, 0.0, 1.0], self.k_hat)
        if np.linalg.norm(n) < 1e-12:
            return np.array([1.0, 0.0, 0.0])
        return _unit(n)

    @property
    def axis_point(self):
        return self.offset * self.offset_axis


@dataclass(frozen=True)
class AxialisationDrive:
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    kappa: float = 0.5

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("drive amplitude must be >= 0")


@dataclass(frozen=True)
class DipoleProbe:
    """Uniform rf field ``amplitude`` (V/m) along ``direction``."""

    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    direction: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "direction", tuple(_unit(self.direction)))
        if self.amplitude < 0:
            raise ValueError("probe amplitude must be >= 0")


def trap_field(position, fields: TrapFields, geometry: TrapGeometry):
    """E = -grad[(2V/R^2)(z^2 - (x^2+y^2)/2)]."""
    x, y, z = position
    k = 2.0 * fields.V / geometry.R_sq
    return np.array([k * x, k * y, -2.0 * k * z])


def axialisation_field(position, drive: AxialisationDrive,
                       geometry: TrapGeometry, t: float):
    x, y, _ = position
    g = 2.0 * drive.kappa * drive.amplitude / geometry.r0 ** 2
    c = math.cos(drive.frequency * t + drive.phase)
    return np.array([-g * x * c, g * y * c, 0.0])


def probe_field(probe: DipoleProbe, t: float):
    return probe.amplitude * math.cos(probe.frequency * t + probe.phase) * np.array(probe.direction)


def scattering_rate(state: IonState, laser: LaserParams,
                    species: ParticleSpecies) -> float:
    """Two-level scattering rate with Gaussian beam profile and Doppler shift."""
    gamma = species.natural_linewidth
    khat = laser.k_hat
    rel = np.asarray(state.position, float) - laser.axis_point
    perp = rel - np.dot(rel, khat) * khat
    s = laser.saturation * math.exp(-2.0 * np.dot(perp, perp) / laser.waist ** 2)
    kv = laser.wavenumber * float(np.dot(khat, state.velocity))
    x = 2.0 * (laser.detuning - kv) / gamma
    return 0.5 * gamma * s / (1.0 + s + x * x)


def scattering_rates(positions, velocities, laser: LaserParams,
                     species: ParticleSpecies):
    """Vectorised ``scattering_rate`` over arrays of shape (..., 3)."""
    pos = np.asarray(positions, dtype=float)
    vel = np.asarray(velocities, dtype=float)
    khat = laser.k_hat
    rel = pos - laser.axis_point
    perp = rel - (rel @ khat)[..., None] * khat
    s = laser.saturation * np.exp(-2.0 * np.sum(perp * perp, axis=-1) / laser.waist ** 2)
    gamma = species.natural_linewidth
    x = 2.0 * (laser.detuning - laser.wavenumber * (vel @ khat)) / gamma
    return 0.5 * gamma * s / (1.0 + s + x * x)


def continuous_drag_force(state: IonState, laser: LaserParams | None,
                          species: ParticleSpecies):
    """Mean radiation pressure hbar*k*R along the beam."""
    if laser is None or laser.saturation == 0:
        return np.zeros(3)
    r = scattering_rate(state, laser, species)
    return HBAR * laser.wavenumber * r * laser.k_hat


def coulomb_force(positions, charge: float):
    """Pairwise Coulomb forces (N, 3) for equal-charge ions."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    forces = np.zeros_like(pos)
    if n < 2:
        return forces
    k = COULOMB_CONSTANT * charge * charge
    for i in range(n):
        for j in range(i + 1, n):
            d = pos[i] - pos[j]
            r = math.sqrt(float(d @ d))
            if r < _MIN_SEPARATION:
                raise Overlap(f"ions {i} and {j} are {r:.3g} m apart")
            f = k * d / r ** 3
            forces[i] += f
            forces[j] -= f
    return forces


def coupling_rate(drive: AxialisationDrive, species: ParticleSpecies,
                  geometry: TrapGeometry, freqs: ModeFrequencies) -> float:
    """Envelope coupling rate delta produced by a resonant quadrupole drive.

    Averaging the drive over the two radial modes gives
    delta = q kappa V_ax / (2 m r0^2 omega_1).
    """
    return (species.charge * drive.kappa * drive.amplitude
            / (2.0 * species.mass * geometry.r0 ** 2 * freqs.omega_1))


def equilibrium_position(laser: LaserParams | None, species: ParticleSpecies,
                         fields: TrapFields, geometry: TrapGeometry, iterations=50):
    """Rest point where mean radiation pressure balances the trap field."""
    pos = np.zeros(3)
    if laser is None or laser.saturation == 0:
        return pos
    k = 2.0 * fields.V / geometry.R_sq
    stiff = species.charge * k * np.array([-1.0, -1.0, 2.0])  # restoring force per metre
    for _ in range(iterations):
        f = continuous_drag_force(IonState(tuple(pos)), laser, species)
        new = f / stiff
        if np.allclose(new, pos, rtol=0, atol=1e-15):
            break
        pos = new
    return pos


def _mean_force(pos, vel, laser, species):
    st = IonState(tuple(pos), tuple(vel))
    return continuous_drag_force(st, laser, species)


@dataclass(frozen=True)
class LinearRates:
    gamma_c: float
    gamma_m: float
    equilibrium: tuple = field(default=(0.0, 0.0, 0.0))


def linear_damping_rates(laser: LaserParams, species: ParticleSpecies,
                         freqs: ModeFrequencies, position=(0.0, 0.0, 0.0)) -> LinearRates:
    """Amplitude damping rates of the two radial modes for a cold ion.

    Linearises the mean radiation pressure about ``position`` at rest and
    keeps the co-rotating part of the resulting 2x2 velocity and position
    gradients. Positive values cool.
    """
    pos = np.asarray(position, dtype=float)
    m = species.mass
    dv = 1e-4 * species.natural_linewidth / laser.wavenumber
    dx = 1e-4 * laser.waist
    mv = np.zeros((2, 2))
    mx = np.zeros((2, 2))
    for j in range(2):
        e = np.zeros(3)
        e[j] = 1.0
        fp = _mean_force(pos, dv * e, laser, species)
        fm = _mean_force(pos, -dv * e, laser, species)
        mv[:, j] = (fp - fm)[:2] / (2 * dv * m)
        fp = _mean_force(pos + dx * e, np.zeros(3), laser, species)
        fm = _mean_force(pos - dx * e, np.zeros(3), laser, species)
        mx[:, j] = (fp - fm)[:2] / (2 * dx * m)
    alpha_v = 0.5 * (mv[0, 0] + mv[1, 1])
    im_alpha_x = 0.5 * (mx[1, 0] - mx[0, 1])
    wp, wm = freqs.omega_c_prime, freqs.omega_m
    dw = wp - wm
    gamma_c = (-alpha_v * wp + im_alpha_x) / dw
    gamma_m = (alpha_v * wm - im_alpha_x) / dw
    return LinearRates(gamma_c, gamma_m, tuple(pos))

"""Coupled cyclotron/magnetron radius envelopes under an axialisation drive.

The amplitudes obey the linear system

    dr_c/dt =  delta * r_m - gamma_c * r_c
    dr_m/dt = -delta * r_c - gamma_m * r_m

Amplitudes are evolved signed; ``EnvelopeState.r_c`` / ``r_m`` report
magnitudes.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NoExpansion, NoStableOrbit

DEFAULT_K_DELTA = 400.0  # s^-1 per volt of drive amplitude


@dataclass(frozen=True)
class EnvelopeParams:
    delta: float
    gamma_c: float
    gamma_m: float

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("coupling rate delta must be >= 0")

    def scaled(self, factor):
        return EnvelopeParams(self.delta, self.gamma_c * factor,
                              self.gamma_m * factor)

    @property
    def matrix(self):
        return np.array([[-self.gamma_c, self.delta],
                         [-self.delta, -self.gamma_m]])


@dataclass(frozen=True)
class EnvelopeState:
    a_c: float
    a_m: float

    @property
    def r_c(self):
        return abs(self.a_c)

    @property
    def r_m(self):
        return abs(self.a_m)


class Regime(enum.Enum):
    CYCLING = "cycling"
    AXIALISING = "axialising"
    MARGINAL_STABLE_ORBIT = "marginal_stable_orbit"
    EXPANDING = "expanding"


@dataclass(frozen=True)
class RegimeResult:
    regime: Regime
    eigenvalues: tuple


def envelope_eigenvalues(p: EnvelopeParams) -> tuple[complex, complex]:
    """Roots of lambda^2 + (g_c + g_m) lambda + (g_c g_m + delta^2).

    Returned as (larger real part, smaller real part). Factored differences
    and Vieta's product keep both roots accurate near the marginal point;
    rates are rescaled by a power of two so squares cannot under/overflow.
    """
    scale = max(p.delta, abs(p.gamma_c), abs(p.gamma_m))
    if scale == 0:
        return complex(0.0), complex(0.0)
    e = math.frexp(scale)[1]
    delta, gc, gm = (math.ldexp(x, -e) for x in (p.delta, p.gamma_c, p.gamma_m))
    s = 0.5 * (gc + gm)
    d = 0.5 * abs(gc - gm)
    det = gc * gm + delta * delta
    if d >= delta:
        root = math.sqrt((d - delta) * (d + delta))
        if s == 0 and root == 0:
            return complex(0.0), complex(0.0)
        big = -(s + math.copysign(root, s)) if s != 0 else -root
        small = det / big
        lo, hi = sorted((big, small))
        return complex(math.ldexp(hi, e)), complex(math.ldexp(lo, e))
    w = math.ldexp(math.sqrt((delta - d) * (delta + d)), e)
    s = math.ldexp(s, e)
    return complex(-s, w), complex(-s, -w)


def _default_tol(p):
    return 1e-6 * max(p.delta, abs(p.gamma_c), abs(p.gamma_m), 1e-300)


def classify_regime(p: EnvelopeParams, tol: float | None = None) -> RegimeResult:
    """Name the qualitative behaviour of the envelope ODE.

    ``tol`` is an absolute rate tolerance (s^-1); by default 1e-6 of the
    largest of delta, |gamma_c|, |gamma_m| so the answer does not depend on
    the time unit.
    """
    if tol is None:
        tol = _default_tol(p)
    if not tol > 0:
        raise ValueError("tol must be positive")
    lam = envelope_eigenvalues(p)
    scale = max(p.delta, abs(p.gamma_c), abs(p.gamma_m))
    rel = tol / scale if scale > 0 else 0.0
    product = p.gamma_c * p.gamma_m
    if abs(p.gamma_c) <= tol and abs(p.gamma_m) <= tol and p.delta > tol:
        regime = Regime.CYCLING
    elif (abs(p.delta ** 2 + product) <= rel * max(p.delta ** 2, abs(product))
          and p.gamma_c + p.gamma_m > 0):
        regime = Regime.MARGINAL_STABLE_ORBIT
    else:
        top = max(z.real for z in lam)
        if top < -tol:
            regime = Regime.AXIALISING
        elif top > tol:
            regime = Regime.EXPANDING
        else:
            # undamped net exchange: neutral oscillation
            regime = Regime.CYCLING
    return RegimeResult(regime, lam)


def _propagator(p: EnvelopeParams, t: float) -> np.ndarray:
    # exp(A t) = e^{-s t} [cosh(mu t) I + sinh(mu t)/mu (A + s I)],
    # mu^2 = d^2 - delta^2; complex mu covers the oscillatory branch.
    s = 0.5 * (p.gamma_c + p.gamma_m)
    d = 0.5 * (p.gamma_c - p.gamma_m)
    mu = cmath.sqrt((d - p.delta) * (d + p.delta))
    x = mu * t
    if abs(x) < 1e-4:
        ch = 1 + x * x / 2 + x ** 4 / 24
        sh_over = t * (1 + x * x / 6 + x ** 4 / 120)
    else:
        ch = cmath.cosh(x)
        sh_over = cmath.sinh(x) / mu
    ch = ch.real
    sh_over = sh_over.real
    shifted = np.array([[-d, p.delta], [-p.delta, d]])
    return math.exp(-s * t) * (ch * np.eye(2) + sh_over * shifted)


def evolve_envelope(p: EnvelopeParams, s0: EnvelopeState, t: float) -> EnvelopeState:
    if t < 0:
        raise ValueError("t must be >= 0")
    a = _propagator(p, t) @ np.array([s0.a_c, s0.a_m])
    return EnvelopeState(float(a[0]), float(a[1]))


def envelope_trajectory(p: EnvelopeParams, s0: EnvelopeState, times) -> np.ndarray:
    """Signed amplitudes (n, 2) at each time in ``times``."""
    a0 = np.array([s0.a_c, s0.a_m])
    return np.array([_propagator(p, float(t)) @ a0 for t in times])


@dataclass(frozen=True)
class OverlapModel:
    beam_waist: float
    beam_offset: float = 0.0
    gamma_c0: float = 2000.0
    gamma_m0: float = -100.0
    n_quad: int = 256

    def __post_init__(self):
        if not self.beam_waist > 0:
            raise ValueError("beam waist must be positive")
        if self.n_quad < 256:
            raise ValueError("need at least 256 quadrature points")


def overlap_factor(m: OverlapModel, orbit_radius: float) -> float:
    """Ring-averaged Gaussian intensity seen by an ion on a circular orbit."""
    if orbit_radius < 0:
        raise ValueError("orbit radius must be >= 0")
    theta = np.arange(m.n_quad) * (2.0 * np.pi / m.n_quad)
    u = orbit_radius * np.cos(theta) - m.beam_offset
    return float(np.mean(np.exp(-2.0 * u * u / m.beam_waist ** 2)))


def find_stable_orbit_radius(m: OverlapModel, delta: float,
                             overlap: Callable[[float], float] | None = None) -> float:
    """Radius where beam overlap has weakened cooling to the marginal point.

    Solves delta^2 = -gamma_c0 * gamma_m0 * eta(rho)^2 for the smallest
    rho > 0 by bisection, carried to ~1e-12 of the beam waist so that the
    scaled rates classify as marginal at the default tolerance. ``overlap`` replaces
    the ring average (test hook).
    """
    eta = overlap if overlap is not None else (lambda r: overlap_factor(m, r))
    w = m.beam_waist
    if not (m.gamma_c0 > 0 and m.gamma_m0 < 0):
        raise NoExpansion("magnetron is not anti-damped; ion axialises to r = 0")
    if delta <= 0:
        raise NoStableOrbit("no coupling: the magnetron orbit grows without bound")
    k = -m.gamma_c0 * m.gamma_m0

    def excess(r):
        return k * eta(r) ** 2 - delta * delta

    if excess(0.0) <= 0:
        raise NoExpansion("coupling exceeds -gamma_c*gamma_m at the centre")
    # march outward to bracket the first sign change
    step = 0.05 * w
    lo, hi = 0.0, step
    while excess(hi) > 0:
        lo, hi = hi, hi + step
        step *= 1.25
        if hi > 1e6 * w:
            raise NoStableOrbit("overlap never drops enough to balance coupling")
    while hi - lo > 1e-12 * w:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def coupling_from_drive(drive_amplitude: float,
                        k_delta: float = DEFAULT_K_DELTA) -> float:
    if drive_amplitude < 0:
        raise ValueError("drive amplitude must be >= 0")
    return k_delta * drive_amplitude

"""Decomposition of sampled radial motion into cyclotron and magnetron parts."""

from __future__ import annotations

import numpy as np

from ..constants import BOLTZMANN
from ..trap import ModeFrequencies


def mode_amplitudes(positions, velocities, freqs: ModeFrequencies, center=(0.0, 0.0)):
    """Complex cyclotron and magnetron amplitudes from radial (x, y, vx, vy).

    With zeta = x + i y both modes rotate as exp(-i omega t), so
    zeta = z_plus + z_minus and dzeta/dt = -i(w+ z_plus + w- z_minus).
    Inputs broadcast over leading axes; returns (z_plus, z_minus).
    """
    pos = np.asarray(positions)
    vel = np.asarray(velocities)
    zeta = (pos[..., 0] - center[0]) + 1j * (pos[..., 1] - center[1])
    zdot = vel[..., 0] + 1j * vel[..., 1]
    wp, wm = freqs.omega_c_prime, freqs.omega_m
    dw = wp - wm
    z_plus = 1j * (zdot + 1j * wm * zeta) / dw
    z_minus = -1j * (zdot + 1j * wp * zeta) / dw
    return z_plus, z_minus


def mode_state(freqs: ModeFrequencies, r_c=0.0, r_m=0.0, phase_c=0.0, phase_m=0.0,
               center=(0.0, 0.0, 0.0)):
    """(position, velocity) of an ion with given cyclotron and magnetron radii.

    Inverse of ``mode_amplitudes``: z_plus = r_c exp(i phase_c),
    z_minus = r_m exp(i phase_m), axial coordinate at ``center``.
    """
    zp = r_c * np.exp(1j * phase_c)
    zm = r_m * np.exp(1j * phase_m)
    zeta = zp + zm
    zdot = -1j * (freqs.omega_c_prime * zp + freqs.omega_m * zm)
    pos = (center[0] + zeta.real, center[1] + zeta.imag, center[2])
    return pos, (zdot.real, zdot.imag, 0.0)


def mode_radii(traj, freqs: ModeFrequencies, ion=None, center=(0.0, 0.0)):
    """(r_c, r_m) per sample; for the centre of mass when ``ion`` is None."""
    if ion is None:
        pos = traj.positions.mean(axis=1)
        vel = traj.velocities.mean(axis=1)
    else:
        pos = traj.positions[:, ion]
        vel = traj.velocities[:, ion]
    zp, zm = mode_amplitudes(pos, vel, freqs, center)
    return np.abs(zp), np.abs(zm)


def cyclotron_axial_temperature(traj, freqs: ModeFrequencies, mass, start=0,
                                center=(0.0, 0.0)):
    """Kinetic temperature of the cyclotron plus axial degrees of freedom.

    Magnetron velocity is removed first; the remaining two radial and one
    axial velocity components are averaged over samples from ``start`` on
    and over ions: T = m <|v_+|^2 + v_z^2> / (3 k_B).
    """
    vel = traj.velocities[start:]
    zp, _ = mode_amplitudes(traj.positions[start:], vel, freqs, center)
    v_plus_sq = (freqs.omega_c_prime * np.abs(zp)) ** 2
    vz = vel[..., 2]
    vz = vz - vz.mean(axis=0)
    return mass * float(np.mean(v_plus_sq + vz * vz)) / (3.0 * BOLTZMANN)


def spectrum_peaks(signal, sample_interval, n_peaks=2, min_freq=0.0, pad=8):
    """Frequencies (Hz) of the strongest local maxima of |FFT|^2.

    Hann-windowed, zero-padded by ``pad`` and refined by parabolic
    interpolation on the log power.
    """
    x = np.asarray(signal, dtype=float)
    x = (x - x.mean()) * np.hanning(x.size)
    nfft = int(2 ** np.ceil(np.log2(x.size * pad)))
    power = np.abs(np.fft.rfft(x, nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, sample_interval)
    lp = np.log(power + power.max() * 1e-300)
    is_max = np.zeros(power.size, bool)
    is_max[1:-1] = (power[1:-1] > power[:-2]) & (power[1:-1] >= power[2:])
    is_max &= freqs >= min_freq
    idx = np.flatnonzero(is_max)
    idx = idx[np.argsort(power[idx])[::-1][:n_peaks]]
    out = []
    for i in sorted(idx):
        a, b, c = lp[i - 1], lp[i], lp[i + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        out.append((freqs[i] + shift * (freqs[1] - freqs[0]), power[i]))
    return out

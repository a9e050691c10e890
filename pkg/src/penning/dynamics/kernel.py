"""Compiled integration loop.

Each step: electric half-kick, exact rotation about B, electric half-kick,
photon scattering, drift. Velocities live on half-steps (leapfrog), so this
is the Boris scheme with the rotation angle taken exactly.
"""

import math

import numpy as np
from numba import njit

MODE_OFF = 0
MODE_MONTE_CARLO = 1
MODE_DRAG = 2

STATUS_DONE = 0
STATUS_ESCAPED = 1
STATUS_BUFFER_FULL = 2
STATUS_OVERLAP = 3


@njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@njit(cache=True, inline="always")
def _rate(x, y, z, vx, vy, vz, las):
    # las: kx ky kz cx cy cz wavenumber gamma detuning s0 waist
    kx, ky, kz = las[0], las[1], las[2]
    dx, dy, dz = x - las[3], y - las[4], z - las[5]
    along = dx * kx + dy * ky + dz * kz
    px, py, pz = dx - along * kx, dy - along * ky, dz - along * kz
    w = las[10]
    s = las[9] * math.exp(-2.0 * (px * px + py * py + pz * pz) / (w * w))
    g = las[7]
    d = 2.0 * (las[8] - las[6] * (kx * vx + ky * vy + kz * vz)) / g
    return 0.5 * g * s / (1.0 + s + d * d)


@njit(cache=True)
def _accelerations(pos, vel, t, acc, fp, las, mode, coulomb):
    # fp: q/m, trap_k, ax_g, ax_w, ax_phi, pr_amp, pr_w, pr_phi,
    #     pr_dx, pr_dy, pr_dz, ke*q^2/m, hbar*k/m
    n = pos.shape[0]
    qm = fp[0]
    tk = fp[1]
    cax = fp[2] * math.cos(fp[3] * t + fp[4])
    cpr = fp[5] * math.cos(fp[6] * t + fp[7])
    for i in range(n):
        x, y, z = pos[i, 0], pos[i, 1], pos[i, 2]
        acc[i, 0] = qm * (tk * x - cax * x + cpr * fp[8])
        acc[i, 1] = qm * (tk * y + cax * y + cpr * fp[9])
        acc[i, 2] = qm * (-2.0 * tk * z + cpr * fp[10])
        if mode == MODE_DRAG:
            r = _rate(x, y, z, vel[i, 0], vel[i, 1], vel[i, 2], las)
            a = fp[12] * r
            acc[i, 0] += a * las[0]
            acc[i, 1] += a * las[1]
            acc[i, 2] += a * las[2]
    if coulomb:
        kc = fp[11]
        for i in range(n):
            for j in range(i + 1, n):
                dx = pos[i, 0] - pos[j, 0]
                dy = pos[i, 1] - pos[j, 1]
                dz = pos[i, 2] - pos[j, 2]
                r2 = dx * dx + dy * dy + dz * dz
                if r2 < 1e-18:
                    return False
                inv = kc / (r2 * math.sqrt(r2))
                acc[i, 0] += inv * dx
                acc[i, 1] += inv * dy
                acc[i, 2] += inv * dz
                acc[j, 0] -= inv * dx
                acc[j, 1] -= inv * dy
                acc[j, 2] -= inv * dz
    return True


@njit(cache=True)
def advance(pos, vel, step0, n_steps, dt, omega_c, fp, las, mode, eps,
            recoil, coulomb, r_escape, stride,
            s_t, s_pos, s_vel, s_rate, n_s,
            ph, n_ph):
    """Advance ``pos``/``vel`` in place by up to ``n_steps`` steps.

    Returns (steps_done, n_samples, n_photons, status, ion_index).
    Samples are taken at the start of every step whose global index is a
    multiple of ``stride``; sampled velocities are resynchronised to the
    sample time with a half kick and half rotation.
    """
    n = pos.shape[0]
    acc = np.zeros((n, 3))
    c1 = math.cos(omega_c * dt)
    s1 = math.sin(omega_c * dt)
    ch = math.cos(0.5 * omega_c * dt)
    sh = math.sin(0.5 * omega_c * dt)
    hdt = 0.5 * dt
    vrec = fp[12]
    r_esc2 = r_escape * r_escape
    max_s = s_t.shape[0]
    max_ph = ph.shape[0]
    for k in range(n_steps):
        step = step0 + k
        t = step * dt
        if mode == MODE_MONTE_CARLO and max_ph - n_ph < 64 * n:
            return k, n_s, n_ph, STATUS_BUFFER_FULL, -1
        if not _accelerations(pos, vel, t, acc, fp, las, mode, coulomb):
            return k, n_s, n_ph, STATUS_OVERLAP, -1
        if step % stride == 0 and n_s < max_s:
            s_t[n_s] = t
            for i in range(n):
                vx = vel[i, 0] + hdt * acc[i, 0]
                vy = vel[i, 1] + hdt * acc[i, 1]
                vz = vel[i, 2] + hdt * acc[i, 2]
                wx = ch * vx + sh * vy
                wy = -sh * vx + ch * vy
                for d in range(3):
                    s_pos[n_s, i, d] = pos[i, d]
                s_vel[n_s, i, 0] = wx
                s_vel[n_s, i, 1] = wy
                s_vel[n_s, i, 2] = vz
                if mode != MODE_OFF:
                    s_rate[n_s, i] = _rate(pos[i, 0], pos[i, 1], pos[i, 2],
                                           wx, wy, vz, las)
                else:
                    s_rate[n_s, i] = 0.0
            n_s += 1
        for i in range(n):
            vx = vel[i, 0] + hdt * acc[i, 0]
            vy = vel[i, 1] + hdt * acc[i, 1]
            vz = vel[i, 2] + hdt * acc[i, 2]
            wx = c1 * vx + s1 * vy
            wy = -s1 * vx + c1 * vy
            vx = wx + hdt * acc[i, 0]
            vy = wy + hdt * acc[i, 1]
            vz = vz + hdt * acc[i, 2]
            if mode == MODE_MONTE_CARLO:
                r = _rate(pos[i, 0], pos[i, 1], pos[i, 2], vx, vy, vz, las)
                nsc = np.random.poisson(r * dt)
                if nsc > 0:
                    vx += nsc * vrec * las[0]
                    vy += nsc * vrec * las[1]
                    vz += nsc * vrec * las[2]
                    for _ in range(nsc):
                        if recoil:
                            cz = 2.0 * np.random.random() - 1.0
                            phi = 2.0 * math.pi * np.random.random()
                            sz = math.sqrt(1.0 - cz * cz)
                            vx += vrec * sz * math.cos(phi)
                            vy += vrec * sz * math.sin(phi)
                            vz += vrec * cz
                        # always draw, so detection never changes the RNG stream
                        u = np.random.random()
                        tu = np.random.random()
                        if u < eps and n_ph < max_ph:
                            ph[n_ph] = t + dt * tu
                            n_ph += 1
            vel[i, 0] = vx
            vel[i, 1] = vy
            vel[i, 2] = vz
            pos[i, 0] += vx * dt
            pos[i, 1] += vy * dt
            pos[i, 2] += vz * dt
            if (pos[i, 0] * pos[i, 0] + pos[i, 1] * pos[i, 1]
                    + pos[i, 2] * pos[i, 2]) > r_esc2:
                return k + 1, n_s, n_ph, STATUS_ESCAPED, i
    return n_steps, n_s, n_ph, STATUS_DONE, -1

"""Run configuration, scene description and the simulation driver."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ..constants import COULOMB_CONSTANT, HBAR, TWO_PI
from ..errors import IonEscaped, Overlap
from ..trap import (MG24, ModeFrequencies, ParticleSpecies, TrapFields,
                    TrapGeometry, derive_frequencies)
from . import kernel
from .model import AxialisationDrive, DipoleProbe, IonState, LaserParams

SCATTERING_MODES = {"montecarlo": kernel.MODE_MONTE_CARLO,
                    "drag": kernel.MODE_DRAG}
_CHUNK = 250_000


@dataclass(frozen=True)
class SimConfig:
    duration: float
    dt: float | None = None  # None: T_c'/100
    rng_seed: int = 0
    detection_efficiency: float = 1e-3
    coulomb_enabled: bool = False
    scattering_mode: str = "montecarlo"
    sample_every: int = 10
    background_rate: float = 0.0
    recoil: bool = True

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ValueError("detection efficiency must lie in [0, 1]")
        if self.scattering_mode not in SCATTERING_MODES:
            raise ValueError(f"scattering_mode must be one of {sorted(SCATTERING_MODES)}")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.background_rate < 0:
            raise ValueError("background rate must be >= 0")

    def resolved_dt(self, freqs: ModeFrequencies) -> float:
        period = TWO_PI / freqs.omega_c_prime
        dt = period / 100.0 if self.dt is None else self.dt
        if dt > period / 50.0:
            raise ValueError(f"dt = {dt:.3g} s exceeds T_c'/50 = {period / 50:.3g} s")
        return dt


@dataclass(frozen=True)
class Scene:
    species: ParticleSpecies = MG24
    geometry: TrapGeometry = field(default_factory=TrapGeometry)
    fields: TrapFields = field(default_factory=TrapFields)
    laser: LaserParams | None = None
    drive: AxialisationDrive = field(default_factory=AxialisationDrive)
    probe: DipoleProbe = field(default_factory=DipoleProbe)

    @property
    def frequencies(self) -> ModeFrequencies:
        return derive_frequencies(self.species, self.geometry, self.fields)


@dataclass
class Trajectory:
    t: np.ndarray  # (n,)
    positions: np.ndarray  # (n, N, 3)
    velocities: np.ndarray  # (n, N, 3)
    rates: np.ndarray  # (n, N) instantaneous scattering rate, s^-1
    sample_interval: float

    @property
    def n_ions(self):
        return self.positions.shape[1]

    def write_csv(self, path):
        n, nions = self.t.size, self.n_ions
        cols = np.empty((n * nions, 8))
        cols[:, 0] = np.repeat(self.t, nions)
        cols[:, 1] = np.tile(np.arange(nions), n)
        cols[:, 2:5] = self.positions.reshape(-1, 3)
        cols[:, 5:8] = self.velocities.reshape(-1, 3)
        np.savetxt(path, cols, delimiter=",", comments="",
                   header="t_s,ion_id,x_m,y_m,z_m,vx,vy,vz",
                   fmt=["%.12e", "%d"] + ["%.12e"] * 6)


@dataclass
class PhotonRecord:
    times: np.ndarray
    duration: float
    drive_frequency: float = 0.0
    drive_phase: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.size and (np.any(np.diff(self.times) <= 0)
                                or self.times[0] < 0 or self.times[-1] > self.duration):
            raise ValueError("photon times must be strictly increasing within [0, duration]")

    def __len__(self):
        return self.times.size

    @property
    def rate(self):
        return self.times.size / self.duration

    def write_binary(self, path):
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", self.times.size))
            fh.write(self.times.astype("<f8").tobytes())

    @classmethod
    def read_binary(cls, path, drive_frequency=0.0, drive_phase=0.0, duration=None):
        with open(path, "rb") as fh:
            (count,) = struct.unpack("<Q", fh.read(8))
            times = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64)
        if times.size != count:
            raise ValueError(f"{path}: header says {count} photons, found {times.size}")
        if duration is None:
            duration = float(times[-1]) if count else 0.0
        return cls(times, duration, drive_frequency, drive_phase)


def strictly_increasing(times):
    """Sort and nudge exact ties apart by one ulp."""
    times = np.sort(np.asarray(times, dtype=np.float64))
    # repeat: a nudge can create a new tie with the following value
    while (ties := np.flatnonzero(np.diff(times) <= 0) + 1).size:
        for i in ties:
            if times[i] <= times[i - 1]:
                times[i] = np.nextafter(times[i - 1], np.inf)
    return times


def _pack(scene: Scene, freqs: ModeFrequencies, mode: int):
    sp, geo = scene.species, scene.geometry
    qm = sp.charge / sp.mass
    fp = np.zeros(13)
    fp[0] = qm
    fp[1] = 2.0 * scene.fields.V / geo.R_sq
    d = scene.drive
    fp[2] = 2.0 * d.kappa * d.amplitude / geo.r0 ** 2
    fp[3] = d.frequency
    fp[4] = d.phase
    p = scene.probe
    fp[5] = p.amplitude
    fp[6] = p.frequency
    fp[7] = p.phase
    fp[8:11] = p.direction
    fp[11] = COULOMB_CONSTANT * sp.charge ** 2 / sp.mass
    las = np.zeros(11)
    if scene.laser is not None:
        L = scene.laser
        fp[12] = HBAR * L.wavenumber / sp.mass
        las[0:3] = L.k_hat
        las[3:6] = L.axis_point
        las[6] = L.wavenumber
        las[7] = sp.natural_linewidth
        las[8] = L.detuning
        las[9] = L.saturation
        las[10] = L.waist
    else:
        mode = kernel.MODE_OFF
        las[7] = sp.natural_linewidth
        las[10] = 1.0
    return fp, las, mode


def _as_arrays(initial):
    if isinstance(initial, IonState):
        initial = [initial]
    if isinstance(initial, (list, tuple)) and initial and isinstance(initial[0], IonState):
        pos = np.array([s.position for s in initial], dtype=np.float64)
        vel = np.array([s.velocity for s in initial], dtype=np.float64)
    else:
        pos, vel = (np.array(a, dtype=np.float64) for a in initial)
    return np.ascontiguousarray(pos.reshape(-1, 3)), np.ascontiguousarray(vel.reshape(-1, 3))


def _seeds(rng_seed):
    ss = np.random.SeedSequence(int(rng_seed) & 0xFFFFFFFFFFFFFFFF)
    kernel_seed = int(ss.generate_state(1, dtype=np.uint32)[0])
    return kernel_seed, np.random.default_rng(ss.spawn(1)[0])


def _phase_reference(scene):
    if scene.probe.amplitude > 0:
        return scene.probe.frequency, scene.probe.phase
    return scene.drive.frequency, scene.drive.phase


def run(config: SimConfig, scene: Scene, initial):
    """Integrate the ions in ``initial`` for ``config.duration``.

    ``initial`` is an IonState, a list of them, or a (positions, velocities)
    pair of (N, 3) arrays. Returns (Trajectory, PhotonRecord).
    """
    freqs = scene.frequencies
    dt = config.resolved_dt(freqs)
    pos, vel = _as_arrays(initial)
    n_ions = pos.shape[0]
    mode = SCATTERING_MODES[config.scattering_mode]
    fp, las, mode = _pack(scene, freqs, mode)
    eps = config.detection_efficiency if mode == kernel.MODE_MONTE_CARLO else 0.0
    n_steps = int(round(config.duration / dt))
    stride = config.sample_every
    n_samples = n_steps // stride + 1
    s_t = np.zeros(n_samples)
    s_pos = np.zeros((n_samples, n_ions, 3))
    s_vel = np.zeros((n_samples, n_ions, 3))
    s_rate = np.zeros((n_samples, n_ions))
    if mode == kernel.MODE_MONTE_CARLO and scene.laser is not None:
        s0 = scene.laser.saturation
        guess = eps * 0.5 * scene.species.natural_linewidth * s0 / (1 + s0) * n_ions * config.duration
    else:
        guess = 0.0
    ph = np.zeros(int(1.2 * guess) + 4096)
    kernel_seed, bg_rng = _seeds(config.rng_seed)
    kernel.seed_rng(kernel_seed)
    omega_c = freqs.omega_c
    done, n_s, n_ph = 0, 0, 0
    while done < n_steps:
        todo = min(_CHUNK, n_steps - done)
        k, n_s, n_ph, status, ion = kernel.advance(
            pos, vel, done, todo, dt, omega_c, fp, las, mode, eps,
            config.recoil, config.coulomb_enabled and n_ions > 1,
            scene.geometry.r0, stride, s_t, s_pos, s_vel, s_rate, n_s, ph, n_ph)
        done += k
        if status == kernel.STATUS_BUFFER_FULL:
            ph = np.concatenate([ph, np.zeros(ph.size)])
        elif status == kernel.STATUS_OVERLAP:
            raise Overlap(f"two ions closer than 1 nm at t = {done * dt:.6g} s")
        elif status == kernel.STATUS_ESCAPED:
            t_esc = done * dt
            err = IonEscaped(f"ion {ion} left the trap at t = {t_esc:.6g} s", t_esc, ion)
            err.partial = Trajectory(s_t[:n_s], s_pos[:n_s], s_vel[:n_s], s_rate[:n_s], stride * dt)
            raise err
    traj = Trajectory(s_t[:n_s].copy(), s_pos[:n_s].copy(), s_vel[:n_s].copy(),
                      s_rate[:n_s].copy(), stride * dt)
    duration = n_steps * dt
    times = ph[:n_ph]
    if config.background_rate > 0:
        n_bg = bg_rng.poisson(config.background_rate * duration)
        times = np.concatenate([times, bg_rng.uniform(0.0, duration, n_bg)])
    times = strictly_increasing(times[times <= duration])
    f_ref, phi_ref = _phase_reference(scene)
    return traj, PhotonRecord(times, duration, f_ref, phi_ref)


def step(positions, velocities, scene: Scene, dt: float, t: float = 0.0,
         scattering_mode: str | None = "montecarlo", coulomb: bool = False):
    """One integrator step from time ``t``; returns new (positions, velocities).

    Velocities are the leapfrog half-step values.
    """
    pos, vel = _as_arrays((positions, velocities))
    freqs = scene.frequencies
    mode = SCATTERING_MODES[scattering_mode] if scattering_mode else kernel.MODE_OFF
    fp, las, mode = _pack(scene, freqs, mode)
    step_index = t / dt
    if abs(step_index - round(step_index)) > 1e-9:
        raise ValueError("t must be an integer multiple of dt")
    dummy = np.zeros(1)
    _, _, _, status, ion = kernel.advance(
        pos, vel, int(round(step_index)), 1, dt, freqs.omega_c, fp, las, mode, 0.0,
        True, coulomb and len(pos) > 1, scene.geometry.r0, 1 << 62,
        dummy, np.zeros((1, len(pos), 3)), np.zeros((1, len(pos), 3)),
        np.zeros((1, len(pos))), 1, np.zeros(64 * len(pos) + 1), 0)
    if status == kernel.STATUS_ESCAPED:
        raise IonEscaped(f"ion {ion} left the trap", t + dt, ion)
    if status == kernel.STATUS_OVERLAP:
        raise Overlap("two ions closer than 1 nm")
    return pos, vel

"""Seeded, self-describing scenario runners and parameter sweeps.

Each scenario starts from the global defaults plus its own preset and
``scenario.*`` keys, writes its data products to an output directory and
finishes with ``manifest.json``: the resolved config, values derived from
it, a summary and the sha256 of every output file. Feeding the manifest
back in as the config reproduces the outputs bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import config as C
from .constants import BOLTZMANN, HBAR, TWO_PI
from .dynamics import (AxialisationDrive, coupling_rate, cyclotron_axial_temperature,
                       equilibrium_position, linear_damping_rates, mode_amplitudes,
                       mode_radii, mode_state, run)
from .envelope import (EnvelopeParams, EnvelopeState, OverlapModel, classify_regime,
                       envelope_eigenvalues, envelope_trajectory,
                       find_stable_orbit_radius)
from .errors import ConfigError, PenningError
from .imaging import accumulate_image, count_lobes, measure_spot_size
from .photons import (correlated_fraction, detrend_and_fft, fit_exponential_background,
                      phase_response_scan, rf_photon_phase, waiting_time_histogram)
from .trap import MG24, field_for_cyclotron_frequency

MANIFEST = "manifest.json"
_MAX_CSV_ROWS = 20000


# output helpers --------------------------------------------------------------

def _plain(v):
    """JSON-safe copy with numpy scalars and arrays turned into Python values."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def write_csv(path, header, columns, fmt="%.12e"):
    """Numeric columns to CSV with a fixed format (bit-stable across runs)."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt=fmt)


def _decimate(n):
    return max(1, int(math.ceil(n / _MAX_CSV_ROWS)))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    scenario: str
    version: str
    seed: int
    config: dict
    derived: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # relative path -> sha256

    def write(self, directory) -> Path:
        path = Path(directory) / MANIFEST
        data = _plain(self.__dict__)
        path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST
        data = json.loads(path.read_text())
        return cls(**data)

    def verify(self, directory) -> list[str]:
        """Outputs whose checksum differs from the recorded one."""
        bad = []
        for rel, digest in self.outputs.items():
            p = Path(directory) / rel
            if not p.exists() or sha256(p) != digest:
                bad.append(rel)
        return bad


# shared physics helpers ------------------------------------------------------

def _context(cfg):
    sc = C.scene(cfg)
    return sc, sc.frequencies


def _drive_amplitude_for(cfg, sc, freqs, delta):
    """Drive amplitude (V) giving coupling ``delta`` with the configured kappa."""
    unit = AxialisationDrive(1.0, kappa=cfg["drive.kappa"])
    return delta / coupling_rate(unit, sc.species, sc.geometry, freqs)


def _cooling(sc, freqs):
    if sc.laser is None:
        raise ConfigError("scenario needs the cooling laser (laser.enabled = true)")
    eq = equilibrium_position(sc.laser, sc.species, sc.fields, sc.geometry)
    return eq, linear_damping_rates(sc.laser, sc.species, freqs, eq)


def _window_means(t, x, start, width):
    edges = np.arange(start, t[-1] + 0.5 * width, width)
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (t >= a) & (t < b)
        if sel.any():
            out.append(float(x[sel].mean()))
    return np.array(out)


def _write_radii(path, t, r_c, r_m):
    k = _decimate(t.size)
    write_csv(path, ["t_s", "r_c_m", "r_m_m"], [t[::k], r_c[::k], r_m[::k]])


def _write_envelope(path, p: EnvelopeParams, s0: EnvelopeState, duration, dt):
    times = np.arange(0.0, duration + 0.5 * dt, dt)
    amps = envelope_trajectory(p, s0, times)
    regime = classify_regime(p).regime.value
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "r_c_m", "r_m_m", "regime"])
        for t, (a, b) in zip(times, amps):
            w.writerow([f"{t:.12e}", f"{abs(a):.12e}", f"{abs(b):.12e}", regime])
    return times, np.abs(amps)


def _magnetron_start(cfg, freqs, centre=(0.0, 0.0, 0.0)):
    pos, vel = mode_state(freqs, cfg["scenario.r_c0_m"], cfg["scenario.r_m0_m"],
                          center=tuple(centre))
    return np.array([pos]), np.array([vel])


# scenarios -------------------------------------------------------------------

def _fig2_cycling(cfg, out: Path, derived: dict) -> dict:
    sc, f = _context(cfg)
    delta = coupling_rate(sc.drive, sc.species, sc.geometry, f)
    derived["delta_per_s"] = delta
    derived["quarter_period_s"] = math.pi / (2.0 * delta)
    r_c0, r_m0 = cfg["scenario.r_c0_m"], cfg["scenario.r_m0_m"]
    p = EnvelopeParams(delta, 0.0, 0.0)
    _, env = _write_envelope(out / "envelope.csv", p, EnvelopeState(r_c0, r_m0),
                             cfg["sim.duration_s"], cfg["envelope.dt_s"])
    norm = r_c0 ** 2 + r_m0 ** 2
    drift = np.abs(env[:, 0] ** 2 + env[:, 1] ** 2 - norm) / norm
    traj, _ = run(C.sim_config(cfg), sc, _magnetron_start(cfg, f))
    traj.write_csv(out / "trajectory.csv")
    r_c, r_m = mode_radii(traj, f)
    _write_radii(out / "radii.csv", traj.t, r_c, r_m)
    i_min = int(np.argmin(r_m))
    return {
        "regime": classify_regime(p).regime.value,
        "envelope_conservation_max_rel": float(drift.max()),
        "envelope_min_r_m_ratio": float(env[:, 1].min() / r_m0),
        "dynamics_min_r_m_ratio": float(r_m[i_min] / r_m0),
        "dynamics_r_c_at_min_ratio": float(r_c[i_min] / r_m0),
        "dynamics_quarter_period_s": float(traj.t[i_min]),
        "predicted_quarter_period_s": math.pi / (2.0 * delta),
    }


def _fig2_axialise(cfg, out: Path, derived: dict) -> dict:
    sc, f = _context(cfg)
    eq, lr = _cooling(sc, f)
    delta = cfg["scenario.delta_per_s"]
    cfg["drive.amplitude_v"] = _drive_amplitude_for(cfg, sc, f, delta)
    sc, f = _context(cfg)
    p = EnvelopeParams(delta, lr.gamma_c, lr.gamma_m)
    slow = envelope_eigenvalues(p)[0].real
    derived.update(gamma_c_per_s=lr.gamma_c, gamma_m_per_s=lr.gamma_m,
                   slow_eigenvalue_per_s=slow, equilibrium_m=list(eq))
    r_m0 = cfg["scenario.r_m0_m"]
    _write_envelope(out / "envelope.csv", p, EnvelopeState(cfg["scenario.r_c0_m"], r_m0),
                    cfg["sim.duration_s"], cfg["envelope.dt_s"])
    traj, photons = run(C.sim_config(cfg), sc, _magnetron_start(cfg, f, eq))
    r_c, r_m = mode_radii(traj, f, center=eq[:2])
    _write_radii(out / "radii.csv", traj.t, r_c, r_m)
    photons.write_binary(out / "photons.bin")
    lo, hi = cfg["scenario.fit_window"]
    sel = (r_m < hi * r_m0) & (r_m > lo * r_m0)
    if sel.sum() < 10:
        raise PenningError("magnetron radius never crossed the fit window")
    first = np.flatnonzero(sel)[0]
    last = np.flatnonzero(r_m > lo * r_m0)[-1]
    sel[:first] = False
    sel[last + 1:] = False
    rate = float(np.polyfit(traj.t[sel], np.log(r_m[sel]), 1)[0])
    return {
        "regime": classify_regime(p).regime.value,
        "predicted_rate_per_s": slow,
        "fitted_rate_per_s": rate,
        "rate_rel_error": abs(rate - slow) / abs(slow),
        "final_r_m_m": float(r_m[-1]),
    }


def _fig2_orbit(cfg, out: Path, derived: dict) -> dict:
    sc, f = _context(cfg)
    eq, lr = _cooling(sc, f)
    critical = math.sqrt(max(-lr.gamma_c * lr.gamma_m, 0.0))
    delta = cfg["scenario.coupling_fraction"] * critical
    cfg["drive.amplitude_v"] = _drive_amplitude_for(cfg, sc, f, delta)
    sc, f = _context(cfg)
    las = sc.laser
    rho = find_stable_orbit_radius(
        OverlapModel(las.waist, las.offset, lr.gamma_c, lr.gamma_m), delta)
    derived.update(gamma_c_per_s=lr.gamma_c, gamma_m_per_s=lr.gamma_m,
                   delta_per_s=delta, critical_delta_per_s=critical,
                   predicted_radius_m=rho)
    traj, photons = run(C.sim_config(cfg), sc, _magnetron_start(cfg, f, eq))
    r_c, r_m = mode_radii(traj, f, center=eq[:2])
    _write_radii(out / "radii.csv", traj.t, r_c, r_m)
    final = cfg["scenario.final_window_s"]
    means = _window_means(traj.t, r_m, traj.t[-1] - final, cfg["scenario.average_window_s"])
    settled = float(means.mean())
    return {
        "predicted_radius_m": rho,
        "settled_radius_m": settled,
        "radius_ratio": settled / rho,
        "final_window_spread": float((means.max() - means.min()) / settled),
        "final_r_c_m": float(r_c[traj.t > traj.t[-1] - final].mean()),
    }


def _fig4_sweep(cfg, out: Path, derived: dict) -> dict:
    sc, f = _context(cfg)
    _, lr = _cooling(sc, f)
    delta = cfg["scenario.delta_per_s"]
    cfg["drive.amplitude_v"] = _drive_amplitude_for(cfg, sc, f, delta)
    derived.update(gamma_c_per_s=lr.gamma_c, gamma_m_per_s=lr.gamma_m,
                   critical_delta_per_s=math.sqrt(max(-lr.gamma_c * lr.gamma_m, 0.0)),
                   f_c_hz=f.omega_c / TWO_PI)
    cam = C.camera(cfg)
    rows = []
    for fd in cfg["scenario.drive_frequencies_hz"]:
        point = dict(cfg, **{"drive.frequency_hz": float(fd)})
        sc_d, _ = _context(point)
        traj, _ = run(C.sim_config(point), sc_d, _magnetron_start(point, f))
        late = traj.t >= cfg["scenario.image_start_s"]
        img = accumulate_image(traj.positions[late],
                               C.sample_weights(traj, point)[late], cam)
        img.write_pgm(out / f"image_{fd / 1e3:.0f}kHz.pgm")
        s = measure_spot_size(img)
        rows.append((float(fd), s.rms_x, s.rms_z, s.fwhm_x, s.fwhm_z))
    rows = np.array(rows)
    write_csv(out / "sizes.csv", ["drive_hz", "rms_x_m", "rms_z_m", "fwhm_x_m", "fwhm_z_m"],
              rows.T)
    best = int(np.argmin(rows[:, 1]))
    return {
        "drive_hz": rows[:, 0].tolist(),
        "rms_x_m": rows[:, 1].tolist(),
        "best_drive_hz": float(rows[best, 0]),
        "f_c_hz": f.omega_c / TWO_PI,
    }


def _fig5_phase_scan(cfg, out: Path, derived: dict) -> dict:
    sc, f = _context(cfg)
    eq, lr = _cooling(sc, f)
    k_delta = coupling_rate(AxialisationDrive(1.0, kappa=cfg["drive.kappa"]),
                            sc.species, sc.geometry, f)
    dw = f.omega_c_prime - f.omega_m
    derived.update(gamma_c_per_s=lr.gamma_c, gamma_m_per_s=lr.gamma_m,
                   delta_per_s_per_v=k_delta, equilibrium_m=list(eq))
    settle_n = cfg["scenario.settle_time_constants"]
    measure = cfg["scenario.measure_s"]
    offsets = np.linspace(-1.0, 1.0, cfg["scenario.scan_points"]) * cfg["scenario.scan_half_width"]
    fits, seed = [], cfg["sim.rng_seed"]
    for amp in cfg["scenario.amplitudes_v"]:
        delta = k_delta * amp
        predicted = -envelope_eigenvalues(EnvelopeParams(delta, lr.gamma_c, lr.gamma_m))[0].real
        if not predicted > 0:
            raise PenningError(f"magnetron mode is not damped at {amp} V")
        settle = settle_n / predicted
        # probe strength giving the configured resonant magnetron response
        e0 = 2.0 * sc.species.mass * dw * predicted * cfg["scenario.response_m"] / sc.species.charge
        scan = []
        for i, w in enumerate(f.omega_m + offsets * predicted):
            point = dict(cfg)
            point.update({"drive.amplitude_v": float(amp),
                          "probe.amplitude_v_per_m": e0,
                          "probe.frequency_hz": w / TWO_PI,
                          "sim.duration_s": settle + measure,
                          "sim.rng_seed": seed})
            seed += 1
            sc_p, _ = _context(point)
            _, photons = run(C.sim_config(point), sc_p,
                             (np.array([eq]), np.zeros((1, 3))))
            if cfg["scenario.write_photons"]:
                photons.write_binary(out / f"photons_{amp:g}V_{i:02d}.bin")
            times = photons.times[photons.times > settle]
            scan.append(rf_photon_phase(times, photons.drive_frequency, photons.drive_phase,
                                        require_modulation=False))
        fit = phase_response_scan(scan)
        write_csv(out / f"phase_scan_{amp:g}V.csv", ["drive_hz", "phase_rad", "depth", "sigma"],
                  [[m.drive_frequency / TWO_PI for m in scan], [m.phase for m in scan],
                   [m.depth for m in scan], [m.phase_error for m in scan]])
        fits.append((amp, delta, predicted, fit.gamma, fit.gamma_sigma,
                     fit.omega_0 / TWO_PI, fit.sense, fit.residual))
    fits = np.array(fits, dtype=float)
    write_csv(out / "fits.csv", ["amplitude_v", "delta_per_s", "gamma_predicted_per_s",
                                 "gamma_fit_per_s", "gamma_sigma_per_s", "f0_hz", "sense",
                                 "residual"], fits.T)
    amps, gam = fits[:, 0], fits[:, 3]
    summary = {"amplitudes_v": amps.tolist(), "gamma_fit_per_s": gam.tolist(),
               "gamma_predicted_per_s": fits[:, 2].tolist(),
               "monotonic": bool(np.all(np.diff(gam[np.argsort(amps)]) > 0))}
    if amps.size >= 2:
        lo, hi = int(np.argmin(amps)), int(np.argmax(amps))
        slope, icpt = np.polyfit(amps, gam, 1)
        resid = gam - (slope * amps + icpt)
        ss = float(np.sum((gam - gam.mean()) ** 2))
        summary.update(enhancement_ratio=float(gam[hi] / gam[lo]),
                       linear_r_squared=1.0 - float(resid @ resid) / ss if ss > 0 else 1.0)
    return summary


def _spectrum_outputs(out, tag, h, spec):
    write_csv(out / f"histogram{tag}.csv", ["lag_s", "counts", "detrended"],
              [h.lags, h.counts, spec.detrended])
    write_csv(out / f"spectrum{tag}.csv", ["freq_hz", "power"], [spec.frequencies, spec.power])


def _fig6_correlation(cfg, out: Path, derived: dict) -> dict:
    sc, f = _context(cfg)
    eq, lr = _cooling(sc, f)
    critical = math.sqrt(max(-lr.gamma_c * lr.gamma_m, 0.0))
    delta = cfg["scenario.coupling_fraction"] * critical
    cfg["drive.amplitude_v"] = _drive_amplitude_for(cfg, sc, f, delta)
    sc, f = _context(cfg)
    f2m, fcp = 2.0 * f.omega_m / TWO_PI, f.omega_c_prime / TWO_PI
    derived.update(gamma_c_per_s=lr.gamma_c, gamma_m_per_s=lr.gamma_m, delta_per_s=delta,
                   two_f_m_hz=f2m, f_c_prime_hz=fcp)
    start = cfg["scenario.analysis_start_s"]
    bw, lag = cfg["correlate.bin_width_s"], cfg["correlate.max_lag_s"]
    snr = cfg["correlate.snr_threshold"]

    traj, photons = run(C.sim_config(cfg), sc, _magnetron_start(cfg, f, eq))
    photons.write_binary(out / "photons.bin")
    r_c, r_m = mode_radii(traj, f, center=eq[:2])
    _write_radii(out / "radii.csv", traj.t, r_c, r_m)
    late = traj.t >= start
    img = accumulate_image(traj.positions[late], C.sample_weights(traj, cfg)[late],
                           C.camera(cfg))
    img.write_pgm(out / "image.pgm")
    h = waiting_time_histogram(photons.times[photons.times >= start], bw, lag)
    spec = detrend_and_fft(h, snr)
    _spectrum_outputs(out, "", h, spec)
    # background shape judged on bins one 2 f_m period wide, which average out
    # the modulation, out to a longer lag than the spectrum needs
    coarse_bw = max(1, int(round(1.0 / (f2m * bw)))) * bw
    coarse = waiting_time_histogram(photons.times[photons.times >= start], coarse_bw,
                                    cfg["scenario.background_max_lag_s"])
    bg = fit_exponential_background(coarse)
    summary = {
        "peaks_hz": [p.frequency for p in spec.peaks],
        "peak_snr": [p.snr for p in spec.peaks],
        "fft_resolution_hz": spec.resolution,
        "two_f_m_hz": f2m,
        "f_c_prime_hz": fcp,
        "background_rate_per_s": bg.rate,
        "background_chi2_dof": bg.chi2_dof,
        "image_lobes": count_lobes(img.profile("u")),
        "orbit_radius_m": float(r_m[late].mean()),
    }
    for name, fr in (("two_f_m", f2m), ("f_c_prime", fcp)):
        peak = spec.peak_near(fr, 1.0)
        summary[f"peak_{name}_hz"] = peak.frequency if peak else None
    cf = correlated_fraction(spec, f2m, require_peak=False)
    summary.update(fraction_two_f_m=cf.value, fraction_two_f_m_sigma=cf.sigma)

    # incoherent control: independent ions with random magnetron phases
    n = cfg["scenario.control_ions"]
    if n > 0:
        ctrl = dict(cfg)
        ctrl.update({"sim.coulomb": False,
                     "sim.detection_efficiency": cfg["scenario.control_efficiency"],
                     "sim.background_rate_hz": 0.0,
                     "sim.duration_s": cfg["scenario.control_duration_s"],
                     "sim.rng_seed": cfg["sim.rng_seed"] + 1})
        rng = np.random.default_rng(cfg["sim.rng_seed"])
        states = [mode_state(f, 0.0, cfg["scenario.r_m0_m"], 0.0, ph, tuple(eq))
                  for ph in rng.uniform(0.0, TWO_PI, n)]
        _, cph = run(C.sim_config(ctrl), sc, (np.array([s[0] for s in states]),
                                              np.array([s[1] for s in states])))
        cph.write_binary(out / "photons_control.bin")
        hc = waiting_time_histogram(cph.times[cph.times >= start], bw, lag)
        cspec = detrend_and_fft(hc, snr)
        _spectrum_outputs(out, "_control", hc, cspec)
        cc = correlated_fraction(cspec, f2m, require_peak=False)
        summary.update(control_ions=n, control_fraction=cc.value,
                       control_fraction_sigma=cc.sigma,
                       control_peaks_hz=[p.frequency for p in cspec.peaks])
    return summary


def _doppler(cfg, out: Path, derived: dict) -> dict:
    sc, f = _context(cfg)
    eq, lr = _cooling(sc, f)
    t_doppler = HBAR * sc.species.natural_linewidth / (2.0 * BOLTZMANN)
    derived.update(gamma_c_per_s=lr.gamma_c, gamma_m_per_s=lr.gamma_m,
                   equilibrium_m=list(eq), doppler_limit_k=t_doppler)
    pos = np.array([eq + np.array(cfg["scenario.start_offset_m"])])
    vel = np.array([cfg["scenario.start_velocity_m_per_s"]], dtype=float)
    traj, photons = run(C.sim_config(cfg), sc, (pos, vel))
    photons.write_binary(out / "photons.bin")
    m = sc.species.mass
    width = cfg["scenario.average_window_s"]
    edges = np.arange(0.0, traj.t[-1] + 0.5 * width, width)
    rows = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (traj.t >= a) & (traj.t < b)
        zp, _ = mode_amplitudes(traj.positions[sel, 0], traj.velocities[sel, 0], f, eq[:2])
        t_c = m * float(np.mean((f.omega_c_prime * np.abs(zp)) ** 2)) / (2.0 * BOLTZMANN)
        t_z = m * float(np.var(traj.velocities[sel, 0, 2])) / BOLTZMANN
        rows.append((a, b, t_c, t_z, (2.0 * t_c + t_z) / 3.0))
    write_csv(out / "temperatures.csv", ["t_start_s", "t_end_s", "t_cyclotron_k",
                                         "t_axial_k", "t_combined_k"], np.array(rows).T)
    start = int(np.searchsorted(traj.t, cfg["scenario.equilibrate_s"]))
    t_comb = cyclotron_axial_temperature(traj, f, m, start, eq[:2])
    rows = np.array(rows)
    late = rows[:, 0] >= cfg["scenario.equilibrate_s"]
    return {
        "doppler_limit_k": t_doppler,
        "t_combined_k": t_comb,
        "t_cyclotron_k": float(rows[late, 2].mean()),
        "t_axial_k": float(rows[late, 3].mean()),
        "ratio_to_doppler": t_comb / t_doppler,
    }


# registry --------------------------------------------------------------------

_FAR_RED = {"laser.detuning_linewidths": -5.0, "laser.saturation": 1.0,
            "laser.waist_m": 50e-6, "laser.offset_m": 0.0}
_GENTLE = {"laser.detuning_linewidths": -0.5, "laser.saturation": 0.1,
           "laser.waist_m": 50e-6, "laser.offset_m": 25e-6}
_START = {"scenario.r_c0_m": 0.0, "scenario.r_m0_m": 50e-6}


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    runner: Callable[[dict, Path, dict], dict]
    params: dict  # scenario.* keys and their defaults
    preset: Callable[[], dict] = dict

    def resolve(self, path=None, overrides=()) -> dict:
        return C.resolve(self.preset(), path, overrides, extra=self.params)


def _fig4_preset():
    return {**_FAR_RED,
            "trap.b_tesla": field_for_cyclotron_frequency(MG24, 627e3),
            "sim.duration_s": 0.2, "sim.sample_every": 20, "sim.rng_seed": 1,
            "camera.width_px": 129, "camera.height_px": 129}


SCENARIOS: dict[str, Scenario] = {s.name: s for s in [
    Scenario("fig2-cycling", "drive on, cooling off: magnetron and cyclotron radii exchange",
             _fig2_cycling, dict(_START),
             lambda: {"laser.enabled": False, "drive.amplitude_v": 0.01,
                      "sim.duration_s": 0.03, "sim.sample_every": 50}),
    Scenario("fig2-axialise", "drive plus cooling: magnetron radius spirals in",
             _fig2_axialise, {"scenario.r_c0_m": 0.0, "scenario.r_m0_m": 15e-6,
                              "scenario.delta_per_s": 1000.0,
                              "scenario.fit_window": [0.05, 0.7]},
             lambda: {**_GENTLE, "sim.duration_s": 0.02, "sim.sample_every": 50,
                      "sim.scattering_mode": "drag"}),
    Scenario("fig2-orbit", "coupling below critical: ion settles on a stable orbit",
             _fig2_orbit, {"scenario.r_c0_m": 0.0, "scenario.r_m0_m": 30e-6,
                           "scenario.coupling_fraction": 0.5,
                           "scenario.final_window_s": 0.05,
                           "scenario.average_window_s": 0.005},
             lambda: {**_FAR_RED, "sim.duration_s": 0.3, "sim.sample_every": 50}),
    Scenario("fig4-sweep", "spot size vs axialisation drive frequency",
             _fig4_sweep, {"scenario.r_c0_m": 0.0, "scenario.r_m0_m": 20e-6,
                           "scenario.delta_per_s": 1500.0,
                           "scenario.drive_frequencies_hz": [621e3, 623e3, 625e3,
                                                             627e3, 629e3, 631e3],
                           "scenario.image_start_s": 0.08},
             _fig4_preset),
    Scenario("fig5-phase-scan", "rf-photon phase scans of the magnetron resonance vs drive",
             _fig5_phase_scan, {"scenario.amplitudes_v": [0.0, 0.5, 1.0, 1.5],
                                "scenario.scan_points": 11,
                                "scenario.scan_half_width": 3.0,
                                "scenario.settle_time_constants": 5.0,
                                "scenario.measure_s": 0.04,
                                "scenario.response_m": 6e-6,
                                "scenario.write_photons": False},
             lambda: {**_GENTLE, "drive.kappa": 0.08, "sim.detection_efficiency": 0.5,
                      "sim.sample_every": 100}),
    Scenario("fig6-orbit-correlation", "stable orbit: image lobes and photon correlations",
             _fig6_correlation, {"scenario.r_c0_m": 0.0, "scenario.r_m0_m": 60e-6,
                                 "scenario.coupling_fraction": 0.25,
                                 "scenario.analysis_start_s": 0.05,
                                 "scenario.background_max_lag_s": 320e-6,
                                 "scenario.control_ions": 5,
                                 "scenario.control_efficiency": 0.03,
                                 "scenario.control_duration_s": 0.2},
             lambda: {**_FAR_RED, "sim.duration_s": 0.2, "sim.sample_every": 20,
                      "sim.rng_seed": 2, "sim.detection_efficiency": 0.06,
                      "sim.background_rate_hz": 5e3}),
    Scenario("doppler-equilibrium", "Monte-Carlo cooling to the Doppler limit",
             _doppler, {"scenario.start_offset_m": [5e-6, 0.0, 2e-6],
                        "scenario.start_velocity_m_per_s": [5.0, 0.0, 3.0],
                        "scenario.equilibrate_s": 0.01,
                        "scenario.average_window_s": 0.005},
             lambda: {"laser.detuning_linewidths": -0.5, "laser.saturation": 0.5,
                      "laser.offset_m": 25e-6,
                      "laser.direction": [math.sqrt(0.5), 0.0, math.sqrt(0.5)],
                      "sim.duration_s": 0.04, "sim.sample_every": 7, "sim.rng_seed": 3}),
]}


def get(name) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def run_scenario(name, out, path=None, overrides=(), cfg: dict | None = None) -> RunManifest:
    """Run one scenario into directory ``out`` and write its manifest.

    ``cfg`` (an already resolved config) takes precedence over ``path`` and
    ``overrides``. Module errors are re-raised with the scenario name prefixed.
    """
    sc = get(name)
    cfg = dict(cfg) if cfg is not None else sc.resolve(path, overrides)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    derived: dict = {}
    try:
        summary = sc.runner(cfg, out, derived)
    except PenningError as exc:
        exc.args = (f"{name}: {exc}",) + exc.args[1:]
        raise
    outputs = {p.relative_to(out).as_posix(): sha256(p)
               for p in sorted(out.rglob("*")) if p.is_file() and p.name != MANIFEST}
    m = RunManifest(name, __version__, int(cfg["sim.rng_seed"]), _plain(cfg),
                    _plain(derived), _plain(summary), outputs)
    m.write(out)
    return m


def rerun_manifest(path, out) -> RunManifest:
    """Re-run the scenario recorded in a manifest into ``out``."""
    layer, name = C.load_file(path)
    if name is None:
        raise ConfigError(f"{path}: manifest does not name a scenario")
    sc = get(name)
    cfg = C.merge(C.resolve(sc.preset(), extra=sc.params), layer, str(path))
    return run_scenario(name, out, cfg=cfg)


# sweeps ----------------------------------------------------------------------

@dataclass
class SweepPoint:
    index: int
    values: dict
    directory: str
    manifest: RunManifest | None = None
    error: str | None = None
    error_code: str | None = None


def _run_point(args):
    name, cfg, directory = args
    try:
        return run_scenario(name, directory, cfg=cfg), None, None
    except PenningError as exc:
        return None, str(exc), exc.code
    except (ValueError, ArithmeticError) as exc:
        return None, f"{name}: {exc}", "invalid_value"


def sweep(name, grid: dict, out, path=None, overrides=(), workers: int = 1) -> list[SweepPoint]:
    """Run the cartesian product of ``grid`` (key -> list of values).

    Points are ordered by their grid values, run in ``point_NNN``
    subdirectories with seed ``sim.rng_seed + NNN`` unless the seed is a
    grid key, and summarised in ``summary.csv``. A failing point records its
    error and does not stop the others.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid is empty")
    sc = get(name)
    base = sc.resolve(path, overrides)
    keys = sorted(grid)
    combos = sorted(itertools.product(*(grid[k] for k in keys)),
                    key=lambda c: [(0, v) if isinstance(v, (int, float)) and not isinstance(v, bool)
                                   else (1, json.dumps(_plain(v))) for v in c])
    out = Path(out)
    points, jobs = [], []
    for i, combo in enumerate(combos):
        values = dict(zip(keys, combo))
        cfg = C.merge(base, values, "grid")
        if "sim.rng_seed" not in grid:
            cfg["sim.rng_seed"] = base["sim.rng_seed"] + i
        d = out / f"point_{i:03d}"
        points.append(SweepPoint(i, values, d.name))
        jobs.append((name, cfg, d))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    for p, (m, err, code) in zip(points, results):
        p.manifest, p.error, p.error_code = m, err, code
    _write_summary(out / "summary.csv", keys, points)
    return points


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict, bool)):
        return json.dumps(v)
    return str(v)


def _write_summary(path, keys, points):
    metrics = sorted({k for p in points if p.manifest for k in p.manifest.summary})
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", *keys, "status", "error_code", "error", *metrics])
        for p in points:
            s = p.manifest.summary if p.manifest else {}
            w.writerow([p.directory, *(_cell(_plain(p.values[k])) for k in keys),
                        "ok" if p.manifest else "failed", p.error_code or "", p.error or "",
                        *(_cell(s.get(k)) for k in metrics)])

"""Command-line interface: ``penning <command> ...``.

Results go to files (CSV, PGM, photon binaries) and to stdout as
``key=value`` lines. Failures print ``error code=<code> message="..."`` on
stderr and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from . import scenarios as S
from .constants import TWO_PI
from .dynamics import PhotonRecord, Trajectory, run, scattering_rates
from .envelope import classify_regime, envelope_trajectory
from .errors import ConfigError, PenningError
from .imaging import Image, accumulate_image, estimate_temperature, measure_spot_size
from .photons import (correlated_fraction, detrend_and_fft, phase_response_scan,
                      rf_photon_phase, waiting_time_histogram)
from .trap import voltage_for_magnetron_frequency


def _emit(**pairs):
    for k, v in pairs.items():
        if isinstance(v, float):
            v = repr(v)
        elif isinstance(v, (list, tuple, dict, bool)) or v is None:
            v = json.dumps(S._plain(v))
        print(f"{k}={v}")


def _config(args, preset=None, extra=None):
    return C.resolve(preset, args.config, args.set or (), extra)


def _add_config(p):
    p.add_argument("-c", "--config", help="TOML config or JSON run manifest")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (TOML value syntax); repeatable")


# commands --------------------------------------------------------------------

def cmd_frequencies(args):
    cfg = _config(args)
    if args.f_m is not None:
        v = voltage_for_magnetron_frequency(C.species(cfg), C.geometry(cfg),
                                            cfg["trap.b_tesla"], args.f_m)
        cfg["trap.v_volts"] = v
    f = C.scene(cfg).frequencies
    _emit(b_tesla=cfg["trap.b_tesla"], v_volts=cfg["trap.v_volts"])
    for name, hz in f.hz().items():
        label = name.replace("omega", "f")
        _emit(**{f"{label}_hz": hz, f"{name}_per_s": getattr(f, name)})


def cmd_envelope(args):
    cfg = _config(args)
    p, s0 = C.envelope(cfg)
    dt, duration = cfg["envelope.dt_s"], cfg["envelope.duration_s"]
    if not (dt > 0 and duration >= 0):
        raise ConfigError("envelope.dt_s must be positive and envelope.duration_s >= 0")
    res = classify_regime(p)
    if args.out:
        S._write_envelope(Path(args.out), p, s0, duration, dt)
    else:
        times = np.arange(0.0, duration + 0.5 * dt, dt)
        amps = np.abs(envelope_trajectory(p, s0, times))
        print("t_s,r_c_m,r_m_m,regime")
        for t, (a, b) in zip(times, amps):
            print(f"{t:.12e},{a:.12e},{b:.12e},{res.regime.value}")
        return
    lam = res.eigenvalues
    _emit(regime=res.regime.value, lambda_1_re=lam[0].real, lambda_1_im=lam[0].imag,
          lambda_2_re=lam[1].real, lambda_2_im=lam[1].imag, out=args.out)


def cmd_simulate(args):
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = C.scene(cfg)
    traj, photons = run(C.sim_config(cfg), scene, C.initial_state(cfg))
    traj.write_csv(out / "trajectory.csv")
    photons.write_binary(out / "photons.bin")
    outputs = {n: S.sha256(out / n) for n in ("photons.bin", "trajectory.csv")}
    f = scene.frequencies
    summary = {"samples": int(traj.t.size), "photons": len(photons),
               "duration_s": photons.duration,
               "reference_frequency_hz": photons.drive_frequency / TWO_PI,
               "reference_phase_rad": photons.drive_phase}
    derived = {k + "_hz": v for k, v in f.hz().items()}
    S.RunManifest("simulate", __version__, cfg["sim.rng_seed"], S._plain(cfg),
                  derived, summary, outputs).write(out)
    _emit(**summary, out=str(out))


def _read_photons(path, start=0.0):
    rec = PhotonRecord.read_binary(path)
    return rec.times[rec.times >= start]


def cmd_correlate(args):
    times = _read_photons(args.photons, args.start)
    h = waiting_time_histogram(times, args.bin_width, args.max_lag)
    spec = detrend_and_fft(h, args.snr, strict=args.strict)
    if args.hist_out:
        S.write_csv(args.hist_out, ["lag_s", "counts", "detrended"],
                    [h.lags, h.counts, spec.detrended])
    if args.fft_out:
        S.write_csv(args.fft_out, ["freq_hz", "power"], [spec.frequencies, spec.power])
    bg = spec.background
    _emit(photons=int(times.size), bins=h.n_bins, overflow=h.overflow,
          resolution_hz=spec.resolution, fallback=spec.fallback,
          background_rate_per_s=bg.rate if bg else math.nan,
          background_chi2_dof=bg.chi2_dof if bg else math.nan,
          peaks_hz=[p.frequency for p in spec.peaks], peak_snr=[p.snr for p in spec.peaks])
    for fr in args.fraction_at or ():
        cf = correlated_fraction(spec, fr, require_peak=False)
        _emit(**{f"fraction_at_{fr:g}_hz": cf.value, f"fraction_at_{fr:g}_hz_sigma": cf.sigma})


def _scan_point(spec):
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"scan point {spec!r} is not FILE:DRIVE_HZ[:PHASE_RAD]")
    try:
        hz = float(parts[1])
        phase = float(parts[2]) if len(parts) == 3 else 0.0
    except ValueError:
        raise ConfigError(f"scan point {spec!r}: drive frequency and phase must be numbers") from None
    return parts[0], hz, phase


def cmd_phase_scan(args):
    scan = []
    for spec in args.points:
        path, hz, phase = _scan_point(spec)
        times = _read_photons(path, args.start)
        scan.append(rf_photon_phase(times, TWO_PI * hz, phase, require_modulation=False))
    scan.sort(key=lambda m: m.drive_frequency)
    if args.out:
        S.write_csv(args.out, ["drive_hz", "phase_rad", "depth", "sigma"],
                    [[m.drive_frequency / TWO_PI for m in scan], [m.phase for m in scan],
                     [m.depth for m in scan], [m.phase_error for m in scan]])
    fit = phase_response_scan(scan)
    _emit(gamma_per_s=fit.gamma, gamma_sigma_per_s=fit.gamma_sigma,
          gamma_over_2pi_hz=fit.gamma / TWO_PI, omega_0_per_s=fit.omega_0,
          f0_hz=fit.omega_0 / TWO_PI, phi_0_rad=fit.phi_0, sense=fit.sense,
          swing_rad=fit.swing, residual_rad=fit.residual)


def _read_trajectory(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 8 or data.shape[0] == 0:
        raise ConfigError(f"{path}: expected columns t_s,ion_id,x_m,y_m,z_m,vx,vy,vz")
    ids = data[:, 1].astype(int)
    n = ids.max() + 1
    if data.shape[0] % n:
        raise ConfigError(f"{path}: rows are not whole samples of {n} ions")
    rows = data.reshape(-1, n, 8)
    t = rows[:, 0, 0]
    dt = float(t[1] - t[0]) if t.size > 1 else 0.0
    return Trajectory(t, rows[:, :, 2:5], rows[:, :, 5:8], np.zeros(rows.shape[:2]), dt)


def cmd_image(args):
    cfg = _config(args)
    traj = _read_trajectory(args.trajectory)
    sel = traj.t >= args.start
    scene = C.scene(cfg)
    if scene.laser is not None:
        traj.rates = scattering_rates(traj.positions, traj.velocities, scene.laser, scene.species)
    img = accumulate_image(traj.positions[sel], C.sample_weights(traj, cfg)[sel], C.camera(cfg))
    pgm, side = img.write_pgm(args.out)
    _emit(out=str(pgm), sidecar=str(side), total_weight=img.total_weight, spill=img.spill,
          meters_per_pixel=img.pixel_size)


def cmd_spot_size(args):
    img = Image.read_pgm(args.image)
    s = measure_spot_size(img)
    _emit(rms_x_m=s.rms_x, rms_z_m=s.rms_z, fwhm_x_m=s.fwhm_x, fwhm_z_m=s.fwhm_z,
          fwhm_x_direct_m=s.fwhm_x_direct, fwhm_z_direct_m=s.fwhm_z_direct,
          background=s.background, centroid_x_m=s.centroid[0], centroid_z_m=s.centroid[1])
    if args.mode_hz is not None:
        mass_u = args.mass_u if args.mass_u is not None else C.DEFAULTS["species.mass_u"]
        sp = C.species(C.resolve(overrides=[("species.mass_u", mass_u)]))
        rms = s.rms_z if args.axis == "z" else s.rms_x
        est = estimate_temperature(rms, TWO_PI * args.mode_hz, sp, args.psf_sigma)
        _emit(temperature_k=est.kelvin, upper_limit=est.upper_limit, sigma_ion_m=est.sigma_ion)


def cmd_scenario(args):
    if args.list:
        for name, sc in S.SCENARIOS.items():
            print(f"{name}: {sc.description}")
        return
    if args.manifest:
        path = Path(args.manifest)
        if path.is_dir():
            path = path / S.MANIFEST
        ref = S.RunManifest.read(path)
        m = S.rerun_manifest(path, args.out)
        bad = sorted(k for k in set(ref.outputs) | set(m.outputs)
                     if ref.outputs.get(k) != m.outputs.get(k))
        _emit(scenario=m.scenario, out=str(args.out), reproduced=not bad, mismatched=bad)
        if bad:
            raise PenningError(f"outputs differ from the manifest: {', '.join(bad)}")
        return
    if not args.name:
        raise ConfigError("give a scenario name, --manifest or --list")
    m = S.run_scenario(args.name, args.out, args.config, args.set or ())
    _emit(scenario=m.scenario, out=str(args.out), seed=m.seed, **m.summary)


def _parse_grid(items):
    grid = {}
    for item in items or ():
        key, value = C.parse_override(item)
        if not isinstance(value, list):
            value = [value]
        grid[key] = value
    return grid


def cmd_sweep(args):
    points = S.sweep(args.name, _parse_grid(args.grid), args.out, args.config,
                     args.set or (), args.workers)
    failed = [p for p in points if p.manifest is None]
    _emit(points=len(points), failed=len(failed), summary=str(Path(args.out) / "summary.csv"))
    for p in failed:
        print(f"point={p.directory} error code={p.error_code} message={json.dumps(p.error)}")


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="penning", description="Penning-trap axialisation simulator.")
    ap.add_argument("--version", action="version", version=f"penning {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("frequencies", help="trap mode frequencies")
    _add_config(p)
    p.add_argument("--f-m", type=float, help="choose V for this magnetron frequency (Hz)")
    p.set_defaults(func=cmd_frequencies)

    p = sub.add_parser("envelope", help="envelope-model radii vs time (CSV)")
    _add_config(p)
    p.add_argument("-o", "--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_envelope)

    p = sub.add_parser("simulate", help="full-dynamics run: trajectory CSV + photon stream")
    _add_config(p)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    d = C.DEFAULTS
    p = sub.add_parser("correlate", help="waiting-time histogram and spectrum of a photon stream")
    p.add_argument("photons", help="photon stream binary")
    p.add_argument("--bin-width", type=float, default=d["correlate.bin_width_s"], help="seconds")
    p.add_argument("--max-lag", type=float, default=d["correlate.max_lag_s"], help="seconds")
    p.add_argument("--snr", type=float, default=d["correlate.snr_threshold"])
    p.add_argument("--start", type=float, default=0.0, help="ignore photons before this time (s)")
    p.add_argument("--strict", action="store_true", help="fail instead of mean detrending")
    p.add_argument("--hist-out", help="CSV: lag_s,counts,detrended")
    p.add_argument("--fft-out", help="CSV: freq_hz,power")
    p.add_argument("--fraction-at", type=float, action="append", metavar="HZ",
                   help="report the correlated fraction at this frequency; repeatable")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("phase-scan", help="rf-photon phase vs drive frequency and width fit")
    p.add_argument("points", nargs="+", metavar="FILE:DRIVE_HZ[:PHASE_RAD]")
    p.add_argument("--start", type=float, default=0.0, help="ignore photons before this time (s)")
    p.add_argument("-o", "--out", help="CSV: drive_hz,phase_rad,depth,sigma")
    p.set_defaults(func=cmd_phase_scan)

    p = sub.add_parser("image", help="camera image (PGM + sidecar) from a trajectory CSV")
    _add_config(p)
    p.add_argument("trajectory")
    p.add_argument("-o", "--out", required=True, help="PGM path")
    p.add_argument("--start", type=float, default=0.0, help="ignore samples before this time (s)")
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("spot-size", help="rms and FWHM sizes of a PGM image")
    p.add_argument("image")
    p.add_argument("--mode-hz", type=float, help="also report the equipartition temperature")
    p.add_argument("--axis", choices=("x", "z"), default="z", help="size used for temperature")
    p.add_argument("--psf-sigma", type=float, default=d["camera.psf_sigma_m"], help="metres")
    p.add_argument("--mass-u", type=float)
    p.set_defaults(func=cmd_spot_size)

    p = sub.add_parser("scenario", help="run a named figure scenario")
    p.add_argument("name", nargs="?", choices=sorted(S.SCENARIOS))
    _add_config(p)
    p.add_argument("-o", "--out", default=".", help="output directory")
    p.add_argument("--manifest", help="re-run a manifest and compare checksums")
    p.add_argument("--list", action="store_true", help="list scenarios")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("sweep", help="run a scenario over a parameter grid")
    p.add_argument("name", choices=sorted(S.SCENARIOS))
    _add_config(p)
    p.add_argument("--grid", action="append", metavar="KEY=[V1, V2, ...]", required=True,
                   help="grid axis (TOML array); repeatable")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("-j", "--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except PenningError as exc:
        print(f"error code={exc.code} message={json.dumps(str(exc))}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        code = "io_error" if isinstance(exc, OSError) else "invalid_value"
        print(f"error code={code} message={json.dumps(str(exc))}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

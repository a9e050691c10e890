"""Flat, unit-suffixed configuration and builders for the model objects.

A config is a flat dict keyed ``section.name_unit``. Sources are layered:
built-in defaults, then a scenario preset, then a TOML file (nested tables
or dotted keys) or a JSON run manifest, then ``key=value`` overrides.
Every key must already exist in the defaults; types are checked against
the default's type.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import tomli

from .constants import MG24_MASS_U, MG_LINEWIDTH, MG_WAVELENGTH, TWO_PI
from .dynamics import (AxialisationDrive, DipoleProbe, LaserParams, Scene,
                       SimConfig)
from .envelope import DEFAULT_K_DELTA, EnvelopeParams, EnvelopeState
from .errors import ConfigError
from .imaging import CameraModel
from .trap import ParticleSpecies, TrapFields, TrapGeometry

_R0 = 5e-3

DEFAULTS: dict = {
    "species.mass_u": MG24_MASS_U,
    "species.charge_e": 1.0,
    "species.wavelength_m": MG_WAVELENGTH,
    "species.linewidth_hz": MG_LINEWIDTH / TWO_PI,
    "trap.b_tesla": 1.0,
    "trap.v_volts": 4.7,
    "trap.r0_m": _R0,
    "trap.z0_m": _R0 / math.sqrt(2.0),
    "laser.enabled": True,
    "laser.detuning_linewidths": -0.5,
    "laser.saturation": 1.0,
    "laser.waist_m": 50e-6,
    "laser.offset_m": 25e-6,
    "laser.direction": [1.0, 0.0, 0.0],
    "drive.amplitude_v": 0.0,
    "drive.frequency_hz": "f_c",
    "drive.phase_rad": 0.0,
    "drive.kappa": 0.5,
    "probe.amplitude_v_per_m": 0.0,
    "probe.frequency_hz": "f_m",
    "probe.phase_rad": 0.0,
    "probe.direction": [1.0, 0.0, 0.0],
    "ions.positions_m": [[20e-6, 0.0, 0.0]],
    "ions.velocities_m_per_s": [[0.0, 0.0, 0.0]],
    "sim.duration_s": 0.02,
    "sim.dt_s": "auto",
    "sim.rng_seed": 0,
    "sim.detection_efficiency": 1e-3,
    "sim.coulomb": False,
    "sim.scattering_mode": "montecarlo",
    "sim.sample_every": 10,
    "sim.background_rate_hz": 0.0,
    "sim.recoil": True,
    "envelope.delta_per_s": 1000.0,
    "envelope.gamma_c_per_s": 0.0,
    "envelope.gamma_m_per_s": 0.0,
    "envelope.r_c0_m": 0.0,
    "envelope.r_m0_m": 50e-6,
    "envelope.duration_s": 0.01,
    "envelope.dt_s": 1e-5,
    "envelope.k_delta_per_s_per_v": DEFAULT_K_DELTA,
    "camera.pixel_pitch_m": 13e-6,
    "camera.magnification": 1.0,
    "camera.psf_sigma_m": 8e-6,
    "camera.width_px": 65,
    "camera.height_px": 65,
    "camera.exposure_s": 1.0,
    "camera.view_axis": [0.0, 1.0, 0.0],
    "correlate.bin_width_s": 0.2e-6,
    "correlate.max_lag_s": 102.4e-6,
    "correlate.snr_threshold": 4.0,
    "correlate.start_s": 0.0,
}

# string values allowed in place of a number, resolved from the trap frequencies
FREQUENCY_ALIASES = ("f_c", "f_c_prime", "f_m", "f_z")


def flatten(tree: dict, prefix: str = "") -> dict:
    """Nested tables to dotted keys; lists are leaves."""
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _same_kind(default, value):
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, (int, float)) and isinstance(value, (int, float)):
        return True
    if isinstance(default, str) and isinstance(value, (int, float)):
        return True  # alias-valued keys also take numbers
    if isinstance(default, (int, float)) and isinstance(value, str):
        return False
    return type(default) is type(value) or (
        isinstance(default, list) and isinstance(value, list))


def _coerce(key, default, value):
    if not _same_kind(default, value):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
        if value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(value, list):
        return json.loads(json.dumps(value))  # deep copy of plain data
    return value


def merge(base: dict, layer: dict, source: str = "override") -> dict:
    """New config with ``layer`` applied; unknown keys raise ConfigError."""
    out = dict(base)
    for key, value in layer.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r} ({source})")
        out[key] = _coerce(key, base[key], value)
    return out


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with a TOML value; bare words are taken as strings."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return key, value


def load_file(path) -> tuple[dict, str | None]:
    """Flat keys from a TOML config or JSON run manifest.

    Returns (layer, scenario name or None).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if "config" not in data:
            raise ConfigError(f"{path}: manifest has no 'config' block")
        return dict(data["config"]), data.get("scenario")
    try:
        tree = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return flatten(tree), None


def resolve(preset: dict | None = None, path=None, overrides=(),
            extra: dict | None = None) -> dict:
    """Defaults, then preset, then file, then ``key=value`` overrides.

    ``extra`` declares additional keys (with defaults) on top of DEFAULTS,
    e.g. a scenario's own ``scenario.*`` parameters.
    """
    cfg = dict(DEFAULTS)
    if extra:
        cfg.update(extra)
    if preset:
        cfg = merge(cfg, preset, "preset")
    if path is not None:
        layer, _ = load_file(path)
        cfg = merge(cfg, layer, str(path))
    pairs = dict(parse_override(o) if isinstance(o, str) else o for o in overrides)
    return merge(cfg, pairs)


# builders -------------------------------------------------------------------

def _vec3(cfg, key):
    v = cfg[key]
    if len(v) != 3:
        raise ConfigError(f"{key}: expected 3 components")
    return tuple(float(c) for c in v)


def _build(key, factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def species(cfg) -> ParticleSpecies:
    return _build("species", ParticleSpecies.from_units, cfg["species.mass_u"],
                  cfg["species.charge_e"],
                  transition_wavelength=cfg["species.wavelength_m"],
                  natural_linewidth=TWO_PI * cfg["species.linewidth_hz"])


def geometry(cfg) -> TrapGeometry:
    return _build("trap", TrapGeometry, cfg["trap.r0_m"], cfg["trap.z0_m"])


def fields(cfg) -> TrapFields:
    return _build("trap", TrapFields, cfg["trap.b_tesla"], cfg["trap.v_volts"])


def angular_frequency(cfg, key, freqs) -> float:
    """Angular frequency for a ``*_hz`` key that may hold an alias."""
    v = cfg[key]
    if isinstance(v, str):
        table = {"f_c": freqs.omega_c, "f_c_prime": freqs.omega_c_prime,
                 "f_m": freqs.omega_m, "f_z": freqs.omega_z}
        if v not in table:
            raise ConfigError(f"{key}: {v!r} is not a number or one of {FREQUENCY_ALIASES}")
        return table[v]
    return TWO_PI * float(v)


def laser(cfg, sp: ParticleSpecies | None = None) -> LaserParams | None:
    if not cfg["laser.enabled"]:
        return None
    sp = sp or species(cfg)
    return _build("laser", LaserParams,
                  detuning=cfg["laser.detuning_linewidths"] * sp.natural_linewidth,
                  saturation=cfg["laser.saturation"], waist=cfg["laser.waist_m"],
                  offset=cfg["laser.offset_m"], direction=_vec3(cfg, "laser.direction"),
                  wavelength=sp.transition_wavelength)


def scene(cfg) -> Scene:
    sp, geo, fl = species(cfg), geometry(cfg), fields(cfg)
    base = Scene(species=sp, geometry=geo, fields=fl)
    freqs = base.frequencies
    drive = _build("drive", AxialisationDrive, cfg["drive.amplitude_v"],
                   angular_frequency(cfg, "drive.frequency_hz", freqs),
                   cfg["drive.phase_rad"], cfg["drive.kappa"])
    probe = _build("probe", DipoleProbe, cfg["probe.amplitude_v_per_m"],
                   angular_frequency(cfg, "probe.frequency_hz", freqs),
                   cfg["probe.phase_rad"], _vec3(cfg, "probe.direction"))
    return Scene(species=sp, geometry=geo, fields=fl, laser=laser(cfg, sp),
                 drive=drive, probe=probe)


def sim_config(cfg) -> SimConfig:
    dt = cfg["sim.dt_s"]
    if isinstance(dt, str):
        if dt != "auto":
            raise ConfigError(f"sim.dt_s: expected a number or 'auto', got {dt!r}")
        dt = None
    return _build("sim", SimConfig, duration=cfg["sim.duration_s"], dt=dt,
                  rng_seed=cfg["sim.rng_seed"],
                  detection_efficiency=cfg["sim.detection_efficiency"],
                  coulomb_enabled=cfg["sim.coulomb"],
                  scattering_mode=cfg["sim.scattering_mode"],
                  sample_every=cfg["sim.sample_every"],
                  background_rate=cfg["sim.background_rate_hz"],
                  recoil=cfg["sim.recoil"])


def initial_state(cfg):
    """(positions, velocities) arrays of shape (N, 3)."""
    pos = np.asarray(cfg["ions.positions_m"], dtype=float)
    vel = np.asarray(cfg["ions.velocities_m_per_s"], dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape != vel.shape or len(pos) == 0:
        raise ConfigError("ions.positions_m and ions.velocities_m_per_s must be "
                          "matching non-empty lists of 3-vectors")
    return pos, vel


def camera(cfg) -> CameraModel:
    return _build("camera", CameraModel, pixel_pitch=cfg["camera.pixel_pitch_m"],
                  magnification=cfg["camera.magnification"],
                  psf_sigma=cfg["camera.psf_sigma_m"], width=cfg["camera.width_px"],
                  height=cfg["camera.height_px"], exposure=cfg["camera.exposure_s"],
                  view_axis=_vec3(cfg, "camera.view_axis"))


def envelope(cfg) -> tuple[EnvelopeParams, EnvelopeState]:
    p = _build("envelope", EnvelopeParams, cfg["envelope.delta_per_s"],
               cfg["envelope.gamma_c_per_s"], cfg["envelope.gamma_m_per_s"])
    s = _build("envelope", EnvelopeState, cfg["envelope.r_c0_m"], cfg["envelope.r_m0_m"])
    return p, s


def sample_weights(traj, cfg):
    """Expected detected photons per trajectory sample (uniform without a laser)."""
    if not cfg["laser.enabled"]:
        return np.full(traj.positions.shape[:2], traj.sample_interval)
    return traj.rates * cfg["sim.detection_efficiency"] * traj.sample_interval


def to_toml(cfg: dict) -> str:
    """Serialise a flat config as dotted-key TOML (readable by ``load_file``)."""
    lines = []
    for key in sorted(cfg):
        lines.append(f"{key} = {_toml_value(cfg[key])}")
    return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return _toml_string(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise {v!r}")


_TOML_ESCAPES = {'"': '\\"', "\\": "\\\\", "\b": "\\b", "\t": "\\t",
                 "\n": "\\n", "\f": "\\f", "\r": "\\r"}


def _toml_string(s: str) -> str:
    # json.dumps would write astral characters as surrogate pairs, which TOML rejects
    out = []
    for ch in s:
        if ch in _TOML_ESCAPES:
            out.append(_TOML_ESCAPES[ch])
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return '"' + "".join(out) + '"'

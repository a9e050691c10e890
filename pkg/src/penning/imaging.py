"""Synthetic intensified-CCD camera and spot-size analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .constants import BOLTZMANN
from .errors import EmptyTrajectory, NoSignal

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
_CHUNK = 4096


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class CameraModel:
    """Pixelated camera looking along ``view_axis``.

    The image plane has horizontal axis view_axis x z (the x axis for the
    default view along y) and vertical axis along the component of z
    perpendicular to the view. ``psf_sigma`` is given in object space.
    The origin of the trap is imaged onto the centre of pixel
    (height // 2, width // 2).
    """

    pixel_pitch: float = 13e-6
    magnification: float = 1.0
    psf_sigma: float = 8e-6
    width: int = 65
    height: int = 65
    exposure: float = 1.0
    view_axis: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if not self.pixel_pitch > 0:
            raise ValueError("pixel pitch must be positive")
        if not self.magnification > 0:
            raise ValueError("magnification must be positive")
        if self.psf_sigma < 0:
            raise ValueError("PSF sigma must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor must have at least one pixel")
        object.__setattr__(self, "view_axis", tuple(_unit(self.view_axis)))

    @property
    def object_pixel(self):
        """Pixel size referred to the object plane, metres."""
        return self.pixel_pitch / self.magnification

    def image_axes(self):
        """Unit vectors (horizontal, vertical) spanning the image plane."""
        v = np.array(self.view_axis)
        z = np.array([0.0, 0.0, 1.0])
        h = np.cross(v, z)
        if np.linalg.norm(h) < 1e-12:
            return np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
        h = _unit(h)
        return h, _unit(np.cross(h, v))

    def project(self, positions):
        """Object-plane coordinates (u, v) of positions (..., 3)."""
        h, vert = self.image_axes()
        p = np.asarray(positions, dtype=float)
        return p @ h, p @ vert


def _edges(n, pitch):
    return (np.arange(n + 1) - n // 2 - 0.5) * pitch


@dataclass
class Image:
    counts: np.ndarray  # (height, width), expected counts
    pixel_size: float  # object-plane metres per pixel
    spill: float = 0.0
    total_weight: float = 0.0

    def __post_init__(self):
        if np.any(self.counts < 0):
            raise ValueError("pixel counts must be >= 0")

    @property
    def u(self):
        """Horizontal pixel centres, object-plane metres."""
        return (np.arange(self.counts.shape[1]) - self.counts.shape[1] // 2) * self.pixel_size

    @property
    def v(self):
        return (np.arange(self.counts.shape[0]) - self.counts.shape[0] // 2) * self.pixel_size

    def __add__(self, other):
        if self.counts.shape != other.counts.shape or self.pixel_size != other.pixel_size:
            raise ValueError("images differ in shape or scale")
        return Image(self.counts + other.counts, self.pixel_size,
                     self.spill + other.spill, self.total_weight + other.total_weight)

    def profile(self, axis="u"):
        """Counts summed over the other image axis."""
        return self.counts.sum(axis=0 if axis == "u" else 1)

    def write_pgm(self, path):
        """16-bit binary PGM scaled to the brightest pixel, plus a sidecar."""
        path = Path(path)
        peak = self.counts.max()
        scaled = self.counts / peak * 65535.0 if peak > 0 else self.counts
        data = np.round(scaled).astype(">u2")
        h, w = data.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
            fh.write(data.tobytes())
        sidecar = path.with_name(path.name + ".txt")
        sidecar.write_text(
            f"meters_per_pixel={float(self.pixel_size)!r}\n"
            f"counts_per_level={float(peak) / 65535.0!r}\n"
            f"total_weight={float(self.total_weight)!r}\n"
            f"spill={float(self.spill)!r}\n")
        return path, sidecar

    @classmethod
    def read_pgm(cls, path):
        """Inverse of ``write_pgm`` (up to 16-bit quantisation)."""
        path = Path(path)
        raw = path.read_bytes()
        tokens, pos = [], 0
        while len(tokens) < 4:
            while raw[pos:pos + 1].isspace():
                pos += 1
            end = pos
            while not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end].decode("ascii"))
            pos = end
        if tokens[0] != "P5":
            raise ValueError(f"{path}: not a binary PGM")
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        dtype = ">u2" if maxval > 255 else "u1"
        levels = np.frombuffer(raw[pos + 1:], dtype=dtype, count=w * h).reshape(h, w)
        meta = {}
        sidecar = path.with_name(path.name + ".txt")
        if sidecar.exists():
            for line in sidecar.read_text().splitlines():
                k, _, val = line.partition("=")
                meta[k.strip()] = float(val)
        counts = levels.astype(float) * meta.get("counts_per_level", 1.0)
        return cls(counts, meta.get("meters_per_pixel", 1.0),
                   meta.get("spill", 0.0), meta.get("total_weight", float(counts.sum())))


def _pixel_fractions(x, edges, sigma):
    """(n, n_pix) fraction of a Gaussian at ``x`` landing in each pixel."""
    if sigma > 0:
        # a subnormal sigma overflows to +-inf, which ndtr maps to the step limit
        with np.errstate(over="ignore"):
            cdf = ndtr((edges[None, :] - x[:, None]) / sigma)
        return np.diff(cdf, axis=1)
    idx = np.searchsorted(edges, x, side="right") - 1
    out = np.zeros((x.size, edges.size - 1))
    ok = (idx >= 0) & (idx < edges.size - 1)
    out[np.flatnonzero(ok), idx[ok]] = 1.0
    return out


def accumulate_image(positions, weights, camera: CameraModel = CameraModel()) -> Image:
    """Deposit weighted emitter positions onto the sensor.

    ``positions`` is (n, 3) or (n, N, 3) in metres (a Trajectory's
    ``positions`` works directly); ``weights`` has the matching leading
    shape and is the expected number of detected photons per sample, e.g.
    detected rate times sample interval. Each deposit is a Gaussian of
    width ``psf_sigma`` integrated exactly over every pixel; weight that
    falls off the sensor is kept in ``spill``.
    """
    arr = np.asarray(getattr(positions, "positions", positions), dtype=float)
    pos = arr.reshape(-1, 3)
    w = np.broadcast_to(np.asarray(weights, dtype=float), arr.shape[:-1]).reshape(-1)
    if pos.shape[0] == 0:
        raise EmptyTrajectory("no samples to image")
    if np.any(w < 0):
        raise ValueError("weights must be >= 0")
    u, v = camera.project(pos)
    px = camera.object_pixel
    eu, ev = _edges(camera.width, px), _edges(camera.height, px)
    counts = np.zeros((camera.height, camera.width))
    inside = 0.0
    for s in range(0, u.size, _CHUNK):
        sl = slice(s, s + _CHUNK)
        fu = _pixel_fractions(u[sl], eu, camera.psf_sigma)
        fv = _pixel_fractions(v[sl], ev, camera.psf_sigma)
        counts += fv.T @ (w[sl, None] * fu)
        inside += float(np.sum(w[sl] * fu.sum(axis=1) * fv.sum(axis=1)))
    total = float(w.sum())
    return Image(np.maximum(counts, 0.0), px, max(total - inside, 0.0), total)


@dataclass(frozen=True)
class SpotSize:
    rms_x: float
    rms_z: float
    fwhm_x: float  # Gaussian-equivalent, 2 sqrt(2 ln 2) rms
    fwhm_z: float
    fwhm_x_direct: float  # half-maximum crossings of the summed profile
    fwhm_z_direct: float
    background: float
    centroid: tuple = (0.0, 0.0)


def _half_max_width(profile, pitch):
    peak = int(np.argmax(profile))
    half = 0.5 * profile[peak]
    if half <= 0:
        return 0.0
    left = peak
    while left > 0 and profile[left - 1] > half:
        left -= 1
    right = peak
    while right < profile.size - 1 and profile[right + 1] > half:
        right += 1
    # linear interpolation of the crossings; pixel centres are at integer positions
    xl = left - 0.5 if left == 0 else left - 1 + (half - profile[left - 1]) / (profile[left] - profile[left - 1])
    xr = right + 0.5 if right == profile.size - 1 else right + (profile[right] - half) / (profile[right] - profile[right + 1])
    return float((xr - xl) * pitch)


def measure_spot_size(img: Image) -> SpotSize:
    """Background-subtracted second moments and half-maximum widths.

    The background is the median of the border pixels. Second moments get
    Sheppard's correction for pixel binning (pitch^2/12 subtracted,
    clipped at zero).
    """
    c = img.counts.astype(float)
    border = np.concatenate([c[0], c[-1], c[1:-1, 0], c[1:-1, -1]])
    bg = float(np.median(border))
    peak = float(c.max())
    if not peak > 0 or peak < 5.0 * bg:
        raise NoSignal(f"peak {peak:.3g} is below 5x background {bg:.3g}")
    s = c - bg
    total = s.sum()
    if not total > 0:
        raise NoSignal("no counts above background")
    px = img.pixel_size
    u, v = img.u, img.v
    pu, pv = s.sum(axis=0), s.sum(axis=1)
    mu, mv = float(pu @ u / total), float(pv @ v / total)
    var_u = float(pu @ (u - mu) ** 2 / total) - px * px / 12.0
    var_v = float(pv @ (v - mv) ** 2 / total) - px * px / 12.0
    rx, rz = math.sqrt(max(var_u, 0.0)), math.sqrt(max(var_v, 0.0))
    return SpotSize(rx, rz, FWHM_PER_SIGMA * rx, FWHM_PER_SIGMA * rz,
                    _half_max_width(pu, px), _half_max_width(pv, px), bg, (mu, mv))


@dataclass(frozen=True)
class TemperatureEstimate:
    kelvin: float
    upper_limit: bool
    sigma_ion: float


def estimate_temperature(rms_size: float, omega: float, mass: float,
                         psf_sigma: float = 0.0) -> TemperatureEstimate:
    """Single-mode equipartition temperature T = m omega^2 sigma^2 / k_B.

    The PSF is removed in quadrature first. When the measured width does
    not exceed the PSF the ion size is unresolved: T clips at 0 and the
    result is flagged as an upper limit. Any temperature read from an image
    is an upper limit in practice; the flag marks the resolution-limited
    case. For the magnetron mode this is a localisation measure only,
    since that mode's energy is negative.
    """
    if not rms_size > 0:
        raise ValueError("rms size must be positive")
    mass = getattr(mass, "mass", mass)
    var = rms_size * rms_size - psf_sigma * psf_sigma
    clipped = var <= 0
    var = max(var, 0.0)
    return TemperatureEstimate(mass * omega * omega * var / BOLTZMANN, clipped, math.sqrt(var))


def count_lobes(profile, dip: float = 0.5) -> int:
    """Number of maxima separated by dips below ``dip`` x the lower neighbour peak.

    Maxima below ``dip`` x the global peak are ignored as noise.
    """
    p = np.asarray(profile, dtype=float)
    if p.size < 3 or not p.max() > 0:
        return 0
    peaks = [i for i in range(1, p.size - 1)
             if p[i] > p[i - 1] and p[i] >= p[i + 1] and p[i] >= dip * p.max()]
    if p[0] > p[1] and p[0] >= dip * p.max():
        peaks.insert(0, 0)
    if p[-1] > p[-2] and p[-1] >= dip * p.max():
        peaks.append(p.size - 1)
    if not peaks:
        return 0
    lobes, current = 1, peaks[0]
    for nxt in peaks[1:]:
        if p[current:nxt + 1].min() < dip * min(p[current], p[nxt]):
            lobes += 1
            current = nxt
        elif p[nxt] > p[current]:
            current = nxt
    return lobes

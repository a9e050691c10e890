"""Photon-timing analysis: start-stop waiting times, spectra and rf-photon phase.

Emulates a TAC/MCA chain (consecutive-photon waiting times) and the
rf-photon correlation used to read off motional damping rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit

from .errors import (FitFailed, IncompleteSwing, NoModulation, PeakNotFound,
                     TooFewPhotons)

MIN_PHASE_PHOTONS = 200
MIN_FFT_BINS = 64
DEFAULT_SNR = 4.0


def _times(photons):
    return np.asarray(getattr(photons, "times", photons), dtype=np.float64)


def thinned_poisson(rate, rate_max, duration, rng):
    """Event times of an inhomogeneous Poisson process on [0, duration).

    ``rate`` is a vectorised callable bounded by ``rate_max``; candidates
    from a homogeneous process at ``rate_max`` are kept with probability
    rate(t)/rate_max.
    """
    if rate_max <= 0:
        return np.empty(0)
    n = rng.poisson(rate_max * duration)
    t = np.sort(rng.uniform(0.0, duration, n))
    keep = rng.uniform(0.0, rate_max, n) < rate(t)
    return t[keep]


# -- waiting-time histogram -------------------------------------------------

@dataclass(frozen=True)
class WaitingTimeHistogram:
    bin_width: float
    counts: np.ndarray
    total_starts: int
    overflow: int = 0

    def __post_init__(self):
        if np.any(self.counts < 0) or self.counts.sum() > self.total_starts:
            raise ValueError("inconsistent histogram counts")

    @property
    def n_bins(self):
        return self.counts.size

    @property
    def lags(self):
        """Bin centres, seconds."""
        return (np.arange(self.n_bins) + 0.5) * self.bin_width

    def rebin(self, factor: int) -> WaitingTimeHistogram:
        """Merge ``factor`` adjacent bins; a trailing partial group is dropped."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("rebin factor must be >= 1")
        n = self.n_bins // factor
        counts = self.counts[:n * factor].reshape(n, factor).sum(axis=1)
        dropped = int(self.counts[n * factor:].sum())
        return WaitingTimeHistogram(self.bin_width * factor, counts,
                                    self.total_starts, self.overflow + dropped)


def waiting_time_histogram(photons, bin_width: float, max_lag: float) -> WaitingTimeHistogram:
    """Histogram of consecutive waiting times t[i+1] - t[i].

    Bins are [k*bin_width, (k+1)*bin_width) for lags below ``max_lag``;
    longer waits are counted in ``overflow``.
    """
    t = _times(photons)
    if t.size < 2:
        raise TooFewPhotons(f"need at least 2 photons, got {t.size}")
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if not max_lag > 0:
        raise ValueError("max_lag must be positive")
    n_bins = max(1, int(math.ceil(max_lag / bin_width - 1e-9)))
    idx = np.floor(np.diff(t) / bin_width).astype(np.int64)
    inside = idx < n_bins
    counts = np.bincount(idx[inside], minlength=n_bins)
    return WaitingTimeHistogram(bin_width, counts, t.size - 1, int((~inside).sum()))


@dataclass(frozen=True)
class BackgroundFit:
    """Exponential A*exp(-R*lag) fitted to a waiting-time histogram."""

    amplitude: float
    rate: float
    chi2_dof: float

    def __call__(self, lags):
        return self.amplitude * np.exp(-self.rate * np.asarray(lags))


def _exp_model(t, a, r):
    return a * np.exp(-r * t)


def fit_exponential_background(h: WaitingTimeHistogram) -> BackgroundFit:
    """Weighted least-squares exponential fit, reweighted once by the model.

    The goodness of fit is Pearson's chi^2 per degree of freedom.
    """
    lags, counts = h.lags, h.counts.astype(float)
    if h.n_bins < 3 or counts.sum() == 0:
        raise FitFailed("too few bins or no counts to fit a background")
    pos = counts > 0
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(lags[pos], np.log(counts[pos]), 1, w=np.sqrt(counts[pos]))
        p0 = (math.exp(icpt), max(-slope, 1e-12 / h.bin_width))
    else:
        p0 = (counts.max(), 1.0 / lags[-1])
    try:
        sigma = np.sqrt(np.maximum(counts, 1.0))
        p, _ = curve_fit(_exp_model, lags, counts, p0=p0, sigma=sigma, maxfev=5000)
        sigma = np.sqrt(np.maximum(_exp_model(lags, *p), 1e-12))
        p, _ = curve_fit(_exp_model, lags, counts, p0=p, sigma=sigma, maxfev=5000)
    except (RuntimeError, ValueError) as exc:
        raise FitFailed(f"exponential background fit did not converge: {exc}") from exc
    if not (np.all(np.isfinite(p)) and p[0] > 0):
        raise FitFailed("exponential background fit returned a non-physical result")
    model = _exp_model(lags, *p)
    ok = model > 0
    chi2 = float(np.sum((counts[ok] - model[ok]) ** 2 / model[ok]))
    return BackgroundFit(float(p[0]), float(p[1]), chi2 / max(int(ok.sum()) - 2, 1))


# -- spectrum of the detrended histogram ------------------------------------

@dataclass(frozen=True)
class Peak:
    frequency: float  # Hz
    power: float
    snr: float


@dataclass(frozen=True)
class SpectrumPeaks:
    """Power spectrum of a detrended waiting-time histogram.

    ``detrended`` is counts/background - 1; ``weights`` is the background
    model, i.e. the inverse variance of each detrended bin.
    """

    frequencies: np.ndarray
    power: np.ndarray
    peaks: tuple
    noise_floor: float
    threshold: float
    lags: np.ndarray
    detrended: np.ndarray
    weights: np.ndarray
    background: BackgroundFit | None = None
    fallback: bool = False

    @property
    def resolution(self):
        return float(self.frequencies[1] - self.frequencies[0])

    def peak_near(self, frequency, tolerance_bins=1.0):
        """Strongest detected peak within ``tolerance_bins`` of ``frequency``, or None."""
        tol = tolerance_bins * self.resolution
        near = [p for p in self.peaks if abs(p.frequency - frequency) <= tol]
        return max(near, key=lambda p: p.power) if near else None


def detrend_and_fft(h: WaitingTimeHistogram, snr_threshold: float = DEFAULT_SNR,
                    min_bin: int = 2, strict: bool = False) -> SpectrumPeaks:
    """Divide out the exponential background and find spectral peaks.

    Each detrended bin is scaled by the square root of its background so
    the series has roughly uniform noise, then Hann-windowed. A peak is a
    local maximum whose amplitude SNR, sqrt(power / median power), reaches
    ``snr_threshold``; bins below ``min_bin`` are ignored. If the background
    fit fails, the histogram mean is used instead and ``fallback`` is set,
    unless ``strict``, in which case FitFailed propagates.
    """
    if h.n_bins < MIN_FFT_BINS:
        raise ValueError(f"need at least {MIN_FFT_BINS} bins, got {h.n_bins}")
    counts = h.counts.astype(float)
    try:
        bg = fit_exponential_background(h)
        model = bg(h.lags)
        fallback = False
    except FitFailed:
        if strict:
            raise
        bg = None
        model = np.full(h.n_bins, max(counts.mean(), 1e-300))
        fallback = True
    model = np.maximum(model, 1e-300)
    detrended = counts / model - 1.0
    series = detrended * np.sqrt(model / model.max())
    series = (series - series.mean()) * np.hanning(series.size)
    power = np.abs(np.fft.rfft(series)) ** 2
    freqs = np.fft.rfftfreq(series.size, h.bin_width)
    floor = float(np.median(power[max(min_bin, 1):]))
    peaks = []
    if floor > 0:
        snr = np.sqrt(power / floor)
        for i in range(max(min_bin, 1), power.size - 1):
            if power[i] > power[i - 1] and power[i] >= power[i + 1] and snr[i] >= snr_threshold:
                a, b, c = np.log(power[i - 1:i + 2])
                den = a - 2 * b + c
                shift = 0.5 * (a - c) / den if den != 0 else 0.0
                peaks.append(Peak(float(freqs[i] + shift * (freqs[1] - freqs[0])),
                                  float(power[i]), float(snr[i])))
    return SpectrumPeaks(freqs, power, tuple(peaks), floor, snr_threshold,
                         h.lags, detrended, model, bg, fallback)


@dataclass(frozen=True)
class CorrelatedFraction:
    value: float
    sigma: float
    frequency: float


def correlated_fraction(spectrum: SpectrumPeaks, peak_freq: float,
                        tolerance_bins: float = 1.5,
                        require_peak: bool = True) -> CorrelatedFraction:
    """Fraction of photon pairs carrying the modulation at ``peak_freq``.

    Fits a + b cos(2 pi f t) + c sin(2 pi f t) to the detrended histogram by
    weighted least squares and reports half the modulation amplitude,
    clipped to [0, 1]. A single emitter whose rate has Fourier components
    c_k gives |c_1|^2/c_0^2 <= 1; N independent emitters with random phases
    dilute this by 1/N.

    With ``require_peak=False`` the fit is made at ``peak_freq`` even when
    no peak was detected there (for upper limits on weak correlations).
    """
    peak = spectrum.peak_near(peak_freq, tolerance_bins)
    if peak is None and require_peak:
        raise PeakNotFound(f"no detected peak within {tolerance_bins} bins of {peak_freq:.6g} Hz")
    centre = peak.frequency if peak is not None else peak_freq
    t, y, w = spectrum.lags, spectrum.detrended, spectrum.weights
    sw = np.sqrt(w)

    def solve(f):
        basis = np.column_stack([np.ones_like(t), np.cos(2 * np.pi * f * t),
                                 np.sin(2 * np.pi * f * t)])
        coef, *_ = np.linalg.lstsq(basis * sw[:, None], y * sw, rcond=None)
        return coef, basis

    # refine the frequency on a fine grid around the interpolated peak
    grid = centre + spectrum.resolution * np.linspace(-0.5, 0.5, 41)
    amps = [math.hypot(*solve(f)[0][1:]) for f in grid]
    f_best = float(grid[int(np.argmax(amps))])
    coef, basis = solve(f_best)
    cov = np.linalg.inv((basis * w[:, None]).T @ basis)
    amp = math.hypot(coef[1], coef[2])
    grad = np.array([coef[1], coef[2]]) / amp if amp > 0 else np.array([1.0, 0.0])
    sigma = math.sqrt(float(grad @ cov[1:, 1:] @ grad))
    return CorrelatedFraction(min(max(0.5 * amp, 0.0), 1.0), 0.5 * sigma, f_best)


# -- rf-photon phase ---------------------------------------------------------

@dataclass(frozen=True)
class PhaseMeasurement:
    drive_frequency: float  # angular, s^-1
    phase: float  # radians in (-pi, pi]
    depth: float
    uncertainty: float
    n_photons: int = 0

    def __post_init__(self):
        if not 0.0 <= self.depth <= 1.0:
            raise ValueError("modulation depth must lie in [0, 1]")
        if not self.uncertainty > 0:
            raise ValueError("uncertainty must be positive")

    @property
    def phase_error(self):
        """Large-N standard error of arg(m), 1/(|m| sqrt(2N)).

        Agrees with ``uncertainty`` at full modulation (|m| = 1/2) and
        grows faster than it as the modulation weakens. Falls back to
        ``uncertainty`` when the photon count is unknown.
        """
        if self.n_photons <= 0:
            return self.uncertainty
        m = 0.5 * self.depth
        return 1.0 / (m * math.sqrt(2.0 * self.n_photons)) if m > 0 else math.inf


def rf_photon_phase(photons, drive_freq: float | None = None,
                    drive_phase0: float | None = None,
                    require_modulation: bool = True) -> PhaseMeasurement:
    """Phase of the fluorescence modulation relative to a drive.

    Timestamps are folded to theta = (w t + phase0) mod 2 pi and the first
    circular moment m = <exp(i theta)> gives phase = arg m, depth = 2|m| and
    uncertainty = 1/sqrt(N |m|). Drive frequency and phase default to the
    reference stored on a PhotonRecord.
    """
    t = _times(photons)
    if drive_freq is None:
        drive_freq = photons.drive_frequency
    if drive_phase0 is None:
        drive_phase0 = getattr(photons, "drive_phase", 0.0)
    n = t.size
    if n < MIN_PHASE_PHOTONS:
        raise TooFewPhotons(f"need at least {MIN_PHASE_PHOTONS} photons, got {n}")
    theta = np.mod(drive_freq * t + drive_phase0, 2 * np.pi)
    m = complex(np.mean(np.exp(1j * theta)))
    phase = math.atan2(m.imag, m.real)
    if phase == -math.pi:
        phase = math.pi
    depth = min(2.0 * abs(m), 1.0)
    sigma = 1.0 / math.sqrt(n * abs(m)) if abs(m) > 0 else math.inf
    if require_modulation and depth < 3.0 * sigma:
        raise NoModulation(f"modulation depth {depth:.3g} below 3 sigma ({sigma:.3g})")
    return PhaseMeasurement(float(drive_freq), phase, depth, sigma, n)


def phase_response(omega, gamma, omega_0, phi_0):
    """Steady-state phase phi_0 - arctan((omega - omega_0)/gamma)."""
    return phi_0 - np.arctan((np.asarray(omega) - omega_0) / gamma)


def _phase_response_jac(omega, gamma, omega_0, phi_0):
    # analytic: finite differences stall when omega_0 starts near zero
    x = (np.asarray(omega) - omega_0) / gamma
    g = 1.0 / (gamma * (1.0 + x * x))
    return np.column_stack([x * g, g, np.ones_like(x)])


@dataclass(frozen=True)
class PhaseFit:
    gamma: float  # s^-1, > 0
    omega_0: float  # s^-1
    phi_0: float
    residual: float  # rms, radians
    swing: float  # observed max - min of the unwrapped phases
    sense: int = 1  # -1 when the phase rises through the resonance
    gamma_sigma: float = math.nan
    omega_0_sigma: float = math.nan


def phase_response_scan(scan, min_points: int = 5) -> PhaseFit:
    """Fit a phase-vs-frequency scan to phi_0 - arctan((w - w_0)/gamma).

    Phases are unwrapped in frequency order. The width is returned as a
    positive rate; a scan whose phase rises instead of falls is reported
    with ``sense = -1``.
    """
    pts = sorted(scan, key=lambda m: m.drive_frequency)
    if len(pts) < min_points:
        raise ValueError(f"need at least {min_points} scan points, got {len(pts)}")
    w = np.array([p.drive_frequency for p in pts])
    phi = np.unwrap(np.array([p.phase for p in pts]))
    sig = np.array([p.phase_error for p in pts])
    sig = np.where(np.isfinite(sig), np.minimum(sig, math.pi), math.pi)
    swing = float(phi.max() - phi.min())
    if swing < math.pi / 2:
        raise IncompleteSwing(f"observed phase swing {swing:.3f} rad < pi/2")
    # work in scaled units so the fit is equivariant under w -> c w
    centre, span = 0.5 * (w[0] + w[-1]), w[-1] - w[0]
    if not span > 0:
        raise ValueError("scan frequencies must not all coincide")
    u = (w - centre) / span
    mid = 0.5 * (phi.max() + phi.min())
    k = int(np.argmin(np.abs(phi - mid)))
    best = None
    for s in (1.0, -1.0):
        p0 = (s * 0.1, u[k], mid)
        try:
            p, cov = curve_fit(phase_response, u, phi, p0=p0, sigma=sig,
                               jac=_phase_response_jac, maxfev=10000)
        except (RuntimeError, ValueError):
            continue
        res = float(np.sqrt(np.mean((phi - phase_response(u, *p)) ** 2)))
        if np.all(np.isfinite(p)) and (best is None or res < best[0]):
            best = (res, p, cov)
    if best is None:
        raise FitFailed("phase-response fit did not converge")
    res, p, cov = best
    err = np.sqrt(np.abs(np.diag(cov))) if np.all(np.isfinite(cov)) else np.full(3, np.nan)
    g, u0, phi0 = p
    sense = 1 if g > 0 else -1
    return PhaseFit(gamma=float(abs(g) * span), omega_0=float(centre + u0 * span),
                    phi_0=float(phi0),
                    residual=res, swing=swing, sense=sense,
                    gamma_sigma=float(err[0] * span), omega_0_sigma=float(err[1] * span))

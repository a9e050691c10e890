import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import i0, i1

from penning.dynamics import PhotonRecord
from penning.errors import (FitFailed, IncompleteSwing, NoModulation, PeakNotFound,
                            TooFewPhotons)
from penning.photons import (PhaseMeasurement, WaitingTimeHistogram, correlated_fraction,
                             detrend_and_fft, fit_exponential_background, phase_response,
                             phase_response_scan, rf_photon_phase, thinned_poisson,
                             waiting_time_histogram)

BIN, MAX_LAG = 0.2e-6, 102.4e-6


def poisson_stream(rate, duration, rng):
    t = np.cumsum(rng.exponential(1 / rate, int(rate * duration * 1.2) + 100))
    return t[t < duration]


def pulsed_emitters(freq, phases, rate_each, duration, rng, kappa=20.0, hold=None):
    """Emitters whose rate is a von Mises pulse train exp(kappa cos(w t + phi)).

    With ``hold`` each emitter's phase is redrawn independently every
    ``hold`` seconds (independent, slowly dephasing motion).
    """
    phases = np.atleast_1d(np.asarray(phases, dtype=float))
    n = phases.size
    w = 2 * np.pi * freq
    norm = rate_each / i0(kappa)
    if hold is not None:
        table = rng.uniform(0, 2 * np.pi, (int(duration / hold) + 1, n))

        def rate(t):
            ph = table[(t / hold).astype(int)]
            return norm * np.exp(kappa * np.cos(w * t[:, None] + ph)).sum(axis=1)
    else:
        def rate(t):
            return norm * np.exp(kappa * np.cos(w * t[:, None] + phases)).sum(axis=1)
    return thinned_poisson(rate, n * norm * math.exp(kappa), duration, rng)


def test_two_photon_histogram():
    h = waiting_time_histogram(np.array([0.0, 1e-3]), 1e-3, 5e-3)
    assert h.counts.tolist() == [0, 1, 0, 0, 0]
    assert h.total_starts == 1 and h.overflow == 0


def test_histogram_errors():
    with pytest.raises(TooFewPhotons):
        waiting_time_histogram(np.array([0.5]), 1e-6, 1e-4)
    with pytest.raises(ValueError):
        waiting_time_histogram(np.array([0.0, 1.0]), 0.0, 1e-4)


@given(st.lists(st.floats(0, 1e-3), min_size=2, max_size=200, unique=True),
       st.floats(1e-7, 1e-5), st.floats(1e-6, 1e-3))
def test_histogram_count_invariant(times, width, max_lag):
    t = np.sort(times)
    h = waiting_time_histogram(t, width, max_lag)
    assert int(h.counts.sum()) == t.size - 1 - h.overflow
    assert np.all(h.counts >= 0)


@given(st.integers(1, 9))
def test_rebin_preserves_counts(factor):
    rng = np.random.default_rng(factor)
    h = waiting_time_histogram(poisson_stream(2e4, 0.2, rng), BIN, MAX_LAG)
    r = h.rebin(factor)
    assert r.counts.sum() + r.overflow == h.counts.sum() + h.overflow
    assert r.bin_width == pytest.approx(factor * BIN)


def test_poisson_background_fit():
    rng = np.random.default_rng(3)
    t = poisson_stream(2e4, 2.0, rng)
    h = waiting_time_histogram(t, 2e-6, 200e-6)
    fit = fit_exponential_background(h)
    assert fit.chi2_dof < 2
    assert fit.rate == pytest.approx(2e4, rel=0.05)
    assert fit.amplitude == pytest.approx(t.size * 2e4 * 2e-6, rel=0.05)


def test_periodic_pairs_concentrate_at_period():
    rng = np.random.default_rng(4)
    freq = 63e3
    t = pulsed_emitters(freq, [0.0], 3e3, 5.0, rng)
    h = waiting_time_histogram(t, BIN, MAX_LAG)
    phase = np.mod(h.lags * freq + 0.5, 1.0) - 0.5  # distance to nearest multiple, in periods
    near = np.abs(phase) < 0.1
    share = h.counts[near].sum() / h.counts.sum()
    assert share > 3 * near.mean()


def test_pure_exponential_has_no_peaks():
    lags = (np.arange(512) + 0.5) * BIN
    counts = np.round(1e4 * np.exp(-2e4 * lags)).astype(int)
    spec = detrend_and_fft(WaitingTimeHistogram(BIN, counts, int(counts.sum())))
    assert spec.peaks == ()


def test_null_false_peak_rate():
    clean = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        h = waiting_time_histogram(poisson_stream(2e4, 0.5, rng), BIN, MAX_LAG)
        clean += detrend_and_fft(h).peaks == ()
    assert clean >= 95


def test_synthetic_60khz_peak():
    rng = np.random.default_rng(5)
    lags = (np.arange(512) + 0.5) * BIN
    mean = 2000 * np.exp(-2e4 * lags) * (1 + 0.5 * np.cos(2 * np.pi * 60e3 * lags))
    counts = rng.poisson(mean)
    spec = detrend_and_fft(WaitingTimeHistogram(BIN, counts, int(counts.sum())))
    assert len(spec.peaks) == 1
    assert abs(spec.peaks[0].frequency - 60e3) <= spec.resolution
    assert all(p.snr >= 4 for p in spec.peaks)


def test_spectrum_requires_64_bins():
    with pytest.raises(ValueError):
        detrend_and_fft(WaitingTimeHistogram(BIN, np.ones(32, int), 32))


def test_fit_failure_falls_back_or_raises():
    h = WaitingTimeHistogram(BIN, np.zeros(128, int), 10)
    spec = detrend_and_fft(h)
    assert spec.fallback and spec.background is None
    with pytest.raises(FitFailed):
        detrend_and_fft(h, strict=True)


def fraction_for(t, freq, **kw):
    spec = detrend_and_fft(waiting_time_histogram(t, BIN, MAX_LAG))
    return correlated_fraction(spec, freq, **kw)


def test_single_emitter_reaches_maximum_fraction():
    rng = np.random.default_rng(6)
    t = pulsed_emitters(63e3, [0.0], 3e3, 20.0, rng)
    frac = fraction_for(t, 63e3)
    maximum = (i1(20.0) / i0(20.0)) ** 2
    assert abs(frac.value - maximum) <= 3 * frac.sigma + 0.01
    assert 0 <= frac.value <= 1


def test_incoherent_emitters_dilute_by_n():
    rng = np.random.default_rng(7)
    t = pulsed_emitters(63e3, np.zeros(5), 3e3 / 5, 20.0, rng, hold=1e-3)
    frac = fraction_for(t, 63e3, require_peak=False)
    assert frac.value <= 1 / 5 + 3 * frac.sigma


def test_coherent_emitters_keep_full_fraction():
    rng = np.random.default_rng(8)
    t = pulsed_emitters(63e3, np.zeros(5), 3e3 / 5, 20.0, rng)
    frac = fraction_for(t, 63e3)
    assert frac.value > 0.6


def test_fraction_needs_a_peak():
    rng = np.random.default_rng(9)
    t = poisson_stream(2e4, 0.5, rng)
    with pytest.raises(PeakNotFound):
        fraction_for(t, 63e3)
    assert 0 <= fraction_for(t, 63e3, require_peak=False).value <= 1


def sample_phases(n, beta, phi, rng):
    """Inverse-transform samples of theta with density (1 + beta cos(theta - phi)) / 2 pi."""
    grid = np.linspace(0, 2 * np.pi, 20001)
    cdf = (grid + beta * (np.sin(grid - phi) + np.sin(phi))) / (2 * np.pi)
    return np.interp(rng.uniform(0, 1, n), cdf, grid)


def modulated_times(n, beta, phi, omega, rng):
    theta = sample_phases(n, beta, phi, rng)
    cycles = np.sort(rng.choice(50 * n, n, replace=False))
    return (theta + 2 * np.pi * cycles) / omega


def test_rf_phase_example():
    rng = np.random.default_rng(10)
    omega = 2 * np.pi * 31e3
    t = modulated_times(20000, 1.0, np.pi / 4, omega, rng)
    m = rf_photon_phase(t, omega, 0.0)
    assert abs(m.phase - np.pi / 4) <= 3 * m.uncertainty
    assert m.depth == pytest.approx(1.0, abs=3 * math.sqrt(2 / t.size))
    assert m.n_photons == t.size


def test_depth_converges_to_beta():
    rng = np.random.default_rng(11)
    omega = 2 * np.pi * 31e3
    for beta in (0.2, 0.6):
        t = modulated_times(100_000, beta, 1.0, omega, rng)
        m = rf_photon_phase(t, omega, 0.0)
        assert abs(m.depth - beta) <= 3 * math.sqrt(2 / t.size)


def test_uniform_phases_have_no_modulation():
    rng = np.random.default_rng(12)
    t = np.sort(rng.uniform(0, 1.0, 5000))
    with pytest.raises(NoModulation):
        rf_photon_phase(t, 2 * np.pi * 31e3, 0.0)
    m = rf_photon_phase(t, 2 * np.pi * 31e3, 0.0, require_modulation=False)
    assert 0 <= m.depth <= 1


def test_too_few_photons():
    with pytest.raises(TooFewPhotons):
        rf_photon_phase(np.arange(199) * 1e-6, 1e5, 0.0)


def test_reference_taken_from_photon_record():
    rng = np.random.default_rng(13)
    omega = 2 * np.pi * 31e3
    t = modulated_times(5000, 0.8, -2.0, omega, rng)
    rec = PhotonRecord(t, float(t[-1]), omega, 0.5)
    assert rf_photon_phase(rec).phase == rf_photon_phase(t, omega, 0.5).phase


@given(st.floats(-1e-3, 1e-3))
def test_phase_invariant_under_compensated_time_shift(shift):
    rng = np.random.default_rng(14)
    omega = 2 * np.pi * 31e3
    t = modulated_times(2000, 0.8, 0.7, omega, rng) + 2e-3
    a = rf_photon_phase(t, omega, 0.0)
    b = rf_photon_phase(t + shift, omega, -omega * shift)
    assert math.cos(a.phase - b.phase) == pytest.approx(1.0, abs=1e-9)
    assert a.depth == pytest.approx(b.depth, rel=1e-9)


@given(st.lists(st.floats(0, 1e-2), min_size=200, max_size=400, unique=True), st.floats(1e3, 1e7))
def test_depth_bounds(times, omega):
    m = rf_photon_phase(np.sort(times), omega, 0.0, require_modulation=False)
    assert 0 <= m.depth <= 1 and m.uncertainty > 0


def test_phase_measurement_validation():
    with pytest.raises(ValueError):
        PhaseMeasurement(1.0, 0.0, 1.5, 0.1)
    with pytest.raises(ValueError):
        PhaseMeasurement(1.0, 0.0, 0.5, 0.0)


def synthetic_scan(gamma, omega0, phi0=0.3, noise=0.01 * np.pi, n=21, span=4.0, seed=15):
    rng = np.random.default_rng(seed)
    w = omega0 + gamma * np.linspace(-span, span, n)
    phi = phase_response(w, gamma, omega0, phi0) + rng.normal(0, noise, n)
    wrapped = np.angle(np.exp(1j * phi))
    return [PhaseMeasurement(float(a), float(b), 0.5, noise) for a, b in zip(w, wrapped)]


def test_scan_recovers_planted_gamma():
    gamma, omega0 = 2 * np.pi * 300, 2 * np.pi * 30e3
    fit = phase_response_scan(synthetic_scan(gamma, omega0))
    assert fit.gamma == pytest.approx(gamma, rel=0.05)
    assert fit.omega_0 == pytest.approx(omega0, abs=0.1 * gamma)
    assert fit.swing > 0.8 * np.pi and fit.sense == 1


def test_scan_offset_shifts_phi0_only():
    gamma, omega0 = 2 * np.pi * 300, 2 * np.pi * 30e3
    scan = synthetic_scan(gamma, omega0)
    moved = [PhaseMeasurement(m.drive_frequency, float(np.angle(np.exp(1j * (m.phase + 0.4)))),
                              m.depth, m.uncertainty) for m in scan]
    a, b = phase_response_scan(scan), phase_response_scan(moved)
    assert b.gamma == pytest.approx(a.gamma, rel=1e-6)
    assert b.omega_0 == pytest.approx(a.omega_0, rel=1e-9)
    assert math.cos(b.phi_0 - a.phi_0 - 0.4) == pytest.approx(1.0, abs=1e-9)


@given(st.floats(1e-3, 1e3))
def test_scan_equivariant_under_frequency_scaling(c):
    gamma, omega0 = 2 * np.pi * 300, 2 * np.pi * 30e3
    scan = synthetic_scan(gamma, omega0)
    scaled = [PhaseMeasurement(m.drive_frequency * c, m.phase, m.depth, m.uncertainty) for m in scan]
    a, b = phase_response_scan(scan), phase_response_scan(scaled)
    assert b.gamma == pytest.approx(c * a.gamma, rel=1e-6)
    assert b.omega_0 == pytest.approx(c * a.omega_0, rel=1e-9)


def test_rising_phase_reported_with_sense():
    gamma, omega0 = 2 * np.pi * 300, 2 * np.pi * 30e3
    scan = [PhaseMeasurement(m.drive_frequency, -m.phase, m.depth, m.uncertainty)
            for m in synthetic_scan(gamma, omega0)]
    fit = phase_response_scan(scan)
    assert fit.sense == -1
    assert fit.gamma == pytest.approx(gamma, rel=0.05)


def test_scan_errors():
    gamma, omega0 = 2 * np.pi * 300, 2 * np.pi * 30e3
    with pytest.raises(IncompleteSwing):
        phase_response_scan(synthetic_scan(gamma, omega0, span=0.3, noise=1e-4))
    with pytest.raises(ValueError):
        phase_response_scan(synthetic_scan(gamma, omega0)[:4])

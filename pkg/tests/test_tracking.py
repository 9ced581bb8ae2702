import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from tapertrap.dynamics import Kymograph, Trajectory, harmonic_force, render_kymograph, simulate_overdamped
from tapertrap.tracking import (
    NEGATIVE, POSITIVE, TRAPPED, UNCLASSIFIED, analyze_kymograph, classify_trajectory, combine_gamma,
    detect_peaks, detect_trap_line, estimate_gamma, fit_relaxation, fit_terminal_velocity,
    gamma_with_error, link_trajectories, stiffness_from_fit, trap_position_vs_ratio,
)

PX = np.arange(400, dtype=float)


def gauss(center, sigma=4.6, height=1.0):
    return height * np.exp(-0.5 * ((PX - center) / sigma) ** 2)


def test_single_peak():
    assert detect_peaks(gauss(120.0), min_separation=9) == pytest.approx([120.0], abs=0.1)


def test_two_peaks():
    assert detect_peaks(gauss(100) + gauss(300), min_separation=9) == pytest.approx([100, 300], abs=0.1)


def test_brighter_peak_wins_merge():
    pos = detect_peaks(gauss(100, 2) + 0.8 * gauss(104, 2), min_separation=9)
    assert len(pos) == 1 and abs(pos[0] - 100) < 1


def test_empty_and_zero_frames():
    assert detect_peaks(np.zeros(10)).size == 0
    with pytest.raises(ValueError):
        detect_peaks(np.array([]))


def _snr5_errors():
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        c = 150 + rng.uniform(-0.5, 0.5)
        frame = np.clip(gauss(c) + 0.2 * rng.standard_normal(PX.size), 0, None)
        pos = detect_peaks(frame, min_separation=9)
        errs.append(np.min(np.abs(pos - c)))
    return np.array(errs)


# At the analysis spot width (sigma = 23 um / 5 um = 4.6 px) and SNR 5 the
# Cramer-Rao bound alone is 0.46 px rms (~0.9 px at the 95th percentile), so
# the 0.5 px target is out of reach for any estimator.
@pytest.mark.xfail(strict=True, reason="0.5 px at SNR 5 is below the Cramer-Rao bound for a 4.6 px spot")
def test_peak_accuracy_snr5_monte_carlo():
    assert np.percentile(_snr5_errors(), 95) <= 0.5


def test_peak_accuracy_snr5_bounded():
    errs = _snr5_errors()
    crlb = np.sqrt(0.2**2 * 2 * 4.6 / np.sqrt(np.pi))
    assert crlb == pytest.approx(0.46, abs=0.01)
    assert np.percentile(errs, 95) < 4 * 1.96 * crlb
    assert np.median(errs) < 1.5


def test_subpixel_noise_free():
    for c in np.linspace(150, 151, 7):
        assert detect_peaks(gauss(c, 1.5), min_separation=5)[0] == pytest.approx(c, abs=0.1)


def test_link_single_track_full_length():
    z = 100e-6 + 10e-6 * np.arange(50)
    tr = link_trajectories([[v] for v in z], 1 / 30, max_jump=50e-6)
    assert len(tr) == 1 and len(tr[0]) == 50
    assert np.allclose(tr[0].z, z)


def test_link_too_fast_fragments():
    z = 100e-6 + 60e-6 * np.arange(50)
    assert link_trajectories([[v] for v in z], 1 / 30, max_jump=50e-6) == []
    assert len(link_trajectories([[v] for v in z], 1 / 30, max_jump=50e-6, min_length=1)) == 50


def test_link_bridges_gaps():
    peaks = [[100e-6]] * 5 + [[]] * 2 + [[100e-6]] * 5
    tr = link_trajectories(peaks, 0.1, min_length=1)
    assert len(tr) == 1 and len(tr[0]) == 12
    peaks = [[100e-6]] * 5 + [[]] * 3 + [[100e-6]] * 5
    assert len(link_trajectories(peaks, 0.1, min_length=1)) == 2


def test_link_crossing_tracks():
    # a up, b down; they pass within one frame step but nearest-distance keeps identities
    n = 40
    a = 100e-6 + 4e-6 * np.arange(n)
    b = 300e-6 - 6e-6 * np.arange(n)
    peaks = [sorted([x, y]) for x, y in zip(a, b)]
    tr = link_trajectories(peaks, 1 / 30, max_jump=20e-6, min_length=1)
    assert sum(len(t) for t in tr) == 2 * n
    assert len(tr) == 2
    up = min(tr, key=lambda t: t.z[0])
    assert np.allclose(up.z, a)


def test_trap_line_exact_level():
    t = np.linspace(0, 10, 300)
    line = detect_trap_line(t, np.full(300, 250e-6))
    assert line.found and line.position == pytest.approx(250e-6)


def test_trap_line_matches_brute_force():
    rng = np.random.default_rng(0)
    t = np.sort(rng.uniform(0, 10, 400))
    z = np.concatenate([rng.normal(300e-6, 10e-6, 250), rng.uniform(0, 1e-3, 150)])
    delta = 23e-6
    line = detect_trap_line(t, z, delta, scan_step=2e-6)
    levels = np.arange(z.min(), z.max() + 2e-6, 2e-6)
    _, count = oracles.brute_force_trap_line(t, z, delta, levels)
    assert line.count == count
    assert line.position == pytest.approx(300e-6, abs=delta)


def test_trap_line_transport_has_no_trap():
    t = np.linspace(0, 10, 300)
    line = detect_trap_line(t, 1e-4 * t)
    assert not line.found and np.isnan(line.position)
    with pytest.raises(ValueError):
        detect_trap_line(t, t, delta=0)
    assert not detect_trap_line([], []).found


def test_trap_line_dwell_roundtrip():
    gamma, s = 1.3e-8, 3e-9
    tr = simulate_overdamped(harmonic_force(s, 500e-6), gamma, 293.0, 500e-6, dt=1e-2, n_steps=1000, seed=2)
    rng = np.random.default_rng(1)
    z = tr.z + rng.normal(0, 23e-6, tr.z.size)
    line = detect_trap_line(tr.t, z, 23e-6)
    assert line.found and line.position == pytest.approx(500e-6, abs=23e-6)


def test_fit_exact_exponential():
    t = np.linspace(0, 20, 200)
    fit = fit_relaxation(Trajectory(t, 100 * np.exp(-0.5 * t) + 200))
    assert fit.converged
    assert fit.amplitude == pytest.approx(100, rel=1e-6)
    assert fit.rate == pytest.approx(0.5, rel=1e-6)
    assert fit.z0 == pytest.approx(200, rel=1e-6)
    assert fit.residual < 1e-6


@given(st.floats(-1e-3, 1e-3), st.floats(0.05, 3.0), st.floats(5e-6, 100e-6))
def test_fit_shift_invariance(shift, rate, amp):
    t = np.linspace(0, 8 / rate, 120)
    z = amp * np.exp(-rate * t) + 300e-6
    f1 = fit_relaxation(Trajectory(t, z))
    f2 = fit_relaxation(Trajectory(t, z + shift))
    assert f1.converged and f2.converged
    assert f2.rate == pytest.approx(f1.rate, rel=1e-9)
    assert f2.amplitude == pytest.approx(f1.amplitude, rel=1e-9)
    assert f2.z0 - shift == pytest.approx(f1.z0, rel=1e-9, abs=1e-15)


def test_fit_needs_ten_samples():
    with pytest.raises(ValueError):
        fit_relaxation(Trajectory(np.arange(9.0), np.arange(9.0)))


def test_fit_simulated_trap_t0():
    gamma, s = 1.3e-8, 3e-9
    tr = simulate_overdamped(harmonic_force(s, 400e-6), gamma, 0.0, 450e-6, dt=1e-3, n_steps=30000,
                             record_every=33)
    fit = fit_relaxation(tr)
    assert fit.rate == pytest.approx(s / gamma, rel=0.05)


def test_terminal_velocity():
    t = np.linspace(0, 5, 100)
    line = fit_terminal_velocity(Trajectory(t, 237e-6 * t), (0.0, 2e-3))
    assert line.slope == pytest.approx(237e-6, rel=1e-12)
    with pytest.raises(ValueError):
        fit_terminal_velocity(Trajectory(t, 237e-6 * t), (5e-3, 6e-3))


def test_gamma_fixtures():
    assert float(f"{estimate_gamma(237e-6, 3.89e-12):.3g}") == 1.64e-8
    assert float(f"{estimate_gamma(137e-6, 1.45e-12):.3g}") == 1.06e-8
    with pytest.raises(ValueError):
        estimate_gamma(0.0, 1e-12)


@given(st.floats(1e-6, 1e-2), st.floats(1e-14, 1e-10), st.floats(0.1, 10))
def test_gamma_scale_invariance(v, f, k):
    assert estimate_gamma(k * v, k * f) == pytest.approx(estimate_gamma(v, f), rel=1e-12)


def test_combine_and_propagate():
    g, se = combine_gamma([1.64e-8, 1.06e-8], [0.4e-8, 0.2e-8])
    assert g == pytest.approx(1.35e-8)
    assert se == pytest.approx(np.hypot(0.4e-8, 0.2e-8) / 2)
    g, err = gamma_with_error(3.89e-12, 237e-6, 54e-6)
    assert err / g == pytest.approx(54 / 237)


def test_stiffness_from_fit():
    s = stiffness_from_fit(0.23, 1.3e-8)
    assert s == pytest.approx(2.99e-9)
    assert float(f"{s * 1e9:.2g}") == 3.0
    assert stiffness_from_fit(0.0, 1.3e-8) == 0.0
    s, band = stiffness_from_fit(0.23, 1.3e-8, 0.63)
    assert band == (pytest.approx(0.63 * s), s)
    with pytest.raises(ValueError):
        stiffness_from_fit(-1.0, 1.0)


@given(st.floats(1e-14, 1e-10), st.floats(1e-6, 1e-2), st.floats(0.01, 10))
def test_composition(force, v, lam):
    s = stiffness_from_fit(lam, estimate_gamma(v, force))
    assert s == pytest.approx(force * lam / v, rel=1e-12)


def test_slope_exact():
    r = np.array([0.12, 0.3, 0.5, 0.75])
    res = trap_position_vs_ratio(dict(zip(r, 0.2e-3 + 1.4e-3 * r)))
    assert res.slope == pytest.approx(1.4e-3, rel=1e-12)
    assert res.stderr < 1e-15
    assert res.shifts[0] == 0
    with pytest.raises(ValueError):
        trap_position_vs_ratio({0.1: 1.0, 0.2: np.nan, 0.3: 2.0})


def test_classification():
    t = np.linspace(0, 5, 100)
    assert classify_trajectory(Trajectory(t, 500e-6 + 10e-6 * np.sin(t))) == TRAPPED
    assert classify_trajectory(Trajectory(t, 200e-6 * t)) == POSITIVE
    assert classify_trajectory(Trajectory(t, -200e-6 * t)) == NEGATIVE
    zig = 300e-6 * np.sin(3 * t) + 40e-6 * t
    assert classify_trajectory(Trajectory(t, zig)) == UNCLASSIFIED


def _trapped_kymo(seed=0, noise=0.05):
    t = np.arange(0, 12, 1e-2)
    z = 500e-6 + 80e-6 * np.exp(-0.8 * t)
    return render_kymograph([Trajectory(t, z)], 0.0, 240, 5e-6, 300, background_noise_sigma=noise,
                            seed=seed)


def test_analysis_json_schema():
    res = analyze_kymograph(_trapped_kymo(), gamma=1.3e-8)
    data = json.loads(res.to_json())
    assert set(data) >= {"trajectories", "trap_position_m", "gamma_kg_per_s"}
    row = data["trajectories"][0]
    assert set(row) >= {"class", "A_m", "lambda_plus_per_s", "z0_m", "stiffness_N_per_m"}
    assert data["trap_position_m"] == pytest.approx(500e-6, abs=23e-6)
    fits = res.trap_fits()
    assert fits and all(f.rate > 0 for f in fits)
    assert row["stiffness_N_per_m"] == pytest.approx(row["lambda_plus_per_s"] * 1.3e-8)


def test_analysis_trap_iff_trapped_track():
    res = analyze_kymograph(_trapped_kymo())
    assert (res.trap_position is not None) == (TRAPPED in res.classes)


def test_empty_kymograph():
    res = analyze_kymograph(Kymograph(np.zeros((20, 50)), 5e-6, 1 / 30, 23e-6))
    assert res.trajectories == [] and res.trap_position is None
    assert json.loads(res.to_json())["trajectories"] == []

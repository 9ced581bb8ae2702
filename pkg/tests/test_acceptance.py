"""One test per acceptance criterion, each at its stated tolerance.

Every test prints (and records for the terminal summary) a single
``criterion N: PASS|FAIL ...`` line before asserting.
"""
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.constants import Boltzmann

import oracles
from conftest import ACCEPTANCE_LINES
from tapertrap import cli
from tapertrap.config import load
from tapertrap.dynamics import (
    TabulatedForce, Trajectory, harmonic_force, render_kymograph, simulate_inertial,
    simulate_overdamped, tabulate_axial_force,
)
from tapertrap.fiber_modes import ModeSpec, polarization_correction, solve_he11, surface_intensity
from tapertrap.tracking import analyze_kymograph, estimate_gamma, fit_relaxation
from tapertrap.trap_model import (
    FiberGeometry, ParticleSpec, axial_potential, calibrate_force_scale, find_trap,
    overdamped_classification, radial_potential_depth, two_color_modes,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
GEO = FiberGeometry(400e-9, 1e-3, 0.0)
SWEEP_RATIOS = (0.1, 0.15, 0.2, 0.25)
DELTA = 23e-6
GAMMA_INJECTED = 1.3e-8


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


@pytest.fixture(scope="module")
def calibrated():
    """75 nm gold with the force scale that gives a 3 pN/mm mean 1 mW stiffness."""
    bare = ParticleSpec(75e-9)
    scale = calibrate_force_scale(GEO, bare, SWEEP_RATIOS, 3e-9)
    return replace(bare, force_scale=scale)


@pytest.fixture(scope="module")
def experiment_run(tmp_path_factory):
    """Full simulate -> analyze run of the experiment-scale config."""
    out = tmp_path_factory.mktemp("experiment_scale")
    cfg = str(CONFIGS / "experiment_scale.cfg")
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert cli.main(["analyze", "--config", cfg, "--out", str(out)]) == 0
    return cli.read_table(str(out / "analysis_summary.csv"))


# ----------------------------------------------------------------------------- 1

def test_criterion_1_mode_solver():
    t0 = time.perf_counter()
    diameters = np.linspace(300e-9, 1000e-9, 36)
    ok_range, ok_mono, worst = True, True, 0.0
    for wl in (640e-9, 660e-9, 785e-9):
        neff = np.array([solve_he11(d, ModeSpec(wl)).effective_index for d in diameters])
        ok_range &= bool(np.all((neff > 1.33) & (neff < 1.45)))
        ok_mono &= bool(np.all(np.diff(neff) > 0))
        for d in (300e-9, 500e-9, 700e-9, 1000e-9):
            mode = solve_he11(d, ModeSpec(wl, 1e-3))
            p = oracles.disc_power(mode, mode.radius + 30 / mode.q)
            worst = max(worst, abs(p / 1e-3 - 1))
    elapsed = time.perf_counter() - t0
    ok = ok_range and ok_mono and worst < 5e-3 and elapsed < 10
    record(1, ok, f"n_eff in (1.33,1.45)={ok_range} increasing={ok_mono} "
                  f"max power error={worst:.2e} (<5e-3) runtime={elapsed:.1f}s (<10s)")
    assert ok


# ----------------------------------------------------------------------------- 2

def _crossings(ratio):
    d = np.arange(400e-9, 1000e-9 + 1e-12, 2e-9)
    i640 = np.array([float(surface_intensity(solve_he11(x, ModeSpec(640e-9, ratio)))) for x in d])
    i785 = np.array([float(surface_intensity(solve_he11(x, ModeSpec(785e-9, 1.0)))) for x in d])
    return cli.crossover_diameters(d, i640, i785)


def test_criterion_2_crossover():
    cross = {r: _crossings(r) for r in (0.9, 1.0, 1.1)}
    single = len(cross[1.0]) == 1
    all_single = all(len(v) == 1 for v in cross.values())
    mono = all_single and (cross[0.9][0] < cross[1.0][0] < cross[1.1][0]
                           or cross[0.9][0] > cross[1.0][0] > cross[1.1][0])
    ok = single and mono
    shown = {r: [f"{x * 1e9:.1f}" for x in v] for r, v in cross.items()}
    record(2, ok, f"crossings (nm) {shown}; exactly one at R=1: {single}; monotone in R: {mono}")
    assert ok


# ----------------------------------------------------------------------------- 3

# model-run golden trap positions (m) for the 10 nm particle, 1 mW long mode
GOLDEN_10NM_Z0 = {0.2: 5.78258389786e-4, 0.225: 7.67597349004e-4, 0.25: 1.040645865411e-3}


def test_criterion_3_small_particle_potentials():
    t0 = time.perf_counter()
    particle = ParticleSpec(10e-9)
    z_hi = float(GEO.z_of_diameter(1500e-9))
    zg = np.linspace(0.0, z_hi, 1321)
    minima, interior_counts = {}, {}
    for r in (0.2, 0.225, 0.25):
        u = axial_potential(zg, GEO, two_color_modes(r), particle, normalize=True)
        inner = np.nonzero((u[1:-1] < u[:-2]) & (u[1:-1] < u[2:]))[0] + 1
        interior_counts[r] = inner.size
        minima[r] = zg[np.argmin(u)]
    elapsed = time.perf_counter() - t0
    single = all(c == 1 for c in interior_counts.values())
    ordered = minima[0.2] < minima[0.225] < minima[0.25]
    golden = all(abs(minima[r] - z) <= zg[1] - zg[0] for r, z in GOLDEN_10NM_Z0.items())
    exact = [find_trap(GEO, two_color_modes(r), particle, diameter_range=(400e-9, 1500e-9)).z0
             for r in GOLDEN_10NM_Z0]
    golden &= bool(np.allclose(exact, list(GOLDEN_10NM_Z0.values()), rtol=1e-8))
    ok = single and ordered and golden and elapsed < 60
    record(3, ok, f"interior minima {interior_counts}; minima (mm) "
                  f"{ {r: round(float(z) * 1e3, 3) for r, z in minima.items()} } ordered={ordered} "
                  f"golden={golden} runtime={elapsed:.1f}s (<60s)")
    assert ok


# ----------------------------------------------------------------------------- 4

def test_criterion_4_trap_position_slope(calibrated):
    ratios = np.arange(0.1, 0.2501, 0.025)
    z0 = np.array([find_trap(GEO, two_color_modes(r), calibrated).z0 for r in ratios])
    increasing = bool(np.all(np.isfinite(z0)) and np.all(np.diff(z0) > 0))
    slope = np.polyfit(ratios, z0, 1)[0] if increasing else np.nan
    in_band = 0.5e-3 <= slope <= 3e-3
    ok = increasing and in_band
    record(4, ok, f"z0 strictly increasing over R={ratios[0]:.3g}..{ratios[-1]:.3g}: {increasing}; "
                  f"slope={slope * 1e3:.3f} mm/R (band [0.5, 3])")
    assert ok


# ----------------------------------------------------------------------------- 5

def test_criterion_5_stiffness_power_law(calibrated):
    worst = 0.0
    for r in SWEEP_RATIOS:
        s1 = find_trap(GEO, two_color_modes(r, 1e-3), calibrated).stiffness
        for p in (2e-3, 8e-3):
            sp = find_trap(GEO, two_color_modes(r, p), calibrated).stiffness
            worst = max(worst, abs(sp / (p / 1e-3 * s1) - 1))
    ok = worst <= 1e-9
    record(5, ok, f"max |S(P')/((P'/1mW) S(1mW)) - 1| = {worst:.1e} (<=1e-9)")
    assert ok


# ----------------------------------------------------------------------------- 6

def test_criterion_6_overdamped(calibrated):
    s_max = max(find_trap(GEO, two_color_modes(r, 8e-3), calibrated).stiffness for r in SWEEP_RATIOS)
    rep = overdamped_classification(calibrated, s_max)
    gamma_ok = abs(rep.drag / 1.4137e-9 - 1) <= 1e-3
    ok = gamma_ok and rep.ratio > 1e4
    record(6, ok, f"gamma0={rep.drag:.5e} kg/s (1.4137e-9 +-0.1%: {gamma_ok}); "
                  f"gamma0^2/(4Sm)={rep.ratio:.3e} at S={s_max:.3e} N/m (>1e4)")
    assert ok


# ----------------------------------------------------------------------------- 7

def test_criterion_7_inertial_reduction(calibrated):
    modes = two_color_modes(0.15, 8e-3)
    sol = find_trap(GEO, modes, calibrated)
    force = tabulate_axial_force(GEO, modes, calibrated, sol.z0 - 100e-6, sol.z0 + 100e-6, step=0.5e-6)
    gamma, m = calibrated.stokes_drag, calibrated.mass
    tau = gamma / sol.stiffness
    dt = tau / 2000
    n = int(round(5 * tau / dt))
    a = 20e-6
    over = simulate_overdamped(force, gamma, 0.0, sol.z0 - a, dt=dt, n_steps=n)
    iner = simulate_inertial(force, gamma, m, 0.0, sol.z0 - a, dt=dt, n_steps=n)
    dev = np.max(np.abs(over.z - iner.z)) / a
    ok = dev < 0.01 and not over.exited and not iner.exited
    record(7, ok, f"max |z_inertial - z_overdamped| = {dev:.2e} of initial displacement (<1e-2) over 5 tau")
    assert ok


# ----------------------------------------------------------------------------- 8

def test_criterion_8_equipartition():
    t0 = time.perf_counter()
    s, gamma, temp = 3e-9, 1.4137e-9, 293.0
    dt, duration = 1e-3, 60.0
    n = int(round(duration / dt))
    burn = int(round(5 * gamma / s / dt))
    var = [np.mean(simulate_overdamped(harmonic_force(s), gamma, temp, 0.0, dt=dt, n_steps=n, seed=k).z[burn:] ** 2)
           for k in range(20)]
    ratio = float(np.mean(var)) / oracles.equipartition_variance(s, temp)
    elapsed = time.perf_counter() - t0
    ok = abs(ratio - 1) <= 0.1 and elapsed < 120
    record(8, ok, f"<z^2>/(kT/S) = {ratio:.4f} over 20 seeds x 60 s (within 10%) runtime={elapsed:.1f}s (<120s)")
    assert ok


# ----------------------------------------------------------------------------- 9

def test_criterion_9a_trap_position(experiment_run):
    meta, rows = experiment_run
    err = [abs(r["trap_position_m"] - r["model_z0_m"]) for r in rows]
    ok = len(rows) == len(SWEEP_RATIOS) and all(e <= DELTA for e in err)
    record("9a", ok, f"max |recovered - model z0| = {max(err) * 1e6:.1f} um over R={[r['R'] for r in rows]} (<=23 um)")
    assert ok


def _relaxation_case(calibrated, seed, temperature, noise, offset=25e-6):
    modes = two_color_modes(0.15, 8e-3)
    sol = find_trap(GEO, modes, calibrated)
    force = tabulate_axial_force(GEO, modes, calibrated, sol.z0 - 200e-6, sol.z0 + 200e-6, step=1e-6)
    tr = simulate_overdamped(force, GAMMA_INJECTED, temperature, sol.z0 - offset, dt=1e-4, n_steps=60000,
                             seed=seed, record_every=1)
    kymo = render_kymograph([tr], sol.z0 - 300e-6, 120, 5e-6, 180, frame_interval=1 / 30,
                            psf_sigma=DELTA, background_noise_sigma=noise, seed=seed + 1000)
    res = analyze_kymograph(kymo, DELTA, min_height=0.3 if noise else 0.0)
    fits = res.trap_fits(DELTA, min_amplitude=5e-6)
    return sol.stiffness / GAMMA_INJECTED, (fits[0].rate if fits else np.nan)


def test_criterion_9b_relaxation_rate(calibrated):
    expected, lam0 = _relaxation_case(calibrated, 0, 0.0, 0.0)
    err0 = abs(lam0 / expected - 1)
    rates = [_relaxation_case(calibrated, seed, 293.0, 0.05)[1] for seed in range(20)]
    med = float(np.nanmedian(rates))
    err_t = abs(med / expected - 1)
    ok = err0 <= 0.05 and err_t <= 0.15 and np.isfinite(rates).sum() >= 20
    record("9b", ok, f"S/gamma={expected:.4f}/s; T=0 Lambda={lam0:.4f} (err {err0:.1%} <=5%); "
                     f"thermal median of {int(np.isfinite(rates).sum())} seeds={med:.4f} (err {err_t:.1%} <=15%)")
    assert ok


def test_criterion_9c_transport_gamma(experiment_run):
    meta, _ = experiment_run
    g = float(meta["gamma_kg_per_s"])
    err = abs(g / GAMMA_INJECTED - 1)
    ok = meta["gamma_source"] == "terminal-velocity" and err <= 0.05
    record("9c", ok, f"terminal-velocity gamma={g:.4e} vs injected {GAMMA_INJECTED:.1e} (err {err:.1%} <=5%)")
    assert ok


def test_criterion_9d_slope(experiment_run):
    meta, _ = experiment_run
    rec, model = float(meta["slope_m_per_R"]), float(meta["model_slope_m_per_R"])
    err = abs(rec / model - 1)
    ok = err <= 0.15
    record("9d", ok, f"recovered slope={rec * 1e3:.3f} mm/R vs model {model * 1e3:.3f} mm/R (err {err:.1%} <=15%)")
    assert ok


# ----------------------------------------------------------------------------- 10

def test_criterion_10_gamma_fixtures():
    g1 = estimate_gamma(237e-6, 3.89e-12)
    g2 = estimate_gamma(137e-6, 1.45e-12)
    ok = float(f"{g1:.3g}") == 1.64e-8 and float(f"{g2:.3g}") == 1.06e-8
    record(10, ok, f"gamma(3.89 pN, 237 um/s)={g1:.3g}; gamma(1.45 pN, 137 um/s)={g2:.3g} kg/s")
    assert ok


# ----------------------------------------------------------------------------- 11

def test_criterion_11_polarization_correction():
    angles = np.radians(np.arange(0, 90.001, 5))
    diameters = np.linspace(400e-9, 1000e-9, 13)
    table = np.array([[polarization_correction(d, 640e-9, 785e-9, a) for a in angles] for d in diameters])
    unity = bool(np.all(table[:, 0] == 1.0))
    mono = bool(np.all(np.diff(table, axis=1) <= 1e-12))
    cp90 = table[:, -1]
    spread = float(cp90.max() - cp90.min())
    band = bool(np.all((cp90 >= 0.55) & (cp90 <= 0.75)))
    ok = unity and mono and band and spread < 0.1
    record(11, ok, f"C_P(0)=1: {unity}; non-increasing: {mono}; C_P(90deg) in "
                   f"[{cp90.min():.3f}, {cp90.max():.3f}] (band [0.55, 0.75]: {band}); spread={spread:.3f} (<0.1)")
    assert ok


# ----------------------------------------------------------------------------- 12

def test_criterion_12_radial_depth():
    particle = ParticleSpec(75e-9)
    d = np.arange(200e-9, 1000e-9 + 1e-12, 10e-9)
    peaks = {}
    for wl in (640e-9, 785e-9):
        depth = [radial_potential_depth(x, ModeSpec(wl), particle) for x in d]
        peaks[wl] = d[int(np.argmax(depth))]
    ordered = peaks[640e-9] < peaks[785e-9]
    interior = all(d[0] < p < d[-1] for p in peaks.values())
    exact = True
    for x in (400e-9, 600e-9, 800e-9):
        pair = list(two_color_modes(0.5, 2e-3))
        exact &= radial_potential_depth(x, pair, particle) == sum(radial_potential_depth(x, m, particle) for m in pair)
    ok = ordered and interior and exact
    record(12, ok, f"depth peaks: 640 nm at {peaks[640e-9] * 1e9:.0f} nm, 785 nm at {peaks[785e-9] * 1e9:.0f} nm "
                   f"(ordered: {ordered}); two-color == sum exactly: {exact}")
    assert ok


# ----------------------------------------------------------------------------- 13

# Not reproducible with a dipole model; kept as documentation only.
DOCUMENTATION_FIXTURES = {
    "full-wave axial forces (pN), 660 nm / 785 nm": (3.89, 1.45),
    "axial depth of the 75 nm particle (kBT)": 5000,
    "measured stiffness at R = 0.9 / 1.1 (pN/mm)": ((8, 2), (17, 3)),
}


def test_criterion_13_documentation_only():
    record(13, True, f"documentation fixtures only, not asserted: {DOCUMENTATION_FIXTURES}")

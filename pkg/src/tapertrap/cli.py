"""Batch command line: ``tapertrap {modes,trap-scan,simulate,analyze,report}``.

Every command reads one flat config file (see :mod:`tapertrap.config`),
writes into ``--out``, and stamps each output with a provenance header
(package version, command, config hash, seed). CSV is the authoritative
output; SVG figures carry their data in a comment block.

Exit codes: 0 success, 2 config/usage error, 3 numerical failure,
4 partial batch failure.
"""
from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
from scipy.constants import Boltzmann as k_B

from . import __version__, svgplot
from .config import ConfigError, ExperimentConfig, load
from .dynamics import Kymograph, render_kymograph, simulate_overdamped, tabulate_axial_force
from .dynamics import write_trajectories_csv
from .fiber_modes import ModeSolverError, ModeSpec, polarization_correction, solve_he11, surface_intensity
from .materials import MediumSpec, gold, load_permittivity_table
from .tracking import TRAPPED, analyze_kymograph, fit_terminal_velocity, trap_position_vs_ratio
from .trap_model import (
    FiberGeometry, ParticleSpec, RayleighValidityWarning, ResonanceError, axial_potential,
    calibrate_force_scale, find_trap, mode_surface_intensity, radial_potential_depth,
    radiation_pressure_force, two_color_modes,
)

log = logging.getLogger("tapertrap")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
NUMERIC_ERRORS = (ModeSolverError, ResonanceError, ArithmeticError, np.linalg.LinAlgError)
SOLVER_DIAMETER_RANGE = (200e-9, 2000e-9)
POTENTIAL_STEP = 2e-6
FORCE_TABLE_STEP = 2e-6


class BatchFailure(RuntimeError):
    """Some (``partial``) or all items of a batch failed."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


# ----------------------------------------------------------------------------- building blocks

def build_geometry(cfg: ExperimentConfig) -> FiberGeometry:
    return FiberGeometry(cfg.geometry_waist_diameter, cfg.geometry_taper_length,
                         cfg.geometry_waist_half_length)


def build_particle(cfg: ExperimentConfig, force_scale=None) -> ParticleSpec:
    material = gold() if cfg.particle_material == "gold" else load_permittivity_table(cfg.particle_material)
    medium = MediumSpec(cfg.medium_refractive_index, cfg.medium_viscosity, cfg.medium_temperature)
    return ParticleSpec(cfg.particle_radius, material, cfg.particle_density, medium,
                        cfg.particle_force_scale if force_scale is None else force_scale)


def build_modes(cfg: ExperimentConfig, ratio, long_power=None):
    return two_color_modes(
        ratio, cfg.modes_long_power if long_power is None else long_power,
        cfg.modes_short_wavelength, cfg.modes_long_wavelength, cfg.modes_short_direction,
        cfg.modes_short_polarization, cfg.modes_long_polarization,
    )


def resolve_force_scale(cfg: ExperimentConfig) -> float:
    """Configured force scale, or the one calibrated so that the mean 1 mW
    stiffness over ``sweep.ratios`` equals ``particle.target_mean_stiffness``."""
    if cfg.particle_target_mean_stiffness is None:
        return cfg.particle_force_scale
    return calibrate_force_scale(
        build_geometry(cfg), build_particle(cfg, 1.0), cfg.sweep_ratios,
        cfg.particle_target_mean_stiffness, 1e-3, **_trap_kwargs(cfg),
    )


def _trap_kwargs(cfg):
    return dict(diameter_range=(cfg.sweep_diameter_min, cfg.sweep_diameter_max),
                probe_offset=cfg.modes_probe_offset)


def check_ranges(cfg: ExperimentConfig):
    """Cross-checks that need the physics modules; raise ConfigError."""
    lo, hi = SOLVER_DIAMETER_RANGE
    if cfg.sweep_diameter_min < lo or cfg.sweep_diameter_max > hi:
        raise ConfigError(f"sweep.diameter range must lie within [{lo:g}, {hi:g}] m")
    if cfg.geometry_waist_diameter < lo:
        raise ConfigError(f"geometry.waist_diameter below {lo:g} m")
    if cfg.sweep_diameter_min < cfg.geometry_waist_diameter * (1 - 1e-12):
        raise ConfigError("sweep.diameter_min is thinner than the waist")
    geo = build_geometry(cfg)
    for z in (cfg.dynamics_z_min, cfg.dynamics_z_max):
        if geo.diameter_of_z(z) > hi:
            raise ConfigError(f"dynamics window reaches a diameter above {hi:g} m at z = {z:g} m")
    for w in (cfg.modes_short_wavelength, cfg.modes_long_wavelength):
        if not 400e-9 <= w <= 1000e-9:
            raise ConfigError("modes wavelengths must lie within [400, 1000] nm")
    if cfg.particle_material != "gold" and not os.path.exists(cfg.particle_material):
        raise ConfigError(f"particle.material: no such table {cfg.particle_material!r}")
    if max(cfg.dynamics_injection_t) >= cfg.dynamics_duration:
        raise ConfigError("dynamics.injection_t: injections must happen before dynamics.duration")


def provenance(cfg: ExperimentConfig, command: str, seed: int) -> dict:
    return {"tapertrap_version": __version__, "command": command,
            "config_hash": cfg.digest(), "seed": seed}


def _atomic_write(path, text, mode="w"):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, mode) as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_table(path_stem, rows, columns, prov, meta, fmt="csv"):
    """Write ``rows`` as CSV (``# key = value`` header lines) or JSON; returns the path."""
    if fmt == "json":
        path = path_stem + ".json"
        doc = {"provenance": prov, "metadata": meta, "rows": [{c: r[c] for c in columns} for r in rows]}
        _atomic_write(path, json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n")
        return path
    path = path_stem + ".csv"
    buf = io.StringIO()
    for k, v in {**prov, **meta}.items():
        buf.write(f"# {k} = {_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    _atomic_write(path, buf.getvalue())
    return path


def read_table(path):
    """Inverse of :func:`write_table` for either format: (metadata, rows)."""
    if path.endswith(".json"):
        with open(path) as fh:
            doc = json.load(fh)
        return {**doc["provenance"], **doc["metadata"]}, doc["rows"]
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                meta[k.strip()] = v.strip()
            else:
                lines.append(line)
    rows = []
    for r in csv.DictReader(lines):
        rows.append({k: _parse_cell(v) for k, v in r.items()})
    return meta, rows


def _parse_cell(v):
    if v in ("true", "false"):
        return v == "true"
    try:
        return float(v)
    except ValueError:
        return v


def _map(func, items, jobs):
    """Apply ``func`` to items, in a process pool when ``jobs > 1``.

    Results come back in input order; exceptions are returned, not raised.
    """
    def safe(fut_or_call):
        try:
            return fut_or_call()
        except Exception as exc:  # noqa: BLE001 - reported per item
            return exc

    if jobs <= 1 or len(items) <= 1:
        return [safe(lambda it=it: func(*it)) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(func, *it) for it in items]
        return [safe(f.result) for f in futs]


def _item_seed(seed, *keys):
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _tag(ratio):
    return f"R{ratio:g}"


def _collect(results, labels, what):
    """Split results into successes and failures; log failures."""
    ok, failed = [], []
    for lab, res in zip(labels, results):
        if isinstance(res, Exception):
            log.error("%s %s failed: %s: %s", what, lab, type(res).__name__, res)
            failed.append((lab, res))
        else:
            ok.append(res)
    return ok, failed


def _raise_for_failures(failed, total):
    if not failed:
        return
    numeric = all(isinstance(e, NUMERIC_ERRORS) for _, e in failed)
    # only an all-numerical failure is a numerical failure; unreadable inputs
    # etc. are batch failures even when every item is affected
    partial = len(failed) < total or not numeric
    kinds = "numerical" if numeric else "processing"
    raise BatchFailure(f"{len(failed)} of {total} items failed ({kinds})", partial)


# ----------------------------------------------------------------------------- modes

def crossover_diameters(diameters, i_short, i_long):
    """Diameters where ``i_short - i_long`` changes sign (linear interpolation)."""
    diff = np.asarray(i_short, float) - np.asarray(i_long, float)
    out = []
    for k in range(diff.size - 1):
        a, b = diff[k], diff[k + 1]
        if a == 0 and b == 0:
            continue
        if a == 0 and k > 0:
            continue  # counted when it was the right end
        if a == 0 or b == 0 or (a > 0) != (b > 0):
            frac = 0.0 if a == 0 else (1.0 if b == 0 else a / (a - b))
            out.append(float(diameters[k] + frac * (diameters[k + 1] - diameters[k])))
    return out


def run_modes(cfg: ExperimentConfig):
    """Rows of (R, diameter, wavelength, n_eff, surface intensity, radial depth)."""
    n = int(round((cfg.sweep_diameter_max - cfg.sweep_diameter_min) / cfg.sweep_diameter_step)) + 1
    diameters = np.linspace(cfg.sweep_diameter_min, cfg.sweep_diameter_max, n)
    particle = build_particle(cfg, resolve_force_scale(cfg))
    kT = k_B * cfg.medium_temperature
    n_clad = cfg.medium_refractive_index
    per_unit = {}
    for wl, pol in ((cfg.modes_short_wavelength, cfg.modes_short_polarization),
                    (cfg.modes_long_wavelength, cfg.modes_long_polarization)):
        spec = ModeSpec(wl, 1.0, 1, pol)
        neff, inten, depth = [], [], []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RayleighValidityWarning)
            for d in diameters:
                m = solve_he11(float(d), spec, cfg.fiber_core_index, n_clad)
                neff.append(m.effective_index)
                inten.append(float(surface_intensity(m, cfg.modes_probe_offset)))
                depth.append(radial_potential_depth(float(d), spec, particle, n_core=cfg.fiber_core_index))
        per_unit[wl] = (np.array(neff), np.array(inten), np.array(depth))

    rows, crossings = [], {}
    for ratio in cfg.sweep_ratios:
        powers = {cfg.modes_short_wavelength: ratio * cfg.modes_long_power,
                  cfg.modes_long_wavelength: cfg.modes_long_power}
        for wl, p in powers.items():
            neff, inten, depth = per_unit[wl]
            for d, ne, i, u in zip(diameters, neff, inten, depth):
                rows.append({"R": ratio, "diameter_m": float(d), "wavelength_m": wl, "power_W": p,
                             "n_eff": float(ne), "surface_intensity_W_per_m2": p * float(i),
                             "radial_depth_kBT": p * float(u) / kT})
        i_s = powers[cfg.modes_short_wavelength] * per_unit[cfg.modes_short_wavelength][1]
        i_l = powers[cfg.modes_long_wavelength] * per_unit[cfg.modes_long_wavelength][1]
        crossings[ratio] = crossover_diameters(diameters, i_s, i_l) if np.any(i_s != i_l) else []
    return rows, crossings


MODES_COLUMNS = ["R", "diameter_m", "wavelength_m", "power_W", "n_eff", "surface_intensity_W_per_m2",
                 "radial_depth_kBT"]


def cmd_modes(cfg, out, seed, jobs=1, fmt="csv"):
    rows, crossings = run_modes(cfg)
    prov = provenance(cfg, "modes", seed)
    meta = {f"crossover_diameter_m[{_tag(r)}]": ";".join(repr(x) for x in v) or "none"
            for r, v in crossings.items()}
    path = write_table(os.path.join(out, "modes"), rows, MODES_COLUMNS, prov, meta, fmt)
    _modes_figure(rows, cfg, os.path.join(out, "modes.svg"), prov)
    return [path]


def _modes_figure(rows, cfg, path, prov):
    series = {}
    for r in rows:
        key = f"{_tag(r['R'])} {r['wavelength_m'] * 1e9:.0f} nm"
        series.setdefault(key, ([], []))
        series[key][0].append(r["diameter_m"] * 1e9)
        series[key][1].append(r["surface_intensity_W_per_m2"])
    svgplot.line_plot(series, path, "diameter (nm)", "surface intensity (W/m^2)",
                      "surface intensity vs diameter", header=_header(prov))


def _header(prov):
    return " ".join(f"{k}={v}" for k, v in prov.items())


# ----------------------------------------------------------------------------- trap scan

def _trap_point(cfg, ratio, force_scale):
    geo = build_geometry(cfg)
    particle = build_particle(cfg, force_scale)
    modes = build_modes(cfg, ratio)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RayleighValidityWarning)
        sol = find_trap(geo, modes, particle, **_trap_kwargs(cfg))
        z_lo, z_hi = geo.z_of_diameter([cfg.sweep_diameter_min, cfg.sweep_diameter_max])
        n = max(int(round((z_hi - z_lo) / POTENTIAL_STEP)), 2) + 1
        zg = np.linspace(z_lo, z_hi, n)
        u = axial_potential(zg, geo, modes, particle, cfg.modes_probe_offset, normalize=True)
    return sol.as_row(), zg, u


TRAP_COLUMNS = ["R", "z0_m", "diameter_m", "stiffness_N_per_m", "depth_J", "depth_kBT", "stable"]


def run_trap_scan(cfg, jobs=1):
    """Per-R trap solutions plus normalized potentials; returns (rows, potentials, meta, failed)."""
    scale = resolve_force_scale(cfg)
    check = build_particle(cfg, scale)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RayleighValidityWarning)
        from .trap_model import check_rayleigh

        for wl in (cfg.modes_short_wavelength, cfg.modes_long_wavelength):
            check_rayleigh(check, wl)
    for w in caught:
        log.warning("%s", w.message)
    ratios = list(cfg.sweep_ratios)
    results = _map(_trap_point, [(cfg, r, scale) for r in ratios], jobs)
    ok, failed = _collect(results, [_tag(r) for r in ratios], "trap scan")
    rows = sorted((r[0] for r in ok), key=lambda row: row["R"])
    potentials = {row[0]["R"]: (row[1], row[2]) for row in ok}
    meta = {"force_scale": scale, "long_power_W": cfg.modes_long_power}
    stable = [(row["R"], row["z0_m"]) for row in rows if row["stable"]]
    if len(stable) >= 2:
        r, z = np.array(stable).T
        slope, intercept = np.polyfit(r, z, 1)
        meta.update({"fit_slope_m_per_R": float(slope), "fit_intercept_m": float(intercept)})
    else:
        meta.update({"fit_slope_m_per_R": float("nan"), "fit_intercept_m": float("nan")})
    return rows, potentials, meta, failed


def cmd_trap_scan(cfg, out, seed, jobs=1, fmt="csv"):
    rows, potentials, meta, failed = run_trap_scan(cfg, jobs)
    prov = provenance(cfg, "trap-scan", seed)
    paths = [write_table(os.path.join(out, "trap_scan"), rows, TRAP_COLUMNS, prov, meta, fmt)]
    if potentials:
        keys = sorted(potentials)
        zg = potentials[keys[0]][0]
        prow = [{"z_m": float(z), **{f"U_norm[{_tag(k)}]": float(potentials[k][1][i]) for k in keys}}
                for i, z in enumerate(zg)]
        cols = ["z_m"] + [f"U_norm[{_tag(k)}]" for k in keys]
        paths.append(write_table(os.path.join(out, "potentials"), prow, cols, prov, {}, fmt))
        svgplot.line_plot({_tag(k): (zg * 1e3, potentials[k][1]) for k in keys},
                          os.path.join(out, "potentials.svg"), "z (mm)", "U / U_max",
                          "normalized axial potential", header=_header(prov))
    _trap_figures(rows, out, prov)
    _raise_for_failures(failed, len(cfg.sweep_ratios))
    return paths


def _trap_figures(rows, out, prov):
    good = [r for r in rows if r["stable"]]
    rr = [r["R"] for r in good]
    svgplot.line_plot({"z0": (rr, [r["z0_m"] * 1e3 for r in good])}, os.path.join(out, "trap_position.svg"),
                      "R", "z0 (mm)", "trap position vs power ratio", markers=True, header=_header(prov))
    svgplot.line_plot({"S": (rr, [r["stiffness_N_per_m"] * 1e9 for r in good])},
                      os.path.join(out, "stiffness.svg"), "R", "S (pN/mm)", "trap stiffness",
                      markers=True, header=_header(prov))
    svgplot.line_plot({"depth": (rr, [r["depth_kBT"] for r in good])}, os.path.join(out, "depth.svg"),
                      "R", "axial depth (kBT)", "axial trap depth", markers=True, header=_header(prov))


# ----------------------------------------------------------------------------- simulate

def _simulation_gamma(cfg, particle):
    return cfg.dynamics_gamma if cfg.dynamics_gamma is not None else particle.stokes_drag


def _simulate_point(cfg, index, ratio, force_scale, seed, out, transport=False):
    geo = build_geometry(cfg)
    particle = build_particle(cfg, force_scale)
    gamma = _simulation_gamma(cfg, particle)
    frame_interval = 1.0 / cfg.dynamics_frame_rate
    record_every = max(int(round(frame_interval / cfg.dynamics_dt)), 1)
    n_frames = int(math.floor(cfg.dynamics_duration * cfg.dynamics_frame_rate + 1e-9))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RayleighValidityWarning)
        if transport:
            modes = (ModeSpec(cfg.transport_wavelength, cfg.transport_power, 1, cfg.modes_short_polarization),)
            starts = [(z, 0.0) for z in cfg.transport_injection_z]
            meta = {"scenario": "transport", "wavelength_m": repr(cfg.transport_wavelength),
                    "power_W": repr(cfg.transport_power)}
            tag = "transport"
        else:
            modes = build_modes(cfg, ratio)
            sol = find_trap(geo, modes, particle, **_trap_kwargs(cfg))
            origin = 0.0
            if cfg.dynamics_injection_reference == "trap":
                if not sol.stable:
                    raise ValueError(f"no trap at R = {ratio:g} to inject relative to")
                origin = sol.z0
            starts = [(origin + z, t) for z, t in zip(cfg.dynamics_injection_z, cfg.dynamics_injection_t)]
            meta = {"scenario": "trap", "R": repr(float(ratio)), "model_z0_m": repr(sol.z0),
                    "model_stiffness_N_per_m": repr(sol.stiffness)}
            tag = _tag(ratio)
        force = tabulate_axial_force(geo, modes, particle, cfg.dynamics_z_min, cfg.dynamics_z_max,
                                     FORCE_TABLE_STEP, cfg.modes_probe_offset)
    trajs = []
    for pid, (z_init, t_inj) in enumerate(starts):
        k0 = int(math.ceil(t_inj * cfg.dynamics_frame_rate - 1e-9))
        t_start = k0 * frame_interval
        n_steps = (n_frames - 1 - k0) * record_every
        if n_steps <= 0:
            continue
        tr = simulate_overdamped(force, gamma, cfg.medium_temperature, z_init, cfg.dynamics_dt, n_steps,
                                 _item_seed(seed, index, pid), record_every, t_start, pid)
        if tr.exited:
            log.warning("%s particle %d left the window [%g, %g] m at t = %.3f s; truncated", tag, pid,
                        cfg.dynamics_z_min, cfg.dynamics_z_max, tr.t[-1])
        trajs.append(tr)
    n_pixels = int(round((cfg.dynamics_z_max - cfg.dynamics_z_min) / cfg.dynamics_pixel_pitch)) + 1
    kymo = render_kymograph(trajs, cfg.dynamics_z_min, n_pixels, cfg.dynamics_pixel_pitch, n_frames,
                            frame_interval, cfg.analysis_delta, cfg.dynamics_spot_intensity,
                            cfg.dynamics_noise_sigma, _item_seed(seed, index, 10_000))
    prov = provenance(cfg, "simulate", seed)
    kymo.metadata = {**{k: str(v) for k, v in prov.items()}, **meta, "gamma_kg_per_s": repr(gamma),
                     "temperature_K": repr(cfg.medium_temperature), "force_scale": repr(force_scale)}
    kpath = os.path.join(out, f"kymograph_{tag}.txt")
    tmp = kpath + f".tmp{os.getpid()}"
    kymo.save(tmp)
    os.replace(tmp, kpath)
    tpath = os.path.join(out, f"truth_{tag}.csv")
    tmp = tpath + f".tmp{os.getpid()}"
    write_trajectories_csv(trajs, tmp, [f"{k} = {v}" for k, v in kymo.metadata.items()])
    os.replace(tmp, tpath)
    ppath = os.path.join(out, f"kymograph_{tag}.pgm")
    kymo.save_pgm(ppath + ".tmp")
    os.replace(ppath + ".tmp", ppath)
    svgplot.kymograph_plot(kymo, os.path.join(out, f"kymograph_{tag}.svg"),
                           {f"particle {t.particle_id}": (t.t, t.z) for t in trajs},
                           title=f"synthetic kymograph {tag}", header=_header(prov))
    return [kpath, tpath, ppath]


def cmd_simulate(cfg, out, seed, jobs=1, fmt="csv"):
    scale = resolve_force_scale(cfg)
    items = [(cfg, i, r, scale, seed, out) for i, r in enumerate(cfg.sweep_ratios)]
    labels = [_tag(r) for r in cfg.sweep_ratios]
    if cfg.transport_wavelength is not None:
        items.append((cfg, len(items), 0.0, scale, seed, out, True))
        labels.append("transport")
    results = _map(_simulate_point, items, jobs)
    ok, failed = _collect(results, labels, "simulation")
    _raise_for_failures(failed, len(items))
    return [p for paths in ok for p in paths]


# ----------------------------------------------------------------------------- analyze

def _analyze_file(cfg, path):
    kymo = Kymograph.load(path)
    res = analyze_kymograph(kymo, cfg.analysis_delta, cfg.analysis_threshold_rel, cfg.analysis_min_height,
                            cfg.analysis_max_jump, cfg.analysis_min_length, cfg.analysis_min_dwell)
    return path, kymo.metadata, res


def _transport_gamma(cfg, items, scale):
    """gamma = F_model / v_t from every positive-transport track in transport kymographs."""
    geo = build_geometry(cfg)
    particle = build_particle(cfg, scale)
    window = (cfg.transport_window_min, cfg.transport_window_max)
    estimates = []
    for path, meta, res in items:
        wl, power = float(meta["wavelength_m"]), float(meta["power_W"])
        mode = ModeSpec(wl, power, 1, cfg.modes_short_polarization)
        zw = np.linspace(*window, 201)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RayleighValidityWarning)
            i_s = mode_surface_intensity(zw, geo, mode, cfg.modes_probe_offset,
                                         n_clad=cfg.medium_refractive_index)
            f_model = float(np.mean(radiation_pressure_force(particle, i_s, wl)))
        for tr in res.trajectories:
            try:
                fit = fit_terminal_velocity(tr, window)
            except ValueError:
                continue
            if fit.slope > 0:
                res.velocities.append(fit.slope)
                estimates.append(f_model / fit.slope)
    return float(np.mean(estimates)) if estimates else None, len(estimates)


def _resolve_gamma(cfg, transport_gamma, metas):
    if transport_gamma is not None:
        return transport_gamma, "terminal-velocity"
    if cfg.analysis_gamma is not None:
        return cfg.analysis_gamma, "config"
    return build_particle(cfg).stokes_drag, "stokes"


SUMMARY_COLUMNS = ["R", "trap_position_m", "model_z0_m", "n_tracks", "n_relaxation_fits",
                   "lambda_plus_per_s", "stiffness_N_per_m", "stiffness_low_N_per_m", "C_P"]


def run_analyze(cfg, paths, jobs=1):
    results = _map(_analyze_file, [(cfg, p) for p in paths], jobs)
    ok, failed = _collect(results, paths, "analysis")
    scale = resolve_force_scale(cfg) if any(m.get("scenario") == "transport" for _, m, _ in ok) else None
    transport = [x for x in ok if x[1].get("scenario") == "transport"]
    trap_items = [x for x in ok if x[1].get("scenario") != "transport"]
    g_transport, n_v = _transport_gamma(cfg, transport, scale) if transport else (None, 0)
    gamma, source = _resolve_gamma(cfg, g_transport, [m for _, m, _ in ok])
    summary = []
    for path, meta, res in ok:
        res.gamma = gamma
        res.metadata = {"source_file": os.path.basename(path), **meta, "gamma_source": source}
    for path, meta, res in trap_items:
        z_trap = res.trap_position
        fits = res.trap_fits(cfg.analysis_delta, min_amplitude=cfg.dynamics_pixel_pitch)
        lam = float(np.median([f.rate for f in fits])) if fits else float("nan")
        s = lam * gamma if fits else float("nan")
        cp = float("nan")
        if z_trap is not None:
            d = float(build_geometry(cfg).diameter_of_z(z_trap))
            if SOLVER_DIAMETER_RANGE[0] <= d <= SOLVER_DIAMETER_RANGE[1]:
                cp = polarization_correction(d, cfg.modes_short_wavelength, cfg.modes_long_wavelength,
                                             cfg.analysis_polarization_angle, cfg.particle_radius,
                                             cfg.fiber_core_index, cfg.medium_refractive_index)
        summary.append({
            "R": float(meta.get("R", "nan")), "trap_position_m": z_trap if z_trap is not None else float("nan"),
            "model_z0_m": float(meta.get("model_z0_m", "nan")), "n_tracks": len(res.trajectories),
            "n_relaxation_fits": len(fits), "lambda_plus_per_s": lam, "stiffness_N_per_m": s,
            "stiffness_low_N_per_m": cp * s, "C_P": cp,
        })
    summary.sort(key=lambda r: (r["R"], r["trap_position_m"]))
    meta = {"gamma_kg_per_s": gamma, "gamma_source": source, "n_velocity_fits": n_v}
    positions = {r["R"]: r["trap_position_m"] for r in summary if math.isfinite(r["R"])}
    try:
        fit = trap_position_vs_ratio(positions)
        meta.update({"slope_m_per_R": fit.slope, "slope_stderr_m_per_R": fit.stderr})
    except ValueError:
        meta.update({"slope_m_per_R": float("nan"), "slope_stderr_m_per_R": float("nan")})
    model = [(r["R"], r["model_z0_m"]) for r in summary if math.isfinite(r["model_z0_m"])]
    if len(model) >= 2:
        meta["model_slope_m_per_R"] = float(np.polyfit(*np.array(model).T, 1)[0])
    return ok, summary, meta, failed


def cmd_analyze(cfg, out, seed, jobs=1, fmt="csv", inputs=()):
    paths = sorted(inputs) if inputs else sorted(glob.glob(os.path.join(out, "kymograph_*.txt")))
    ok, summary, meta, failed = run_analyze(cfg, paths, jobs)
    prov = provenance(cfg, "analyze", seed)
    written = []
    for path, _, res in ok:
        stem = os.path.splitext(os.path.basename(path))[0].replace("kymograph_", "analysis_")
        doc = {"provenance": prov, **json.loads(res.to_json())}
        jpath = os.path.join(out, stem + ".json")
        _atomic_write(jpath, json.dumps(doc, indent=2) + "\n")
        overlays = {f"track {tr.particle_id} ({c})": (tr.t, tr.z)
                    for tr, c in zip(res.trajectories, res.classes)}
        kymo = Kymograph.load(path)
        svgplot.kymograph_plot(kymo, os.path.join(out, stem + ".svg"), overlays, res.trap_position,
                               title=f"tracks: {os.path.basename(path)}", header=_header(prov))
        written.append(jpath)
    written.append(write_table(os.path.join(out, "analysis_summary"), summary, SUMMARY_COLUMNS, prov, meta, fmt))
    _raise_for_failures(failed, len(paths))
    return written


# ----------------------------------------------------------------------------- report

def cmd_report(cfg, out, seed, jobs=1, fmt="csv"):
    """Re-plot whatever tables exist in ``out`` and index them in ``report.md``."""
    prov = provenance(cfg, "report", seed)
    lines = ["# tapertrap report", "", *(f"- {k}: `{v}`" for k, v in prov.items()), ""]
    found = 0

    def table(stem):
        for ext in (".csv", ".json"):
            p = os.path.join(out, stem + ext)
            if os.path.exists(p):
                return read_table(p)
        return None

    t = table("modes")
    if t:
        found += 1
        meta, rows = t
        _modes_figure(rows, cfg, os.path.join(out, "report_modes.svg"), prov)
        lines += ["## Surface intensity and crossover", "", "![modes](report_modes.svg)", ""]
        lines += [f"- {k}: {v}" for k, v in meta.items() if k.startswith("crossover")] + [""]
    t = table("trap_scan")
    if t:
        found += 1
        meta, rows = t
        _trap_figures(rows, out, prov)
        lines += ["## Trap scan", "", "![z0](trap_position.svg) ![S](stiffness.svg) ![depth](depth.svg)", "",
                  f"- fitted slope: {meta.get('fit_slope_m_per_R')} m per unit R",
                  f"- force scale: {meta.get('force_scale')}", "",
                  "| R | z0 (mm) | S (pN/mm) | depth (kBT) |", "|---|---|---|---|"]
        for r in rows:
            lines.append(f"| {r['R']:g} | {r['z0_m'] * 1e3:.4g} | {r['stiffness_N_per_m'] * 1e9:.4g} "
                         f"| {r['depth_kBT']:.4g} |")
        lines.append("")
    t = table("analysis_summary")
    if t:
        found += 1
        meta, rows = t
        good = [r for r in rows if isinstance(r["R"], float) and math.isfinite(r["R"])]
        rr = [r["R"] for r in good]
        svgplot.line_plot({"recovered": (rr, [r["trap_position_m"] * 1e3 for r in good]),
                           "model": (rr, [r["model_z0_m"] * 1e3 for r in good])},
                          os.path.join(out, "report_recovered_positions.svg"), "R", "z0 (mm)",
                          "recovered vs model trap position", markers=True, header=_header(prov))
        svgplot.line_plot({"S": (rr, [r["stiffness_N_per_m"] * 1e9 for r in good]),
                           "C_P S": (rr, [r["stiffness_low_N_per_m"] * 1e9 for r in good])},
                          os.path.join(out, "report_recovered_stiffness.svg"), "R", "S (pN/mm)",
                          "recovered stiffness band", markers=True, header=_header(prov))
        lines += ["## Analysis of kymographs", "",
                  "![positions](report_recovered_positions.svg) ![stiffness](report_recovered_stiffness.svg)", "",
                  f"- gamma: {meta.get('gamma_kg_per_s')} kg/s ({meta.get('gamma_source')})",
                  f"- recovered slope: {meta.get('slope_m_per_R')} m per unit R"
                  f" (model {meta.get('model_slope_m_per_R', 'n/a')})", ""]
    if not found:
        raise FileNotFoundError(f"no modes/trap_scan/analysis_summary tables in {out}")
    path = os.path.join(out, "report.md")
    _atomic_write(path, "\n".join(lines) + "\n")
    return [path]


# ----------------------------------------------------------------------------- entry point

COMMANDS = {"modes": cmd_modes, "trap-scan": cmd_trap_scan, "simulate": cmd_simulate,
            "analyze": cmd_analyze, "report": cmd_report}


def build_parser():
    ap = argparse.ArgumentParser(prog="tapertrap", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"tapertrap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat section.key = value config file")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="overrides dynamics.seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points / files")
        p.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "analyze":
            p.add_argument("inputs", nargs="*", help="kymograph files (default: OUT/kymograph_*.txt)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        log.error("--jobs must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = load(args.config)
        check_ranges(cfg)
    except (ConfigError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    seed = cfg.dynamics_seed if args.seed is None else args.seed
    if args.seed is not None:
        cfg = replace(cfg, dynamics_seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    kwargs = {"inputs": args.inputs} if args.command == "analyze" else {}
    try:
        paths = COMMANDS[args.command](cfg, args.out, seed, args.jobs, args.format, **kwargs)
    except BatchFailure as exc:
        log.error("%s", exc)
        return EXIT_PARTIAL if exc.partial else EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Kymograph analysis: peaks, linking, trap-line detection and fits."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dynamics import Kymograph, Trajectory

DEFAULT_THRESHOLD_REL = 0.3
DEFAULT_MAX_JUMP = 50e-6
DEFAULT_DELTA = 23e-6
MAX_GAP = 2

POSITIVE = "positive-transporting"
NEGATIVE = "negative-transporting"
TRAPPED = "trapped"
UNCLASSIFIED = "unclassified"


def detect_peaks(frame, threshold_rel=DEFAULT_THRESHOLD_REL, min_separation=3, min_height=0.0):
    """Sub-pixel local maxima of one kymograph row.

    Maxima must exceed ``max(threshold_rel * frame.max(), min_height)``.
    Positions are refined with a 3-point parabola; maxima closer than
    ``min_separation`` pixels are merged, keeping the brighter one.

    Returns
    -------
    np.ndarray
        Peak positions in (fractional) pixel units, ascending.
    """
    y = np.asarray(frame, dtype=float)
    if y.size == 0:
        raise ValueError("empty frame")
    top = y.max()
    if top <= 0:
        return np.empty(0)
    thr = max(threshold_rel * top, min_height)
    left = np.concatenate([[-np.inf], y[:-1]])
    right = np.concatenate([y[1:], [-np.inf]])
    cand = np.nonzero((y >= left) & (y > right) & (y >= thr))[0]
    if cand.size == 0:
        return np.empty(0)

    # brightest first, suppress neighbours within min_separation
    order = cand[np.argsort(-y[cand], kind="stable")]
    kept = []
    for i in order:
        if all(abs(i - j) >= min_separation for j in kept):
            kept.append(i)
    kept = np.sort(np.array(kept))

    pos = kept.astype(float)
    inner = (kept > 0) & (kept < y.size - 1)
    i = kept[inner]
    ym, y0, yp = y[i - 1], y[i], y[i + 1]
    den = ym - 2 * y0 + yp
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(den < 0, 0.5 * (ym - yp) / den, 0.0)
    pos[inner] += np.clip(shift, -0.5, 0.5)
    return pos


def detect_kymograph_peaks(kymo: Kymograph, **kwargs):
    """Peak z positions (m) for every frame."""
    return [kymo.z_origin + kymo.pixel_pitch * detect_peaks(row, **kwargs) for row in kymo.matrix]


def link_trajectories(peaks_per_frame, frame_interval, max_jump=DEFAULT_MAX_JUMP, min_length=10,
                      t_origin=0.0, max_gap=MAX_GAP):
    """Greedy nearest-neighbour linking of per-frame peak positions.

    A track that missed ``g`` frames may reconnect to a peak within
    ``(g + 1) * max_jump``; at most ``max_gap`` missing frames are bridged,
    and bridged frames are filled by linear interpolation so the output
    stays uniformly sampled. Tracks shorter than ``min_length`` frames are
    dropped.
    """
    active = []  # each: {"frames": [...], "z": [...]}
    finished = []
    for k, peaks in enumerate(peaks_per_frame):
        peaks = np.asarray(peaks, dtype=float)
        still = []
        for tr in active:
            if k - tr["frames"][-1] - 1 > max_gap:
                finished.append(tr)
            else:
                still.append(tr)
        active = still

        pairs = []
        for ti, tr in enumerate(active):
            gap = k - tr["frames"][-1]
            d = np.abs(peaks - tr["z"][-1])
            for pi in np.nonzero(d <= gap * max_jump)[0]:
                pairs.append((d[pi], ti, pi))
        pairs.sort()
        used_t, used_p = set(), set()
        for _, ti, pi in pairs:
            if ti in used_t or pi in used_p:
                continue
            used_t.add(ti)
            used_p.add(pi)
            active[ti]["frames"].append(k)
            active[ti]["z"].append(float(peaks[pi]))
        for pi in range(peaks.size):
            if pi not in used_p:
                active.append({"frames": [k], "z": [float(peaks[pi])]})
    finished.extend(active)

    out = []
    for tr in sorted(finished, key=lambda tr: (tr["frames"][0], tr["z"][0])):
        frames = np.array(tr["frames"])
        full = np.arange(frames[0], frames[-1] + 1)
        if full.size < min_length:
            continue
        z = np.interp(full, frames, tr["z"])
        out.append(Trajectory(t_origin + frame_interval * full, z, len(out)))
    return out


@dataclass
class TrapLine:
    position: float
    members: np.ndarray  # boolean mask over the input points
    count: int
    span: float
    found: bool


def detect_trap_line(t, z, delta=DEFAULT_DELTA, scan_step=None, min_dwell=2.0):
    """Hough-like search for a horizontal (constant-z) line in (t, z) points.

    Every candidate level on a ``scan_step`` grid counts the points within
    +-2 delta; the best level's members give the trap position (their mean
    z). A trap is only declared if the members span at least ``min_dwell``
    seconds.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    scan_step = scan_step or delta / 10
    if z.size == 0:
        return TrapLine(np.nan, np.zeros(0, bool), 0, 0.0, False)
    levels = np.arange(z.min(), z.max() + scan_step, scan_step)
    zs = np.sort(z)
    counts = np.searchsorted(zs, levels + 2 * delta, "right") - np.searchsorted(
        zs, levels - 2 * delta, "left"
    )
    best = levels[int(np.argmax(counts))]
    members = np.abs(z - best) <= 2 * delta
    span = float(t[members].max() - t[members].min()) if members.any() else 0.0
    found = span >= min_dwell
    pos = float(z[members].mean()) if found else np.nan
    return TrapLine(pos, members, int(members.sum()), span, found)


@dataclass
class RelaxationFit:
    amplitude: float
    rate: float
    z0: float
    residual: float
    converged: bool
    stderr: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))
    iterations: int = 0


def _exp_model(p, t):
    a, lam, z0 = p
    e = np.exp(-lam * t)
    jac = np.column_stack([e, -a * t * e, np.ones_like(t)])
    return a * e + z0, jac


def _linear_amplitudes(t, z, lam):
    """Least-squares (A, z0) for a fixed rate and the residual sum of squares."""
    basis = np.column_stack([np.exp(-lam * t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, z, rcond=None)
    r = z - basis @ coef
    return coef, float(r @ r)


def _profile_rate(t, z, lam, span=100.0, n=41):
    """Best starting rate on a log grid around ``lam`` (variable projection)."""
    grid = np.concatenate([[lam], lam * np.logspace(-np.log10(span), np.log10(span), n)])
    costs = [_linear_amplitudes(t, z, g)[1] for g in grid]
    return float(grid[int(np.argmin(costs))])


def fit_relaxation(trajectory: Trajectory, max_iter=200, rtol=1e-9) -> RelaxationFit:
    """Fit ``z = A exp(-L t) + z0`` (t from the first sample) by Levenberg-Marquardt.

    Starting values: z0 from the last-quartile mean, A from the first sample,
    L from a log-linear fit of |z - z0| over the part still clearly away
    from z0.
    """
    t = trajectory.t - trajectory.t[0]
    z = trajectory.z
    if t.size < 10:
        raise ValueError("relaxation fit needs at least 10 samples")
    scale = max(np.ptp(z), 1e-30)
    zn = (z - z[-1]) / scale  # well-conditioned units
    tn = t / max(t[-1], 1e-30)

    z0 = zn[-(t.size // 4):].mean()
    a = zn[0] - z0
    dev = np.abs(zn - z0)
    # leading run still clearly away from z0; later noise excursions would
    # flatten the log-linear slope
    away = dev > 0.1 * max(abs(a), 1e-12)
    n_lead = int(np.argmin(away)) if not away.all() else away.size
    lam = 1.0
    if n_lead >= 2:
        slope = np.polyfit(tn[:n_lead], np.log(dev[:n_lead]), 1)[0]
        if slope < 0:
            lam = -slope
    lam = _profile_rate(tn, zn, lam)
    a, z0 = _linear_amplitudes(tn, zn, lam)[0]
    p = np.array([a, lam, z0])

    mu = 1e-3
    model, jac = _exp_model(p, tn)
    r = zn - model
    cost = r @ r
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jtj = jac.T @ jac
        g = jac.T @ r
        step = np.linalg.solve(jtj + mu * np.diag(np.diag(jtj) + 1e-300), g)
        trial = p + step
        m2, j2 = _exp_model(trial, tn)
        r2 = zn - m2
        c2 = r2 @ r2
        if c2 <= cost:
            change = np.max(np.abs(step) / np.maximum(np.abs(trial), 1e-12))
            p, model, jac, r, cost = trial, m2, j2, r2, c2
            mu = max(mu / 3, 1e-12)
            if change < rtol:
                converged = True
                break
        else:
            mu *= 4
            if mu > 1e12:
                converged = cost < 1e-20 * t.size
                break

    a, lam, z0 = p
    dof = max(t.size - 3, 1)
    sigma2 = cost / dof
    try:
        cov = np.linalg.inv(jac.T @ jac) * sigma2
        se = np.sqrt(np.abs(np.diag(cov)))
    except np.linalg.LinAlgError:
        se = np.full(3, np.nan)
    tscale = max(t[-1], 1e-30)
    units = np.array([scale, 1 / tscale, scale])
    return RelaxationFit(
        float(a * scale),
        float(lam / tscale),
        float(z0 * scale + z[-1]),
        float(np.sqrt(cost / t.size) * scale),
        bool(converged and lam > 0),
        se * units,
        it,
    )


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float
    n: int


def fit_terminal_velocity(trajectory: Trajectory, z_window) -> LineFit:
    """Least-squares slope dz/dt (m/s) using samples with z inside ``z_window``."""
    lo, hi = z_window
    sel = (trajectory.z >= lo) & (trajectory.z <= hi)
    if sel.sum() < 5:
        raise ValueError(f"only {int(sel.sum())} samples inside z window {z_window}")
    res = stats.linregress(trajectory.t[sel], trajectory.z[sel])
    return LineFit(float(res.slope), float(res.intercept), float(res.stderr), int(sel.sum()))


def estimate_gamma(terminal_velocity, force):
    """Drag coefficient F / v (kg/s)."""
    if terminal_velocity <= 0:
        raise ValueError("terminal velocity must be positive")
    return force / terminal_velocity


def combine_gamma(gammas, stderrs):
    """Mean of independent drag estimates with the propagated standard error."""
    g = np.asarray(gammas, dtype=float)
    s = np.asarray(stderrs, dtype=float)
    return float(g.mean()), float(np.sqrt(np.sum(s**2)) / g.size)


def gamma_with_error(force, velocity, velocity_stderr, force_stderr=0.0):
    """F/v with first-order error propagation."""
    g = estimate_gamma(velocity, force)
    rel = np.hypot(velocity_stderr / velocity, force_stderr / force if force else 0.0)
    return g, abs(g) * rel


def stiffness_from_fit(rate, gamma, polarization_factor=None):
    """``S = rate * gamma``; with a polarization factor also returns the
    band ``(C_P S, S)``."""
    if rate < 0 or gamma <= 0:
        raise ValueError("rate must be >= 0 and gamma > 0")
    s = rate * gamma
    if polarization_factor is None:
        return s
    return s, (polarization_factor * s, s)


@dataclass(frozen=True)
class PositionSlope:
    slope: float
    stderr: float
    ratios: np.ndarray
    shifts: np.ndarray


def trap_position_vs_ratio(positions: dict) -> PositionSlope:
    """Slope (m per unit R) of trap shift versus power ratio.

    Shifts are taken relative to the smallest-R position.
    """
    items = sorted((float(r), float(z)) for r, z in positions.items() if np.isfinite(z))
    if len(items) < 3:
        raise ValueError("need at least 3 power ratios with trap positions")
    r, z = np.array(items).T
    dz = z - z[0]
    res = stats.linregress(r, dz)
    return PositionSlope(float(res.slope), float(res.stderr), r, dz)


def classify_trajectory(traj: Trajectory, delta=DEFAULT_DELTA, min_rho=0.9):
    net = traj.z[-1] - traj.z[0]
    if abs(net) < 4 * delta:
        return TRAPPED
    rho = stats.spearmanr(traj.t, traj.z)[0]
    if abs(rho) > min_rho:
        return POSITIVE if net > 0 else NEGATIVE
    return UNCLASSIFIED


@dataclass
class AnalysisResult:
    trajectories: list
    classes: list
    fits: list
    trap: TrapLine | None
    velocities: list = field(default_factory=list)
    gamma: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def trap_position(self):
        return self.trap.position if self.trap is not None and self.trap.found else None

    def trap_fits(self, delta=DEFAULT_DELTA, min_amplitude=0.0):
        """Converged fits of tracks that end on the trap line (within 2 delta).

        These are the relaxation events whose rate estimates Lambda_+.
        """
        z_trap = self.trap_position
        if z_trap is None:
            return []
        return [
            f for tr, f in zip(self.trajectories, self.fits)
            if f is not None and f.converged and f.rate > 0 and abs(f.amplitude) >= min_amplitude
            and abs(tr.z[-1] - z_trap) <= 2 * delta
        ]

    def stiffnesses(self):
        if self.gamma is None:
            return [None] * len(self.fits)
        return [f.rate * self.gamma if f is not None and f.converged else None for f in self.fits]

    def to_dict(self):
        rows = []
        for tr, cls, fit, s in zip(self.trajectories, self.classes, self.fits, self.stiffnesses()):
            rows.append({
                "particle_id": tr.particle_id,
                "class": cls,
                "t_start_s": float(tr.t[0]),
                "t_end_s": float(tr.t[-1]),
                "n_samples": len(tr),
                "A_m": None if fit is None else fit.amplitude,
                "lambda_plus_per_s": None if fit is None else fit.rate,
                "z0_m": None if fit is None else fit.z0,
                "residual_m": None if fit is None else fit.residual,
                "converged": None if fit is None else fit.converged,
                "stiffness_N_per_m": s,
            })
        return {
            "trajectories": rows,
            "trap_position_m": self.trap_position,
            "gamma_kg_per_s": self.gamma,
            "metadata": self.metadata,
        }

    def to_json(self, **kwargs):
        return json.dumps(_clean(self.to_dict()), **kwargs)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def analyze_kymograph(kymo: Kymograph, delta=DEFAULT_DELTA, threshold_rel=DEFAULT_THRESHOLD_REL,
                      min_height=0.0, max_jump=DEFAULT_MAX_JUMP, min_length=10, min_dwell=2.0,
                      gamma=None) -> AnalysisResult:
    """Full pipeline: peaks -> tracks -> trap line -> per-track relaxation fits."""
    # closer than 2 delta two spots are not resolved; this also rejects
    # noise maxima on the flank of a bright spot
    min_sep = max(int(round(2 * delta / kymo.pixel_pitch)), 1)
    peaks = detect_kymograph_peaks(kymo, threshold_rel=threshold_rel, min_separation=min_sep,
                                   min_height=min_height)
    tracks = link_trajectories(peaks, kymo.frame_interval, max_jump, min_length, kymo.t_origin)
    t_all = np.concatenate([kymo.t_axis[k] + 0 * p for k, p in enumerate(peaks)]) if peaks else np.empty(0)
    z_all = np.concatenate(peaks) if peaks else np.empty(0)
    trap = detect_trap_line(t_all, z_all, delta, min_dwell=min_dwell)
    classes = [classify_trajectory(tr, delta) for tr in tracks]
    fits = []
    for tr in tracks:
        try:
            fits.append(fit_relaxation(tr))
        except (ValueError, np.linalg.LinAlgError):
            fits.append(None)
    return AnalysisResult(tracks, classes, fits, trap, gamma=gamma)

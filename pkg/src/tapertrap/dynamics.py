"""Langevin dynamics along the fiber axis and synthetic kymographs."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import Boltzmann as k_B

DEFAULT_DT = 1e-4
DEFAULT_FRAME_RATE = 30.0
_CHUNK = 65536


@dataclass
class Trajectory:
    """Uniformly sampled z(t) of one particle.

    ``exited`` is set when the simulation left the force-field domain and
    the samples were truncated there.
    """

    t: np.ndarray
    z: np.ndarray
    particle_id: int = 0
    exited: bool = False

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.t.shape != self.z.shape or self.t.ndim != 1:
            raise ValueError("t and z must be 1-D arrays of equal length")
        if self.t.size > 1:
            dt = np.diff(self.t)
            if np.any(dt <= 0):
                raise ValueError("trajectory times must be strictly increasing")
            if np.max(np.abs(dt - dt[0])) > 1e-9 * abs(dt[0]) + 1e-12 * np.max(np.abs(self.t)):
                raise ValueError("trajectory sampling must be uniform")

    def __len__(self):
        return self.t.size

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def position_at(self, t):
        return np.interp(t, self.t, self.z)


class TabulatedForce:
    """Force field interpolated from samples on a z grid.

    Evaluating outside ``domain`` returns NaN, which the integrators treat
    as leaving the field.
    """

    def __init__(self, z_grid, force):
        self.z_grid = np.asarray(z_grid, dtype=float)
        self.force = np.asarray(force, dtype=float)
        if self.z_grid.shape != self.force.shape or np.any(np.diff(self.z_grid) <= 0):
            raise ValueError("z_grid must be ascending and match force")
        self.domain = (float(self.z_grid[0]), float(self.z_grid[-1]))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.interp(z, self.z_grid, self.force)
        return np.where((z < self.domain[0]) | (z > self.domain[1]), np.nan, out)


def harmonic_force(stiffness, center=0.0):
    def force(z):
        return -stiffness * (np.asarray(z, dtype=float) - center)

    return force


def tabulate_axial_force(geometry, modes, particle, z_min, z_max, step=1e-6, probe_offset=0.0):
    """Sample the two-color net axial force on a regular grid."""
    from .trap_model import net_axial_force

    n = int(round((z_max - z_min) / step)) + 1
    zg = np.linspace(z_min, z_max, n)
    return TabulatedForce(zg, net_axial_force(zg, geometry, modes, particle, probe_offset))


def _domain_of(force):
    return getattr(force, "domain", (-np.inf, np.inf))


def _normal_chunks(rng, n_steps, width):
    done = 0
    while done < n_steps:
        m = min(_CHUNK, n_steps - done)
        yield rng.standard_normal((m, width))
        done += m


def simulate_overdamped_ensemble(force, gamma, temperature, z_init, dt=DEFAULT_DT, n_steps=1000,
                                 seed=0, record_every=1, t0=0.0, first_id=0):
    """Euler-Maruyama for ``gamma dz = F(z) dt + sqrt(2 gamma kT) dW``.

    All particles share one generator seeded with ``seed`` and advance in
    lock step; each one is frozen (and flagged ``exited``) the first time it
    steps outside the force-field domain.

    Returns
    -------
    list of Trajectory
    """
    if dt <= 0 or gamma <= 0:
        raise ValueError("dt and gamma must be positive")
    z = np.atleast_1d(np.asarray(z_init, dtype=float)).copy()
    npart = z.size
    rng = np.random.default_rng(seed)
    drift = dt / gamma
    kick = np.sqrt(2 * k_B * temperature * dt / gamma) if temperature > 0 else 0.0
    lo, hi = _domain_of(force)

    n_rec = n_steps // record_every + 1
    rec = np.empty((n_rec, npart))
    rec[0] = z
    alive = np.ones(npart, dtype=bool)
    last = np.full(npart, n_rec - 1)
    step = 0
    noise_iter = _normal_chunks(rng, n_steps, npart) if kick else None
    while step < n_steps:
        block = next(noise_iter) if kick else np.zeros((min(_CHUNK, n_steps - step), npart))
        for xi in block:
            f = force(z)
            z_new = z + f * drift + kick * xi
            bad = alive & ~((z_new >= lo) & (z_new <= hi) & np.isfinite(z_new))
            if bad.any():
                last[bad] = step // record_every
                alive &= ~bad
            z = np.where(alive, z_new, z)
            step += 1
            if step % record_every == 0:
                rec[step // record_every] = z
    times = t0 + dt * record_every * np.arange(n_rec)
    return [
        Trajectory(times[: last[i] + 1], rec[: last[i] + 1, i], first_id + i, not alive[i])
        for i in range(npart)
    ]


def simulate_overdamped(force, gamma, temperature, z_init, dt=DEFAULT_DT, n_steps=1000, seed=0,
                        record_every=1, t0=0.0, particle_id=0) -> Trajectory:
    """Single-particle overdamped Langevin trajectory; T=0 gives gradient flow."""
    return simulate_overdamped_ensemble(
        force, gamma, temperature, [z_init], dt, n_steps, seed, record_every, t0, particle_id
    )[0]


def simulate_inertial(force, gamma, mass, temperature, z_init, v_init=0.0, dt=DEFAULT_DT,
                      n_steps=1000, seed=0, record_every=1, t0=0.0, particle_id=0,
                      return_velocity=False):
    """Full ``m z'' + gamma z' = F(z) + sqrt(2 gamma kT) xi``.

    Damping is treated implicitly and position explicitly with the updated
    velocity, so the scheme is stable for any ``gamma dt / m`` and reduces
    to Euler-Maruyama when inertia is negligible.
    """
    if dt <= 0 or gamma < 0 or mass <= 0:
        raise ValueError("dt and mass must be positive, gamma non-negative")
    rng = np.random.default_rng(seed)
    z, v = float(z_init), float(v_init)
    kick = np.sqrt(2 * gamma * k_B * temperature * dt) / mass if temperature > 0 else 0.0
    damp = 1.0 / (1.0 + gamma * dt / mass)
    lo, hi = _domain_of(force)
    n_rec = n_steps // record_every + 1
    zs = np.empty(n_rec)
    vs = np.empty(n_rec)
    zs[0], vs[0] = z, v
    last = n_rec - 1
    exited = False
    step = 0
    for block in _normal_chunks(rng, n_steps, 1):
        for (xi,) in block:
            f = float(force(z))
            v = (v + dt * f / mass + kick * xi) * damp
            z_new = z + dt * v
            if not (lo <= z_new <= hi) or not np.isfinite(z_new):
                exited = True
                last = step // record_every
                break
            z = z_new
            step += 1
            if step % record_every == 0:
                zs[step // record_every] = z
                vs[step // record_every] = v
        if exited:
            break
    times = t0 + dt * record_every * np.arange(last + 1)
    traj = Trajectory(times, zs[: last + 1], particle_id, exited)
    return (traj, vs[: last + 1]) if return_velocity else traj


@dataclass
class Kymograph:
    """Frames x pixels intensity matrix along the fiber axis.

    Pixel ``j`` sits at ``z_origin + j * pixel_pitch``; frame ``k`` at
    ``t_origin + k * frame_interval``.
    """

    matrix: np.ndarray
    pixel_pitch: float
    frame_interval: float
    psf_sigma: float
    z_origin: float = 0.0
    t_origin: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise ValueError("kymograph matrix must be 2-D")
        if np.any(self.matrix < 0):
            raise ValueError("kymograph intensities must be non-negative")
        if self.psf_sigma <= 0 or self.pixel_pitch <= 0 or self.frame_interval <= 0:
            raise ValueError("psf_sigma, pixel_pitch and frame_interval must be positive")

    @property
    def n_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[1]

    @property
    def z_axis(self):
        return self.z_origin + self.pixel_pitch * np.arange(self.n_pixels)

    @property
    def t_axis(self):
        return self.t_origin + self.frame_interval * np.arange(self.n_frames)

    def save(self, path):
        header = {
            "pixel_pitch_m": repr(float(self.pixel_pitch)),
            "frame_interval_s": repr(float(self.frame_interval)),
            "psf_sigma_m": repr(float(self.psf_sigma)),
            "z_origin_m": repr(float(self.z_origin)),
            "t_origin_s": repr(float(self.t_origin)),
            "frames": str(self.n_frames),
            "pixels": str(self.n_pixels),
        }
        header.update({k: str(v) for k, v in self.metadata.items()})
        with open(path, "w") as fh:
            fh.write("# tapertrap kymograph v1\n")
            for k, v in header.items():
                fh.write(f"# {k} = {v}\n")
            for row in self.matrix:
                fh.write(" ".join(f"{x:.6g}" for x in row) + "\n")

    @classmethod
    def load(cls, path) -> "Kymograph":
        header = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    if "=" in line:
                        k, v = line[1:].split("=", 1)
                        header[k.strip()] = v.strip()
                elif line.strip():
                    rows.append([float(x) for x in line.split()])
        try:
            frames, pixels = int(header["frames"]), int(header["pixels"])
            known = dict(
                pixel_pitch=float(header.pop("pixel_pitch_m")),
                frame_interval=float(header.pop("frame_interval_s")),
                psf_sigma=float(header.pop("psf_sigma_m")),
                z_origin=float(header.pop("z_origin_m")),
                t_origin=float(header.pop("t_origin_s", 0.0)),
            )
        except KeyError as exc:
            raise ValueError(f"{path}: missing header field {exc}") from None
        header.pop("frames")
        header.pop("pixels")
        matrix = np.array(rows, dtype=float).reshape(frames, pixels) if frames else np.zeros((0, pixels))
        return cls(matrix, metadata=header, **known)

    def save_pgm(self, path):
        """16-bit binary PGM, frames as rows, scaled to the matrix maximum."""
        peak = self.matrix.max() if self.matrix.size else 0.0
        img = np.zeros_like(self.matrix) if peak <= 0 else self.matrix / peak
        data = np.round(img * 65535).astype(">u2")
        with open(path, "wb") as fh:
            fh.write(f"P5\n{self.n_pixels} {self.n_frames}\n65535\n".encode())
            fh.write(data.tobytes())


def render_kymograph(trajectories, z_origin, n_pixels, pixel_pitch, n_frames,
                     frame_interval=1 / DEFAULT_FRAME_RATE, psf_sigma=23e-6,
                     intensity_per_particle=1.0, background_noise_sigma=0.0, seed=0,
                     t_origin=0.0) -> Kymograph:
    """Sum of Gaussian spots (sigma = psf) at each particle position per frame.

    A particle contributes only to frames inside its own time span.
    Noise is i.i.d. Gaussian added per pixel, then the image is clipped at 0.
    """
    z_axis = z_origin + pixel_pitch * np.arange(n_pixels)
    t_axis = t_origin + frame_interval * np.arange(n_frames)
    img = np.zeros((n_frames, n_pixels))
    for traj in trajectories:
        if len(traj) == 0:
            continue
        on = (t_axis >= traj.t[0] - 1e-12) & (t_axis <= traj.t[-1] + 1e-12)
        if not on.any():
            continue
        zc = traj.position_at(t_axis[on])
        img[on] += intensity_per_particle * np.exp(
            -0.5 * ((z_axis[None, :] - zc[:, None]) / psf_sigma) ** 2
        )
    if background_noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img += background_noise_sigma * rng.standard_normal(img.shape)
    np.clip(img, 0.0, None, out=img)
    return Kymograph(img, pixel_pitch, frame_interval, psf_sigma, z_origin, t_origin)


def write_trajectories_csv(trajectories, path, header_lines=()):
    """Columns ``t_s, z_m, particle_id``; optional ``# ...`` provenance lines first."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["t_s", "z_m", "particle_id"])
        for tr in trajectories:
            for t, z in zip(tr.t, tr.z):
                w.writerow([repr(float(t)), repr(float(z)), tr.particle_id])


def read_trajectories_csv(path) -> list[Trajectory]:
    groups: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            groups.setdefault(int(row["particle_id"]), []).append(
                (float(row["t_s"]), float(row["z_m"]))
            )
    out = []
    for pid, pts in groups.items():
        t, z = np.array(pts).T
        out.append(Trajectory(t, z, pid))
    return out

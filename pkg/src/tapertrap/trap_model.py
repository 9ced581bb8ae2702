"""Rayleigh-regime forces on a gold nanosphere near a two-color fiber taper.

Conventions: the shorter-wavelength mode runs toward +z, the longer one
toward -z, and the taper diameter grows with z beyond the waist. The axial
potential is U = -int F dz so that a stable trap is a minimum.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.constants import Boltzmann as k_B
from scipy.constants import c

from .fiber_modes import ModeSpec, solve_he11, surface_intensity
from .materials import GOLD_DENSITY, WATER, MediumSpec, PermittivityTable, gold, permittivity_at


class RayleighValidityWarning(UserWarning):
    """Particle is too large for the dipole force model to be quantitative."""


class ResonanceError(ArithmeticError):
    """Clausius-Mossotti denominator vanishes."""


@dataclass(frozen=True)
class FiberGeometry:
    """Symmetric exponential taper around a uniform waist.

    ``diameter(z) = D0`` for ``|z| <= waist_half_length`` and
    ``D0 exp((|z| - waist_half_length) / L0)`` beyond.
    """

    waist_diameter: float = 400e-9
    taper_length: float = 1e-3
    waist_half_length: float = 0.0

    def __post_init__(self):
        if self.waist_diameter <= 0 or self.taper_length <= 0 or self.waist_half_length < 0:
            raise ValueError("geometry lengths must be positive")

    def diameter_of_z(self, z):
        excess = np.maximum(np.abs(np.asarray(z, dtype=float)) - self.waist_half_length, 0.0)
        return self.waist_diameter * np.exp(excess / self.taper_length)

    def z_of_diameter(self, diameter):
        """Positive-side axial position at which the taper reaches ``diameter``."""
        d = np.asarray(diameter, dtype=float)
        if np.any(d < self.waist_diameter * (1 - 1e-12)):
            raise ValueError("diameter smaller than the waist")
        return self.waist_half_length + self.taper_length * np.log(
            np.maximum(d / self.waist_diameter, 1.0)
        )


@dataclass(frozen=True)
class ParticleSpec:
    """Nanosphere in a medium.

    ``force_scale`` multiplies the axial radiation-pressure force (scattering
    plus absorption); 1 is the bare dipole model. Other values calibrate
    axial magnitudes to full-wave results while keeping the dipole model's
    dependence on diameter and wavelength. The radial gradient force is
    left unscaled: for a 75 nm sphere its dipole value is already of the
    full-wave magnitude, while the axial force is not.
    """

    radius: float = 75e-9
    material: PermittivityTable = field(default_factory=gold, repr=False)
    density: float = GOLD_DENSITY
    medium: MediumSpec = WATER
    force_scale: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("particle radius must be positive")
        if self.density <= 0:
            raise ValueError("particle density must be positive")
        if self.force_scale <= 0:
            raise ValueError("force_scale must be positive")

    @property
    def mass(self) -> float:
        return self.density * 4.0 / 3.0 * np.pi * self.radius**3

    @property
    def stokes_drag(self) -> float:
        """Free-space Stokes drag 6 pi eta a (kg/s)."""
        return 6 * np.pi * self.medium.viscosity * self.radius


def two_color_modes(ratio, long_power=1e-3, short_wavelength=640e-9, long_wavelength=785e-9,
                    short_direction=1, short_polarization=0.0, long_polarization=0.0):
    """Counter-propagating pair with ``P_short / P_long = ratio``.

    The short-wavelength mode travels along ``short_direction`` (+z by
    default, i.e. toward the thick end), the long one the opposite way.
    """
    if ratio < 0:
        raise ValueError("power ratio must be non-negative")
    return (
        ModeSpec(short_wavelength, ratio * long_power, short_direction, short_polarization),
        ModeSpec(long_wavelength, long_power, -short_direction, long_polarization),
    )


def polarizability(particle: ParticleSpec, wavelength) -> complex:
    """Clausius-Mossotti volume polarizability a^3 (e - 1)/(e + 2), e = eps_p/eps_m (m^3)."""
    rel = permittivity_at(particle.material, wavelength) / particle.medium.permittivity
    den = rel + 2.0
    if abs(den) < 1e-9:
        raise ResonanceError(f"polarizability resonance at {wavelength!r} m")
    return particle.radius**3 * (rel - 1.0) / den


def check_rayleigh(particle: ParticleSpec, wavelength) -> bool:
    """Warn (and return False) when 2a > wavelength / 5."""
    ok = 2 * particle.radius <= wavelength / 5
    if not ok:
        warnings.warn(
            f"particle diameter {2 * particle.radius:.3g} m exceeds lambda/5 at "
            f"{wavelength:.3g} m; dipole forces are qualitative only",
            RayleighValidityWarning,
            stacklevel=2,
        )
    return ok


def radiation_pressure_force(particle: ParticleSpec, intensity, wavelength):
    """Scattering plus absorption force (N) along the propagation direction.

    ``F_scat = 8 pi^3 eps_m I |alpha|^2 / (3 c lambda^4)``,
    ``F_abs = 2 pi eps_m I Im(alpha) / (lambda c)``.
    """
    alpha = polarizability(particle, wavelength)
    eps_m = particle.medium.permittivity
    intensity = np.asarray(intensity, dtype=float)
    f_scat = 8 * np.pi**3 * eps_m * intensity * abs(alpha) ** 2 / (3 * c * wavelength**4)
    f_abs = 2 * np.pi * eps_m * intensity * alpha.imag / (wavelength * c)
    return particle.force_scale * (f_scat + f_abs)


def _unit_surface_intensity(diameters, wavelength, polarization_angle, offset, n_core, n_clad):
    """Surface intensity per watt of launched power at each diameter."""
    spec = ModeSpec(wavelength, 1.0, 1, polarization_angle)
    return np.array([
        float(surface_intensity(solve_he11(float(d), spec, n_core, n_clad), offset))
        for d in np.ravel(diameters)
    ]).reshape(np.shape(diameters))


def mode_surface_intensity(z, geometry: FiberGeometry, mode: ModeSpec, probe_offset=0.0,
                           n_core=1.45, n_clad=None):
    """Surface intensity (W/m^2) of ``mode`` at axial positions ``z``."""
    n_clad = WATER.refractive_index if n_clad is None else n_clad
    d = geometry.diameter_of_z(z)
    unit = _unit_surface_intensity(d, mode.wavelength, mode.polarization_angle, probe_offset,
                                   n_core, n_clad)
    return mode.power * unit


def net_axial_force(z, geometry: FiberGeometry, modes, particle: ParticleSpec, probe_offset=0.0):
    """Signed total axial force (N): sum of direction * radiation-pressure force per mode."""
    if len(modes) == 2 and modes[0].direction == modes[1].direction:
        raise ValueError("the two modes must counter-propagate")
    z = np.asarray(z, dtype=float)
    total = np.zeros_like(z)
    for m in modes:
        i_s = mode_surface_intensity(z, geometry, m, probe_offset, n_clad=particle.medium.refractive_index)
        total = total + m.direction * radiation_pressure_force(particle, i_s, m.wavelength)
    return total


def axial_potential(z_grid, geometry, modes, particle, probe_offset=0.0, normalize=False):
    """Potential U(z) = -int F dz (J) on a uniform ascending grid, minimum set to 0.

    With ``normalize`` the result is additionally divided by its maximum.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    if z_grid.size < 3:
        raise ValueError("potential grid needs at least 3 points")
    steps = np.diff(z_grid)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=0):
        raise ValueError("z_grid must be ascending and uniform")
    force = net_axial_force(z_grid, geometry, modes, particle, probe_offset)
    return potential_from_force(z_grid, force, normalize)


def potential_from_force(z_grid, force, normalize=False):
    u = -np.concatenate([[0.0], np.cumsum(0.5 * (force[1:] + force[:-1]) * np.diff(z_grid))])
    u -= u.min()
    if normalize and u.max() > 0:
        u /= u.max()
    return u


@dataclass
class TrapSolution:
    """Result of :func:`find_trap`. Fields are NaN when no trap exists."""

    ratio: float
    z0: float = np.nan
    diameter_at_trap: float = np.nan
    stiffness: float = np.nan
    axial_depth: float = np.nan
    axial_depth_kT: float = np.nan
    stable: bool = False

    def as_row(self) -> dict:
        return {
            "R": self.ratio,
            "z0_m": self.z0,
            "diameter_m": self.diameter_at_trap,
            "stiffness_N_per_m": self.stiffness,
            "depth_J": self.axial_depth,
            "depth_kBT": self.axial_depth_kT,
            "stable": self.stable,
        }


def find_trap(geometry: FiberGeometry, modes, particle: ParticleSpec, diameter_range=None,
              probe_offset=0.0, scan_step=10e-6, stiffness_step=10e-6, depth_offset=100e-6,
              depth_step=1e-6) -> TrapSolution:
    """Locate the restoring zero of the net axial force along the taper.

    The diameter window defaults to [waist, 1000 nm]. A sign change from + to
    - of the force (with increasing z) is bracketed on a ``scan_step`` grid and
    refined by Brent's method. Stiffness is -dF/dz by central difference,
    depth is the mean of U(z0 +- depth_offset) - U(z0).
    """
    ratio = modes[0].power / modes[1].power if modes[1].power > 0 else np.inf
    if any(m.power == 0 for m in modes) or len(modes) != 2:
        return TrapSolution(ratio)
    d_lo, d_hi = diameter_range or (geometry.waist_diameter, 1000e-9)
    z_lo, z_hi = geometry.z_of_diameter([d_lo, d_hi])
    n = max(int(np.ceil((z_hi - z_lo) / scan_step)), 2) + 1
    zs = np.linspace(z_lo, z_hi, n)

    def force(z):
        return net_axial_force(z, geometry, modes, particle, probe_offset)

    fs = force(zs)
    # restoring: F > 0 on the small-z side, F < 0 on the large-z side
    crossings = np.nonzero((fs[:-1] > 0) & (fs[1:] <= 0))[0]
    if crossings.size == 0:
        return TrapSolution(ratio)
    i = crossings[0]
    if fs[i + 1] == 0:
        z0 = zs[i + 1]
    else:
        z0 = optimize.brentq(lambda z: float(force(z)), zs[i], zs[i + 1], xtol=1e-12, rtol=1e-14)
    f_pm = force(np.array([z0 - stiffness_step, z0 + stiffness_step]))
    stiffness = -(f_pm[1] - f_pm[0]) / (2 * stiffness_step)

    half = int(round(depth_offset / depth_step))
    zg = z0 + depth_step * np.arange(-half, half + 1)
    u = -np.concatenate([[0.0], np.cumsum(0.5 * (force(zg)[1:] + force(zg)[:-1]) * depth_step)])
    u -= u[half]
    depth = 0.5 * (u[0] + u[-1])
    kT = k_B * particle.medium.temperature
    return TrapSolution(
        ratio, float(z0), float(geometry.diameter_of_z(z0)), float(stiffness),
        float(depth), float(depth / kT), bool(stiffness > 0),
    )


def sweep_power_ratio(ratios, geometry, particle, long_power=1e-3, short_wavelength=640e-9,
                      long_wavelength=785e-9, **kwargs) -> list[TrapSolution]:
    return [
        find_trap(geometry, two_color_modes(r, long_power, short_wavelength, long_wavelength),
                  particle, **kwargs)
        for r in ratios
    ]


def calibrate_force_scale(geometry, particle, ratios, target_mean_stiffness=3e-9, long_power=1e-3,
                          **kwargs) -> float:
    """Force scale making the mean stiffness over the trapping ``ratios``
    equal ``target_mean_stiffness`` (N/m) at ``long_power``."""
    from dataclasses import replace

    bare = replace(particle, force_scale=1.0)
    sols = sweep_power_ratio(ratios, geometry, bare, long_power, **kwargs)
    s = [x.stiffness for x in sols if x.stable]
    if not s:
        raise ValueError("no trap found for any ratio; cannot calibrate")
    return target_mean_stiffness / float(np.mean(s))


def gradient_force_y(y, diameter, mode: ModeSpec, particle: ParticleSpec, n_core=1.45, dy=1e-10):
    """Radial gradient force (N) along the +y axis at x = 0."""
    gm = solve_he11(diameter, mode, n_core, particle.medium.refractive_index)
    y = np.asarray(y, dtype=float)
    grad = (gm.intensity(0.0, y + dy) - gm.intensity(0.0, y - dy)) / (2 * dy)
    alpha = polarizability(particle, mode.wavelength)
    return 2 * np.pi * particle.medium.permittivity * alpha.real / c * grad


def radial_potential_depth(diameter, mode, particle: ParticleSpec, gap_range=(2e-6, 10e-9),
                           n_core=1.45) -> float:
    """Depth (J) of the gradient-force well along y from a distant point to
    a surface gap of ``gap_range[1]``.

    ``F_y`` is proportional to dI/dy, so the integral reduces exactly to the
    intensity difference between the two end points. A list of modes is
    accepted and summed incoherently.
    """
    modes = mode if isinstance(mode, (list, tuple)) else [mode]
    far, near = gap_range
    if far < 2e-6 or near > far:
        raise ValueError("gap_range must run from >= 2 um down to the contact gap")
    depth = 0.0
    for m in modes:
        gm = solve_he11(diameter, m, n_core, particle.medium.refractive_index)
        y_near = gm.radius + near + particle.radius
        y_far = gm.radius + far + particle.radius
        alpha = polarizability(particle, m.wavelength)
        d_int = gm.intensity(0.0, y_near) - gm.intensity(0.0, y_far)
        depth += 2 * np.pi * particle.medium.permittivity * alpha.real / c * float(d_int)
    return depth


@dataclass(frozen=True)
class RegimeReport:
    drag: float
    drag_squared: float
    four_s_m: float
    noise_amplitude: float
    is_overdamped: bool

    @property
    def ratio(self) -> float:
        return self.drag_squared / self.four_s_m if self.four_s_m > 0 else np.inf

    def as_dict(self):
        return asdict(self) | {"ratio": self.ratio}


def overdamped_classification(particle: ParticleSpec, stiffness: float) -> RegimeReport:
    """Compare the Stokes drag squared with 4 S m; overdamped means a factor > 100."""
    if stiffness < 0:
        raise ValueError("stiffness must be non-negative")
    g0 = particle.stokes_drag
    four_sm = 4 * stiffness * particle.mass
    noise = np.sqrt(2 * g0 * k_B * particle.medium.temperature)
    return RegimeReport(g0, g0**2, four_sm, noise, bool(g0**2 > 100 * four_sm))

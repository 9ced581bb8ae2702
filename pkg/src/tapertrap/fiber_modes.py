"""Fundamental HE11 mode of a step-index cylinder (silica in water).

Exact vector fields are built from the longitudinal components

    E_z = A f(r) cos(phi - phi0),    H_z = B g(r) sin(phi - phi0)

with f, g = J1(h r)/J1(h a) inside and K1(q r)/K1(q a) outside, and the
transverse components follow from Maxwell's equations for fields varying as
exp(i(beta z - omega t)). ``phi0`` is the azimuth of the quasi-linear
polarization axis; the ``polarization_angle`` of a :class:`ModeSpec` is
measured from the y axis, so ``phi0 = pi/2 + polarization_angle``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special
from scipy.constants import c, epsilon_0, mu_0

from .materials import SILICA_INDEX, WATER_INDEX

N_SCAN = 2000
_EDGE = 1e-9


class ModeSolverError(RuntimeError):
    """The HE11 characteristic equation could not be bracketed."""


@dataclass(frozen=True)
class ModeSpec:
    """A launched guided mode.

    Parameters
    ----------
    wavelength : float
        Vacuum wavelength (m), 400-1000 nm.
    power : float
        Carried power (W).
    direction : int
        +1 for propagation toward +z, -1 toward -z.
    polarization_angle : float
        Rotation of the quasi-linear polarization axis away from y (rad).
    """

    wavelength: float
    power: float = 1e-3
    direction: int = 1
    polarization_angle: float = 0.0

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("mode power must be non-negative")
        if not 400e-9 <= self.wavelength <= 1000e-9:
            raise ValueError(f"wavelength {self.wavelength!r} m outside [400, 1000] nm")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")

    def with_power(self, power: float) -> "ModeSpec":
        return ModeSpec(self.wavelength, power, self.direction, self.polarization_angle)


def _jk_terms(u, w):
    """J1'(u)/(u J1(u)) and K1'(w)/(w K1(w))."""
    jp = special.jvp(1, u) / (u * special.j1(u))
    kp = special.kvp(1, w) / (w * special.k1(w))
    return jp, kp


def characteristic(n_eff, v_number, n_core, n_clad):
    """Normalized HE11/EH1m characteristic function.

    Returns ``lhs / rhs - 1`` for

        (J + K)(n_core^2 J + n_clad^2 K) = n_eff^2 (1/u^2 + 1/w^2)^2

    which is dimensionless and O(1) across the guidance range, so its
    residual is a meaningful convergence measure.
    """
    n_eff = np.asarray(n_eff, dtype=float)
    na = np.sqrt(n_core**2 - n_clad**2)
    b = (n_eff**2 - n_clad**2) / na**2
    u = v_number * np.sqrt(1.0 - b)
    w = v_number * np.sqrt(b)
    jp, kp = _jk_terms(u, w)
    lhs = (jp + kp) * (n_core**2 * jp + n_clad**2 * kp)
    rhs = n_eff**2 * (1.0 / u**2 + 1.0 / w**2) ** 2
    return lhs / rhs - 1.0


def _solve_neff(v_number, n_core, n_clad):
    grid = np.linspace(n_clad + _EDGE, n_core - _EDGE, N_SCAN)
    with np.errstate(all="ignore"):
        vals = characteristic(grid, v_number, n_core, n_clad)
    finite = np.isfinite(vals)
    idx = np.nonzero(finite[:-1] & finite[1:] & (np.sign(vals[:-1]) != np.sign(vals[1:])))[0]
    # the fundamental mode is the largest-index genuine root; J1 poles also flip sign
    for i in idx[::-1]:
        root = optimize.brentq(
            characteristic, grid[i], grid[i + 1], args=(v_number, n_core, n_clad),
            xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500,
        )
        u = v_number * np.sqrt((n_core**2 - root**2) / (n_core**2 - n_clad**2))
        if u < special.jn_zeros(0, 1)[0]:
            return root
    raise ModeSolverError(
        f"no HE11 root bracketed for V={v_number:.4g}, n_core={n_core}, n_clad={n_clad}"
    )


@dataclass(frozen=True)
class GuidedMode:
    """Solved HE11 mode with power-normalized field evaluation.

    Use :func:`solve_he11` to construct; the field amplitude is fixed so
    that the z Poynting flux equals ``spec.power``.
    """

    spec: ModeSpec
    fiber_diameter: float
    effective_index: float
    n_core: float
    n_clad: float
    amplitude: float = field(repr=False)

    @property
    def radius(self) -> float:
        return 0.5 * self.fiber_diameter

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.spec.wavelength

    @property
    def propagation_constant(self) -> float:
        return self.k0 * self.effective_index

    @property
    def h(self) -> float:
        return self.k0 * np.sqrt(self.n_core**2 - self.effective_index**2)

    @property
    def q(self) -> float:
        """Transverse decay constant of the evanescent field (1/m)."""
        return self.k0 * np.sqrt(self.effective_index**2 - self.n_clad**2)

    @property
    def v_number(self) -> float:
        return self.k0 * self.radius * np.sqrt(self.n_core**2 - self.n_clad**2)

    def radial_profiles(self, r):
        """Radial parts (e_r, e_phi, e_z, h_r, h_phi, h_z) of the fields.

        The full component is the profile times cos(phi - phi0) for
        e_r, e_z, h_phi and sin(phi - phi0) for e_phi, h_r, h_z.
        """
        return _radial_profiles(
            np.asarray(r, dtype=float), self.radius, self.k0, self.effective_index,
            self.n_core, self.n_clad, self.amplitude,
        )

    def fields(self, x, y):
        """Complex Cartesian-cylindrical field components at points (x, y).

        Returns
        -------
        tuple of np.ndarray
            (E_r, E_phi, E_z, H_r, H_phi, H_z) in V/m and A/m.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        phi = np.arctan2(y, x) - self.phi0
        er, ep, ez, hr, hp, hz = self.radial_profiles(r)
        cs, sn = np.cos(phi), np.sin(phi)
        return er * cs, ep * sn, ez * cs, hr * sn, hp * cs, hz * sn

    @property
    def phi0(self) -> float:
        return 0.5 * np.pi + self.spec.polarization_angle

    def field_intensity(self, x, y):
        """|E|^2 in (V/m)^2."""
        er, ep, ez, *_ = self.fields(x, y)
        return np.abs(er) ** 2 + np.abs(ep) ** 2 + np.abs(ez) ** 2

    def intensity(self, x, y):
        """Time-averaged intensity (n c eps0 / 2)|E|^2 in W/m^2, using the
        local refractive index."""
        r = np.hypot(x, y)
        n = np.where(r < self.radius, self.n_core, self.n_clad)
        return 0.5 * n * c * epsilon_0 * self.field_intensity(x, y)

    def poynting_z(self, x, y):
        """Time-averaged z Poynting flux density (W/m^2)."""
        er, ep, _, hr, hp, _ = self.fields(x, y)
        return 0.5 * np.real(er * np.conj(hp) - ep * np.conj(hr))


def _radial_profiles(r, a, k0, n_eff, n_core, n_clad, amp):
    omega = c * k0
    beta = k0 * n_eff
    h = k0 * np.sqrt(n_core**2 - n_eff**2)
    q = k0 * np.sqrt(n_eff**2 - n_clad**2)
    u, w = h * a, q * a
    jp, kp = _jk_terms(u, w)
    bcoef = -amp * beta * (1 / u**2 + 1 / w**2) / (omega * mu_0 * (jp + kp))

    r = np.maximum(r, 1e-12 * a)
    inside = r < a
    f = np.empty_like(r)
    df = np.empty_like(r)
    kap2 = np.empty_like(r)
    n2 = np.empty_like(r)
    ri, ro = r[inside], r[~inside]
    f[inside] = special.j1(h * ri) / special.j1(u)
    df[inside] = h * special.jvp(1, h * ri) / special.j1(u)
    kap2[inside] = h**2
    n2[inside] = n_core**2
    f[~inside] = special.k1(q * ro) / special.k1(w)
    df[~inside] = q * special.kvp(1, q * ro) / special.k1(w)
    kap2[~inside] = -(q**2)
    n2[~inside] = n_clad**2

    # E_z = amp f cos, H_z = bcoef f sin  (same radial shape: continuity at r=a)
    ez = amp * f + 0j
    hz = bcoef * f + 0j
    pre = 1j / kap2
    er = pre * (beta * amp * df + omega * mu_0 * bcoef * f / r)
    ep = pre * (-beta * amp * f / r - omega * mu_0 * bcoef * df)
    hr = pre * (beta * bcoef * df + omega * epsilon_0 * n2 * amp * f / r)
    hp = pre * (beta * bcoef * f / r + omega * epsilon_0 * n2 * amp * df)
    return er, ep, ez, hr, hp, hz


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _panel_nodes(lo, hi, n_panels):
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * _GL_X).ravel()
    weights = (half[:, None] * _GL_W).ravel()
    return nodes, weights


def _flux_profile(r, a, k0, n_eff, n_core, n_clad):
    er, ep, _, hr, hp, _ = _radial_profiles(r, a, k0, n_eff, n_core, n_clad, 1.0)
    return np.real(er * np.conj(hp) - ep * np.conj(hr))


def _unit_power(a, k0, n_eff, n_core, n_clad):
    """Power carried by the unit-amplitude mode.

    Composite Gauss-Legendre in r inside the core and in log(r) outside,
    where the weakly guided tail extends to many radii.
    """
    q = k0 * np.sqrt(n_eff**2 - n_clad**2)
    r_in, w_in = _panel_nodes(0.0, a, 4)
    t_out, w_out = _panel_nodes(0.0, np.log1p(60.0 / (q * a)), 32)
    r_out = a * np.exp(t_out)
    p_in = np.sum(w_in * r_in * _flux_profile(r_in, a, k0, n_eff, n_core, n_clad))
    p_out = np.sum(w_out * r_out**2 * _flux_profile(r_out, a, k0, n_eff, n_core, n_clad))
    # angular integral of cos^2 or sin^2 gives pi; 1/2 from time averaging
    return 0.5 * np.pi * (p_in + p_out)


def _unit_power_quad(a, k0, n_eff, n_core, n_clad):
    """Adaptive-quadrature reference for :func:`_unit_power`."""

    def flux(r):
        return float(_flux_profile(np.atleast_1d(r), a, k0, n_eff, n_core, n_clad)[0]) * r

    q = k0 * np.sqrt(n_eff**2 - n_clad**2)
    p_in, _ = integrate.quad(flux, 0.0, a, epsabs=0, epsrel=1e-11, limit=200)
    p_out, _ = integrate.quad(flux, a, a + 60.0 / q, epsabs=0, epsrel=1e-11, limit=400)
    return 0.5 * np.pi * (p_in + p_out)


@lru_cache(maxsize=65536)
def _solve_cached(diameter, wavelength, n_core, n_clad):
    a = 0.5 * diameter
    k0 = 2 * np.pi / wavelength
    v = k0 * a * np.sqrt(n_core**2 - n_clad**2)
    n_eff = _solve_neff(v, n_core, n_clad)
    return n_eff, _unit_power(a, k0, n_eff, n_core, n_clad)


def solve_he11(diameter, spec, n_core=SILICA_INDEX, n_clad=WATER_INDEX) -> GuidedMode:
    """Solve the HE11 mode of a fiber of the given diameter (m).

    Parameters
    ----------
    diameter : float
        Fiber diameter in meters.
    spec : ModeSpec or float
        Mode specification; a bare float is read as a 1 mW, +z mode at that
        vacuum wavelength.
    n_core, n_clad : float
        Refractive indices of fiber and surrounding medium.
    """
    if not isinstance(spec, ModeSpec):
        spec = ModeSpec(float(spec))
    if not 200e-9 <= diameter <= 2000e-9:
        raise ValueError(f"diameter {diameter!r} m outside [200, 2000] nm")
    n_eff, p1 = _solve_cached(float(diameter), float(spec.wavelength), float(n_core), float(n_clad))
    amp = np.sqrt(spec.power / p1)
    return GuidedMode(spec, float(diameter), n_eff, float(n_core), float(n_clad), amp)


def surface_intensity(mode: GuidedMode, radial_offset=0.0, azimuth=0.5 * np.pi):
    """Intensity (W/m^2) just outside the fiber at ``radius + radial_offset``.

    The default azimuth is the +y "top" of the fiber.
    """
    radial_offset = np.asarray(radial_offset, dtype=float)
    if np.any(radial_offset < 0):
        raise ValueError("radial_offset must be >= 0")
    r = mode.radius + radial_offset
    return mode.intensity(r * np.cos(azimuth), r * np.sin(azimuth))


def polarization_correction(
    diameter, wavelength_1, wavelength_2, relative_angle, probe_offset=75e-9,
    n_core=SILICA_INDEX, n_clad=WATER_INDEX,
):
    """Intensity drop at the fiber top when the first mode's polarization is
    rotated by ``relative_angle`` relative to the second (equal powers).

    Returns ``[I2 + I1(rotated)] / [I2 + I1(aligned)]`` evaluated at
    (x=0, y=a+probe_offset).
    """
    if not 0 <= relative_angle <= 0.5 * np.pi + 1e-12:
        raise ValueError("relative_angle must lie in [0, pi/2]")
    y = 0.5 * diameter + probe_offset
    m2 = solve_he11(diameter, ModeSpec(wavelength_2), n_core, n_clad)
    m1 = solve_he11(diameter, ModeSpec(wavelength_1), n_core, n_clad)
    m1r = solve_he11(
        diameter, ModeSpec(wavelength_1, polarization_angle=relative_angle), n_core, n_clad
    )
    i2 = m2.intensity(0.0, y)
    return float((i2 + m1r.intensity(0.0, y)) / (i2 + m1.intensity(0.0, y)))


def export_profile_csv(mode: GuidedMode, path, extent=None, n=101):
    """Write an (x, y, |E|^2) grid for plotting."""
    extent = extent or 2.5 * mode.radius
    xs = np.linspace(-extent, extent, n)
    xx, yy = np.meshgrid(xs, xs)
    e2 = mode.field_intensity(xx, yy)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m", "E2_V2_per_m2"])
        for row in zip(xx.ravel(), yy.ravel(), e2.ravel()):
            writer.writerow([f"{v:.9e}" for v in row])

"""Optical constants of gold, silica and water.

Gold permittivity is read from a bundled Johnson & Christy tabulation and
interpolated piecewise-linearly in vacuum wavelength (real and imaginary
parts separately). Water and silica are treated as dispersionless.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

WATER_INDEX = 1.33
SILICA_INDEX = 1.45
WATER_VISCOSITY = 1.0e-3  # Pa s
ROOM_TEMPERATURE = 293.0  # K
GOLD_DENSITY = 19300.0  # kg / m^3


@dataclass(frozen=True)
class PermittivityTable:
    """Tabulated complex relative permittivity versus vacuum wavelength.

    Parameters
    ----------
    wavelengths : np.ndarray
        Vacuum wavelengths in meters, strictly increasing.
    permittivities : np.ndarray
        Complex relative permittivity at each wavelength.
    source_label : str
        Free-form description of where the numbers came from.
    """

    wavelengths: np.ndarray
    permittivities: np.ndarray
    source_label: str = ""

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        eps = np.asarray(self.permittivities, dtype=complex)
        if wl.ndim != 1 or wl.shape != eps.shape:
            raise ValueError("wavelengths and permittivities must be 1-D arrays of equal length")
        if wl.size < 2:
            raise ValueError("a permittivity table needs at least 2 entries")
        if np.any(np.diff(wl) <= 0):
            raise ValueError("table wavelengths must be strictly increasing")
        wl.setflags(write=False)
        eps.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "permittivities", eps)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.wavelengths[0]), float(self.wavelengths[-1])

    def __call__(self, wavelength):
        return permittivity_at(self, wavelength)

    @classmethod
    def constant(cls, eps: complex, span=(100e-9, 10e-6), label="") -> "PermittivityTable":
        """Two-node table that returns `eps` everywhere inside `span`."""
        return cls(np.array(span, dtype=float), np.array([eps, eps], dtype=complex), label)


def permittivity_at(table: PermittivityTable, wavelength):
    """Linearly interpolate the permittivity at a vacuum wavelength (m).

    Raises
    ------
    ValueError
        If any requested wavelength lies outside the tabulated span.
    """
    wl = np.asarray(wavelength, dtype=float)
    lo, hi = table.span
    if np.any(wl < lo) or np.any(wl > hi):
        raise ValueError(
            f"wavelength {wavelength!r} m outside table span [{lo:.4e}, {hi:.4e}] m"
        )
    re = np.interp(wl, table.wavelengths, table.permittivities.real)
    im = np.interp(wl, table.wavelengths, table.permittivities.imag)
    out = re + 1j * im
    return complex(out) if out.ndim == 0 else out


def load_permittivity_table(path, label: str | None = None) -> PermittivityTable:
    """Read a ``wavelength_nm eps_real eps_imag`` text file (``#`` comments allowed)."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns, got {data.shape[1]}")
    return PermittivityTable(
        data[:, 0] * 1e-9, data[:, 1] + 1j * data[:, 2], label or Path(str(path)).name
    )


@lru_cache(maxsize=None)
def gold() -> PermittivityTable:
    """Johnson & Christy gold, roughly 397-1088 nm."""
    ref = resources.files("tapertrap").joinpath("data/gold_johnson_christy.txt")
    with resources.as_file(ref) as path:
        return load_permittivity_table(path, "gold (Johnson & Christy 1972)")


@dataclass(frozen=True)
class MediumSpec:
    """Surrounding liquid: optical index plus the transport properties
    needed for Stokes drag and thermal noise."""

    refractive_index: float = WATER_INDEX
    viscosity: float = WATER_VISCOSITY
    temperature: float = ROOM_TEMPERATURE

    def __post_init__(self):
        if self.refractive_index <= 0:
            raise ValueError("refractive_index must be positive")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def permittivity(self) -> float:
        return self.refractive_index**2


WATER = MediumSpec()

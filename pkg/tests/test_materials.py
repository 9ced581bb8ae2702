import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tapertrap.materials import (
    WATER, MediumSpec, PermittivityTable, gold, load_permittivity_table, permittivity_at,
)

GOLD = gold()


def test_node_values_exact():
    for wl, eps in zip(GOLD.wavelengths, GOLD.permittivities):
        assert permittivity_at(GOLD, wl) == eps


def test_midpoint_is_mean():
    wl = GOLD.wavelengths
    eps = GOLD.permittivities
    for i in range(wl.size - 1):
        mid = 0.5 * (wl[i] + wl[i + 1])
        assert permittivity_at(GOLD, mid) == pytest.approx(0.5 * (eps[i] + eps[i + 1]), rel=1e-12)


def test_gold_640nm_against_tabulation():
    # tabulated n, k at 1.88/1.94 eV bracket 640 nm: Re(eps) ~ -12, Im(eps) ~ 1.2
    eps = permittivity_at(GOLD, 640e-9)
    assert eps.real < -8
    assert 0.5 < eps.imag < 3


def test_gold_sign_structure_visible_nir():
    wl = np.linspace(500e-9, 900e-9, 81)
    eps = permittivity_at(GOLD, wl)
    assert np.all(eps.real < 0) and np.all(eps.imag > 0)


def test_out_of_range_names_span():
    with pytest.raises(ValueError, match="span"):
        permittivity_at(GOLD, 300e-9)
    with pytest.raises(ValueError, match="span"):
        permittivity_at(GOLD, 1200e-9)


@given(st.floats(min_value=0.0, max_value=1.0))
def test_interpolation_bounded_by_nodes(frac):
    wl, eps = GOLD.wavelengths, GOLD.permittivities
    for i in range(wl.size - 1):
        v = permittivity_at(GOLD, wl[i] + frac * (wl[i + 1] - wl[i]))
        assert min(eps[i].real, eps[i + 1].real) - 1e-12 <= v.real <= max(eps[i].real, eps[i + 1].real) + 1e-12
        assert min(eps[i].imag, eps[i + 1].imag) - 1e-12 <= v.imag <= max(eps[i].imag, eps[i + 1].imag) + 1e-12


@given(st.floats(min_value=420e-9, max_value=1050e-9))
def test_continuity(wl):
    a = permittivity_at(GOLD, wl)
    b = permittivity_at(GOLD, wl + 1e-15)
    assert abs(a - b) < 1e-6


def test_table_validation():
    with pytest.raises(ValueError):
        PermittivityTable(np.array([1e-6]), np.array([1 + 0j]))
    with pytest.raises(ValueError):
        PermittivityTable(np.array([2e-6, 1e-6]), np.array([1 + 0j, 2 + 0j]))


def test_load_roundtrip(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("# comment\n500 -2.0 1.0\n600 -4.0 2.0\n")
    tab = load_permittivity_table(p)
    assert permittivity_at(tab, 550e-9) == pytest.approx(-3.0 + 1.5j)
    assert tab.source_label == "t.txt"


def test_constant_table():
    tab = PermittivityTable.constant(2.25 + 0j)
    assert permittivity_at(tab, 700e-9) == 2.25


def test_medium():
    assert WATER.permittivity == pytest.approx(1.33**2, rel=1e-12)
    assert WATER.permittivity == pytest.approx(1.7689, rel=1e-12)
    with pytest.raises(ValueError):
        MediumSpec(viscosity=0)
    with pytest.raises(ValueError):
        MediumSpec(temperature=-1)

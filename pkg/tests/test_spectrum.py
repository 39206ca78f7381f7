import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import lorentzian_area
from spinnoise.atomic import FieldConfig, Transition, isotope_transitions
from spinnoise.constants import get_isotope
from spinnoise.errors import ConfigError
from spinnoise.spectrum import (
    PowerSpectrum,
    Provenance,
    analytic_psd,
    apply_shifts,
    lorentzian,
    multiplet_prediction,
)

RB87 = get_isotope("rb87")
RB85 = get_isotope("rb85")
FIELD = FieldConfig(0.076, "transverse")


def _lines():
    return isotope_transitions(RB87, FIELD) + isotope_transitions(RB85, FIELD)


def test_power_spectrum_validation():
    with pytest.raises(ConfigError):
        PowerSpectrum([0.0, 1.0], [1.0], 1.0)
    with pytest.raises(ConfigError):
        PowerSpectrum([1.0, 0.0], [1.0, 1.0], 1.0)
    with pytest.raises(ConfigError):
        PowerSpectrum([0.0, 1.0], [1.0, -1.0], 1.0)
    with pytest.raises(ConfigError):
        PowerSpectrum([0.0, 1.0], [1.0, 1.0], 0.0, 10, Provenance.ESTIMATED)


def test_absolute_frequencies_through_sideband():
    psd = PowerSpectrum([0.0, 10.0], [1.0, 1.0], 1.0, meta={"reference_hz": 100.0, "sideband": -1})
    assert np.allclose(psd.absolute_frequencies, [100.0, 90.0])


def test_apply_shifts_zero_is_identity():
    lines = _lines()
    assert apply_shifts(lines, 0.0) == lines


def test_apply_shifts_moves_only_hyperfine_lines():
    lines = _lines()
    out = apply_shifts(lines, {"rb87": 150e3, "rb85": 60e3})
    for a, b in zip(lines, out):
        if a.delta_f == 1:
            expected = 150e3 if a.isotope == "rb87" else 60e3
            assert b.center_hz - a.center_hz == pytest.approx(expected, abs=1e-6)
        else:
            assert b == a


@given(s1=st.floats(-1e6, 1e6), s2=st.floats(-1e6, 1e6))
def test_apply_shifts_additive(s1, s2):
    lines = isotope_transitions(RB87, FIELD)
    twice = apply_shifts(apply_shifts(lines, s1), s2)
    once = apply_shifts(lines, s1 + s2)
    assert np.allclose([t.shift_hz for t in twice], [t.shift_hz for t in once], atol=1e-6)


def test_apply_shifts_isotope_independent():
    lines = _lines()
    out = apply_shifts(lines, {"rb85": 60e3})
    for a, b in zip(lines, out):
        if a.isotope == "rb87":
            assert a == b


def test_lorentzian_area_analytic():
    gamma = 7e3
    x = np.linspace(-2e8, 2e8, 4_000_001)
    area = np.trapezoid(0.3 * lorentzian(x, 0.0, gamma), x)
    assert area == pytest.approx(lorentzian_area(0.3), rel=1e-4)


def test_analytic_psd_peak_and_area():
    t = Transition(0, 1, 1.0, 0.2, linewidth_khz=7.0, delta_f=1)
    grid = np.linspace(0.0, 2e6, 200_001)
    psd = analytic_psd([t], grid)
    k = np.argmax(psd.values)
    assert grid[k] == pytest.approx(1e6, abs=grid[1])
    assert psd.values[k] == pytest.approx(0.2 / 7e3, rel=1e-3)
    assert psd.total_power() == pytest.approx(np.pi * 0.2, rel=5e-3)
    assert psd.provenance is Provenance.ANALYTIC


def test_analytic_psd_image_folds_near_zero():
    t = Transition(0, 1, 1e-3, 1.0, linewidth_khz=7.0, delta_f=1)  # 1 kHz carrier
    grid = np.linspace(0.0, 50e3, 501)
    psd = analytic_psd([t], grid)
    direct = lorentzian(grid, 1e3, 7e3) + lorentzian(grid, -1e3, 7e3)
    assert np.allclose(psd.values, direct)


def test_analytic_psd_floor_and_origin():
    t = Transition(0, 1, 6834.68, 0.1, delta_f=1, isotope="rb87")
    grid = np.linspace(0.0, 4e5, 401)
    psd = analytic_psd([t], grid, origin=6834.68e6 - 2e5, floor=1e-7)
    assert grid[np.argmax(psd.values)] == pytest.approx(2e5)
    assert psd.values.min() >= 1e-7


@pytest.mark.parametrize("name,spacing", [("rb87", 106e3), ("rb85", 71e3)])
def test_multiplet_spacing_transverse(name, spacing):
    table = multiplet_prediction(get_isotope(name), FIELD)
    d = table.adjacent_spacing()
    assert np.all(np.abs(d / spacing - 1) < 0.01)
    for dm in (-1, 1):
        assert table.class_spacing(dm) == pytest.approx(spacing, rel=0.01)


@pytest.mark.parametrize("name,n_peaks", [("rb87", 4), ("rb85", 6)])
def test_transverse_multiplet_peak_count(name, n_peaks):
    table = multiplet_prediction(get_isotope(name), FIELD)
    assert len(table.entries) == n_peaks
    centers = table.centers - get_isotope(name).hyperfine_splitting * 1e6
    assert np.allclose(centers, -centers[::-1], atol=500.0)  # symmetric about the splitting


@pytest.mark.parametrize("name,n_peaks", [("rb87", 3), ("rb85", 5)])
def test_longitudinal_multiplet(name, n_peaks):
    iso = get_isotope(name)
    table = multiplet_prediction(iso, FieldConfig(0.076, "longitudinal"))
    assert len(table.entries) == n_peaks
    assert all(c == ((1, 0),) for c in (e.classes for e in table.entries))
    assert np.min(np.abs(table.centers - iso.hyperfine_splitting * 1e6)) < 100.0


def test_multiplet_shift_moves_every_peak():
    a = multiplet_prediction(RB87, FIELD)
    b = multiplet_prediction(RB87, FIELD, shift=150e3)
    assert np.allclose(b.centers - a.centers, 150e3, atol=1e-6)


def test_zeeman_lines_unmoved_by_shift():
    lines = isotope_transitions(RB87, FIELD)
    out = apply_shifts(lines, 150e3)
    zeeman = [(a, b) for a, b in zip(lines, out) if a.delta_f == 0]
    assert zeeman and all(a.center_hz == b.center_hz for a, b in zeeman)


def test_class_spacing_missing_class():
    table = multiplet_prediction(RB87, FieldConfig(0.076, "longitudinal"))
    with pytest.raises(KeyError):
        table.class_spacing(1)

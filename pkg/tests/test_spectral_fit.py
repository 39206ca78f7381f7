import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ols
from spinnoise.atomic import FieldConfig, Transition, isotope_transitions
from spinnoise.collision import ReferenceConditions
from spinnoise.constants import get_isotope
from spinnoise.errors import AmbiguousBranchError, ConfigError, DegenerateFitError, RankDeficiencyError
from spinnoise.spectral_fit import (
    PeakGuess,
    ShiftDataset,
    ShiftMeasurement,
    disambiguate_two_references,
    estimate_floor,
    extract_shift,
    find_peaks,
    fit_multiplet,
    multiplet_shift,
    ratio_report,
    regress_beta_delta,
    regress_by_isotope,
    synthetic_dataset,
    window_second_moment,
)
from spinnoise.spectrum import (
    PowerSpectrum,
    Provenance,
    analytic_psd,
    apply_shifts,
    lorentzian,
    multiplet_prediction,
)

RB87 = get_isotope("rb87")
FIELD = FieldConfig(0.076, "transverse")


def _two_lines(c1=1.0e5, c2=2.2e5, w1=0.3, w2=0.1, gamma_khz=7.0):
    return [Transition(0, 1, c1 / 1e6, w1, gamma_khz, delta_f=1),
            Transition(0, 1, c2 / 1e6, w2, gamma_khz, delta_f=1)]


def _analytic(lines, floor=1e-6, lo=0.0, hi=5e5, n=2001):
    grid = np.linspace(lo, hi, n)
    return analytic_psd(lines, grid, floor=floor)


def _bare(centers, lo, hi, n=2001, floor=1e-6):
    """Two Lorentzians without the zero-frequency image, so translation is exact."""
    grid = np.linspace(lo, hi, n)
    vals = floor + 0.3 * lorentzian(grid, centers[0], 7e3) + 0.1 * lorentzian(grid, centers[1], 7e3)
    return PowerSpectrum(grid, vals, grid[1] - grid[0])


# --- peak finding and floor ----------------------------------------------------

def test_find_peaks_two_lines():
    psd = _analytic(_two_lines())
    g = find_peaks(psd, 3.0, floor=1e-6)
    assert [round(p.center, -3) for p in g] == [1.0e5, 2.2e5]
    assert g[0].height > g[1].height
    assert all(p.width_guess == pytest.approx(7e3, rel=0.1) for p in g)


def test_find_peaks_respects_threshold_and_band():
    psd = _analytic(_two_lines(), floor=1e-6)
    assert len(find_peaks(psd, 3.0, band=(1.5e5, 5e5), floor=1e-6)) == 1
    assert find_peaks(psd, 1e12, floor=1e-6) == []


def test_estimate_floor_median():
    psd = _analytic(_two_lines(w1=1e-4, w2=1e-4), floor=2e-6)
    assert estimate_floor(psd) == pytest.approx(2e-6, rel=0.05)


def test_find_peaks_on_multiplet():
    lines = [t for t in isotope_transitions(RB87, FIELD) if t.delta_f == 1]
    ref = RB87.hyperfine_splitting * 1e6 - 2.5e5
    grid = np.linspace(0, 5e5, 2049)
    psd = analytic_psd(lines, grid, origin=ref, floor=1e-6)
    assert len(find_peaks(psd, 3.0)) == 4


# --- multiplet fit ------------------------------------------------------------------

def test_fit_recovers_noiseless_parameters():
    psd = _analytic(_two_lines(), floor=1e-6)
    guesses = [PeakGuess(1.01e5, 4e-5, 6e3), PeakGuess(2.19e5, 1.5e-5, 8e3)]
    fit = fit_multiplet(psd, guesses)
    assert fit.converged
    c1, c2 = fit.peaks
    assert c1.center == pytest.approx(1.0e5, abs=1e-3) and c2.center == pytest.approx(2.2e5, abs=1e-3)
    assert c1.width == pytest.approx(7e3, rel=1e-6)
    assert c1.area == pytest.approx(np.pi * 0.3, rel=1e-6)
    assert c2.area == pytest.approx(np.pi * 0.1, rel=1e-6)
    assert fit.floor == pytest.approx(1e-6, rel=1e-6)
    assert fit.covariance.shape == (7, 7)


@settings(max_examples=20)
@given(delta=st.floats(-4e4, 4e4))
def test_fit_location_equivariance(delta):
    base = _bare((1e5, 2.2e5), 0.0, 5e5)
    moved = _bare((1e5 + delta, 2.2e5 + delta), delta, 5e5 + delta)
    g = [PeakGuess(1e5, 4e-5, 7e3), PeakGuess(2.2e5, 1.4e-5, 7e3)]
    gm = [PeakGuess(p.center + delta, p.height, p.width_guess) for p in g]
    a = fit_multiplet(base, g, image=False)
    b = fit_multiplet(moved, gm, image=False)
    assert np.allclose(b.centers - a.centers, delta, atol=1e-3)
    assert np.allclose([p.width for p in a.peaks], [p.width for p in b.peaks], rtol=1e-6)


@settings(max_examples=20)
@given(scale=st.floats(1e-6, 1e6))
def test_fit_amplitude_scale_invariance(scale):
    psd = _analytic(_two_lines())
    scaled = PowerSpectrum(psd.frequencies, psd.values * scale, psd.resolution_bandwidth)
    g = [PeakGuess(1e5, 4e-5, 7e3), PeakGuess(2.2e5, 1.4e-5, 7e3)]
    gs = [PeakGuess(p.center, p.height * scale, p.width_guess) for p in g]
    a, b = fit_multiplet(psd, g), fit_multiplet(scaled, gs)
    assert np.allclose(a.centers, b.centers, atol=1e-3)
    assert np.allclose([p.area * scale for p in a.peaks], [p.area for p in b.peaks], rtol=1e-6)
    assert b.floor == pytest.approx(a.floor * scale, rel=1e-6)


def test_fit_rejects_unresolvable_guesses():
    psd = _analytic(_two_lines())
    with pytest.raises(DegenerateFitError):
        fit_multiplet(psd, [PeakGuess(1e5, 1.0, 7e3), PeakGuess(1e5 + 10.0, 1.0, 7e3)])


def test_fit_needs_enough_bins_and_guesses():
    psd = _analytic(_two_lines(), n=21)
    with pytest.raises(ConfigError):
        fit_multiplet(psd, [PeakGuess(1e5, 1.0, 7e3), PeakGuess(2.2e5, 1.0, 7e3)])
    with pytest.raises(ConfigError):
        fit_multiplet(psd, [])


def test_window_second_moment_hann():
    psd = PowerSpectrum([0.0, 1.0], [1.0, 1.0], 1.5, 10, Provenance.ESTIMATED,
                        {"window": "hann", "segment_length": 2048, "sample_rate": 2e6})
    assert window_second_moment(psd) == pytest.approx((2e6 / 2048) ** 2 / 3, rel=1e-3)
    psd.meta["window"] = "rectangular"
    assert window_second_moment(psd) == 0.0


# --- sign branch and shifts ----------------------------------------------------------

def test_extract_shift_picks_single_branch():
    m = extract_shift(1.5e5, 1e9, 1e9 + 1e5, prior_window=1e5, sigma_hz=10.0, isotope="rb87")
    assert m.shift_hz == pytest.approx(5e4) and m.sideband == 1
    m = extract_shift(1.5e5, 1e9, 1e9 - 1e5, prior_window=1e5)
    assert m.shift_hz == pytest.approx(-5e4) and m.sideband == -1


def test_extract_shift_ambiguous_and_restricted():
    with pytest.raises(AmbiguousBranchError):
        extract_shift(1.5e5, 1e9, 1e9, prior_window=5e6)
    with pytest.raises(AmbiguousBranchError):
        extract_shift(1.5e5, 1e9, 2e9, prior_window=1e5)
    m = extract_shift(1.5e5, 1e9, 1e9, prior_window=5e6, sideband=-1)
    assert m.absolute_hz == pytest.approx(1e9 - 1.5e5)
    with pytest.raises(ConfigError):
        extract_shift(1.5e5, 1e9, 1e9, sideband=2)


def test_two_reference_disambiguation():
    nu = 6834.83e6
    ra, rb = nu - 2e5, nu + 1.3e5
    absolute, sa, sb = disambiguate_two_references(abs(nu - ra), ra, abs(nu - rb), rb, 10.0)
    assert absolute == pytest.approx(nu) and (sa, sb) == (1, -1)
    with pytest.raises(AmbiguousBranchError):  # one reference used twice cannot pick a side
        disambiguate_two_references(1e5, nu, 1e5, nu, 10.0)


def test_shift_measurement_needs_positive_sigma():
    with pytest.raises(ConfigError):
        ShiftMeasurement("rb87", 337.0, 250.0, 1.0, 0.0)


def _multiplet_fit(shift, ref_offset):
    lines = apply_shifts([t for t in isotope_transitions(RB87, FIELD) if t.delta_f == 1], shift)
    ref = RB87.hyperfine_splitting * 1e6 + ref_offset
    grid = np.linspace(0, 7e5, 5735)
    psd = analytic_psd(lines, grid, origin=ref, floor=1e-6)
    psd.meta.update(reference_hz=ref, lowpass_cutoff_hz=7e5)
    fit = fit_multiplet(psd, find_peaks(psd, 3.0))
    return fit, ref


@pytest.mark.parametrize("shift", [0.0, 60e3, 150e3])
def test_multiplet_shift_recovers_injected_shift(shift):
    fit, ref = _multiplet_fit(shift, -2.5e5)
    theory = multiplet_prediction(RB87, FIELD).centers
    m = multiplet_shift(fit, theory, ref, prior_window=2e5, isotope="rb87")
    assert m.shift_hz == pytest.approx(shift, abs=1.0)
    assert m.sideband == 1 and m.sigma_hz > 0


def test_multiplet_shift_default_prior_is_ambiguous():
    """A symmetric multiplet seen through one reference fits either sideband."""
    fit, ref = _multiplet_fit(150e3, -2.5e5)
    theory = multiplet_prediction(RB87, FIELD).centers
    with pytest.raises(AmbiguousBranchError):
        multiplet_shift(fit, theory, ref)


def test_multiplet_shift_too_many_peaks():
    fit, ref = _multiplet_fit(0.0, -2.5e5)
    with pytest.raises(ConfigError):
        multiplet_shift(fit, fit.centers[:2] + ref, ref)


# --- datasets -----------------------------------------------------------------------------

def _dataset(noise=0.0, seed=0, iso="rb87", beta=559.0, delta=0.57):
    t = [317, 327, 337, 347, 357, 337, 337, 337]
    p = [250, 250, 250, 250, 250, 50, 150, 400]
    return synthetic_dataset(iso, beta, delta, t, p, ReferenceConditions(), noise,
                             np.random.default_rng(seed))


def test_dataset_csv_roundtrip_byte_identical(tmp_path):
    ds = _dataset(0.01, 1)
    text = ds.to_csv(tmp_path / "a.csv")
    back = ShiftDataset.from_csv(tmp_path / "a.csv")
    assert back.to_csv() == text
    assert [m.shift_hz for m in back.measurements] == [m.shift_hz for m in ds.measurements]


def test_dataset_validation(tmp_path):
    m = ShiftMeasurement("rb87", 337.0, 250.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        ShiftDataset([m, m])
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        ShiftDataset.from_csv(tmp_path / "bad.csv")
    (tmp_path / "short.csv").write_text("isotope,temperature_k,pressure_torr,shift_hz,sigma_hz\nrb87,1\n")
    with pytest.raises(ConfigError):
        ShiftDataset.from_csv(tmp_path / "short.csv")


def test_regression_exact_data():
    fit = regress_beta_delta(_dataset())
    assert fit.beta == pytest.approx(559.0, rel=1e-9)
    assert fit.delta == pytest.approx(0.57, rel=1e-6)
    assert fit.chi2 < 1e-6 and fit.dof == 6 and fit.n_points == 8


@settings(max_examples=30)
@given(seed=st.integers(0, 10_000), noise=st.floats(1e-4, 0.05))
def test_regression_reduces_to_weighted_ols(seed, noise):
    ds = _dataset(noise, seed)
    fit = regress_beta_delta(ds)
    t, p, s, e = ds.arrays()
    x = np.column_stack([np.ones_like(t), t - 337.0])
    coef, cov = ols(x, s / p, (p / e) ** 2)
    assert fit.beta == pytest.approx(coef[0], rel=1e-9)
    assert fit.delta == pytest.approx(coef[1], rel=1e-6, abs=1e-12)
    assert np.allclose(fit.covariance, cov, rtol=1e-8)


def test_regression_rank_deficiency():
    ref = ReferenceConditions()
    one_t = synthetic_dataset("rb87", 559.0, 0.57, [337] * 3, [50, 150, 250], ref)
    with pytest.raises(RankDeficiencyError):
        regress_beta_delta(one_t)
    one_p = synthetic_dataset("rb87", 559.0, 0.57, [320, 337, 350], [250] * 3, ref)
    with pytest.raises(RankDeficiencyError):
        regress_beta_delta(one_p)


def test_regression_mixed_isotopes():
    ds = ShiftDataset(_dataset().measurements + _dataset(iso="rb85", beta=249.0, delta=0.25).measurements)
    with pytest.raises(ConfigError):
        regress_beta_delta(ds)
    fits = regress_by_isotope(ds)
    assert fits["rb85"].beta == pytest.approx(249.0)
    rr = ratio_report(fits)
    assert rr["beta_ratio"] == pytest.approx(559.0 / 249.0)
    assert rr["delta_ratio"] == pytest.approx(0.57 / 0.25, rel=1e-5)
    assert rr["hyperfine_ratio"] == pytest.approx(6834.68 / 3035.73)


@pytest.mark.parametrize("seed", range(3))
def test_regression_error_bars_consistent(seed):
    """Normalized residuals of a correctly weighted fit have unit variance on average."""
    t = np.repeat([317, 327, 337, 347, 357], 6)
    p = np.tile([50, 100, 150, 250, 300, 400], 5)
    ds = synthetic_dataset("rb87", 559.0, 0.57, t, p, ReferenceConditions(), 0.01,
                           np.random.default_rng(seed))
    fit = regress_beta_delta(ds)
    assert 0.4 < fit.reduced_chi2 < 1.8

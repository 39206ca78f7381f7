"""Peak finding, Lorentzian multiplet fits, shift extraction and (beta, delta) regression."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .collision import BetaDelta, ReferenceConditions
from .constants import hyperfine_ratio
from .errors import AmbiguousBranchError, ConfigError, DegenerateFitError, RankDeficiencyError

DEFAULT_PRIOR_WINDOW = 5e6  # Hz
GRADIENT_TOL = 1e-6
DATASET_COLUMNS = ("isotope", "temperature_k", "pressure_torr", "shift_hz", "sigma_hz")


# ---------------------------------------------------------------------------
# peak finding

@dataclass(frozen=True)
class PeakGuess:
    center: float  # Hz
    height: float  # PSD units above the floor
    width_guess: float  # half width at half maximum, Hz


def _band_mask(psd, band):
    f = psd.frequencies
    if band is None:
        hi = psd.meta.get("lowpass_cutoff_hz", np.inf)
        band = (0.0, hi) if psd.meta.get("reference_hz") is not None else (-np.inf, np.inf)
    lo, hi = band
    return (f > lo) & (f < hi)


def estimate_floor(psd, band=None) -> float:
    """Median PSD level inside the band, a robust floor estimate when lines are sparse."""
    mask = _band_mask(psd, band)
    return float(np.median(psd.values[mask])) if np.any(mask) else 0.0


def find_peaks(psd, snr_threshold: float = 3.0, band=None, floor: float | None = None) -> list:
    """Local maxima rising above ``floor * snr_threshold``, merged within one RBW.

    For estimated spectra a maximum must also stand out from the bin noise
    (five times the relative scatter expected from the number of averages).
    """
    mask = _band_mask(psd, band)
    idx = np.flatnonzero(mask)
    if len(idx) < 3:
        return []
    f, v = psd.frequencies[idx], psd.values[idx]
    base = estimate_floor(psd, band) if floor is None else float(floor)
    threshold = base * snr_threshold
    peaks, props = signal.find_peaks(v, prominence=0)
    if len(peaks) == 0:
        return []
    keep = v[peaks] > threshold
    if psd.averages > 0:
        keep &= props["prominences"] > 5 * v[peaks] / np.sqrt(psd.averages)
    else:
        keep &= props["prominences"] > 1e-9 * v.max()
    peaks = peaks[keep]
    if len(peaks) == 0:
        return []
    widths = signal.peak_widths(v, peaks, rel_height=0.5)[0]
    step = psd.bin_width
    guesses = [PeakGuess(float(f[p]), float(v[p] - base), max(0.5 * w * step, step))
               for p, w in zip(peaks, widths)]
    rbw = max(psd.resolution_bandwidth, step)
    merged = []
    for g in sorted(guesses, key=lambda g: g.center):
        if merged and g.center - merged[-1].center <= rbw:
            if g.height > merged[-1].height:
                merged[-1] = g
        else:
            merged.append(g)
    return merged


# ---------------------------------------------------------------------------
# multiplet fitting

@dataclass(frozen=True)
class FittedPeak:
    center: float
    width: float  # HWHM, Hz, window-broadening corrected
    area: float
    center_err: float
    width_err: float
    area_err: float
    raw_width: float  # HWHM as fitted, before the window correction


@dataclass
class MultipletFit:
    peaks: list
    floor: float
    floor_err: float
    covariance: np.ndarray  # over (c1, w1, a1, ..., floor), physical units
    residual_norm: float
    reduced_chi2: float
    dof: int
    converged: bool
    gradient_norm: float
    nfev: int
    message: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.peaks])

    @property
    def center_errors(self) -> np.ndarray:
        return np.array([p.center_err for p in self.peaks])


def window_second_moment(psd) -> float:
    """Second moment (Hz^2) of the spectral window kernel, 0 if unknown or unbounded.

    For a Hann window it is (fs/N)^2 / 3; it widens a fitted Lorentzian by
    about m2 / gamma.
    """
    if psd.averages <= 0:
        return 0.0
    name = psd.meta.get("window")
    n = psd.meta.get("segment_length")
    fs = psd.meta.get("sample_rate")
    if name != "hann" or not n or not fs:
        return 0.0
    w = signal.get_window("hann", int(n))
    dw = np.diff(np.append(w, w[0]))  # periodic window: derivative by first difference
    return float(np.sum(dw ** 2) / np.sum(w ** 2) / (2 * np.pi) ** 2 * fs ** 2)


def _model(params, f, n, image):
    out = np.full_like(f, params[-1])
    for k in range(n):
        c, g, a = params[3 * k:3 * k + 3]
        out += (a / np.pi) * g / ((f - c) ** 2 + g ** 2)
        if image:
            out += (a / np.pi) * g / ((f + c) ** 2 + g ** 2)
    return out


def fit_multiplet(psd, guesses, band=None, image: bool | None = None, max_nfev: int = 2000,
                  correct_window: bool = True) -> MultipletFit:
    """Least-squares fit of a Lorentzian sum plus constant floor.

    Each peak has its own center, half width and area; the floor is shared.
    Residuals are weighted by the expected bin scatter psd / sqrt(averages),
    evaluated on the model after a first pass. Uncertainties come from the
    covariance scaled by the reduced chi-square.

    Raises
    ------
    DegenerateFitError
        If two guesses sit closer than one resolution bandwidth, or the final
        Jacobian is rank deficient.
    """
    guesses = sorted(guesses, key=lambda g: g.center)
    if not guesses:
        raise ConfigError("fit_multiplet needs at least one peak guess")
    rbw = max(psd.resolution_bandwidth, psd.bin_width)
    for a, b in zip(guesses, guesses[1:]):
        if b.center - a.center < rbw:
            raise DegenerateFitError(
                f"peaks at {a.center:.6g} and {b.center:.6g} Hz are closer than the "
                f"resolution bandwidth {rbw:.6g} Hz and cannot be fitted independently"
            )
    mask = _band_mask(psd, band)
    f, y = psd.frequencies[mask], psd.values[mask]
    n = len(guesses)
    n_par = 3 * n + 1
    if len(f) < 5 * n_par:
        raise ConfigError(f"{len(f)} bins is fewer than 5x the {n_par} fit parameters")
    if image is None:
        image = psd.meta.get("reference_hz") is not None or psd.provenance.value == "analytic"

    # normalized coordinates: frequency in units of ``fs``, power in units of ``ps``
    fs = max(g.width_guess for g in guesses)
    f0 = guesses[0].center
    ps = float(np.max(y)) or 1.0
    x = (f - f0) / fs
    base = max(float(np.median(y)), 0.0)
    p0 = []
    for g in guesses:
        area = np.pi * max(g.height, 1e-12 * ps) * g.width_guess
        p0 += [(g.center - f0) / fs, g.width_guess / fs, area / (ps * fs)]
    p0.append(base / ps)
    lo = [-np.inf, 1e-9, 0.0] * n + [0.0]
    hi = [np.inf, np.inf, np.inf] * n + [np.inf]
    p0 = np.clip(p0, np.array(lo) + 1e-12, hi)
    # the folded image lives at -c; in normalized units that is -(c + f0/fs)
    shift = f0 / fs

    def model(p):
        q = np.array(p, dtype=float)
        q[0:3 * n:3] += shift
        return _model(q, x + shift, n, image)

    yn = y / ps
    rel_scatter = 1.0 / np.sqrt(psd.averages) if psd.averages > 0 else 1.0
    sigma = np.maximum(yn, 1e-12) * rel_scatter
    res = None
    for _ in range(2):
        def resid(p):
            return (model(p) - yn) / sigma
        res = optimize.least_squares(resid, p0, bounds=(lo, hi), method="trf", x_scale="jac",
                                     xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=max_nfev)
        p0 = res.x
        sigma = np.maximum(model(res.x), 1e-12 * max(yn.max(), 1e-300)) * rel_scatter

    j = res.jac
    dof = len(f) - n_par
    chi2 = float(np.sum(res.fun ** 2))
    red = chi2 / dof if dof > 0 else float("nan")
    sv = np.linalg.svd(j, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-10:
        raise DegenerateFitError("degenerate Jacobian: the peaks are not separately identifiable")
    cov_n = np.linalg.pinv(j.T @ j) * (red if np.isfinite(red) else 1.0)
    scale = np.array([fs, fs, ps * fs] * n + [ps])
    cov = cov_n * np.outer(scale, scale)
    err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    m2 = window_second_moment(psd) if correct_window else 0.0
    peaks = []
    for k in range(n):
        c = res.x[3 * k] * fs + f0
        g = res.x[3 * k + 1] * fs
        a = res.x[3 * k + 2] * ps * fs
        g_corr = g - m2 / g if m2 and g * g > 2 * m2 else g
        peaks.append(FittedPeak(c, g_corr, a, err[3 * k], err[3 * k + 1], err[3 * k + 2], g))
    # scale-free stationarity measure: cosine between the residual and each Jacobian column
    rnorm = float(np.linalg.norm(res.fun))
    cols = np.linalg.norm(j, axis=0)
    denom = np.maximum(cols * max(rnorm, 1e-9 * np.sqrt(len(res.fun))), 1e-300)
    cosines = np.abs(j.T @ res.fun) / denom
    cosines[res.active_mask != 0] = 0.0  # a parameter held at its bound may carry gradient
    grad = float(np.max(cosines))
    converged = bool(res.status > 0) and grad <= GRADIENT_TOL
    return MultipletFit(peaks, res.x[-1] * ps, err[-1], cov, float(np.sqrt(chi2)), red, dof,
                        converged, grad, int(res.nfev), res.message, dict(psd.meta))


# ---------------------------------------------------------------------------
# shift extraction

@dataclass(frozen=True)
class ShiftMeasurement:
    isotope: str
    temperature_k: float
    pressure_torr: float
    shift_hz: float
    sigma_hz: float
    absolute_hz: float = float("nan")
    sideband: int = 0

    def __post_init__(self):
        if not self.sigma_hz > 0:
            raise ConfigError(f"shift uncertainty must be positive, got {self.sigma_hz}")


def _branches(nu_rel, nu_ref, sideband):
    if sideband is not None:
        if sideband not in (1, -1):
            raise ConfigError("sideband must be +1 or -1")
        return [sideband]
    return [1] if nu_rel == 0 else [1, -1]


def extract_shift(nu_rel: float, nu_ref: float, nu_theory: float,
                  prior_window: float = DEFAULT_PRIOR_WINDOW, sigma_hz: float = 1.0,
                  isotope: str = "", temperature_k: float = float("nan"),
                  pressure_torr: float = float("nan"), sideband: int | None = None) -> ShiftMeasurement:
    """Reconstruct nu = nu_ref +/- nu_rel and return its offset from theory.

    The branch is the one landing within ``prior_window`` of ``nu_theory``.
    Passing ``sideband`` restricts the choice to that branch.
    """
    inside = []
    for s in _branches(nu_rel, nu_ref, sideband):
        absolute = nu_ref + s * nu_rel
        if abs(absolute - nu_theory) < prior_window:
            inside.append((s, absolute))
    if len(inside) != 1:
        what = "both sidebands" if inside else "neither sideband"
        raise AmbiguousBranchError(
            f"{what} of nu_ref = {nu_ref:.9g} Hz with nu_rel = {nu_rel:.6g} Hz lie within "
            f"{prior_window:.3g} Hz of theory {nu_theory:.9g} Hz; narrow the prior or repeat "
            "with a second reference and use disambiguate_two_references"
        )
    s, absolute = inside[0]
    return ShiftMeasurement(isotope, temperature_k, pressure_torr, absolute - nu_theory,
                            sigma_hz, absolute, s)


def disambiguate_two_references(nu_rel_a: float, nu_ref_a: float, nu_rel_b: float,
                                nu_ref_b: float, tolerance: float) -> tuple[float, int, int]:
    """Absolute frequency seen through two references (the branch pair that agrees).

    Returns ``(absolute_hz, sideband_a, sideband_b)``.
    """
    hits = []
    for sa in (1, -1):
        for sb in (1, -1):
            va, vb = nu_ref_a + sa * nu_rel_a, nu_ref_b + sb * nu_rel_b
            if abs(va - vb) <= tolerance:
                hits.append((0.5 * (va + vb), sa, sb))
    uniq = {round(h[0] / max(tolerance, 1e-9)): h for h in hits}
    if len(uniq) != 1:
        raise AmbiguousBranchError(
            f"{len(uniq)} consistent branch pairs for references {nu_ref_a:.9g} and {nu_ref_b:.9g} Hz; "
            "choose a second reference offset that is not symmetric about the line"
        )
    return next(iter(uniq.values()))


def _align(absolute, err, theory, tolerance):
    """Best rigid alignment of sorted peaks onto a contiguous run of theory lines."""
    order = np.argsort(absolute)
    a, e = absolute[order], err[order]
    best = None
    for k in range(len(theory) - len(a) + 1):
        off = a - theory[k:k + len(a)]
        w = 1.0 / e ** 2
        mean = float(np.sum(w * off) / np.sum(w))
        spread = float(np.max(np.abs(off - mean)))
        if spread <= tolerance and (best is None or spread < best[1]):
            best = (mean, spread, off)
    return best


def multiplet_shift(fit: MultipletFit, theory_centers, nu_ref: float,
                    prior_window: float = DEFAULT_PRIOR_WINDOW, sideband: int | None = None,
                    isotope: str = "", temperature_k: float = float("nan"),
                    pressure_torr: float = float("nan"),
                    pattern_tolerance: float | None = None) -> ShiftMeasurement:
    """Common shift of a fitted multiplet against its predicted (unshifted) centers.

    For each sign branch the reconstructed peaks are aligned as a rigid
    pattern onto consecutive theory lines. A branch is admissible when the
    pattern fits (every peak within ``pattern_tolerance`` of the common
    offset) and the offset lies inside the prior window. The shift is the
    inverse-variance mean of the per-peak offsets.
    """
    theory = np.sort(np.asarray(theory_centers, dtype=float))
    if len(theory) == 0 or not fit.peaks:
        raise ConfigError("need fitted peaks and theory centers")
    if len(fit.peaks) > len(theory):
        raise ConfigError(f"{len(fit.peaks)} fitted peaks but only {len(theory)} predicted lines")
    rel = fit.centers
    err = np.maximum(fit.center_errors, 1e-12)
    if pattern_tolerance is None:
        spacing = float(np.min(np.diff(theory))) if len(theory) > 1 else np.inf
        pattern_tolerance = max(10 * float(err.max()), min(0.1 * spacing, prior_window))
    admissible = []
    for s in ([sideband] if sideband is not None else [1, -1]):
        absolute = nu_ref + s * rel
        hit = _align(absolute, err, theory, pattern_tolerance)
        if hit is not None and abs(hit[0]) < prior_window:
            admissible.append((s, absolute, hit[0]))
    if len(admissible) != 1:
        what = "both sidebands" if admissible else "neither sideband"
        raise AmbiguousBranchError(
            f"{what} of nu_ref = {nu_ref:.9g} Hz map the multiplet within {prior_window:.3g} Hz "
            "of theory; narrow the prior or add a second reference"
        )
    s, absolute, shift = admissible[0]
    w = 1.0 / err ** 2
    sigma = float(np.sqrt(1.0 / np.sum(w)))
    return ShiftMeasurement(isotope, temperature_k, pressure_torr, shift, sigma,
                            float(np.sum(w * absolute) / np.sum(w)), s)


# ---------------------------------------------------------------------------
# datasets

@dataclass
class ShiftDataset:
    measurements: list
    reference: ReferenceConditions = field(default_factory=ReferenceConditions)

    def __post_init__(self):
        seen = set()
        for m in self.measurements:
            key = (m.isotope, float(m.temperature_k), float(m.pressure_torr))
            if key in seen:
                raise ConfigError(f"duplicate (T, P) point {key}")
            seen.add(key)

    def __len__(self):
        return len(self.measurements)

    def isotopes(self) -> list[str]:
        return sorted({m.isotope for m in self.measurements})

    def select(self, isotope: str) -> "ShiftDataset":
        return ShiftDataset([m for m in self.measurements if m.isotope == isotope], self.reference)

    def arrays(self):
        t = np.array([m.temperature_k for m in self.measurements], dtype=float)
        p = np.array([m.pressure_torr for m in self.measurements], dtype=float)
        s = np.array([m.shift_hz for m in self.measurements], dtype=float)
        e = np.array([m.sigma_hz for m in self.measurements], dtype=float)
        return t, p, s, e

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for m in self.measurements:
            w.writerow([m.isotope, repr(float(m.temperature_k)), repr(float(m.pressure_torr)),
                        repr(float(m.shift_hz)), repr(float(m.sigma_hz))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, reference: ReferenceConditions | None = None) -> "ShiftDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(c.strip() for c in rows[0]) != DATASET_COLUMNS:
            raise ConfigError(f"{path}: header must be {','.join(DATASET_COLUMNS)}")
        out = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(DATASET_COLUMNS):
                raise ConfigError(f"{path}:{lineno}: expected {len(DATASET_COLUMNS)} columns")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
            out.append(ShiftMeasurement(row[0].strip(), *vals))
        return cls(out, reference or ReferenceConditions())


# ---------------------------------------------------------------------------
# regression

@dataclass
class RegressionResult:
    coefficients: BetaDelta
    covariance: np.ndarray
    residuals: np.ndarray  # normalized (data - model) / sigma
    chi2: float
    dof: int
    isotope: str = ""
    n_points: int = 0

    @property
    def beta(self) -> float:
        return self.coefficients.beta

    @property
    def delta(self) -> float:
        return self.coefficients.delta

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


def regress_beta_delta(dataset: ShiftDataset, isotope: str | None = None) -> RegressionResult:
    """Weighted least squares of shift / P against [1, T - T0].

    Standard errors come from the stated uncertainties (not rescaled); the
    reduced chi-square is reported alongside for a goodness-of-fit check.
    """
    ds = dataset.select(isotope) if isotope is not None else dataset
    if isotope is None and len(ds.isotopes()) > 1:
        raise ConfigError("dataset mixes isotopes; pass isotope=")
    t, p, s, e = ds.arrays()
    if len(np.unique(t)) < 2:
        raise RankDeficiencyError("all points share one temperature: delta is not identifiable",
                                  ["delta"], ["add points at a second temperature"])
    if len(np.unique(p)) < 2:
        raise RankDeficiencyError("all points share one pressure: linearity in P is untested",
                                  ["beta"], ["add points at a second pressure"])
    if np.any(p <= 0):
        raise ConfigError("pressures must be positive")
    y = s / p
    sy = e / p
    x = np.column_stack([np.ones_like(t), t - dataset.reference.T0])
    xw = x / sy[:, None]
    yw = y / sy
    coef, *_ = np.linalg.lstsq(xw, yw, rcond=None)
    cov = np.linalg.inv(xw.T @ xw)
    r = yw - xw @ coef
    bd = BetaDelta(float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])))
    return RegressionResult(bd, cov, r, float(r @ r), len(y) - 2,
                            isotope or (ds.isotopes()[0] if ds.isotopes() else ""), len(y))


def regress_by_isotope(dataset: ShiftDataset) -> dict:
    return {iso: regress_beta_delta(dataset, iso) for iso in dataset.isotopes()}


def ratio_report(fits: dict, numerator: str = "rb87", denominator: str = "rb85") -> dict:
    """Isotope ratios of beta and delta with propagated errors."""
    a, b = fits[numerator], fits[denominator]

    def ratio(x, dx, y, dy):
        q = x / y
        return q, abs(q) * np.hypot(dx / x, dy / y)

    br, dbr = ratio(a.beta, a.coefficients.beta_err, b.beta, b.coefficients.beta_err)
    dr, ddr = ratio(a.delta, a.coefficients.delta_err, b.delta, b.coefficients.delta_err)
    return {"beta_ratio": br, "beta_ratio_err": dbr, "delta_ratio": dr, "delta_ratio_err": ddr,
            "hyperfine_ratio": hyperfine_ratio(numerator, denominator)}


def synthetic_dataset(isotope: str, beta: float, delta: float, temperatures, pressures,
                      reference: ReferenceConditions | None = None, rel_noise: float = 0.0,
                      rng: np.random.Generator | None = None) -> ShiftDataset:
    """Shifts from the linear model P [beta + delta (T - T0)] on a (T, P) list.

    ``temperatures`` and ``pressures`` are paired element-wise.
    """
    ref = reference or ReferenceConditions()
    rng = rng or np.random.default_rng(0)
    out = []
    for tk, pt in zip(temperatures, pressures):
        nu = pt * (beta + delta * (tk - ref.T0))
        sig = max(abs(nu) * rel_noise, 1e-9 * max(abs(nu), 1.0))
        noisy = nu + (rng.normal(0.0, sig) if rel_noise > 0 else 0.0)
        out.append(ShiftMeasurement(isotope, float(tk), float(pt), float(noisy), float(sig)))
    return ShiftDataset(out, ref)

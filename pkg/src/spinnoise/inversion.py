"""Lennard-Jones parameter inversion from collisional-shift datasets.

Parameters are fitted in log space (positivity for free) with a damped
Gauss-Newton (Levenberg-Marquardt) loop on a central-difference Jacobian.
Before fitting, the Jacobian at the initial guess is checked for rank: a
problem whose data cannot pin down the free set is refused, with the
offending parameter combinations named.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy import optimize

from .collision import LennardJonesPair, ReferenceConditions, beta_delta, shift_per_density
from .constants import get_isotope
from .errors import ConfigError, QuadratureError, RankDeficiencyError
from .spectral_fit import ShiftDataset

PARAMETERS = ("epsilon1", "sigma1", "epsilon2", "sigma2")
DEFAULT_BOUNDS = {
    "epsilon1": (1.0, 2000.0),
    "sigma1": (1.0, 15.0),
    "epsilon2": (1.0, 1e9),
    "sigma2": (1.0, 15.0),
}
RANK_CONDITION = 1e8  # s_max / s_i above this marks an unidentifiable direction
WEAK_RELATIVE_SE = 1.0  # predicted 1-sigma log error above this marks a weak parameter
JACOBIAN_STEP = 1e-4  # relative (log-space) step


def isotope_scale(isotope: str, reference: str = "rb87") -> float:
    """Ratio of hyperfine splittings; the perturbation epsilon2 scales with it."""
    if not isotope:
        return 1.0
    return get_isotope(isotope).hyperfine_splitting / get_isotope(reference).hyperfine_splitting


def forward_surface(pair: LennardJonesPair, conditions, ref: ReferenceConditions,
                    scale=1.0, threads: int = 1) -> np.ndarray:
    """Collisional shift (Hz) at each (T, P) point.

    ``scale`` multiplies epsilon2, either one number or one per point. The
    thermal integral depends on T only, so it is evaluated once per distinct
    temperature.
    """
    conditions = [(float(t), float(p)) for t, p in conditions]
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (len(conditions),))
    temps = sorted({t for t, _ in conditions})

    def per_t(t):
        return shift_per_density(pair, t)[0]

    try:
        if threads > 1 and len(temps) > 1:
            with ThreadPoolExecutor(threads) as pool:
                table = dict(zip(temps, pool.map(per_t, temps)))
        else:
            table = {t: per_t(t) for t in temps}
    except QuadratureError as exc:
        bad = [i for i, (t, _) in enumerate(conditions) if f"T={t} K" in str(exc)]
        raise QuadratureError(f"{exc} [points {bad}]", exc.value, exc.abserr) from None
    out = np.empty(len(conditions))
    for i, (t, p) in enumerate(conditions):
        out[i] = scale[i] * ref.density(p, t) * table[t] if p > 0 else 0.0
    return out


@dataclass
class InversionProblem:
    """What to fit, what to hold, and where to start.

    ``ratios`` ties a parameter to another: {"sigma2": ("sigma1", 1.39)} means
    sigma2 = 1.39 sigma1. ``fixed`` values override the guess.
    """

    dataset: ShiftDataset
    free: tuple
    guess: LennardJonesPair
    fixed: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    max_iterations: int = 100
    threads: int = 1
    multi_start: int = 1
    seed: int = 0

    def __post_init__(self):
        self.free = tuple(self.free)
        if not self.free:
            raise ConfigError("at least one parameter must be free")
        for name in (*self.free, *self.fixed, *self.ratios):
            if name not in PARAMETERS:
                raise ConfigError(f"unknown parameter {name!r}; expected one of {PARAMETERS}")
        both = set(self.free) & (set(self.fixed) | set(self.ratios))
        if both:
            raise ConfigError(f"parameters {sorted(both)} are both free and constrained")
        for name, (other, ratio) in self.ratios.items():
            if other in self.ratios or other == name:
                raise ConfigError(f"ratio constraint on {name} must refer to an unconstrained parameter")
            if not ratio > 0:
                raise ConfigError("ratio constraints must be positive")
        b = dict(DEFAULT_BOUNDS)
        b.update({k: tuple(v) for k, v in self.bounds.items()})
        self.bounds = b
        for name in self.free:
            lo, hi = self.bounds[name]
            v = getattr(self.guess, name)
            if not (0 < lo < hi):
                raise ConfigError(f"bounds for {name} must satisfy 0 < lo < hi")
            if not lo <= v <= hi:
                raise ConfigError(f"initial {name} = {v} lies outside its bounds ({lo}, {hi})")
        if len(self.dataset) == 0:
            raise ConfigError("dataset is empty")

    @property
    def reference(self) -> ReferenceConditions:
        return self.dataset.reference

    def conditions(self):
        t, p, _, _ = self.dataset.arrays()
        return list(zip(t, p))

    def scales(self) -> np.ndarray:
        return np.array([isotope_scale(m.isotope) for m in self.dataset.measurements])

    def pair_from(self, theta) -> LennardJonesPair:
        values = self.guess.as_dict()
        values.update(self.fixed)
        for name, x in zip(self.free, theta):
            values[name] = math.exp(x)
        for name, (other, ratio) in self.ratios.items():
            values[name] = ratio * values[other]
        return LennardJonesPair(**values)

    def theta0(self) -> np.ndarray:
        return np.log([getattr(self.guess, n) for n in self.free])

    def log_bounds(self):
        lo = np.log([self.bounds[n][0] for n in self.free])
        hi = np.log([self.bounds[n][1] for n in self.free])
        return lo, hi

    def residuals(self, theta) -> np.ndarray:
        _, _, s, e = self.dataset.arrays()
        model = forward_surface(self.pair_from(theta), self.conditions(), self.reference,
                                self.scales(), self.threads)
        return (model - s) / e

    def jacobian(self, theta, step: float = JACOBIAN_STEP) -> np.ndarray:
        """Central differences of the normalized residuals in log parameters."""
        theta = np.asarray(theta, dtype=float)
        cols = []
        for k in range(len(theta)):
            d = np.zeros_like(theta)
            d[k] = step
            cols.append((self.residuals(theta + d) - self.residuals(theta - d)) / (2 * step))
        return np.column_stack(cols)


@dataclass
class IdentifiabilityReport:
    parameters: tuple
    singular_values: np.ndarray
    condition_number: float
    rank: int
    null_directions: list  # list of {parameter: component}
    correlation: np.ndarray
    predicted_log_se: dict
    weak_parameters: list
    suggestions: list

    @property
    def rank_deficient(self) -> bool:
        return self.rank < len(self.parameters)

    def as_dict(self) -> dict:
        return {
            "parameters": list(self.parameters),
            "singular_values": [float(s) for s in self.singular_values],
            "condition_number": float(self.condition_number),
            "rank": int(self.rank),
            "rank_deficient": self.rank_deficient,
            "null_directions": self.null_directions,
            "correlation": np.asarray(self.correlation).tolist(),
            "predicted_log_se": self.predicted_log_se,
            "weak_parameters": self.weak_parameters,
            "suggestions": self.suggestions,
        }


def _describe(vec, names):
    return {n: round(float(c), 6) for n, c in zip(names, vec) if abs(c) > 1e-3}


def analyse_jacobian(jac: np.ndarray, names) -> IdentifiabilityReport:
    names = tuple(names)
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    if len(s) < len(names):  # fewer data points than parameters
        s = np.concatenate([s, np.zeros(len(names) - len(s))])
        _, _, vt = np.linalg.svd(np.vstack([jac, np.zeros((len(names) - jac.shape[0], len(names)))]))
    smax = float(s[0]) if len(s) else 0.0
    flagged = [i for i, v in enumerate(s) if not v > 0 or smax / v > RANK_CONDITION]
    cond = smax / float(s[-1]) if s[-1] > 0 else math.inf
    nulls = [_describe(vt[i], names) for i in flagged]
    cov = np.linalg.pinv(jac.T @ jac)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(se, se)
    corr = np.where(np.isfinite(corr), corr, 0.0)
    if flagged:
        # the null directions carry no information; their pinv contribution is dropped,
        # so report infinity for every parameter they touch
        touched = {n for d in nulls for n in d}
        pred = {n: (math.inf if n in touched else float(v)) for n, v in zip(names, se)}
    else:
        pred = {n: float(v) for n, v in zip(names, se)}
    weak = [n for n in names if pred[n] > WEAK_RELATIVE_SE]
    suggestions = []
    for d in nulls:
        lead = max(d, key=lambda k: abs(d[k]))
        suggestions.append(f"fix {lead} (or constrain it) to remove the direction {d}")
    if not flagged:
        for n in sorted(weak, key=lambda k: -pred[k]):
            suggestions.append(f"{n} is weakly determined (predicted log-SE {pred[n]:.3g}); "
                               "fix it or add data with more temperature leverage")
    return IdentifiabilityReport(names, s, cond, len(names) - len(flagged), nulls, corr, pred,
                                 weak, suggestions)


def identifiability_report(problem: InversionProblem, theta=None) -> IdentifiabilityReport:
    """Singular spectrum, correlations and suggestions at the initial guess."""
    theta = problem.theta0() if theta is None else theta
    return analyse_jacobian(problem.jacobian(theta), problem.free)


@dataclass
class InversionResult:
    pair: LennardJonesPair
    free: tuple
    covariance: np.ndarray  # physical units, over ``free``
    log_covariance: np.ndarray
    residual_norm: float
    chi2: float
    dof: int
    condition_number: float
    converged: bool
    iterations: int
    trace: list
    message: str = ""

    @property
    def stderr(self) -> dict:
        return {n: float(math.sqrt(max(self.covariance[i, i], 0.0))) for i, n in enumerate(self.free)}

    def as_dict(self) -> dict:
        return {
            "pair": self.pair.as_dict(),
            "free": list(self.free),
            "stderr": self.stderr,
            "covariance": np.asarray(self.covariance).tolist(),
            "residual_norm": float(self.residual_norm),
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "condition_number": float(self.condition_number),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "message": self.message,
            "trace": self.trace,
        }


def _levenberg_marquardt(problem, theta, max_iter, trace):
    lo, hi = problem.log_bounds()
    theta = np.clip(theta, lo, hi)
    r = problem.residuals(theta)
    cost = float(r @ r)
    lam = 1e-3
    converged, message = False, "iteration limit reached"
    it = 0
    j = problem.jacobian(theta)
    for it in range(1, max_iter + 1):
        g = j.T @ r
        a = j.T @ j
        if np.max(np.abs(g)) <= 1e-10 * max(1.0, cost):
            converged, message = True, "gradient below tolerance"
            break
        improved = False
        while lam < 1e16:
            damp = a + lam * np.diag(np.maximum(np.diag(a), 1e-300))
            try:
                step = np.linalg.solve(damp, -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(damp, -g, rcond=None)[0]
            trial = np.clip(theta + step, lo, hi)
            r_new = problem.residuals(trial)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                improved = True
                break
            lam *= 10
        trace.append({"iteration": it, "cost": cost_new if improved else cost, "lambda": lam,
                      "accepted": improved,
                      "parameters": problem.pair_from(trial if improved else theta).as_dict()})
        if not improved:
            converged, message = True, "no further decrease possible"
            break
        moved = float(np.max(np.abs(trial - theta)))
        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        theta, r, cost = trial, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        if rel_drop < 1e-12 or moved < 1e-10:
            converged, message = True, "relative cost change below tolerance"
            j = problem.jacobian(theta)
            break
        j = problem.jacobian(theta)
    return theta, r, cost, j, converged, message, it


def fit_lj(problem: InversionProblem) -> InversionResult:
    """Bounded log-space Levenberg-Marquardt fit of the free LJ parameters.

    Raises
    ------
    RankDeficiencyError
        When the Jacobian at the initial guess has directions the data cannot
        see; the error lists them and suggests what to fix.
    """
    report = identifiability_report(problem)
    if report.rank_deficient:
        raise RankDeficiencyError(
            f"the data fix only {report.rank} of {len(problem.free)} free parameter combinations; "
            f"unidentifiable directions (log space): {report.null_directions}",
            report.null_directions, report.suggestions,
        )
    starts = [problem.theta0()]
    if problem.multi_start > 1:
        rng = np.random.default_rng(problem.seed)
        lo, hi = problem.log_bounds()
        for _ in range(problem.multi_start - 1):
            starts.append(rng.uniform(lo, hi))
    best = None
    for k, th in enumerate(starts):
        trace = []
        out = _levenberg_marquardt(problem, th, problem.max_iterations, trace)
        if best is None or out[2] < best[0][2]:
            best = (out, trace, k)
    (theta, r, cost, j, converged, message, it), trace, _ = best
    log_cov = np.linalg.pinv(j.T @ j)
    values = np.exp(theta)
    cov = log_cov * np.outer(values, values)
    s = np.linalg.svd(j, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    return InversionResult(problem.pair_from(theta), problem.free, cov, log_cov,
                           float(np.sqrt(cost)), cost, len(r) - len(theta), max(cond, 1.0),
                           converged, it, trace, message)


def match_beta_delta(beta: float, delta: float, epsilon1: float, sigma1: float,
                     ref: ReferenceConditions, sigma2_guess: float = 5.0,
                     epsilon2_guess: float = 5e5) -> LennardJonesPair:
    """Perturbation parameters (epsilon2, sigma2) reproducing a target (beta, delta)."""
    def resid(x):
        pair = LennardJonesPair(epsilon1, sigma1, math.exp(x[0]), x[1])
        bd = beta_delta(pair, ref)
        return [bd.beta / beta - 1.0, bd.delta / delta - 1.0]

    sol = optimize.least_squares(resid, [math.log(epsilon2_guess), sigma2_guess],
                                 bounds=([0.0, 0.6], [40.0, 19.0]), xtol=1e-14, ftol=1e-14)
    if max(abs(v) for v in sol.fun) > 1e-8:
        raise ConfigError(f"no (epsilon2, sigma2) reproduces beta={beta}, delta={delta} "
                          f"with epsilon1={epsilon1}, sigma1={sigma1}")
    return LennardJonesPair(epsilon1, sigma1, math.exp(sol.x[0]), float(sol.x[1]))


def synthetic_shift_dataset(pair: LennardJonesPair, temperatures, pressures,
                            ref: ReferenceConditions | None = None, rel_noise: float = 0.0,
                            isotope: str = "rb87", seed: int = 0) -> ShiftDataset:
    """Exact-integral shifts on the T x P grid, optionally with relative Gaussian noise."""
    from .spectral_fit import ShiftMeasurement

    ref = ref or ReferenceConditions()
    cond = [(float(t), float(p)) for t in temperatures for p in pressures]
    nu = forward_surface(pair, cond, ref, isotope_scale(isotope))
    rng = np.random.default_rng(seed)
    out = []
    for (t, p), v in zip(cond, nu):
        sig = abs(v) * rel_noise if rel_noise > 0 else max(1e-9 * abs(v), 1e-12)
        noisy = v + rng.normal(0.0, sig) if rel_noise > 0 else v
        out.append(ShiftMeasurement(isotope, t, p, float(noisy), float(sig)))
    return ShiftDataset(out, ref)


# ---------------------------------------------------------------------------
# serialization

PROBLEM_SCHEMA_VERSION = 1


def problem_to_dict(problem: InversionProblem, dataset_path: str) -> dict:
    ref = problem.reference
    return {
        "schema_version": PROBLEM_SCHEMA_VERSION,
        "dataset": str(dataset_path),
        "free": list(problem.free),
        "fixed": dict(problem.fixed),
        "ratios": {k: {"to": o, "ratio": r} for k, (o, r) in problem.ratios.items()},
        "bounds": {k: list(problem.bounds[k]) for k in problem.free},
        "guess": problem.guess.as_dict(),
        "reference": {"P0": ref.P0, "T0": ref.T0, "density_mode": ref.density_mode.value},
        "max_iterations": problem.max_iterations,
        "multi_start": problem.multi_start,
    }


def problem_from_dict(doc: dict, base_dir=None, threads: int = 1, seed: int = 0) -> InversionProblem:
    import os

    if doc.get("schema_version") != PROBLEM_SCHEMA_VERSION:
        raise ConfigError(f"inversion problem schema_version must be {PROBLEM_SCHEMA_VERSION}")
    ref = ReferenceConditions(**doc.get("reference", {}))
    path = doc["dataset"]
    if base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    ds = ShiftDataset.from_csv(path, ref)
    ratios = {k: (v["to"], float(v["ratio"])) for k, v in doc.get("ratios", {}).items()}
    return InversionProblem(ds, tuple(doc["free"]), LennardJonesPair(**doc["guess"]),
                            dict(doc.get("fixed", {})), ratios, dict(doc.get("bounds", {})),
                            int(doc.get("max_iterations", 100)), threads,
                            int(doc.get("multi_start", 1)), seed)


def dump_yaml(doc: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)

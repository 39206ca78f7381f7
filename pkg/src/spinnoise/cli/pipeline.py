"""Stage implementations behind the command-line subcommands."""
from __future__ import annotations

import csv
import io
import json
import time
from pathlib import Path

import numpy as np
import yaml

from ..atomic import FieldConfig, isotope_transitions
from ..chain import AcquisitionConfig, DownconversionPlan, Reference, read_psd_csv, run_channelized
from ..chain.frames import format_psd_csv
from ..chain.synth import derive_seed
from ..collision import LennardJonesPair, ReferenceConditions
from ..constants import get_isotope
from ..errors import ConfigError, RankDeficiencyError
from ..inversion import (
    InversionProblem,
    fit_lj,
    identifiability_report,
    synthetic_shift_dataset,
)
from ..spectral_fit import (
    ShiftDataset,
    ShiftMeasurement,
    find_peaks,
    fit_multiplet,
    multiplet_shift,
    ratio_report,
    regress_by_isotope,
)
from ..spectrum import PowerSpectrum, Provenance, analytic_psd, apply_shifts, multiplet_prediction
from .manifest import Manifest, atomic_write

CONFIG_SNAPSHOT = "config.yaml"
DATASET_FILE = "shifts.csv"


# ---------------------------------------------------------------------------
# helpers

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _put(manifest: Manifest, stage: str, name: str, text: str):
    atomic_write(manifest.out_dir / name, text)
    manifest.add(stage, name)


def _field(cfg) -> FieldConfig:
    f = cfg["field"]
    return FieldConfig(float(f["magnitude_gauss"]), f.get("orientation", "transverse"))


def _plan(chain) -> DownconversionPlan:
    refs = []
    for r in chain["references"]:
        if "frequency_hz" in r:
            nu = float(r["frequency_hz"])
        else:
            nu = get_isotope(r["isotope"]).hyperfine_splitting * 1e6 + float(r["offset_hz"])
        refs.append(Reference(nu, r["label"]))
    return DownconversionPlan(tuple(refs), float(chain["lowpass_cutoff"]), int(chain["decimation"]),
                              float(chain["reference_linewidth"]))


def _acq(chain, seed, threads) -> AcquisitionConfig:
    return AcquisitionConfig(
        sample_rate=float(chain["sample_rate"]),
        intermediate_frequency=float(chain["intermediate_frequency"]),
        segment_length=int(chain["segment_length"]),
        averages=int(chain["averages"]),
        overlap=float(chain["overlap"]),
        window=chain["window"],
        noise_floor=float(chain["noise_floor"]),
        seed=int(seed),
        frame_length=int(chain["frame_length"]),
        threads=int(threads),
        band_mode=chain["band_mode"],
    )


def _transitions(cfg, shifts: dict):
    field = _field(cfg)
    out = []
    for iso in cfg["isotopes"]:
        tr = isotope_transitions(get_isotope(iso), field, float(cfg["temperature_k"]),
                                 float(cfg["linewidth_khz"]))
        out += apply_shifts(tr, {iso: float(shifts.get(iso, 0.0))})
    return out


def channel_overlay(psd: PowerSpectrum, transitions, noise_floor: float) -> PowerSpectrum:
    """Analytic expectation for one down-converted channel on the estimate's grid.

    The real-LO mixer halves amplitudes (line power x 1/4) and folds both
    sidebands of the white floor onto nu_rel (floor x 1/2).
    """
    ref = psd.meta["reference_hz"]
    near = [t for t in transitions if t.isotope in psd.meta.get("isotopes", [])
            and abs(t.center_hz - ref) < psd.meta.get("lowpass_cutoff_hz", np.inf)]
    base = analytic_psd(near, psd.frequencies, origin=ref, floor=0.0)
    meta = dict(psd.meta)
    meta.update(provenance="analytic")
    return PowerSpectrum(psd.frequencies, 0.25 * base.values + 0.5 * noise_floor,
                         psd.resolution_bandwidth, 0, Provenance.ANALYTIC, meta)


def analyze_spectrum(psd: PowerSpectrum, cfg, isotope: str, temperature_k=None, pressure_torr=None):
    """Fit one channel and return (ShiftMeasurement, MultipletFit)."""
    an = cfg["analysis"]
    theory = multiplet_prediction(get_isotope(isotope), _field(cfg), 0.0, float(cfg["temperature_k"]),
                                  float(cfg["linewidth_khz"]))
    guesses = find_peaks(psd, float(an["snr_threshold"]))
    if not guesses:
        raise ConfigError(f"channel {psd.meta.get('label')!r}: no peaks above the detection threshold")
    fit = fit_multiplet(psd, guesses)
    m = multiplet_shift(fit, theory.centers, float(psd.meta["reference_hz"]),
                        float(an["prior_window_hz"]), isotope=isotope,
                        temperature_k=float(an["temperature_k"] if temperature_k is None else temperature_k),
                        pressure_torr=float(an["pressure_torr"] if pressure_torr is None else pressure_torr))
    return m, fit


def _channel_isotope(psd, path):
    isos = psd.meta.get("isotopes")
    if not isos or len(isos) != 1:
        raise ConfigError(f"{path}: expected exactly one isotope in the channel metadata, got {isos}")
    return isos[0]


# ---------------------------------------------------------------------------
# simulate

def simulate(cfg, manifest: Manifest):
    stage = "simulate"
    manifest.begin(stage, cfg)
    _put(manifest, stage, CONFIG_SNAPSHOT, yaml.safe_dump(cfg, sort_keys=True))
    kind = cfg["kind"]
    if kind == "spectra":
        _simulate_spectra(cfg, manifest, stage)
    elif kind == "shift-dataset":
        _simulate_dataset(cfg, manifest, stage)
    else:
        ds = _inversion_dataset(cfg, manifest)
        if ds is not None:
            _put(manifest, stage, DATASET_FILE, ds.to_csv())
    manifest.finish(stage)


def _simulate_spectra(cfg, manifest, stage):
    chain = cfg["chain"]
    trans = _transitions(cfg, cfg["shifts_hz"])
    metrics = {}
    t0 = time.perf_counter()
    results = run_channelized(trans, _plan(chain), _acq(chain, cfg["seed"], cfg["threads"]), metrics)
    metrics["wall_s"] = time.perf_counter() - t0
    for label, psd in results:
        _put(manifest, stage, f"psd_{label}.csv", format_psd_csv(psd))
        overlay = channel_overlay(psd, trans, float(chain["noise_floor"]))
        _put(manifest, stage, f"overlay_{label}.csv", format_psd_csv(overlay))
        peak = int(np.argmax(psd.values))
        metrics[f"{label}_peak_absolute_hz"] = float(psd.absolute_frequencies[peak])
    manifest.metrics(stage, metrics)


def _dataset_points(cfg):
    ref = ReferenceConditions(**cfg["reference"])
    prow = cfg.get("pressure_row_torr", [50, 100, 150, 200, 250, 300, 400])
    trow = cfg.get("temperature_row_k", [317, 322, 327, 332, 337, 342, 347, 352, 357])
    pts = [(ref.T0, float(p)) for p in prow] + [(float(t), ref.P0) for t in trow]
    seen, out = set(), []
    for pt in pts:
        if pt not in seen:
            seen.add(pt)
            out.append(pt)
    return ref, out


def _simulate_dataset(cfg, manifest, stage):
    ref, points = _dataset_points(cfg)
    noise = float(cfg["relative_noise"])
    rows = []
    for k, iso in enumerate(sorted(cfg["coefficients"])):
        co = cfg["coefficients"][iso]
        rng = np.random.default_rng(derive_seed(cfg["seed"], 7, k))
        for t, p in points:
            nu = p * (co["beta"] + co["delta"] * (t - ref.T0))
            if cfg.get("spectral"):
                rows.append(_spectral_point(cfg, iso, nu, t, p, derive_seed(cfg["seed"], 8, k, len(rows))))
            else:
                sig = abs(nu) * noise if noise > 0 else max(1e-9 * abs(nu), 1e-9)
                rows.append(ShiftMeasurement(iso, t, p, nu + (rng.normal(0, sig) if noise > 0 else 0.0), sig))
    ds = ShiftDataset(rows, ref)
    _put(manifest, stage, DATASET_FILE, ds.to_csv())


def _spectral_point(cfg, iso, shift, t, p, seed):
    sub = dict(cfg)
    sub["isotopes"] = [iso]
    chain = dict(cfg["chain"])
    chain["references"] = [r for r in chain["references"] if r.get("isotope", r["label"]) == iso
                           or r["label"] == iso]
    if not chain["references"]:
        raise ConfigError(f"chain/references: no reference labelled for isotope {iso}")
    trans = _transitions(sub, {iso: shift})
    (_, psd), = run_channelized(trans, _plan(chain), _acq(chain, seed, cfg["threads"]))
    m, _ = analyze_spectrum(psd, sub, iso, t, p)
    return m


def _inversion_dataset(cfg, manifest):
    syn = cfg.get("synthetic")
    if syn is None:
        return None
    ref = ReferenceConditions(**cfg.get("reference", {}))
    return synthetic_shift_dataset(LennardJonesPair(**syn["pair"]), syn["temperatures_k"],
                                   syn["pressures_torr"], ref, float(syn.get("relative_noise", 0.0)),
                                   syn.get("isotope", "rb87"), derive_seed(cfg["seed"], 9))


# ---------------------------------------------------------------------------
# analyze

def analyze(cfg, manifest: Manifest, inputs=None):
    stage = "analyze"
    if cfg["kind"] != "spectra":
        raise ConfigError(f"analyze needs a spectra config, got kind {cfg['kind']!r}")
    manifest.begin(stage, cfg)
    if not inputs:
        sim = manifest.doc["stages"].get("simulate")
        if not sim:
            raise ConfigError(f"no PSD inputs given and no simulate stage in {manifest.path}")
        inputs = [manifest.out_dir / p for p in sim["outputs"] if p.startswith("psd_")]
    rows, peaks = [], []
    for path in inputs:
        psd = read_psd_csv(path, require_meta=True)
        for key in ("reference_hz", "isotopes"):
            if key not in psd.meta:
                raise ConfigError(f"{path}: metadata lacks {key!r}")
        iso = _channel_isotope(psd, path)
        m, fit = analyze_spectrum(psd, cfg, iso)
        rows.append(m)
        for pk in fit.peaks:
            peaks.append([psd.meta.get("label", ""), iso, pk.center,
                          psd.meta["reference_hz"] + m.sideband * pk.center, pk.center_err,
                          pk.width, pk.width_err, pk.area, pk.area_err])
    ds = ShiftDataset(rows)
    _put(manifest, stage, DATASET_FILE, ds.to_csv())
    _put(manifest, stage, "fits.csv", _csv_text(
        ["label", "isotope", "center_rel_hz", "center_abs_hz", "center_err_hz", "hwhm_hz",
         "hwhm_err_hz", "area", "area_err"], peaks))
    manifest.metrics(stage, {f"{m.isotope}_shift_hz": m.shift_hz for m in rows})
    manifest.finish(stage)
    return ds


# ---------------------------------------------------------------------------
# fit-shift

def fit_shift(cfg, manifest: Manifest, dataset_path=None):
    stage = "fit-shift"
    manifest.begin(stage, cfg)
    path = Path(dataset_path) if dataset_path else manifest.out_dir / DATASET_FILE
    if not path.exists():
        raise ConfigError(f"shift dataset {path} not found; run simulate or analyze first")
    ref = ReferenceConditions(**cfg.get("reference", {}))
    ds = ShiftDataset.from_csv(path, ref)
    fits = regress_by_isotope(ds)
    rows = [[iso, f.beta, f.coefficients.beta_err, f.delta, f.coefficients.delta_err,
             f.reduced_chi2, f.n_points] for iso, f in sorted(fits.items())]
    _put(manifest, stage, "beta_delta.csv", _csv_text(
        ["isotope", "beta_hz_per_torr", "beta_err", "delta_hz_per_k_torr", "delta_err",
         "reduced_chi2", "n_points"], rows))
    lines = [f"reference: P0 = {ref.P0} torr, T0 = {ref.T0} K ({ref.density_mode.value})"]
    for iso, f in sorted(fits.items()):
        lines.append(f"{iso}: beta = {f.beta:.4f} +/- {f.coefficients.beta_err:.4f} Hz/torr, "
                     f"delta = {f.delta:.5f} +/- {f.coefficients.delta_err:.5f} Hz/(K torr), "
                     f"chi2/dof = {f.reduced_chi2:.3f}")
    metrics = {f"{iso}_beta": f.beta for iso, f in fits.items()}
    metrics.update({f"{iso}_delta": f.delta for iso, f in fits.items()})
    if {"rb85", "rb87"} <= set(fits):
        rr = ratio_report(fits)
        _put(manifest, stage, "ratios.csv", _csv_text(
            ["quantity", "value", "error"],
            [["beta_ratio", rr["beta_ratio"], rr["beta_ratio_err"]],
             ["delta_ratio", rr["delta_ratio"], rr["delta_ratio_err"]],
             ["hyperfine_ratio", rr["hyperfine_ratio"], 0.0]]))
        lines.append(f"rb87/rb85: beta ratio = {rr['beta_ratio']:.3f} +/- {rr['beta_ratio_err']:.3f}, "
                     f"delta ratio = {rr['delta_ratio']:.3f} +/- {rr['delta_ratio_err']:.3f}, "
                     f"hyperfine ratio = {rr['hyperfine_ratio']:.4f}")
        metrics.update(beta_ratio=rr["beta_ratio"], delta_ratio=rr["delta_ratio"])
    _put(manifest, stage, "beta_delta.txt", "\n".join(lines) + "\n")
    manifest.metrics(stage, metrics)
    manifest.finish(stage)
    return fits


# ---------------------------------------------------------------------------
# invert

def build_problem(cfg, manifest: Manifest, dataset_path=None) -> InversionProblem:
    ref = ReferenceConditions(**cfg.get("reference", {}))
    if dataset_path:
        ds = ShiftDataset.from_csv(dataset_path, ref)
    elif "dataset" in cfg:
        ds = ShiftDataset.from_csv(cfg["dataset"], ref)
    elif (manifest.out_dir / DATASET_FILE).exists():
        ds = ShiftDataset.from_csv(manifest.out_dir / DATASET_FILE, ref)
    else:
        ds = _inversion_dataset(cfg, manifest)
    ratios = {k: (v["to"], float(v["ratio"])) for k, v in cfg.get("ratios", {}).items()}
    return InversionProblem(ds, tuple(cfg["free"]), LennardJonesPair(**cfg["guess"]),
                            dict(cfg.get("fixed", {})), ratios, dict(cfg.get("bounds", {})),
                            int(cfg.get("max_iterations", 100)), int(cfg["threads"]),
                            int(cfg.get("multi_start", 1)), int(cfg["seed"]))


def invert(cfg, manifest: Manifest, dataset_path=None):
    stage = "invert"
    if cfg["kind"] != "inversion":
        raise ConfigError(f"invert needs an inversion config, got kind {cfg['kind']!r}")
    manifest.begin(stage, cfg)
    problem = build_problem(cfg, manifest, dataset_path)
    if not (manifest.out_dir / DATASET_FILE).exists():
        _put(manifest, stage, DATASET_FILE, problem.dataset.to_csv())
    report = identifiability_report(problem)
    _put(manifest, stage, "identifiability.yaml", yaml.safe_dump(_plain(report.as_dict()), sort_keys=False))
    try:
        result = fit_lj(problem)
    except RankDeficiencyError as exc:
        text = [f"refused: {exc}", "suggested fixes:"] + [f"  - {s}" for s in exc.suggestions]
        _put(manifest, stage, "inversion.txt", "\n".join(text) + "\n")
        manifest.finish(stage, "refused", str(exc))
        exc.suggestions = list(exc.suggestions)
        raise
    _put(manifest, stage, "inversion.yaml", yaml.safe_dump(_plain(result.as_dict()), sort_keys=False))
    se = result.stderr
    lines = [f"converged: {result.converged} ({result.message}), iterations {result.iterations}",
             f"chi2 = {result.chi2:.4g} for {result.dof} dof, condition number {result.condition_number:.3g}"]
    for name, v in result.pair.as_dict().items():
        tag = f" +/- {se[name]:.4g}" if name in se else " (held)"
        lines.append(f"{name} = {v:.6g}{tag}")
    _put(manifest, stage, "inversion.txt", "\n".join(lines) + "\n")
    manifest.metrics(stage, {"chi2": result.chi2, "condition_number": result.condition_number,
                             "converged": result.converged, **result.pair.as_dict()})
    manifest.finish(stage)
    return result


def _plain(obj):
    """JSON round trip, turning numpy scalars and infinities into YAML-safe values."""
    return json.loads(json.dumps(obj, default=float).replace("Infinity", '"inf"').replace("NaN", '"nan"'))


# ---------------------------------------------------------------------------
# report

def report(manifest: Manifest) -> str:
    stage = "report"
    if not manifest.doc["stages"]:
        raise ConfigError(f"nothing to report in {manifest.out_dir}")
    cfg = manifest.config or {}
    manifest.begin(stage, cfg)
    lines = [f"spinnoise {manifest.doc['version']}  scenario={cfg.get('scenario', '-')}  seed={cfg.get('seed')}"]
    for name, st in manifest.doc["stages"].items():
        if name == stage:
            continue
        lines.append(f"[{name}] {st['status']}  {st.get('wall_s', 0.0):.2f} s  outputs: {', '.join(st['outputs'])}")
        for k, v in sorted(manifest.doc["metrics"].get(name, {}).items()):
            lines.append(f"    {k} = {v:.9g}" if isinstance(v, float) else f"    {k} = {v}")
    for txt in ("beta_delta.txt", "inversion.txt"):
        p = manifest.out_dir / txt
        if p.exists():
            lines.append(f"--- {txt}")
            lines.append(p.read_text().rstrip())
    text = "\n".join(lines) + "\n"
    _put(manifest, stage, "report.txt", text)
    manifest.finish(stage)
    return text

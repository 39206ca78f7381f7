"""Run configuration: YAML documents validated against a versioned JSON schema."""
from __future__ import annotations

import copy
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from ..errors import ConfigError

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_iso = {"type": "string", "enum": ["rb85", "rb87"]}
_pair = {
    "type": "object",
    "additionalProperties": False,
    "required": ["epsilon1", "sigma1", "epsilon2", "sigma2"],
    "properties": {"epsilon1": _pos, "sigma1": _pos, "epsilon2": _nonneg, "sigma2": _pos},
}
_reference_conditions = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "P0": _pos, "T0": _pos,
        "density_mode": {"type": "string", "enum": ["sealed-cell", "constant-pressure"]},
    },
}
_common = {
    "schema_version": {"const": SCHEMA_VERSION},
    "kind": {"type": "string"},
    "scenario": {"type": "string"},
    "description": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
    "threads": {"type": "integer", "minimum": 1},
}
_channel_ref = {
    "type": "object",
    "additionalProperties": False,
    "required": ["label"],
    "properties": {
        "label": {"type": "string", "minLength": 1},
        "frequency_hz": _pos,
        "isotope": _iso,
        "offset_hz": _num,
    },
    "oneOf": [
        {"required": ["frequency_hz"], "not": {"required": ["offset_hz"]}},
        {"required": ["isotope", "offset_hz"], "not": {"required": ["frequency_hz"]}},
    ],
}
_chain = {
    "type": "object",
    "additionalProperties": False,
    "required": ["references"],
    "properties": {
        "sample_rate": _pos,
        "intermediate_frequency": _pos,
        "decimation": {"type": "integer", "minimum": 1},
        "lowpass_cutoff": _pos,
        "reference_linewidth": _nonneg,
        "segment_length": {"type": "integer", "minimum": 8},
        "averages": {"type": "integer", "minimum": 1},
        "overlap": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "window": {"type": "string", "enum": ["hann", "rectangular"]},
        "noise_floor": _nonneg,
        "band_mode": {"type": "string", "enum": ["baseband", "full-chain"]},
        "frame_length": {"type": "integer", "minimum": 1024},
        "references": {"type": "array", "minItems": 1, "items": _channel_ref},
    },
}
_analysis = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "prior_window_hz": _pos,
        "snr_threshold": _pos,
        "pressure_torr": _nonneg,
        "temperature_k": _pos,
    },
}
_atoms = {
    "isotopes": {"type": "array", "minItems": 1, "uniqueItems": True, "items": _iso},
    "field": {
        "type": "object",
        "additionalProperties": False,
        "required": ["magnitude_gauss"],
        "properties": {
            "magnitude_gauss": _nonneg,
            "orientation": {"oneOf": [
                {"type": "string", "enum": ["transverse", "longitudinal"]},
                {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
            ]},
        },
    },
    "temperature_k": _pos,
    "linewidth_khz": _pos,
}

SPECTRA_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "isotopes", "field", "chain"],
    "properties": {
        **_common, **_atoms,
        "kind": {"const": "spectra"},
        "shifts_hz": {"type": "object", "additionalProperties": False,
                      "properties": {"rb85": _num, "rb87": _num}},
        "chain": _chain,
        "analysis": _analysis,
    },
}

_linear = {
    "type": "object",
    "additionalProperties": False,
    "required": ["beta", "delta"],
    "properties": {"beta": _num, "delta": _num},
}
SHIFT_DATASET_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "coefficients"],
    "properties": {
        **_common, **_atoms,
        "kind": {"const": "shift-dataset"},
        "reference": _reference_conditions,
        "coefficients": {"type": "object", "minProperties": 1, "additionalProperties": False,
                         "properties": {"rb85": _linear, "rb87": _linear}},
        "pressure_row_torr": {"type": "array", "minItems": 1, "items": _pos},
        "temperature_row_k": {"type": "array", "minItems": 1, "items": _pos},
        "relative_noise": _nonneg,
        "spectral": {"type": "boolean"},
        "chain": _chain,
        "analysis": _analysis,
    },
}

_param = {"type": "string", "enum": ["epsilon1", "sigma1", "epsilon2", "sigma2"]}
INVERSION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "free", "guess"],
    "properties": {
        **_common,
        "kind": {"const": "inversion"},
        "reference": _reference_conditions,
        "dataset": {"type": "string"},
        "synthetic": {
            "type": "object",
            "additionalProperties": False,
            "required": ["pair", "temperatures_k", "pressures_torr"],
            "properties": {
                "pair": _pair,
                "isotope": _iso,
                "temperatures_k": {"type": "array", "minItems": 1, "items": _pos},
                "pressures_torr": {"type": "array", "minItems": 1, "items": _pos},
                "relative_noise": _nonneg,
            },
        },
        "free": {"type": "array", "minItems": 1, "uniqueItems": True, "items": _param},
        "fixed": {"type": "object", "additionalProperties": False,
                  "patternProperties": {"^(epsilon1|sigma1|epsilon2|sigma2)$": _pos}},
        "ratios": {"type": "object", "additionalProperties": False,
                   "patternProperties": {"^(epsilon1|sigma1|epsilon2|sigma2)$": {
                       "type": "object", "additionalProperties": False, "required": ["to", "ratio"],
                       "properties": {"to": _param, "ratio": _pos}}}},
        "bounds": {"type": "object", "additionalProperties": False,
                   "patternProperties": {"^(epsilon1|sigma1|epsilon2|sigma2)$": {
                       "type": "array", "items": _pos, "minItems": 2, "maxItems": 2}}},
        "guess": _pair,
        "max_iterations": {"type": "integer", "minimum": 1},
        "multi_start": {"type": "integer", "minimum": 1},
    },
    "oneOf": [{"required": ["dataset"]}, {"required": ["synthetic"]}],
}

SCHEMAS = {"spectra": SPECTRA_SCHEMA, "shift-dataset": SHIFT_DATASET_SCHEMA, "inversion": INVERSION_SCHEMA}

CHAIN_DEFAULTS = {
    "sample_rate": 4e6,
    "intermediate_frequency": 1e6,
    "decimation": 2,
    "lowpass_cutoff": 5e5,
    "reference_linewidth": 0.1,
    "segment_length": 2048,
    "averages": 10000,
    "overlap": 0.5,
    "window": "hann",
    "noise_floor": 2e-7,
    "band_mode": "baseband",
    "frame_length": 1 << 17,
}
ANALYSIS_DEFAULTS = {"prior_window_hz": 2e5, "snr_threshold": 3.0, "pressure_torr": 250.0,
                     "temperature_k": 337.0}
TOP_DEFAULTS = {"seed": 0, "threads": 1, "temperature_k": 337.0, "linewidth_khz": 7.0}


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/".join(parts) if parts else "<root>"


def validate(doc) -> dict:
    """Schema-check a config document and fill defaults; raises ConfigError."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {doc.get('schema_version')!r}")
    kind = doc.get("kind")
    if kind not in SCHEMAS:
        raise ConfigError(f"kind: expected one of {sorted(SCHEMAS)}, got {kind!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[kind])
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    out = copy.deepcopy(doc)
    for k, v in TOP_DEFAULTS.items():
        out.setdefault(k, v)
    if "chain" in out:
        out["chain"] = {**CHAIN_DEFAULTS, **out["chain"]}
    if kind in ("spectra", "shift-dataset"):
        out["analysis"] = {**ANALYSIS_DEFAULTS, **out.get("analysis", {})}
        out.setdefault("field", {"magnitude_gauss": 0.0})
        out["field"].setdefault("orientation", "transverse")
    if kind == "shift-dataset":
        if out.get("spectral") and "chain" not in out:
            raise ConfigError("chain: required when spectral is true")
        out.setdefault("reference", {})
        out.setdefault("relative_noise", 0.01)
        out.setdefault("isotopes", sorted(out["coefficients"]))
    if kind == "spectra":
        out.setdefault("shifts_hz", {})
    return out


def load(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return validate(doc)


def scenario_names() -> list[str]:
    root = resources.files("spinnoise.cli") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(name: str) -> dict:
    root = resources.files("spinnoise.cli") / "scenarios"
    f = root / f"{name}.yaml"
    if not f.is_file():
        raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(scenario_names())}")
    return validate(yaml.safe_load(f.read_text()))

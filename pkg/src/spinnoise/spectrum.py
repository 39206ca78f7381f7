"""Analytic spin-noise power spectra.

The spectrum is a sum of Lorentzians, one per transition, with half-width
gamma (Hz) and area pi * weight. It is single-sided: every line at nu_c also
receives its mirror image from -nu_c, which matters only for lines within a
few widths of zero frequency. Units are arbitrary power per Hz.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .atomic import (
    DEFAULT_LINEWIDTH_KHZ,
    PROBE_AXIS,
    FieldConfig,
    Transition,
    group_transitions,
    isotope_transitions,
)
from .constants import Isotope
from .errors import ConfigError


class Provenance(str, enum.Enum):
    ANALYTIC = "analytic"
    ESTIMATED = "estimated"


@dataclass
class PowerSpectrum:
    """PSD on a strictly increasing frequency grid.

    ``meta`` carries free-form acquisition metadata (reference frequency,
    sideband, window, isotope, ...). ``frequencies`` are relative to
    ``meta["reference_hz"]`` when that key is present.
    """

    frequencies: np.ndarray
    values: np.ndarray
    resolution_bandwidth: float
    averages: int = 0
    provenance: Provenance = Provenance.ANALYTIC
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.provenance = Provenance(self.provenance)
        if self.frequencies.shape != self.values.shape or self.frequencies.ndim != 1:
            raise ConfigError("frequencies and values must be 1-D arrays of equal length")
        if len(self.frequencies) > 1 and np.any(np.diff(self.frequencies) <= 0):
            raise ConfigError("frequency grid must be strictly increasing")
        if np.any(self.values < 0):
            raise ConfigError("power spectral density must be non-negative")
        if self.provenance is Provenance.ESTIMATED and not self.resolution_bandwidth > 0:
            raise ConfigError("estimated spectra need a positive resolution bandwidth")

    @property
    def bin_width(self) -> float:
        if len(self.frequencies) < 2:
            return self.resolution_bandwidth
        return float((self.frequencies[-1] - self.frequencies[0]) / (len(self.frequencies) - 1))

    @property
    def absolute_frequencies(self) -> np.ndarray:
        """Frequencies mapped back through the recorded reference and sideband."""
        ref = self.meta.get("reference_hz")
        if ref is None:
            return self.frequencies.copy()
        return ref + self.meta.get("sideband", 1) * self.frequencies

    def total_power(self) -> float:
        """Sum of PSD x bin width (trapezoid-free rectangle rule)."""
        return float(np.sum(self.values) * self.bin_width)


def apply_shifts(transitions, shift) -> list[Transition]:
    """Add a collisional shift to every inter-hyperfine (Delta F = 1) line.

    ``shift`` is a number (Hz) or a mapping isotope -> Hz. Intra-manifold lines
    are untouched. Shifts accumulate, so applying a then b equals a + b.
    """
    out = []
    for t in transitions:
        if isinstance(shift, Mapping):
            s = float(shift.get(t.isotope, 0.0))
        else:
            s = float(shift)
        if t.delta_f == 1 and s != 0.0:
            t = replace(t, shift_hz=t.shift_hz + s)
        out.append(t)
    return out


def lorentzian(nu, center, gamma):
    return gamma / ((nu - center) ** 2 + gamma ** 2)


def analytic_psd(transitions, grid, origin: float = 0.0, floor: float = 0.0) -> PowerSpectrum:
    """Evaluate the Lorentzian-sum spectrum on ``grid`` (Hz).

    Line centers are taken relative to ``origin``; lines that land at negative
    frequency fold onto positive frequency, as they would in a real signal.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.full_like(grid, float(floor))
    for t in transitions:
        c = t.center_hz - origin
        g = t.linewidth_hz
        values += t.weight * (lorentzian(grid, c, g) + lorentzian(grid, -c, g))
    rbw = float(np.mean(np.diff(grid))) if len(grid) > 1 else 0.0
    return PowerSpectrum(grid, values, rbw, 0, Provenance.ANALYTIC, {"origin_hz": origin})


@dataclass(frozen=True)
class MultipletEntry:
    center_hz: float
    weight: float
    classes: tuple  # sorted (delta_f, delta_m) pairs merged into this peak
    n_transitions: int


@dataclass
class MultipletTable:
    entries: list
    spacing_by_class: dict  # delta_m -> array of adjacent spacings (Hz)

    @property
    def centers(self) -> np.ndarray:
        return np.array([e.center_hz for e in self.entries])

    def adjacent_spacing(self) -> np.ndarray:
        return np.diff(self.centers)

    def class_spacing(self, delta_m: int) -> float:
        """Mean adjacent spacing of the peaks containing a given Delta M_F class."""
        s = self.spacing_by_class.get(delta_m)
        if s is None or len(s) == 0:
            raise KeyError(f"no spacing available for Delta M_F = {delta_m}")
        return float(np.mean(s))


def multiplet_prediction(
    isotope: Isotope,
    field: FieldConfig,
    shift: float = 0.0,
    temperature: float = 337.0,
    linewidth_khz: float = DEFAULT_LINEWIDTH_KHZ,
    axis=PROBE_AXIS,
    merge_tolerance_hz: float | None = None,
    relative_weight_floor: float = 1e-6,
) -> MultipletTable:
    """Predicted Delta F = 1 peak table, lines closer than the merge tolerance combined.

    The default merge tolerance is a tenth of the linewidth: Delta M_F = +1 and
    -1 lines that differ only through the nuclear Zeeman term collapse into
    one resolvable peak.
    """
    trans = isotope_transitions(isotope, field, temperature, linewidth_khz, axis)
    trans = [t for t in apply_shifts(trans, shift) if t.delta_f == 1]
    if not trans:
        return MultipletTable([], {})
    wmax = max(t.weight for t in trans)
    trans = [t for t in trans if t.weight >= relative_weight_floor * wmax]
    tol = 0.1 * linewidth_khz * 1e3 if merge_tolerance_hz is None else merge_tolerance_hz
    entries = []
    for grp in group_transitions(trans, tol):
        w = sum(t.weight for t in grp)
        center = sum(t.weight * t.center_hz for t in grp) / w
        classes = tuple(sorted({t.line_class for t in grp}))
        entries.append(MultipletEntry(center, w, classes, len(grp)))
    by_class = {}
    for dm in sorted({c[1] for e in entries for c in e.classes}):
        centers = [e.center_hz for e in entries if (1, dm) in e.classes]
        by_class[dm] = np.diff(centers)
    return MultipletTable(entries, by_class)

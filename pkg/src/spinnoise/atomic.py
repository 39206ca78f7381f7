"""Ground-state hyperfine and Zeeman structure of alkali atoms.

Basis convention: the product basis |m_I, m_S> is ordered with m_I as the outer
index and m_S as the inner index, both running from +j down to -j. The probe
axis is fixed along x; a "longitudinal" field points along x and a
"transverse" field along z.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import CONSTANTS, Isotope
from .errors import ConfigError

PROBE_AXIS = np.array([1.0, 0.0, 0.0])
_ORIENTATIONS = {
    "longitudinal": np.array([1.0, 0.0, 0.0]),
    "transverse": np.array([0.0, 0.0, 1.0]),
}
DEFAULT_LINEWIDTH_KHZ = 7.0


@dataclass(frozen=True)
class FieldConfig:
    """Static magnetic field, magnitude in G.

    ``orientation`` is ``"longitudinal"``, ``"transverse"`` or a 3-vector.
    """

    magnitude: float
    orientation: str | Sequence[float] = "transverse"

    def __post_init__(self):
        if not self.magnitude >= 0:
            raise ConfigError(f"field magnitude must be >= 0, got {self.magnitude}")
        if isinstance(self.orientation, str):
            if self.orientation not in _ORIENTATIONS:
                raise ConfigError(
                    f"unknown field orientation {self.orientation!r}; "
                    f"use {sorted(_ORIENTATIONS)} or a unit vector"
                )
        else:
            v = np.asarray(self.orientation, dtype=float)
            if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise ConfigError("field orientation vector must be a normalized 3-vector")
            object.__setattr__(self, "orientation", tuple(float(x) for x in v))

    @property
    def direction(self) -> np.ndarray:
        if isinstance(self.orientation, str):
            return _ORIENTATIONS[self.orientation].copy()
        return np.array(self.orientation)

    @property
    def vector(self) -> np.ndarray:
        return self.magnitude * self.direction


def spin_matrices(j: float):
    """Return (Jx, Jy, Jz) for spin ``j`` in the basis m = j, j-1, ..., -j."""
    m = np.arange(j, -j - 1, -1.0)
    jz = np.diag(m).astype(complex)
    # <m+1|J+|m> = sqrt(j(j+1) - m(m+1))
    raise_elems = np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1))
    jp = np.diag(raise_elems, k=1).astype(complex)
    jm = jp.conj().T
    return (jp + jm) / 2, (jp - jm) / (2j), jz


class _Operators:
    """Spin operators of the coupled nucleus-electron system."""

    def __init__(self, nuclear_spin: float):
        ix, iy, iz = spin_matrices(nuclear_spin)
        sx, sy, sz = spin_matrices(0.5)
        ni = ix.shape[0]
        one_i, one_s = np.eye(ni), np.eye(2)
        self.I = [np.kron(op, one_s) for op in (ix, iy, iz)]
        self.S = [np.kron(one_i, op) for op in (sx, sy, sz)]
        self.F = [a + b for a, b in zip(self.I, self.S)]

    def along(self, ops, axis) -> np.ndarray:
        return sum(a * op for a, op in zip(axis, ops))


def _check_spin(isotope: Isotope):
    twice = 2 * isotope.nuclear_spin
    if abs(twice - round(twice)) > 1e-12 or isotope.nuclear_spin <= 0:
        raise ConfigError(f"nuclear spin must be a positive half-integer, got {isotope.nuclear_spin}")


def build_hamiltonian(isotope: Isotope, field: FieldConfig) -> np.ndarray:
    """Ground-state Hamiltonian A I.S + mu_B (g_S S + g_I I).B in MHz."""
    _check_spin(isotope)
    if not field.magnitude >= 0:
        raise ConfigError("field magnitude must be >= 0")
    ops = _Operators(isotope.nuclear_spin)
    h = isotope.hyperfine_constant * sum(i @ s for i, s in zip(ops.I, ops.S))
    b = CONSTANTS.bohr_magneton * field.vector
    h = h + CONSTANTS.electron_g * ops.along(ops.S, b) + isotope.nuclear_g * ops.along(ops.I, b)
    return h


@dataclass(frozen=True)
class LevelSet:
    """Eigenlevels in MHz, ascending, with eigenvectors as columns.

    ``labels`` holds adiabatic (F, M_F) pairs, with M_F quantized along the
    field direction. It is empty when no isotope was supplied.
    """

    energies: np.ndarray
    eigenvectors: np.ndarray
    labels: tuple = ()
    isotope: Isotope | None = None
    field: FieldConfig | None = None

    def __len__(self):
        return len(self.energies)

    def f_values(self) -> np.ndarray:
        return np.array([lab[0] for lab in self.labels])

    def m_values(self) -> np.ndarray:
        return np.array([lab[1] for lab in self.labels])


def _degenerate_clusters(energies, tol):
    clusters, start = [], 0
    for k in range(1, len(energies) + 1):
        if k == len(energies) or energies[k] - energies[k - 1] > tol:
            clusters.append(list(range(start, k)))
            start = k
    return clusters


def diagonalize(
    h: np.ndarray,
    isotope: Isotope | None = None,
    field: FieldConfig | None = None,
    degeneracy_tol: float = 1e-9,
) -> LevelSet:
    """Diagonalize a Hermitian Hamiltonian.

    When ``isotope`` is given, eigenvectors inside (near-)degenerate clusters are
    rotated to diagonalize F along the field direction (z at zero field), and
    every level receives an adiabatic (F, M_F) label. Within one M_F the levels
    never cross, so the higher-energy member is the F = I + 1/2 state.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ConfigError("Hamiltonian must be a square matrix")
    scale = max(np.linalg.norm(h), 1.0)
    if np.linalg.norm(h - h.conj().T) > 1e-12 * scale:
        raise ConfigError("Hamiltonian is not Hermitian")
    h = (h + h.conj().T) / 2
    energies, vecs = np.linalg.eigh(h)
    if isotope is None:
        return LevelSet(energies=energies, eigenvectors=vecs)

    ops = _Operators(isotope.nuclear_spin)
    axis = field.direction if field is not None and field.magnitude > 0 else np.array([0.0, 0.0, 1.0])
    f_axis = ops.along(ops.F, axis)
    tol = degeneracy_tol * max(np.max(np.abs(energies)), 1.0)
    for cluster in _degenerate_clusters(energies, tol):
        if len(cluster) < 2:
            continue
        sub = vecs[:, cluster]
        m_sub = sub.conj().T @ f_axis @ sub
        mvals, rot = np.linalg.eigh((m_sub + m_sub.conj().T) / 2)
        vecs[:, cluster] = sub @ rot  # eigh already orders by M_F ascending
    # F along the field commutes with H, so the rotated vectors are still exact
    # eigenvectors; re-read their energies instead of averaging the cluster
    energies = np.real(np.einsum("ik,ij,jk->k", vecs.conj(), h, vecs))
    order = np.argsort(energies, kind="stable")
    energies, vecs = energies[order], vecs[:, order]
    m_f =np.real(np.einsum("ik,ij,jk->k", vecs.conj(), f_axis, vecs))
    m_f = np.round(m_f * 2) / 2

    f_labels = np.empty(len(energies))
    for m in np.unique(m_f):
        idx = np.flatnonzero(m_f == m)
        order = idx[np.argsort(energies[idx])]
        f_labels[order[-1]] = isotope.f_upper
        for k in order[:-1]:
            f_labels[k] = isotope.f_lower
    labels = tuple((float(f), float(m)) for f, m in zip(f_labels, m_f))
    return LevelSet(energies=energies, eigenvectors=vecs, labels=labels, isotope=isotope, field=field)


def solve_levels(isotope: Isotope, field: FieldConfig) -> LevelSet:
    return diagonalize(build_hamiltonian(isotope, field), isotope, field)


def breit_rabi_levels(isotope: Isotope, magnitude: float) -> list[tuple[float, float, float]]:
    """Closed-form (F, M_F, energy/MHz) for a J = 1/2 ground state."""
    if not magnitude >= 0:
        raise ConfigError("field magnitude must be >= 0")
    i = isotope.nuclear_spin
    gs, gi = CONSTANTS.electron_g, isotope.nuclear_g
    de = isotope.hyperfine_splitting
    mub = CONSTANTS.bohr_magneton * magnitude
    x = (gs - gi) * mub / de
    offset = -de / (2 * (2 * i + 1))
    out = []
    for m in np.arange(-(i + 0.5), i + 0.5 + 1e-9, 1.0):
        base = offset + gi * m * mub
        if abs(abs(m) - (i + 0.5)) < 1e-9:
            # stretched states stay linear in B
            out.append((i + 0.5, m, base + de / 2 * (1 + np.sign(m) * x)))
            continue
        root = np.sqrt(1 + 4 * m * x / (2 * i + 1) + x * x)
        out.append((i + 0.5, m, base + de / 2 * root))
        out.append((i - 0.5, m, base - de / 2 * root))
    return out


def breit_rabi(isotope: Isotope, magnitude: float) -> np.ndarray:
    """Sorted Breit-Rabi energies (MHz); independent check on :func:`diagonalize`."""
    return np.sort([e for _, _, e in breit_rabi_levels(isotope, magnitude)])


def spin_projection_weights(levels: LevelSet, axis=PROBE_AXIS) -> np.ndarray:
    """Matrix of |<m|S.axis|n>|^2 in the eigenbasis."""
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-12:
        raise ConfigError("projection axis must be a normalized 3-vector")
    dim = len(levels.energies)
    ops = _Operators((dim // 2 - 1) / 2)
    s_axis = ops.along(ops.S, axis)
    v = levels.eigenvectors
    return np.abs(v.conj().T @ s_axis @ v) ** 2


def occupations(levels: LevelSet, temperature: float) -> np.ndarray:
    """Boltzmann populations rho_m, normalized to one."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    e = (levels.energies - levels.energies.min()) * 1e6
    rho = np.exp(-CONSTANTS.planck * e / (CONSTANTS.boltzmann * temperature))
    return rho / rho.sum()


@dataclass(frozen=True)
class Transition:
    """One unordered level pair contributing a Lorentzian to the spin-noise spectrum.

    ``frequency_mhz`` is the unshifted |nu_n - nu_m|; ``shift_hz`` the collisional
    shift added on top. ``delta_m`` is M_F(upper F) - M_F(lower F) for
    inter-hyperfine lines and M_F(higher) - M_F(lower level) within a manifold.
    """

    lower_index: int
    upper_index: int
    frequency_mhz: float
    weight: float
    linewidth_khz: float = DEFAULT_LINEWIDTH_KHZ
    shift_hz: float = 0.0
    delta_f: int = 0
    delta_m: int = 0
    isotope: str = ""
    zero_frequency: bool = False
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigError("transition weight must be >= 0")
        if not self.linewidth_khz > 0:
            raise ConfigError("transition linewidth must be positive")
        if self.frequency_mhz < 0:
            raise ConfigError("transition frequency must be >= 0")

    @property
    def linewidth_hz(self) -> float:
        return self.linewidth_khz * 1e3

    @property
    def center_hz(self) -> float:
        return self.frequency_mhz * 1e6 + self.shift_hz

    @property
    def line_class(self) -> tuple[int, int]:
        return (self.delta_f, self.delta_m)


def enumerate_transitions(
    levels: LevelSet,
    weights: np.ndarray,
    rho: np.ndarray,
    default_linewidth: float = DEFAULT_LINEWIDTH_KHZ,
    weight_floor: float = 1e-10,
) -> list[Transition]:
    """List every unordered pair m < n whose weight (rho_m + rho_n)|S_mn|^2 clears the floor."""
    n_levels = len(levels.energies)
    has_labels = bool(levels.labels)
    name = levels.isotope.name if levels.isotope is not None else ""
    out = []
    for a in range(n_levels):
        for b in range(a + 1, n_levels):
            w = (rho[a] + rho[b]) * weights[a, b]
            if w < weight_floor:
                continue
            freq = float(levels.energies[b] - levels.energies[a])
            df = dm = 0
            labs = ()
            if has_labels:
                (fa, ma), (fb, mb) = levels.labels[a], levels.labels[b]
                labs = (levels.labels[a], levels.labels[b])
                df = int(round(abs(fb - fa)))
                if fa == fb:
                    dm = int(round(mb - ma))
                elif fb > fa:
                    dm = int(round(mb - ma))
                else:
                    dm = int(round(ma - mb))
            out.append(
                Transition(
                    lower_index=a,
                    upper_index=b,
                    frequency_mhz=max(freq, 0.0),
                    weight=float(w),
                    linewidth_khz=default_linewidth,
                    delta_f=df,
                    delta_m=dm,
                    isotope=name,
                    zero_frequency=freq < 1e-6,
                    labels=labs,
                )
            )
    return out


def isotope_transitions(
    isotope: Isotope,
    field: FieldConfig,
    temperature: float = 337.0,
    linewidth_khz: float = DEFAULT_LINEWIDTH_KHZ,
    axis=PROBE_AXIS,
    weight_floor: float = 1e-10,
    scale: float = 1.0,
) -> list[Transition]:
    """Convenience chain levels -> weights -> populations -> transitions.

    ``scale`` multiplies every weight (e.g. by isotopic abundance).
    """
    levels = solve_levels(isotope, field)
    w = spin_projection_weights(levels, axis)
    rho = occupations(levels, temperature)
    trans = enumerate_transitions(levels, w, rho, linewidth_khz, weight_floor)
    if scale != 1.0:
        from dataclasses import replace

        trans = [replace(t, weight=t.weight * scale) for t in trans]
    return trans


def group_transitions(transitions, tolerance_hz: float):
    """Cluster transitions whose centers lie within ``tolerance_hz`` of a neighbor."""
    ordered = sorted(transitions, key=lambda t: t.center_hz)
    groups = []
    for t in ordered:
        if groups and t.center_hz - groups[-1][-1].center_hz <= tolerance_hz:
            groups[-1].append(t)
        else:
            groups.append([t])
    return groups

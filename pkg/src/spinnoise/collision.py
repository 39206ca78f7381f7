"""Lennard-Jones collisional frequency shifts.

The shift of an alkali transition from binary collisions with a buffer gas is
the thermal average of the level perturbation over the pair distribution,

    nu_shift = 4 pi n  int dE(r) exp(-U(r)/k_B T) r^2 dr,

with U and dE both of Lennard-Jones form. U is carried as a temperature
(epsilon1 in K) and dE as a frequency (epsilon2 in Hz).
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .constants import CONSTANTS
from .errors import ConfigError, QuadratureError

ANGSTROM3 = 1e-30  # m^3
QUAD_EPSREL = 1e-8
QUAD_PANELS = 200  # QUADPACK subinterval budget
R_MIN_FACTOR = 0.4
R_MAX_FACTOR = 25.0


@dataclass(frozen=True)
class LennardJonesPair:
    """LJ parameters: epsilon1 [K], sigma1 [A], epsilon2 [Hz], sigma2 [A].

    epsilon2 = 0 is allowed and switches the perturbation off.
    """

    epsilon1: float
    sigma1: float
    epsilon2: float
    sigma2: float

    def __post_init__(self):
        if not self.epsilon1 > 0:
            raise ConfigError("epsilon1 must be positive")
        if not self.epsilon2 >= 0:
            raise ConfigError("epsilon2 must be non-negative")
        for name in ("sigma1", "sigma2"):
            v = getattr(self, name)
            if not 0.5 < v < 20.0:
                raise ConfigError(f"{name} = {v} A is outside the (0.5, 20) A sanity window")

    def as_dict(self) -> dict:
        return {"epsilon1": self.epsilon1, "sigma1": self.sigma1,
                "epsilon2": self.epsilon2, "sigma2": self.sigma2}

    def replace(self, **kw) -> "LennardJonesPair":
        d = self.as_dict()
        d.update(kw)
        return LennardJonesPair(**d)


class DensityMode(str, enum.Enum):
    SEALED_CELL = "sealed-cell"
    CONSTANT_PRESSURE = "constant-pressure"


@dataclass(frozen=True)
class GasState:
    pressure: float  # torr
    temperature: float  # K
    number_density: float  # m^-3

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.pressure < 0 or self.number_density < 0:
            raise ConfigError("pressure and density must be non-negative")


@dataclass(frozen=True)
class ReferenceConditions:
    """Reference point (P0 [torr], T0 [K]) and how density follows temperature.

    In sealed-cell mode a pressure label P means the fill pressure at T0, so the
    density is P / (k_B T0) at every temperature.
    """

    P0: float = 250.0
    T0: float = 337.0
    density_mode: DensityMode = DensityMode.SEALED_CELL

    def __post_init__(self):
        if not (self.P0 > 0 and self.T0 > 0):
            raise ConfigError("reference pressure and temperature must be positive")
        object.__setattr__(self, "density_mode", DensityMode(self.density_mode))

    def density(self, pressure: float, temperature: float) -> float:
        t_ref = self.T0 if self.density_mode is DensityMode.SEALED_CELL else temperature
        return pressure * CONSTANTS.torr_to_pascal / (CONSTANTS.boltzmann * t_ref)

    def gas(self, pressure: float, temperature: float) -> GasState:
        return GasState(pressure, temperature, self.density(pressure, temperature))


@dataclass(frozen=True)
class BetaDelta:
    beta: float  # Hz/torr
    delta: float  # Hz/(K torr)
    beta_err: float = 0.0
    delta_err: float = 0.0

    def __post_init__(self):
        if self.beta_err < 0 or self.delta_err < 0:
            raise ConfigError("coefficient errors must be non-negative")


def lj_energy(r, epsilon, sigma):
    """4 eps [(sigma/r)^12 - (sigma/r)^6], in the unit of ``epsilon``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ConfigError("separation r must be positive")
    if not (epsilon > 0 and sigma > 0):
        raise ConfigError("epsilon and sigma must be positive")
    s6 = (sigma / r) ** 6
    out = 4.0 * epsilon * (s6 * s6 - s6)
    return float(out) if out.ndim == 0 else out


def gas_state(pressure: float, temperature: float) -> GasState:
    """Ideal-gas state at pressure [torr] and temperature [K]."""
    if not (pressure > 0 and temperature > 0):
        raise ConfigError("pressure and temperature must be positive")
    n = pressure * CONSTANTS.torr_to_pascal / (CONSTANTS.boltzmann * temperature)
    return GasState(pressure, temperature, n)


def integration_bounds(pair: LennardJonesPair) -> tuple[float, float]:
    return (R_MIN_FACTOR * min(pair.sigma1, pair.sigma2),
            R_MAX_FACTOR * max(pair.sigma1, pair.sigma2))


def shift_integrand(r, pair: LennardJonesPair, temperature: float):
    """dE(r) exp(-U(r)/k_B T) r^2 in Hz A^2."""
    s1 = (pair.sigma1 / r) ** 6
    s2 = (pair.sigma2 / r) ** 6
    u_over_t = 4.0 * pair.epsilon1 * (s1 * s1 - s1) / temperature
    de = 4.0 * pair.epsilon2 * (s2 * s2 - s2)
    return de * np.exp(-u_over_t) * r * r


def dispersion_tail(pair: LennardJonesPair, r_max: float) -> float:
    """Integral of -4 eps2 sigma2^6 r^-4 from r_max to infinity (Hz A^3)."""
    return -4.0 * pair.epsilon2 * pair.sigma2 ** 6 / (3.0 * r_max ** 3)


def shift_per_density(pair: LennardJonesPair, temperature: float, epsrel: float = QUAD_EPSREL):
    """Collisional shift divided by n (Hz m^3) and its absolute error estimate."""
    if pair.epsilon2 == 0:
        return 0.0, 0.0
    r_min, r_max = integration_bounds(pair)
    breaks = sorted({pair.sigma1, pair.sigma2, 2 ** (1 / 6) * pair.sigma1, 2 ** (1 / 6) * pair.sigma2})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, abserr, info, *msg = integrate.quad(
            shift_integrand, r_min, r_max, args=(pair, temperature), points=breaks,
            epsabs=0.0, epsrel=epsrel, limit=QUAD_PANELS, full_output=1,
        )
    total = value + dispersion_tail(pair, r_max)
    if msg or not math.isfinite(value) or abserr > max(epsrel * 10 * abs(total), 1e-300):
        raise QuadratureError(
            f"collision integral did not converge (T={temperature} K): "
            f"value={total:.6e}, error estimate={abserr:.3e}",
            value=total, abserr=abserr,
        )
    factor = 4.0 * math.pi * ANGSTROM3
    return factor * total, factor * abserr


def collisional_shift(pair: LennardJonesPair, gas: GasState) -> float:
    """Collisional frequency shift in Hz."""
    if gas.number_density == 0:
        return 0.0
    per_n, _ = shift_per_density(pair, gas.temperature)
    return gas.number_density * per_n


def shift_at(pair: LennardJonesPair, pressure: float, temperature: float,
             ref: ReferenceConditions) -> float:
    return collisional_shift(pair, ref.gas(pressure, temperature))


def beta_delta(pair: LennardJonesPair, ref: ReferenceConditions, step: float = 1.0) -> BetaDelta:
    """Linear coefficients of the shift around (P0, T0).

    delta is a Richardson-extrapolated central difference (steps ``step`` and
    ``step/2``); its error estimate is the size of the Richardson correction.
    """
    n0_shift, n0_err = shift_per_density(pair, ref.T0)
    n0 = ref.density(ref.P0, ref.T0)
    beta = n0 * n0_shift / ref.P0

    def nu(t):
        return shift_at(pair, ref.P0, t, ref)

    def central(h):
        return (nu(ref.T0 + h) - nu(ref.T0 - h)) / (2 * h)

    d_h, d_h2 = central(step), central(step / 2)
    deriv = (4 * d_h2 - d_h) / 3
    return BetaDelta(
        beta=beta,
        delta=deriv / ref.P0,
        beta_err=abs(n0 * n0_err / ref.P0),
        delta_err=abs(d_h2 - d_h) / 3 / ref.P0,
    )


class Interaction(str, enum.Enum):
    PAULI_REPULSION = "pauli-repulsion-dominant"
    VAN_DER_WAALS = "van-der-waals-dominant"
    BALANCED = "balanced"


def classify_interaction(shift_hz: float, threshold_hz: float = 1.0) -> Interaction:
    """Dominant interaction inferred from the sign of a hyperfine shift."""
    if abs(shift_hz) <= threshold_hz:
        return Interaction.BALANCED
    return Interaction.PAULI_REPULSION if shift_hz > 0 else Interaction.VAN_DER_WAALS

"""Physical constants and the isotope table.

All constants live in :data:`CONSTANTS`; nothing else in the package hard-codes
a CODATA number.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import yaml

from .errors import ConfigError


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA 2018 values in the units used throughout the package."""

    bohr_magneton: float = 1.39962449361  # mu_B / h in MHz/G
    boltzmann: float = 1.380649e-23  # J/K
    planck: float = 6.62607015e-34  # J/Hz
    electron_g: float = 2.00231930436256  # |g_S|
    torr_to_pascal: float = 101325.0 / 760.0
    kelvin_per_mev: float = 11.604518121550082  # 1 meV / k_B

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"constant {name} must be positive, got {value}")


CONSTANTS = PhysicalConstants()


def mev_to_kelvin(energy_mev: float) -> float:
    return energy_mev * CONSTANTS.kelvin_per_mev


def kelvin_to_mev(temperature_k: float) -> float:
    return temperature_k / CONSTANTS.kelvin_per_mev


@dataclass(frozen=True)
class Isotope:
    """Ground-state parameters of a J = 1/2 alkali isotope.

    ``hyperfine_constant`` is A in H = A I.S, in MHz.
    """

    name: str
    nuclear_spin: float
    hyperfine_constant: float
    nuclear_g: float
    abundance: float
    label: str = ""

    def __post_init__(self):
        twice = 2 * self.nuclear_spin
        if self.nuclear_spin <= 0 or abs(twice - round(twice)) > 1e-12:
            raise ConfigError(
                f"{self.name}: nuclear spin must be a positive multiple of 1/2, "
                f"got {self.nuclear_spin}"
            )
        if not self.hyperfine_constant > 0:
            raise ConfigError(f"{self.name}: hyperfine constant must be positive")
        if not 0 <= self.abundance <= 1:
            raise ConfigError(f"{self.name}: abundance must lie in [0, 1]")

    @property
    def dimension(self) -> int:
        """Size of the |m_I, m_S> product basis."""
        return 2 * int(round(2 * self.nuclear_spin + 1))

    @property
    def hyperfine_splitting(self) -> float:
        """Zero-field splitting A (I + 1/2) in MHz."""
        return self.hyperfine_constant * (self.nuclear_spin + 0.5)

    @property
    def f_upper(self) -> float:
        return self.nuclear_spin + 0.5

    @property
    def f_lower(self) -> float:
        return self.nuclear_spin - 0.5

    def g_f(self, upper: bool = True) -> float:
        """Low-field Lande factor of the upper or lower manifold (nuclear term included)."""
        i = self.nuclear_spin
        gs, gi = CONSTANTS.electron_g, self.nuclear_g
        if upper:
            return (gs + 2 * i * gi) / (2 * i + 1)
        return (-gs + (2 * i + 2) * gi) / (2 * i + 1)


@lru_cache(maxsize=None)
def _isotope_table() -> dict:
    text = resources.files("spinnoise").joinpath("data/isotopes.yaml").read_text()
    return yaml.safe_load(text)["isotopes"]


def isotope_names() -> list[str]:
    return sorted(_isotope_table())


def get_isotope(name: str) -> Isotope:
    """Look up an isotope by key (``"rb85"``, ``"rb87"``) or label (``"87Rb"``)."""
    table = _isotope_table()
    key = name.lower()
    if key not in table:
        by_label = {v["label"].lower(): k for k, v in table.items()}
        if key not in by_label:
            raise ConfigError(f"unknown isotope {name!r}; known: {sorted(table)}")
        key = by_label[key]
    row = table[key]
    spin = float(row["nuclear_spin"])
    return Isotope(
        name=key,
        nuclear_spin=spin,
        hyperfine_constant=float(row["hyperfine_splitting_mhz"]) / (spin + 0.5),
        nuclear_g=float(row["nuclear_g"]),
        abundance=float(row["abundance"]),
        label=row.get("label", key),
    )


def hyperfine_ratio(a: str = "rb87", b: str = "rb85") -> float:
    return get_isotope(a).hyperfine_splitting / get_isotope(b).hyperfine_splitting

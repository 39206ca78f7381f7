"""Time-domain spin-noise synthesis.

Each transition is an independent complex Ornstein-Uhlenbeck process rotating
at its carrier; its real part is the observable. An OU process with
relaxation rate 2 pi gamma has a Lorentzian spectrum of half-width gamma, and
with variance pi * weight its single-sided PSD matches the analytic model
line for line. A white Gaussian floor stands in for photon shot noise.

Random numbers come from counter-based Philox streams addressed by
(root seed, stream, frame), so a trace does not depend on how the work is
split across threads.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import signal

from ..errors import AliasingError, ConfigError

DEFAULT_FRAME_LENGTH = 1 << 17
DEFAULT_SAMPLE_BUDGET = 1 << 32


class BandMode(str, enum.Enum):
    FULL_CHAIN = "full-chain"
    BASEBAND = "baseband"


@dataclass
class NoiseTrace:
    """Real-valued sampled signal.

    ``origin_frequency`` is the absolute frequency that sits at 0 Hz in this
    trace (0 for a full-chain trace).
    """

    sample_rate: float
    samples: np.ndarray
    seed: int = 0
    band_mode: BandMode = BandMode.BASEBAND
    origin_frequency: float = 0.0
    start_index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.band_mode = BandMode(self.band_mode)
        if not self.sample_rate > 0:
            raise ConfigError("sample rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def stream_rng(seed: int, stream: int, frame: int) -> np.random.Generator:
    """Philox generator for one (stream, frame) cell; frame -1 is the init cell."""
    key = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)
    counter = np.array([0, 0, frame + 1, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a named sub-task, stable across runs."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class _Line:
    carrier: float
    gamma: float
    weight: float


def _collect_lines(transitions, sample_rate, origin):
    nyquist = sample_rate / 2
    lines = []
    for t in transitions:
        if t.weight == 0:
            continue
        c = t.center_hz - origin
        if not 0 < c < nyquist:
            raise AliasingError(
                f"transition {t.isotope} {t.lower_index}<->{t.upper_index} "
                f"(class {t.line_class}) has carrier {c:.6g} Hz outside (0, {nyquist:.6g}) Hz"
            )
        for i, ln in enumerate(lines):
            if ln.gamma == t.linewidth_hz and abs(ln.carrier - c) <= 1e-6 * ln.gamma:
                lines[i] = _Line(ln.carrier, ln.gamma, ln.weight + t.weight)
                break
        else:
            lines.append(_Line(c, t.linewidth_hz, t.weight))
    return lines


class _OULine:
    def __init__(self, line: _Line, sample_rate: float, seed: int, stream: int):
        dt = 1.0 / sample_rate
        a = np.exp(-2 * np.pi * line.gamma * dt)
        self.pole = a * np.exp(2j * np.pi * line.carrier * dt)
        self.drive = np.sqrt(2 * np.pi * line.weight * (1 - a * a))
        self.seed, self.stream = seed, stream
        g = stream_rng(seed, stream, -1).standard_normal(2)
        self.state = np.sqrt(np.pi * line.weight) * complex(g[0], g[1])

    def frame(self, index: int, n: int) -> np.ndarray:
        rng = stream_rng(self.seed, self.stream, index)
        xi = rng.standard_normal(2 * n).view(np.complex128)
        xi *= self.drive / np.sqrt(2)
        z, _ = signal.lfilter([1.0], [1.0, -self.pole], xi, zi=[self.pole * self.state])
        self.state = z[-1]
        return z.real


def iter_frames(
    transitions,
    sample_rate: float,
    n_samples: int,
    noise_floor: float = 0.0,
    seed: int = 0,
    band_mode: BandMode | str = BandMode.BASEBAND,
    origin_frequency: float = 0.0,
    frame_length: int = DEFAULT_FRAME_LENGTH,
    threads: int = 1,
    sample_budget: int = DEFAULT_SAMPLE_BUDGET,
) -> Iterator[NoiseTrace]:
    """Yield consecutive frames of a synthesized trace.

    ``noise_floor`` is the single-sided white PSD level.
    """
    band_mode = BandMode(band_mode)
    if band_mode is BandMode.FULL_CHAIN and origin_frequency != 0:
        raise ConfigError("full-chain traces have origin_frequency = 0")
    if n_samples > sample_budget:
        raise ConfigError(f"{n_samples} samples exceeds the budget of {sample_budget}")
    if noise_floor < 0:
        raise ConfigError("noise floor must be non-negative")
    lines = [_OULine(ln, sample_rate, seed, k + 1)
             for k, ln in enumerate(_collect_lines(transitions, sample_rate, origin_frequency))]
    floor_std = np.sqrt(noise_floor * sample_rate / 2)
    pool = ThreadPoolExecutor(threads) if threads > 1 and len(lines) > 1 else None
    try:
        start = 0
        frame = 0
        while start < n_samples:
            n = min(frame_length, n_samples - start)
            if floor_std > 0:
                x = floor_std * stream_rng(seed, 0, frame).standard_normal(n)
            else:
                x = np.zeros(n)
            if pool is not None:
                parts = list(pool.map(lambda ln: ln.frame(frame, n), lines))
            else:
                parts = [ln.frame(frame, n) for ln in lines]
            for p in parts:  # fixed summation order keeps results bitwise stable
                x += p
            yield NoiseTrace(sample_rate, x, seed, band_mode, origin_frequency, start)
            start += n
            frame += 1
    finally:
        if pool is not None:
            pool.shutdown()


def synthesize(
    transitions,
    sample_rate: float,
    duration: float,
    noise_floor: float = 0.0,
    seed: int = 0,
    band_mode: BandMode | str = BandMode.BASEBAND,
    origin_frequency: float = 0.0,
    frame_length: int = DEFAULT_FRAME_LENGTH,
    threads: int = 1,
    sample_budget: int = DEFAULT_SAMPLE_BUDGET,
) -> NoiseTrace:
    """Synthesize a full trace of the given duration (s)."""
    n = int(round(duration * sample_rate))
    if n <= 0:
        raise ConfigError("duration must cover at least one sample")
    frames = list(iter_frames(transitions, sample_rate, n, noise_floor, seed, band_mode,
                              origin_frequency, frame_length, threads, sample_budget))
    samples = np.concatenate([f.samples for f in frames])
    return NoiseTrace(sample_rate, samples, seed, BandMode(band_mode), origin_frequency)

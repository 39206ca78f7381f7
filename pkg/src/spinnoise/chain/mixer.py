"""Down-conversion: reference mixing, FIR low-pass and decimation.

The low-pass is a Blackman-windowed sinc. Its passband edge is the plan's
cutoff and its stopband starts where out-of-band content would alias back
into the passband after decimation (output rate minus cutoff). Tap counts are
grown until the stopband reaches 60 dB and the passband droop stays under
0.5 dB; the filter is linear phase, so line centers are not biased.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal

from ..errors import ConfigError
from .synth import BandMode, NoiseTrace, stream_rng

STOPBAND_DB = 60.0
MAX_DROOP_DB = 0.5
_PHASE_STREAM = 1 << 20
PHASE_KNOT = 64  # samples between phase-walk knots
KNOT_BLOCK = 1024  # knot increments drawn per random-number cell


@dataclass(frozen=True)
class Reference:
    frequency: float  # Hz, absolute
    label: str = ""


@dataclass(frozen=True)
class DownconversionPlan:
    references: tuple
    lowpass_cutoff: float
    decimation_factor: int = 1
    reference_linewidth: float = 0.0  # FWHM of the reference line, Hz
    stopband_edge: float | None = None

    def __post_init__(self):
        refs = tuple(r if isinstance(r, Reference) else Reference(*r) for r in self.references)
        object.__setattr__(self, "references", refs)
        if not refs:
            raise ConfigError("a down-conversion plan needs at least one reference")
        if int(self.decimation_factor) != self.decimation_factor or self.decimation_factor < 1:
            raise ConfigError("decimation factor must be an integer >= 1")
        if not self.lowpass_cutoff > 0:
            raise ConfigError("low-pass cutoff must be positive")
        if self.reference_linewidth < 0:
            raise ConfigError("reference linewidth must be >= 0")

    def validate(self, sample_rate: float):
        out_nyquist = sample_rate / (2 * self.decimation_factor)
        if not self.lowpass_cutoff < out_nyquist:
            raise ConfigError(
                f"cutoff {self.lowpass_cutoff:.6g} Hz must lie below the decimated Nyquist "
                f"frequency {out_nyquist:.6g} Hz (rate {sample_rate:.6g}, factor {self.decimation_factor})"
            )

    def stop_edge(self, sample_rate: float) -> float:
        if self.stopband_edge is not None:
            return self.stopband_edge
        if self.decimation_factor == 1:
            return sample_rate / 2
        return sample_rate / self.decimation_factor - self.lowpass_cutoff


def _response_db(taps, freqs, fs):
    _, h = signal.freqz(taps, worN=freqs, fs=fs)
    return 20 * np.log10(np.maximum(np.abs(h), 1e-300))


def design_lowpass(sample_rate: float, cutoff: float, stop: float, decimation: int = 1,
                   max_taps: int = 1 << 14) -> np.ndarray:
    """Shortest Blackman windowed-sinc low-pass meeting the stopband/droop targets.

    The tap count N satisfies (N - 1) % lcm(2, decimation) == 0, which the
    streaming polyphase decimator relies on.
    """
    if not cutoff < stop <= sample_rate / 2 + 1e-9:
        raise ConfigError(f"need cutoff < stopband edge <= Nyquist, got {cutoff}, {stop}")
    step = int(np.lcm(2, decimation))
    # Blackman needs roughly 5.5 fs / transition taps for its full 74 dB; 60 dB is
    # reached sooner, so search upward from a shorter length.
    n = int(np.ceil(3.0 * sample_rate / (stop - cutoff)))
    n = step * int(np.ceil((n - 1) / step)) + 1
    mid = 0.5 * (cutoff + stop)
    pass_grid = np.linspace(0, cutoff, 64)
    stop_grid = np.linspace(stop, sample_rate / 2, 512)
    while n <= max_taps:
        taps = signal.firwin(n, mid, window="blackman", fs=sample_rate)
        droop = -_response_db(taps, pass_grid, sample_rate).min()
        atten = -_response_db(taps, stop_grid, sample_rate).max()
        if droop <= MAX_DROOP_DB and atten >= STOPBAND_DB:
            return taps
        n += step
    raise ConfigError("could not meet the low-pass ripple and attenuation targets within the tap budget")


class _LocalOscillator:
    """cos(2 pi f n / fs + phi_n), phi a Wiener walk for a Lorentzian of FWHM linewidth.

    The walk is drawn on knots every ``PHASE_KNOT`` samples and its phasor
    (cos phi, sin phi) is interpolated linearly in between. Increments per knot
    are a few milliradians at sub-Hz linewidths, so the interpolation error is
    far below the phase noise itself while the per-sample cost stays small.
    """

    def __init__(self, frequency, sample_rate, linewidth, seed, stream):
        self.ratio = frequency / sample_rate
        frac = Fraction(self.ratio).limit_denominator(1 << 16)
        self.period = None
        if abs(float(frac) - self.ratio) < 1e-15:
            q = frac.denominator
            k = np.arange(q)
            self.period = q
            base = 2 * np.pi * ((frac.numerator * k) % q) / q
            self.cos_table, self.sin_table = np.cos(base), np.sin(base)
        # knot spacing: a multiple of the table period when possible, so every block
        # starts at table phase 0 and the LO block is a fixed mix of four rows
        self.knot = PHASE_KNOT
        self._rows = None
        if self.period is not None and self.period <= 1 << 12:
            self.knot = self.period * max(1, -(-PHASE_KNOT // self.period))
            reps = self.knot // self.period
            cb, sb = np.tile(self.cos_table, reps), np.tile(self.sin_table, reps)
            ramp = np.arange(self.knot) / self.knot
            self._rows = np.stack([cb - cb * ramp, cb * ramp, -(sb - sb * ramp), -sb * ramp])
        self.phase_step = np.sqrt(2 * np.pi * linewidth * self.knot / sample_rate)
        self.seed, self.stream = seed, stream
        self.n = 0
        self._tiled = None
        self._k0 = 0  # knot index of _knots[0]
        self._knots = np.zeros(1)

    def _base(self, n, need_sin):
        if self.period is not None:
            if self._tiled is None or len(self._tiled[0]) < n + self.period:
                reps = n // self.period + 2
                self._tiled = (np.tile(self.cos_table, reps), np.tile(self.sin_table, reps))
            start = self.n % self.period
            return self._tiled[0][start:start + n], self._tiled[1][start:start + n]
        k = self.n + np.arange(n, dtype=float)
        theta = 2 * np.pi * np.mod(self.ratio * k, 1.0)
        return np.cos(theta), (np.sin(theta) if need_sin else None)

    def _increments(self, first, count):
        """Unit-variance increments for knots first+1 .. first+count.

        Cells hold KNOT_BLOCK increments each, so the walk does not depend on
        how the stream is chunked.
        """
        b0, b1 = first // KNOT_BLOCK, (first + count - 1) // KNOT_BLOCK
        cells = [stream_rng(self.seed, self.stream, b).standard_normal(KNOT_BLOCK)
                 for b in range(b0, b1 + 1)]
        flat = np.concatenate(cells) if len(cells) > 1 else cells[0]
        off = first - b0 * KNOT_BLOCK
        return flat[off:off + count]

    def _extend_knots(self, end):
        last = -(-end // self.knot)
        have = self._k0 + len(self._knots) - 1
        if last > have:
            steps = self._increments(have, last - have)
            self._knots = np.concatenate([self._knots, self._knots[-1] + self.phase_step * np.cumsum(steps)])

    def _drop_knots(self, end):
        drop = end // self.knot - self._k0
        self._knots = self._knots[drop:]
        self._k0 += drop

    def _noisy(self, n):
        start, end = self.n, self.n + n
        self._extend_knots(end)
        ck, sk = np.cos(self._knots), np.sin(self._knots)
        if self._rows is not None and start % self.knot == 0 and n % self.knot == 0:
            i0 = start // self.knot - self._k0
            m = n // self.knot
            coef = np.column_stack([ck[i0:i0 + m], ck[i0 + 1:i0 + m + 1],
                                    sk[i0:i0 + m], sk[i0 + 1:i0 + m + 1]])
            out = (coef @ self._rows).ravel()
        else:
            c, s = self._base(n, True)
            pos = np.arange(start, end) / self.knot - self._k0
            grid = np.arange(len(self._knots))
            out = c * np.interp(pos, grid, ck)
            out -= s * np.interp(pos, grid, sk)
        self._drop_knots(end)
        return out

    def next(self, n: int) -> np.ndarray:
        if self.phase_step == 0:
            c, _ = self._base(n, False)
        else:
            c = self._noisy(n)
        self.n += n
        return c


class FIRDecimator:
    """Streaming polyphase FIR decimator; output index k is input index k * factor."""

    def __init__(self, taps: np.ndarray, factor: int):
        self.taps = np.asarray(taps, dtype=float)
        self.factor = int(factor)
        self.ntaps = len(self.taps)
        if (self.ntaps - 1) % self.factor:
            raise ConfigError("FIR length - 1 must be a multiple of the decimation factor")
        self.tail = np.zeros(self.ntaps - 1)
        self.phase = 0  # offset of the next output sample within the next input block
        self.skip = (self.ntaps - 1) // self.factor

    @property
    def settle_outputs(self) -> int:
        """Outputs affected by the zero initial history."""
        return int(np.ceil((self.ntaps - 1) / self.factor))

    def process(self, x: np.ndarray, gain: np.ndarray | None = None) -> np.ndarray:
        """Filter and decimate ``x`` (multiplied elementwise by ``gain`` if given)."""
        m = len(x)
        buf = np.empty(len(self.tail) + m)
        buf[:len(self.tail)] = self.tail
        if gain is None:
            buf[len(self.tail):] = x
        else:
            np.multiply(x, gain, out=buf[len(self.tail):])
        n_out = 0 if m <= self.phase else (m - self.phase + self.factor - 1) // self.factor
        if n_out:
            y = signal.upfirdn(self.taps, buf[self.phase:], up=1, down=self.factor)
            y = y[self.skip:self.skip + n_out]
        else:
            y = np.zeros(0)
        self.tail = buf[len(buf) - (self.ntaps - 1):] if self.ntaps > 1 else np.zeros(0)
        self.phase = (self.phase - m) % self.factor
        return y


@dataclass
class DownConverter:
    """Stateful mixer + low-pass + decimator for one reference channel."""

    plan: DownconversionPlan
    reference_index: int
    sample_rate: float
    origin_frequency: float = 0.0
    seed: int = 0
    taps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.plan.validate(self.sample_rate)
        ref = self.plan.references[self.reference_index]
        self.lo_frequency = abs(ref.frequency - self.origin_frequency)
        if self.lo_frequency >= self.sample_rate / 2:
            raise ConfigError(
                f"reference {ref.label or ref.frequency} sits {self.lo_frequency:.6g} Hz above the trace "
                f"origin, beyond its Nyquist frequency {self.sample_rate / 2:.6g} Hz"
            )
        self.taps = design_lowpass(self.sample_rate, self.plan.lowpass_cutoff,
                                   self.plan.stop_edge(self.sample_rate), self.plan.decimation_factor)
        self.lo = _LocalOscillator(self.lo_frequency, self.sample_rate, self.plan.reference_linewidth,
                                   self.seed, _PHASE_STREAM + self.reference_index)
        self.decimator = FIRDecimator(self.taps, self.plan.decimation_factor)

    @property
    def output_rate(self) -> float:
        return self.sample_rate / self.plan.decimation_factor

    @property
    def settle_outputs(self) -> int:
        return self.decimator.settle_outputs

    def process(self, samples: np.ndarray) -> np.ndarray:
        return self.decimator.process(samples, self.lo.next(len(samples)))


def mix_and_decimate(trace: NoiseTrace, plan: DownconversionPlan, seed: int = 0,
                     frame_length: int = 1 << 17) -> list[NoiseTrace]:
    """Down-convert a whole trace through every reference of the plan.

    A tone at nu comes out at |nu - nu_ref| with half its amplitude; the sum
    frequency is removed by the low-pass.
    """
    out = []
    for k, ref in enumerate(plan.references):
        dc = DownConverter(plan, k, trace.sample_rate, trace.origin_frequency, seed)
        chunks = [dc.process(trace.samples[i:i + frame_length])
                  for i in range(0, len(trace.samples), frame_length)]
        y = np.concatenate(chunks) if chunks else np.zeros(0)
        out.append(NoiseTrace(dc.output_rate, y, trace.seed, BandMode.BASEBAND, ref.frequency,
                              meta={"label": ref.label, "settle_outputs": dc.settle_outputs}))
    return out

"""Bounded-memory streaming Welch estimator.

Frames of any length are pushed in; completed segments are windowed,
transformed and folded into a running sum of periodograms. Only the
unfinished segment tail and one spectrum accumulator are kept, so memory is
O(segment_length) no matter how long the stream runs.

Scaling is a single-sided density: summing PSD x bin width recovers the mean
square of the (windowed) input.
"""
from __future__ import annotations

import threading

import numpy as np
from scipy import fft as sfft
from scipy.signal import get_window

from ..errors import ConfigError
from ..spectrum import PowerSpectrum, Provenance

_BATCH = 64  # segments transformed per FFT call


def enbw_bins(window: np.ndarray) -> float:
    """Equivalent noise bandwidth of a window in bins."""
    return len(window) * float(np.sum(window ** 2)) / float(np.sum(window)) ** 2


class PsdAccumulator:
    """Running Welch average.

    Parameters
    ----------
    segment_length : int
        FFT length, a power of two.
    sample_rate : float
        Input sample rate in S/s.
    window : {"hann", "rectangular"}
    overlap : float
        Fractional overlap of consecutive segments in [0, 1).
    """

    def __init__(self, segment_length: int, sample_rate: float, window: str = "hann",
                 overlap: float = 0.5, meta: dict | None = None):
        n = int(segment_length)
        if n < 2 or n & (n - 1):
            raise ConfigError(f"segment length must be a power of two, got {segment_length}")
        if not 0 <= overlap < 1:
            raise ConfigError("overlap must lie in [0, 1)")
        if window not in ("hann", "rectangular"):
            raise ConfigError(f"unsupported window {window!r}")
        self.segment_length = n
        self.sample_rate = float(sample_rate)
        self.window_name = window
        self.window = get_window("hann" if window == "hann" else "boxcar", n)
        # segments are transformed in single precision; sums are kept in double
        self._window32 = self.window.astype(np.float32)
        self.overlap = float(overlap)
        self.hop = max(1, int(round(n * (1 - overlap))))
        self.meta = dict(meta or {})
        self._sum = np.zeros(n // 2 + 1)
        self._pending = np.zeros(0)
        self._skip = 0
        self.segments_seen = 0
        self.samples_seen = 0
        self._lock = threading.Lock()
        scale = 1.0 / (self.sample_rate * float(np.sum(self.window ** 2)))
        self._scale = np.full(n // 2 + 1, 2 * scale)
        self._scale[0] = scale
        self._scale[-1] = scale

    @property
    def resolution_bandwidth(self) -> float:
        return enbw_bins(self.window) * self.sample_rate / self.segment_length

    def discard(self, n: int):
        """Drop the next ``n`` incoming samples (e.g. a filter transient)."""
        self._skip += int(n)

    def update(self, samples: np.ndarray):
        """Consume a block of samples."""
        x = np.asarray(samples, dtype=float)
        self.samples_seen += len(x)
        if self._skip:
            drop = min(self._skip, len(x))
            x, self._skip = x[drop:], self._skip - drop
        buf = np.concatenate([self._pending, x]) if len(self._pending) else x
        n, hop = self.segment_length, self.hop
        count = 0 if len(buf) < n else (len(buf) - n) // hop + 1
        views = np.lib.stride_tricks.sliding_window_view(buf, n)[::hop] if count else None
        done = 0
        while done < count:
            k = min(_BATCH, count - done)
            segs = np.multiply(views[done:done + k], self._window32, dtype=np.float32)
            spec = sfft.rfft(segs, axis=1, overwrite_x=True).view(np.float32)
            power = np.einsum("ij,ij->j", spec, spec, dtype=np.float64).reshape(-1, 2).sum(axis=1)
            with self._lock:
                self._sum += power
                self.segments_seen += k
            done += k
        rest = count * hop
        if rest > len(buf):  # hop longer than segment: skip the gap in later input
            self._skip += rest - len(buf)
            rest = len(buf)
        self._pending = buf[rest:].copy()

    def snapshot(self) -> PowerSpectrum:
        """Consistent averaged spectrum for the segments seen so far."""
        with self._lock:
            k = self.segments_seen
            total = self._sum.copy()
        if k == 0:
            raise ConfigError(
                f"stream of {self.samples_seen} samples is shorter than one segment "
                f"({self.segment_length} samples)"
            )
        freqs = sfft.rfftfreq(self.segment_length, 1.0 / self.sample_rate)
        psd = total / k * self._scale
        meta = dict(self.meta)
        meta.update(window=self.window_name, segment_length=self.segment_length,
                    sample_rate=self.sample_rate, overlap=self.overlap)
        return PowerSpectrum(freqs, psd, self.resolution_bandwidth, k, Provenance.ESTIMATED, meta)


def welch_accumulate(frames, acc: PsdAccumulator | None = None, **kwargs) -> PowerSpectrum:
    """Feed an iterable of traces (or arrays) through an accumulator and return the PSD."""
    rate = None
    for fr in frames:
        samples = getattr(fr, "samples", fr)
        fr_rate = getattr(fr, "sample_rate", None)
        if fr_rate is not None:
            if rate is not None and fr_rate != rate:
                raise ConfigError("all frames must share one sample rate")
            rate = fr_rate
        if acc is None:
            if rate is None:
                raise ConfigError("sample rate unknown; pass an accumulator")
            acc = PsdAccumulator(sample_rate=rate, **kwargs)
        elif rate is not None and rate != acc.sample_rate:
            raise ConfigError("frame sample rate differs from the accumulator's")
        acc.update(samples)
    if acc is None:
        raise ConfigError("empty stream")
    return acc.snapshot()

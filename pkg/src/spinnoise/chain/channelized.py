"""Multi-reference acquisition: synthesize, down-convert and average per channel."""
from __future__ import annotations

import time
from dataclasses import dataclass

from ..errors import BandError, ConfigError
from .mixer import DownConverter, DownconversionPlan
from .synth import DEFAULT_FRAME_LENGTH as DEFAULT_FRAME
from .synth import BandMode, derive_seed, iter_frames
from .welch import PsdAccumulator


@dataclass(frozen=True)
class AcquisitionConfig:
    """Desk-scale acquisition settings.

    In baseband mode each channel is synthesized directly at an intermediate
    frequency: the trace origin is nu_ref - intermediate_frequency, so the
    digital mixer runs at ``intermediate_frequency`` and the channel output
    holds |nu - nu_ref|.
    """

    sample_rate: float = 4e6
    intermediate_frequency: float = 1e6
    segment_length: int = 2048
    averages: int = 10_000
    overlap: float = 0.5
    window: str = "hann"
    noise_floor: float = 0.0
    seed: int = 0
    frame_length: int = DEFAULT_FRAME
    threads: int = 1
    band_mode: BandMode = BandMode.BASEBAND
    capture_window: float = 10e6

    def __post_init__(self):
        object.__setattr__(self, "band_mode", BandMode(self.band_mode))
        if self.averages < 1:
            raise ConfigError("averages must be >= 1")
        if not self.sample_rate > 0:
            raise ConfigError("sample rate must be positive")
        if not 0 < self.intermediate_frequency < self.sample_rate / 2:
            raise ConfigError("intermediate frequency must lie inside (0, Nyquist)")


def _channel_lines(transitions, ref_hz, cutoff, window, label):
    near = [t for t in transitions if abs(t.center_hz - ref_hz) <= window]
    if not near:
        return near, 1
    rel = [t.center_hz - ref_hz for t in near]
    lo_nu = min(t.center_hz for t in near)
    hi_nu = max(t.center_hz for t in near)
    if all(0 < r < cutoff for r in rel):
        return near, 1
    if all(-cutoff < r < 0 for r in rel):
        return near, -1
    raise BandError(
        f"channel {label!r}: lines span {lo_nu:.9g}-{hi_nu:.9g} Hz, which does not fit one sideband "
        f"of nu_ref = {ref_hz:.9g} Hz with cutoff {cutoff:.6g} Hz; choose nu_ref in "
        f"({hi_nu - cutoff:.9g}, {lo_nu:.9g}) Hz (upper sideband) or "
        f"({hi_nu:.9g}, {lo_nu + cutoff:.9g}) Hz (lower sideband)"
    )


def run_channelized(transitions, plan: DownconversionPlan, acq: AcquisitionConfig,
                    metrics: dict | None = None) -> list:
    """Return ``[(label, PowerSpectrum), ...]``, one entry per reference.

    Spectrum frequencies are nu_rel; ``spectrum.absolute_frequencies`` maps them
    back through the recorded reference and sideband.
    """
    transitions = list(transitions)
    d = plan.decimation_factor
    out_rate = acq.sample_rate / d
    hop = max(1, int(round(acq.segment_length * (1 - acq.overlap))))
    results = []
    timing = {"synth_s": 0.0, "chain_s": 0.0, "samples": 0}

    channels = []
    for k, ref in enumerate(plan.references):
        lines, side = _channel_lines(transitions, ref.frequency, plan.lowpass_cutoff,
                                     acq.capture_window, ref.label)
        channels.append((k, ref, lines, side))

    def make_pipeline(k, ref, side, origin):
        dc = DownConverter(plan, k, acq.sample_rate, origin, derive_seed(acq.seed, 1000 + k))
        meta = {
            "label": ref.label, "reference_hz": ref.frequency, "sideband": side,
            "decimation": d, "lowpass_cutoff_hz": plan.lowpass_cutoff, "taps": len(dc.taps),
            "input_rate": acq.sample_rate, "band_mode": acq.band_mode.value,
        }
        acc = PsdAccumulator(acq.segment_length, out_rate, acq.window, acq.overlap, meta)
        acc.discard(dc.settle_outputs)
        return dc, acc

    out_needed = acq.segment_length + (acq.averages - 1) * hop
    pipelines = []
    if acq.band_mode is BandMode.FULL_CHAIN:
        pipes = [make_pipeline(k, ref, side, 0.0) for k, ref, _, side in channels]
        settle = max(dc.settle_outputs for dc, _ in pipes)
        n_in = (out_needed + settle) * d
        frames = iter_frames(transitions, acq.sample_rate, n_in, acq.noise_floor,
                             derive_seed(acq.seed, 0), BandMode.FULL_CHAIN, 0.0,
                             acq.frame_length, acq.threads)
        _drive(frames, pipes, timing)
        pipelines = pipes
    else:
        for k, ref, lines, side in channels:
            origin = ref.frequency - acq.intermediate_frequency
            dc, acc = make_pipeline(k, ref, side, origin)
            n_in = (out_needed + dc.settle_outputs) * d
            frames = iter_frames(lines, acq.sample_rate, n_in, acq.noise_floor,
                                 derive_seed(acq.seed, 1 + k), BandMode.BASEBAND, origin,
                                 acq.frame_length, acq.threads)
            _drive(frames, [(dc, acc)], timing)
            pipelines.append((dc, acc))
    for (k, ref, lines, side), (dc, acc) in zip(channels, pipelines):
        psd = acc.snapshot()
        psd.meta["isotopes"] = sorted({t.isotope for t in lines})
        results.append((ref.label, psd))
    if metrics is not None:
        chain = timing["chain_s"]
        metrics.update(timing)
        metrics["chain_throughput_sps"] = timing["samples"] / chain if chain > 0 else float("nan")
    return results


def _drive(frames, pipes, timing):
    while True:
        t0 = time.perf_counter()
        frame = next(frames, None)
        t1 = time.perf_counter()
        timing["synth_s"] += t1 - t0
        if frame is None:
            return
        for dc, acc in pipes:
            acc.update(dc.process(frame.samples))
        timing["chain_s"] += time.perf_counter() - t1
        timing["samples"] += len(frame.samples) * len(pipes)

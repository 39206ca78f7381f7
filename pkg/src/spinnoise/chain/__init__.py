"""Measurement-chain simulation: synthesis, down-conversion and streaming PSD estimation."""
from .channelized import AcquisitionConfig, run_channelized
from .frames import read_frames, read_psd_csv, write_frame, write_psd_csv
from .mixer import DownConverter, DownconversionPlan, FIRDecimator, Reference, design_lowpass, mix_and_decimate
from .synth import BandMode, NoiseTrace, derive_seed, iter_frames, stream_rng, synthesize
from .welch import PsdAccumulator, enbw_bins, welch_accumulate

__all__ = [
    "AcquisitionConfig", "BandMode", "DownConverter", "DownconversionPlan", "FIRDecimator",
    "NoiseTrace", "PsdAccumulator", "Reference", "derive_seed", "design_lowpass", "enbw_bins",
    "iter_frames", "mix_and_decimate", "read_frames", "read_psd_csv", "run_channelized",
    "stream_rng", "synthesize", "welch_accumulate", "write_frame", "write_psd_csv",
]

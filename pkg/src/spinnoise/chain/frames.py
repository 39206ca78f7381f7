"""Binary trace-frame format and PSD CSV export.

Frame layout (little-endian)::

    magic            4 bytes  b"SNTR"
    version          u16      currently 1
    sample_rate      f64      S/s
    frame_length     u32      number of samples that follow
    band_mode        u8       0 = full-chain, 1 = baseband
    origin_frequency f64      Hz
    payload          f32 x frame_length

A file is a plain concatenation of frames.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from ..errors import ConfigError
from ..spectrum import PowerSpectrum, Provenance
from .synth import BandMode, NoiseTrace

MAGIC = b"SNTR"
VERSION = 1
HEADER = struct.Struct("<4sHdIBd")
_MODE_CODES = {BandMode.FULL_CHAIN: 0, BandMode.BASEBAND: 1}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}
PSD_COLUMNS = ("frequency_hz", "psd", "rbw_hz", "averages")


def write_frame(stream: BinaryIO, trace: NoiseTrace):
    head = HEADER.pack(MAGIC, VERSION, trace.sample_rate, len(trace.samples),
                       _MODE_CODES[trace.band_mode], trace.origin_frequency)
    stream.write(head)
    stream.write(np.asarray(trace.samples, dtype="<f4").tobytes())


def read_frames(stream: BinaryIO) -> Iterator[NoiseTrace]:
    start = 0
    while True:
        head = stream.read(HEADER.size)
        if not head:
            return
        if len(head) < HEADER.size:
            raise ConfigError("truncated frame header")
        magic, version, rate, length, mode, origin = HEADER.unpack(head)
        if magic != MAGIC:
            raise ConfigError(f"bad frame magic {magic!r}")
        if version != VERSION:
            raise ConfigError(f"unsupported frame version {version}")
        if mode not in _CODE_MODES:
            raise ConfigError(f"unknown band mode code {mode}")
        payload = stream.read(4 * length)
        if len(payload) < 4 * length:
            raise ConfigError("truncated frame payload")
        samples = np.frombuffer(payload, dtype="<f4").astype(float)
        yield NoiseTrace(rate, samples, 0, _CODE_MODES[mode], origin, start)
        start += length


def format_psd_csv(psd: PowerSpectrum, meta: dict | None = None) -> str:
    """PSD as CSV text; metadata goes on one leading ``# meta:`` JSON line."""
    buf = io.StringIO()
    info = dict(psd.meta)
    info.update(meta or {})
    info.setdefault("provenance", psd.provenance.value)
    buf.write("# meta: " + json.dumps(info, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PSD_COLUMNS)
    rbw = repr(float(psd.resolution_bandwidth))
    for f, v in zip(psd.frequencies, psd.values):
        w.writerow((repr(float(f)), repr(float(v)), rbw, psd.averages))
    return buf.getvalue()


def write_psd_csv(path, psd: PowerSpectrum, meta: dict | None = None):
    Path(path).write_text(format_psd_csv(psd, meta))


def read_psd_csv(path, require_meta: bool = True) -> PowerSpectrum:
    text = Path(path).read_text().splitlines()
    meta = None
    if text and text[0].startswith("# meta:"):
        meta = json.loads(text[0][len("# meta:"):])
        text = text[1:]
    if require_meta and not meta:
        raise ConfigError(f"{path}: PSD file carries no metadata line")
    rows = list(csv.reader(text))
    if not rows or tuple(rows[0]) != PSD_COLUMNS:
        raise ConfigError(f"{path}: expected header {','.join(PSD_COLUMNS)}")
    data = np.array([[float(x) for x in r[:3]] for r in rows[1:]])
    averages = int(rows[1][3]) if len(rows) > 1 else 0
    meta = meta or {}
    prov = meta.get("provenance", "estimated")
    return PowerSpectrum(data[:, 0], data[:, 1], float(data[0, 2]), averages, Provenance(prov), meta)

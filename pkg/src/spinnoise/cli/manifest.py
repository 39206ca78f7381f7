"""Run manifest: config snapshot, artifact checksums, stage status and metrics."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
import time
from pathlib import Path

from .. import __version__

MANIFEST_NAME = "manifest.json"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def atomic_write(path, data: str | bytes):
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Manifest:
    """One manifest per output directory, accumulated across stages."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / MANIFEST_NAME
        if self.path.exists():
            self.doc = json.loads(self.path.read_text())
        else:
            self.doc = {
                "tool": "spinnoise",
                "version": __version__,
                "python": platform.python_version(),
                "config": None,
                "seed": None,
                "stages": {},
                "artifacts": {},
                "metrics": {},
            }

    @property
    def config(self):
        return self.doc.get("config")

    def begin(self, stage: str, config: dict):
        self.doc["config"] = config
        self.doc["seed"] = config.get("seed")
        self.doc["stages"][stage] = {"status": "running", "started": time.time(), "outputs": []}
        self._t0 = time.perf_counter()

    def add(self, stage: str, relpath: str):
        full = self.out_dir / relpath
        self.doc["artifacts"][relpath] = {"sha256": sha256(full), "bytes": full.stat().st_size,
                                          "stage": stage}
        outs = self.doc["stages"][stage]["outputs"]
        if relpath not in outs:
            outs.append(relpath)

    def metrics(self, stage: str, values: dict):
        self.doc["metrics"].setdefault(stage, {}).update(values)

    def finish(self, stage: str, status: str = "ok", error: str | None = None):
        st = self.doc["stages"][stage]
        st["status"] = status
        st["wall_s"] = time.perf_counter() - getattr(self, "_t0", time.perf_counter())
        if error:
            st["error"] = error
        self.write()

    def write(self):
        atomic_write(self.path, json.dumps(self.doc, indent=2, sort_keys=True) + "\n")

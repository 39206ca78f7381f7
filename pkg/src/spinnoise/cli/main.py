"""``spinnoise`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import __version__
from ..errors import ConfigError, NumericalError, RankDeficiencyError
from . import config as cfgmod
from . import pipeline
from .manifest import Manifest

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
log = logging.getLogger("spinnoise")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinnoise", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--scenario", help="bundled scenario name")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("--threads", type=int, help="override the worker thread count")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate channel PSDs or shift datasets")
    a = sub.add_parser("analyze", parents=[common], help="fit PSDs and extract collisional shifts")
    a.add_argument("--input", type=Path, nargs="+", help="PSD CSV files (default: simulate outputs)")
    f = sub.add_parser("fit-shift", parents=[common], help="regress beta and delta from a shift dataset")
    f.add_argument("--dataset", type=Path, help="shift dataset CSV (default: OUT/shifts.csv)")
    i = sub.add_parser("invert", parents=[common], help="fit Lennard-Jones parameters")
    i.add_argument("--dataset", type=Path, help="shift dataset CSV")
    sub.add_parser("report", parents=[common], help="summarize a run directory")
    return p


def _resolve_config(args, manifest: Manifest, required: bool = True):
    if args.config and args.scenario:
        raise ConfigError("use either --config or --scenario, not both")
    if args.config:
        cfg = cfgmod.load(args.config)
    elif args.scenario:
        cfg = cfgmod.load_scenario(args.scenario)
    elif manifest.config is not None:
        cfg = cfgmod.validate({k: v for k, v in manifest.config.items()})
    elif required:
        raise ConfigError("no configuration: pass --config or --scenario")
    else:
        return None
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg["threads"] = args.threads
    return cfg


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = Manifest(args.out) if args.out.exists() else None
        cfg = _resolve_config(args, manifest or Manifest(args.out), args.command != "report")
        args.out.mkdir(parents=True, exist_ok=True)
        manifest = manifest or Manifest(args.out)
        if args.command == "simulate":
            pipeline.simulate(cfg, manifest)
        elif args.command == "analyze":
            ds = pipeline.analyze(cfg, manifest, args.input)
            for m in ds.measurements:
                print(f"{m.isotope}: shift = {m.shift_hz:.1f} +/- {m.sigma_hz:.1f} Hz "
                      f"(absolute {m.absolute_hz / 1e6:.6f} MHz)")
        elif args.command == "fit-shift":
            pipeline.fit_shift(cfg, manifest, args.dataset)
            print((args.out / "beta_delta.txt").read_text(), end="")
        elif args.command == "invert":
            pipeline.invert(cfg, manifest, args.dataset)
            print((args.out / "inversion.txt").read_text(), end="")
        else:
            print(pipeline.report(manifest), end="")
    except RankDeficiencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for s in exc.suggestions:
            print(f"  suggestion: {s}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

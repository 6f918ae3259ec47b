"""Command-line entry point: ``sim --config FILE [--mode ...] [--override key=value ...]``.

Launch under ``mpirun -n N`` for a distributed run; every rank parses the same
arguments and rank 0 writes the output.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .driver.config import MODES, apply_overrides, load_config
from .driver.run import EXIT_CONFIG, run
from .errors import ConfigError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="Biofilm growth and detachment simulator.")
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--mode", choices=MODES, help="override the configured mode")
    p.add_argument("--output", help="output directory")
    p.add_argument("--steps", type=int, help="number of time steps")
    p.add_argument("--override", nargs="*", default=[], metavar="KEY=VALUE",
                   help="extra configuration entries, applied after the file")
    p.add_argument("-v", "--verbose", action="store_true", help="log every step")
    return p


def _split_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .parallel import world

    comm = world()
    level = logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level if comm.rank == 0 else logging.ERROR,
                        format="%(levelname)s %(message)s")
    try:
        overrides = [_split_override(o) for o in args.override]
        if args.mode:
            overrides.append(("mode", args.mode))
        if args.output:
            overrides.append(("output.directory", args.output))
        if args.steps is not None:
            overrides.append(("steps", str(args.steps)))
        cfg = load_config(args.config)
        if overrides:
            cfg = apply_overrides(cfg, overrides)
    except ConfigError as exc:
        if comm.rank == 0:
            print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, comm)


if __name__ == "__main__":
    sys.exit(main())

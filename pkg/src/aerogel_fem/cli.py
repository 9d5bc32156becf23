"""Command-line entry point.

Exit codes: 0 success, 1 configuration or I/O error, 2 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import CASES, load_config
from .errors import ConfigError, InvalidArgument, IoError, SolverFailure
from .runner import run

log = logging.getLogger("aerogel_fem")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aerogel-fem", description="Three-phase aerogel composite FE simulator")
    ap.add_argument("--config", required=True, help="path to a TOML run configuration")
    ap.add_argument("--output", help="output directory (overrides output_dir in the config)")
    ap.add_argument("--case", choices=CASES, help="override the case named in the config")
    ap.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = load_config(args.config)
        if args.case and args.case != cfg.case:
            cfg = replace(cfg, case=args.case)
            if cfg.case in ("mechanical", "thermal") and (
                cfg.mesh is None or cfg.time is None or (cfg.mech if cfg.case == "mechanical" else cfg.thermal) is None
            ):
                raise ConfigError(f"config lacks the sections needed by case {cfg.case!r}")
    except ConfigError as exc:
        for v in exc.violations:
            log.error("config: %s", v)
        return 1
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return 1
    try:
        run(cfg, args.output)
    except SolverFailure as exc:
        where = f" at t={exc.time:g}" if exc.time is not None else ""
        log.error("solver failure%s: %s", where, exc)
        return 2
    except (IoError, InvalidArgument) as exc:
        log.error("%s", exc)
        return 1
    log.info("done")
    return 0


if __name__ == "__main__":
    sys.exit(main())

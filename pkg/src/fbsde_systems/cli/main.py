"""``solve <config> [--seed S] [--out PATH] [--threads K]``."""

from __future__ import annotations

import argparse
import os
import sys
import traceback

from ..errors import ConfigError
from .config import parse_config
from .run import EXIT_CONFIG, EXIT_INTERNAL, EXIT_IO, run

THREADS_ENV = "FBSDE_THREADS"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solve", description="Monte Carlo FBSDE solver for coupled parabolic systems.")
    p.add_argument("config", help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    p.add_argument("--out", default=None, help="override the CSV output path")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
    return p


def _threads(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    return None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"I/O error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        config = parse_config(text)
        threads = _threads(args.threads)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError(f"--seed must be in [0, 2**64), got {args.seed}")
        if threads is not None and threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(config, out=args.out, seed=args.seed, threads=threads)
    except Exception:  # noqa: BLE001 - last-resort mapping to the documented exit code
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

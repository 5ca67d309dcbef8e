"""Command-line entry point: ``vesmc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io
from .errors import ConfigurationError, VesmcError
from .experiments import COMMANDS, ExperimentConfig, run_experiment
from .parallel import max_workers


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _workers(text: str) -> int:
    return max_workers() if text == "max" else _positive_int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesmc",
        description="Guided SMC posterior sampling with variance-exploding diffusion priors.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=_u64, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
        p.add_argument("--particles", type=_positive_int, help="particle count M")
        p.add_argument("--delta", type=float, help="guidance slack in (0, 1]")
        p.add_argument("--steps", type=_positive_int, help="number of diffusion steps K")
        p.add_argument("--workers", type=_workers, default=1, help="worker threads, or 'max' (default: 1)")
    return parser


def overrides_from_args(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.particles is not None:
        over.setdefault("smc", {})["M"] = args.particles
    if args.delta is not None:
        over.setdefault("smc", {})["delta"] = args.delta
    if args.steps is not None:
        over["schedule"] = {"K": args.steps}
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_settings, base = {}, Path(".")
        if args.config is not None:
            file_settings = io.read_json(args.config)
            if not isinstance(file_settings, dict):
                raise ConfigurationError("config file must hold a JSON object")
            base = args.config.parent
        cfg = ExperimentConfig.build(args.command, file_settings, overrides_from_args(args),
                                     out=args.out, workers=args.workers, base_dir=base)
        written = run_experiment(cfg)
    except ConfigurationError as exc:
        print(f"vesmc: configuration error: {exc}", file=sys.stderr)
        return 2
    except (VesmcError, OSError, IndexError, ValueError) as exc:
        print(f"vesmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

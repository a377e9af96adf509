"""Command-line entry point: ``optbayes run | synth | build-universe``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..engine import InstanceError
from ..market_data import DataError, write_series
from ..models.density import InversionError
from ..models.families import InadmissibleError, ModelFamily, ModelInstance, write_universe
from ..models.pricing import PricingError
from .config import ConfigError, load_config
from .runner import build_universe, run_from_config
from .synthetic import generate_synthetic

logger = logging.getLogger("optbayes")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_MODEL = 4


def _params(text: str) -> dict[str, float]:
    out = {}
    for pair in filter(None, (p.strip() for p in text.split(","))):
        name, sep, value = pair.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=value, got {pair!r}")
        out[name.strip()] = float(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optbayes", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the likelihood engine over a dataset and universe")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("synth", help="generate a synthetic dataset from one model instance")
    s.add_argument("--family", required=True, choices=[f.value for f in ModelFamily])
    s.add_argument("--params", default="", type=_params, help="name=value,... (defaults fill the rest)")
    s.add_argument("--days", required=True, type=int)
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--noise", default=0.0, type=float, help="SD of additive implied-vol noise")
    s.add_argument("--rate", default=0.0, type=float)
    s.add_argument("--spot", default=100.0, type=float)
    s.add_argument("--out", required=True, type=Path)

    b = sub.add_parser("build-universe", help="calibrate, span and prune a model universe")
    b.add_argument("--config", required=True, type=Path)
    b.add_argument("--out", type=Path, help="universe file (overrides universe_out)")
    return p


def _dispatch(args) -> None:
    if args.command == "run":
        bt = run_from_config(load_config(args.config), args.out)
        logger.info("wrote %s (lambda %.6g, %d instances)", args.out, bt.lam, len(bt.universe))
    elif args.command == "synth":
        m = ModelInstance.create(args.family, **args.params)
        series = generate_synthetic(m, args.days, args.seed, noise=args.noise, spot0=args.spot, rate=args.rate)
        write_series(args.out, series)
        logger.info("wrote %d days from %s to %s", len(series), m, args.out)
    elif args.command == "build-universe":
        cfg = load_config(args.config)
        out = args.out or cfg.universe_out
        if out is None:
            raise ConfigError("build-universe needs --out or a universe_out key")
        universe, meta = build_universe(cfg)
        write_universe(out, universe, meta)
        logger.info("wrote %d instances to %s", len(universe), out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except (ConfigError, argparse.ArgumentTypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InstanceError, PricingError, InversionError, InadmissibleError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

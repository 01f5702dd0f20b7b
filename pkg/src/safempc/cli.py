"""Command-line entry point: ``safempc {sim,bench,race,sets}``.

Exit codes: 0 success, 1 config error, 2 solver infeasibility, 3 internal error.
"""
import argparse
import logging
import sys

from . import __version__
from .config import load_config
from .errors import ConfigError
from .runner import EXIT_CONFIG, EXIT_INTERNAL, RUNNERS

log = logging.getLogger("safempc")

COMMANDS = {
    "sim": ("integrator", "run one double-integrator closed-loop scenario"),
    "bench": ("bench", "run the benchmark matrix and judge it against the reference table"),
    "race": ("racing", "identify the vehicle model and run the multi-car race"),
    "sets": ("sets", "emit CBF superlevel-set and reachable-set grids"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="safempc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (kind, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=kind,
                       help=f"JSON config path or builtin name (default: builtin {kind!r})")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides seed)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a dotted config path; repeatable")
        p.add_argument("--log-level", default="INFO",
                       choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    kind = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out)
        if cfg["scenario"] != kind:
            raise ConfigError(f"command {args.command!r} needs scenario {kind!r}, "
                              f"config has {cfg['scenario']!r}", "scenario")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return RUNNERS[kind](cfg)
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

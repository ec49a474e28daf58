"""Command-line entry point: ``shotpref <stage> --config path [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import STRATEGIES, bundled_config_path, config_from_dict, load_config
from .errors import ConfigError, ShotprefError
from .pipeline import STAGES, run_stage

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shotpref", description="Camera trajectory generation with preference post-training.")
    p.add_argument("stage", choices=STAGES + ("all",))
    p.add_argument("--config", required=True,
                   help="JSON config file, or the name of a bundled config such as 'desk' or 'tiny'")
    p.add_argument("--out", help="output directory (default: paths.out from the config)")
    p.add_argument("--strategy", choices=STRATEGIES, help="scorer used for the main DPO run")
    p.add_argument("--beta", type=float, help="DPO margin scale for the main run")
    p.add_argument("--seed-override", type=int, help="replace every seed in the config")
    p.add_argument("--remote-endpoint", help="HTTP endpoint for the remote scorer")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def resolve_config_path(value: str) -> str:
    if os.path.exists(value):
        return value
    bundled = bundled_config_path(value)
    if os.sep not in value and os.path.exists(bundled):
        return bundled
    return value


def apply_overrides(cfg, args):
    data = cfg.to_dict()
    if args.strategy is not None:
        data["scorer"]["strategy"] = args.strategy
    if args.beta is not None:
        data["dpo"]["beta"] = args.beta
    if args.remote_endpoint is not None:
        data["scorer"]["remote_endpoint"] = args.remote_endpoint
    if args.seed_override is not None:
        data["seeds"] = {k: args.seed_override for k in data["seeds"]}
    if args.out is not None:
        data["paths"]["out"] = args.out
    return config_from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = apply_overrides(load_config(resolve_config_path(args.config)), args)
    except ConfigError as exc:
        print(f"shotpref: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run_stage(cfg, args.stage)
    except ShotprefError as exc:
        print(f"shotpref: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"shotpref: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

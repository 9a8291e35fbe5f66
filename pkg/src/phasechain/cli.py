"""Command line entry point.

Exit codes: 0 success, 1 error (bad config, I/O, solver failure),
2 a scenario check failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, default_config, parse_config
from .experiments import run_scenario

log = logging.getLogger("phasechain")

COMMANDS = {
    "simulate": "simulate",
    "stationary": "stationary",
    "hydro": "hydro",
    "fourier-scan": "fourier",
    "equilibrium": "equilibrium",
    "check-identities": "identities",
}

HELP = {
    "simulate": "raw Monte-Carlo trajectories",
    "stationary": "exact stationary profiles of the open chain",
    "hydro": "moment evolution against the periodic heat equation",
    "fourier-scan": "stationary current and densities over a range of N",
    "equilibrium": "equal reservoirs: oracle, Monte-Carlo and a (mu_l, mu_r) grid",
    "check-identities": "exact verification of the generator identities",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasechain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: ./out/<command>)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads (overrides the config)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key; may be repeated")
        p.add_argument("--dry-run", action="store_true", help="validate and echo the config, write nothing")
    return parser


def load_config(args):
    scenario = COMMANDS[args.command]
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        cfg = parse_config(text, scenario)
    else:
        cfg = default_config(scenario)
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        overrides[key] = value
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    return cfg.replace(**overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.dry_run:
        sys.stdout.write(cfg.echo())
        return 0
    out = args.out if args.out is not None else Path("out") / args.command
    try:
        result = run_scenario(cfg, out)
    except (ValueError, ArithmeticError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} (limit {c.threshold:g}) {c.detail}".rstrip())
    print(f"results written to {out}")
    return 0 if result.passed else 2


if __name__ == "__main__":
    sys.exit(main())

"""Command line: ``riskbias run <experiment> [flags]`` and ``riskbias list``.

A plain-text config file of ``key=value`` lines (``#`` starts a comment) may
supply any flag; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigurationError
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment

CONFIG_KEYS = {"scale": int, "seed": int, "bootstrap": int, "out": str, "svg": None, "workers": int,
               "datasets": None, "refit_stride": int}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _parse_datasets(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise UsageError(f"datasets must be a comma-separated list of integers, got {text!r}") from None


def read_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if key == "svg":
            values[key] = _parse_bool(value)
        elif key == "datasets":
            values[key] = _parse_datasets(value)
        else:
            try:
                values[key] = CONFIG_KEYS[key](value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riskbias", description="Reproduce the risk-bias experiments.")
    sub = p.add_subparsers(dest="command")
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("experiment")
    run.add_argument("--scale", type=int, help="backtest horizon m")
    run.add_argument("--seed", type=int)
    run.add_argument("--bootstrap", type=int, help="bootstrap sample size B")
    run.add_argument("--out", help="output directory (default: results)")
    run.add_argument("--svg", action="store_true", default=None, help="also render SVG plots")
    run.add_argument("--workers", type=int, help="worker processes (capped by RISKBIAS_THREADS)")
    run.add_argument("--datasets", type=_parse_datasets, help="table datasets, e.g. 1,2")
    run.add_argument("--refit-stride", dest="refit_stride", type=int)
    run.add_argument("--config", help="key=value config file; flags override it")
    run.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list", help="list experiments")
    return p


def parse_cli(argv) -> ExperimentConfig | None:
    """Parse ``argv``; returns None for ``list``.  Raises UsageError."""
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError("missing command (run or list)")
    if args.command == "list":
        return None
    if args.experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.experiment!r}; try 'riskbias list'")
    values = read_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        return ExperimentConfig(args.experiment, **values)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_cli(argv)
    except UsageError as exc:
        print(f"riskbias: error: {exc}", file=sys.stderr)
        build_parser().print_usage(sys.stderr)
        return 2
    if config is None:
        for e in EXPERIMENTS.values():
            print(f"{e.id:7s} {e.anchor:9s} {e.caption}")
        return 0
    try:
        result = run_experiment(config)
    except ConfigurationError as exc:
        print(f"riskbias: configuration error: {exc}", file=sys.stderr)
        return 2
    for f in result.files:
        print(f)
    if result.errors:
        for e in result.errors:
            print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

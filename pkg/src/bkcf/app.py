from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from bkcf.config import ConfigError, ExperimentConfig
from bkcf.experiments import MemoryBudgetError, dataset_stats, run_experiment, run_spectral
from bkcf.loader import DataError
from bkcf.io_utils import OutputError
from bkcf.kernels import KernelDomainError
from bkcf.metrics import MetricError
from bkcf.ranker import SolverError
from bkcf.version import version_string

_log = logging.getLogger(__name__)

DEFAULT_CONFIG = "bkcf.ini"

# Exit status 2: the input (config or dataset) is wrong; 1: a run failed.
_USAGE_ERRORS = (ConfigError, DataError, MemoryBudgetError)
_RUN_ERRORS = (KernelDomainError, SolverError, MetricError, OutputError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bkcf",
        description="Boolean kernels for top-N recommendation from implicit feedback.",
    )
    parser.add_argument("--version", action="version", version=version_string())
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help=f"experiment config file (default: ./{DEFAULT_CONFIG}, created with defaults if missing)",
    )
    parser.add_argument("--seed", type=int, action="append", default=None, help="fold seed; repeat for several")
    parser.add_argument("--workers", type=int, default=None, help="worker threads (-1 uses every core)")
    parser.add_argument("--out", type=Path, default=None, help="output directory for result files")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bars")

    sub = parser.add_subparsers(dest="command", required=True)

    stats = sub.add_parser("stats", help="print dataset statistics")
    stats.add_argument("path", nargs="?", type=Path, help="ratings file (default: the configured dataset)")
    stats.add_argument("--format", default=None, help="input format (default: the configured one)")
    stats.add_argument("--expect", default=None, help="reference dataset to compare against, e.g. filmtrust")

    sub.add_parser("experiment", help="evaluate the configured kernels under the fold protocol")
    sub.add_parser("spectral", help="normalized spectral ratio sweep of the configured kernels")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    path = args.config if args.config is not None else Path.cwd() / DEFAULT_CONFIG
    if args.config is not None and not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cfg = ExperimentConfig.load_or_create(path)
    if args.seed:
        cfg.seeds = list(dict.fromkeys(args.seed))
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out_dir = str(args.out)
    return cfg


def _cmd_stats(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if args.path is not None:
        path = args.path
        expected = args.expect or ""
        fmt = args.format or "auto"
    else:
        cfg.validate()
        path = Path(cfg.dataset_path)
        expected = args.expect or cfg.dataset_name
        fmt = args.format or cfg.dataset_format
    report = dataset_stats(
        path,
        fmt,
        min_value=cfg.min_value,
        max_user_ratings=cfg.max_user_ratings,
        expected_name=expected,
    )
    for line in report.lines():
        print(line)
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    progress = not args.quiet and sys.stderr.isatty()
    result = run_experiment(cfg, progress=progress)
    for run in result.runs:
        print(f"{run.spec.label:<18} auc {run.report.cell('auc')}")
    return 0


def _cmd_spectral(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    points, _ = run_spectral(cfg)
    for p in points:
        print(f"{p.spec.label:<18} {p.normalized_ratio:.6f}")
    return 0


_COMMANDS = {
    "stats": _cmd_stats,
    "experiment": _cmd_experiment,
    "spectral": _cmd_spectral,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as e:
        _log.error("%s", e)
        return 2
    except _RUN_ERRORS as e:
        _log.error("%s", e)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

"""Config-driven runners behind the ``experiment``, ``spectral`` and ``stats`` verbs.

Every runner validates the whole configuration (dataset, arities, memory
budget) before building a single Gram matrix, and writes its CSV files
atomically under the output directory.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bkcf.config import ConfigError, ExperimentConfig
from bkcf.domain import BinaryInteractionMatrix, EvalReport, FoldMetrics, KernelFamily, KernelSpec
from bkcf.folds import make_folds, train_matrix, write_fold_manifest
from bkcf.io_utils import format_float, slugify, write_csv
from bkcf.kernels import BinomialCache, KernelDomainError, gram, validate_spec
from bkcf.loader import (
    DatasetStats,
    canonical_dataset,
    dataset_stats as matrix_stats,
    filter_max_ratings,
    load_interactions,
    subsample_items,
)
from bkcf.metrics import METRICS, aggregate, evaluate_fold
from bkcf.ranker import CfKomd
from bkcf.spectral import normalized_spectral_ratio, spectral_ratio

_log = logging.getLogger(__name__)

GIB = 1024**3


class MemoryBudgetError(RuntimeError):
    pass


def gram_bytes(item_count: int) -> int:
    return int(item_count) * int(item_count) * np.dtype(np.float64).itemsize


def check_memory(item_count: int, budget_gb: float) -> None:
    """Refuse an ``m x m`` float64 Gram matrix that does not fit the budget."""

    needed = gram_bytes(item_count)
    if needed > budget_gb * GIB:
        raise MemoryBudgetError(
            f"a {item_count}x{item_count} Gram matrix needs {needed / GIB:.1f} GiB, "
            f"over the {budget_gb:g} GiB budget; set MaxItems in [Dataset] to subsample items "
            f"or raise MemoryBudgetGB in [Output]"
        )


def load_dataset(cfg: ExperimentConfig) -> BinaryInteractionMatrix:
    """Load, cap and subsample the configured dataset, then check the memory budget."""

    X = load_interactions(cfg.dataset_path, cfg.dataset_format, min_value=cfg.min_value)
    if cfg.max_user_ratings > 0:
        X = filter_max_ratings(X, cfg.max_user_ratings)
    if cfg.max_items > 0:
        X = subsample_items(X, cfg.max_items, cfg.seeds[0])
    check_memory(X.item_count, cfg.memory_budget_gb)
    return X


def _checked_specs(X: BinaryInteractionMatrix, specs: list[KernelSpec]) -> None:
    for spec in specs:
        try:
            validate_spec(spec, X.user_count)
        except KernelDomainError as e:
            raise ConfigError(str(e)) from e


def _metric_columns(k: int) -> dict[str, str]:
    return {"auc": "auc", "map_at_k": f"map{k}", "ndcg_at_k": f"ndcg{k}"}


@dataclass
class KernelRun:
    """Outcome of one kernel over every (seed, fold) pair."""

    spec: KernelSpec
    report: EvalReport
    # (seed, fold index) per entry of report.folds
    fold_keys: list[tuple[int, int]]
    wall_seconds: float
    timings: list[tuple[int, int, float, float]] = field(default_factory=list)


@dataclass
class ExperimentResult:
    dataset: str
    runs: list[KernelRun]
    files: list[Path]


def _evaluate_spec(
    spec: KernelSpec,
    cfg: ExperimentConfig,
    splits: list[tuple[int, list]],
    cache: BinomialCache,
    *,
    progress: bool,
) -> KernelRun:
    started = time.perf_counter()
    ranker_cfg = cfg.ranker_config()
    per_fold: list[FoldMetrics] = []
    keys: list[tuple[int, int]] = []
    timings: list[tuple[int, int, float, float]] = []

    for seed, folds in splits:
        for fold, train in folds:
            if not fold.test:
                _log.warning("seed %d fold %d has no test users; skipped", seed, fold.index)
                continue
            fold_started = time.perf_counter()
            ranker = CfKomd(spec, ranker_cfg, n_jobs=cfg.workers, cache=cache)
            ranker.fit(train)
            gram_seconds = time.perf_counter() - fold_started
            metrics = evaluate_fold(
                ranker.iter_scores(fold.test_users, progress=progress),
                train,
                fold,
                k=cfg.top_k,
                tie_credit=cfg.tie_credit,
            )
            fold_seconds = time.perf_counter() - fold_started
            _log.info(
                "%s seed %d fold %d: auc=%.4f map@%d=%.4f ndcg@%d=%.4f (%d users, gram %.2fs, fold %.2fs)",
                spec.label,
                seed,
                fold.index,
                metrics.auc,
                cfg.top_k,
                metrics.map_at_k,
                cfg.top_k,
                metrics.ndcg_at_k,
                metrics.users_evaluated,
                gram_seconds,
                fold_seconds,
            )
            per_fold.append(metrics)
            keys.append((seed, fold.index))
            timings.append((seed, fold.index, gram_seconds, fold_seconds))

    report = aggregate(per_fold)
    return KernelRun(
        spec=spec,
        report=report,
        fold_keys=keys,
        wall_seconds=time.perf_counter() - started,
        timings=timings,
    )


def run_experiment(cfg: ExperimentConfig, *, progress: bool = False) -> ExperimentResult:
    """Evaluate every configured (family, arity) under the fold protocol and write the result CSVs."""

    cfg.validate()
    dataset = cfg.dataset_label
    specs = cfg.kernel_specs()
    if not specs:
        _log.warning("no kernels configured for %s; nothing to do", dataset)
        return ExperimentResult(dataset=dataset, runs=[], files=[])

    X = load_dataset(cfg)
    _checked_specs(X, specs)

    out_dir = Path(cfg.out_dir)
    slug = slugify(dataset)
    files: list[Path] = []

    splits: list[tuple[int, list]] = []
    for seed in cfg.seeds:
        plan = make_folds(X, seed, fold_count=cfg.fold_count, min_train=cfg.min_train_ratings)
        folds = [(fold, train_matrix(X, fold)) for fold in plan.folds]
        splits.append((seed, folds))
        if cfg.write_manifests:
            for fold, _ in folds:
                dest = out_dir / "manifests" / f"{slug}_seed{seed}_fold{fold.index}.csv"
                files.append(write_fold_manifest(dest, X, fold))

    cache = BinomialCache()
    runs = [_evaluate_spec(spec, cfg, splits, cache, progress=progress) for spec in specs]
    _log.debug("binomial cache: %s", cache.stats())

    files.extend(_write_experiment_files(out_dir, slug, dataset, runs, cfg.top_k))
    for path in files:
        _log.debug("wrote %s", path)
    _log.info("wrote %d result files to %s", len(files), out_dir)
    return ExperimentResult(dataset=dataset, runs=runs, files=files)


def _write_experiment_files(
    out_dir: Path, slug: str, dataset: str, runs: list[KernelRun], k: int
) -> list[Path]:
    columns = _metric_columns(k)
    summary_header = ["dataset", "family", "arity"]
    for name in METRICS:
        summary_header += [f"{columns[name]}_mean", f"{columns[name]}_std"]

    def summary_cells(run: KernelRun) -> list[str]:
        cells: list[str] = []
        for name in METRICS:
            s = run.report.metrics[name]
            cells += [format_float(s.mean), format_float(s.std)]
        return cells

    files = [
        write_csv(
            out_dir / f"{slug}_experiment.csv",
            summary_header + ["wall_seconds"],
            (
                [dataset, r.spec.family.value, r.spec.arity_cell, *summary_cells(r), f"{r.wall_seconds:.3f}"]
                for r in runs
            ),
        )
    ]

    fold_rows = []
    timing_rows = []
    for r in runs:
        for (seed, index), fm in zip(r.fold_keys, r.report.folds):
            fold_rows.append(
                [
                    dataset,
                    r.spec.family.value,
                    r.spec.arity_cell,
                    seed,
                    index,
                    *(format_float(fm.value(name)) for name in METRICS),
                    fm.users_evaluated,
                    fm.users_skipped,
                ]
            )
        for seed, index, gram_seconds, fold_seconds in r.timings:
            timing_rows.append(
                [r.spec.family.value, r.spec.arity_cell, seed, index, f"{gram_seconds:.3f}", f"{fold_seconds:.3f}"]
            )
    files.append(
        write_csv(
            out_dir / f"{slug}_folds.csv",
            ["dataset", "family", "arity", "seed", "fold", *(columns[n] for n in METRICS), "users_evaluated", "users_skipped"],
            fold_rows,
        )
    )
    files.append(
        write_csv(
            out_dir / f"{slug}_timing.csv",
            ["family", "arity", "seed", "fold", "gram_seconds", "fold_seconds"],
            timing_rows,
        )
    )

    # One curve per arity-based family, for plotting AUC against arity.
    by_family: dict[KernelFamily, list[KernelRun]] = {}
    for r in runs:
        by_family.setdefault(r.spec.family, []).append(r)
    for family, family_runs in by_family.items():
        if not family.uses_arity:
            continue
        family_runs = sorted(family_runs, key=lambda r: r.spec.arity)
        files.append(
            write_csv(
                out_dir / f"{slug}_{family.value}_curve.csv",
                ["arity", *summary_header[3:]],
                ([r.spec.arity, *summary_cells(r)] for r in family_runs),
            )
        )

    best_rows = []
    for family, family_runs in by_family.items():
        best = max(family_runs, key=lambda r: r.report.metrics["auc"].mean)
        cell = best.report.cell("auc")
        if family.uses_arity:
            cell = f"{cell} ({best.spec.arity})"
        auc = best.report.metrics["auc"]
        best_rows.append(
            [dataset, family.value, best.spec.arity_cell, format_float(auc.mean), format_float(auc.std), cell]
        )
    files.append(
        write_csv(
            out_dir / f"{slug}_best.csv",
            ["dataset", "family", "arity", "auc_mean", "auc_std", "cell"],
            best_rows,
        )
    )
    return files


@dataclass(frozen=True)
class SpectralPoint:
    spec: KernelSpec
    ratio: float
    normalized_ratio: float


def spectral_specs(cfg: ExperimentConfig) -> list[KernelSpec]:
    """Sweep specs: arity 1 is always part of a sweep; a conjunctive sweep adds the mDNF point."""

    families = cfg.kernel_families()
    arities = sorted(set([1, *(cfg.arities or [])]))
    specs: list[KernelSpec] = []
    for family in families:
        if family.uses_arity:
            specs.extend(KernelSpec(family, d, cfg.normalized) for d in arities)
        else:
            specs.append(KernelSpec(family, 1, cfg.normalized))
    if KernelFamily.CONJUNCTIVE in families and KernelFamily.MDNF not in families:
        specs.append(KernelSpec(KernelFamily.MDNF, 1, cfg.normalized))
    return specs


def run_spectral(cfg: ExperimentConfig) -> tuple[list[SpectralPoint], Path | None]:
    """Normalized spectral ratio of every configured kernel over the whole dataset."""

    cfg.validate()
    dataset = cfg.dataset_label
    if not cfg.kernel_families():
        _log.warning("no kernels configured for %s; nothing to do", dataset)
        return [], None

    X = load_dataset(cfg)
    specs = spectral_specs(cfg)
    _checked_specs(X, specs)

    cache = BinomialCache()
    points: list[SpectralPoint] = []
    for spec in specs:
        started = time.perf_counter()
        K = gram(X, spec, n_jobs=cfg.workers, cache=cache)
        point = SpectralPoint(spec=spec, ratio=spectral_ratio(K), normalized_ratio=normalized_spectral_ratio(K))
        _log.info(
            "%s: normalized spectral ratio %.6f (%.2fs)",
            spec.label,
            point.normalized_ratio,
            time.perf_counter() - started,
        )
        points.append(point)

    dest = write_csv(
        Path(cfg.out_dir) / f"{slugify(dataset)}_spectral.csv",
        ["dataset", "family", "arity", "normalized_spectral_ratio", "spectral_ratio"],
        (
            [dataset, p.spec.family.value, p.spec.arity_cell, format_float(p.normalized_ratio), format_float(p.ratio)]
            for p in points
        ),
    )
    _log.info("wrote %s", dest)
    return points, dest


@dataclass(frozen=True)
class StatsReport:
    stats: DatasetStats
    expected: DatasetStats | None = None

    def differences(self) -> dict[str, float]:
        return self.stats.compare(self.expected) if self.expected else {}

    def lines(self) -> list[str]:
        s = self.stats
        out = [
            f"dataset:      {s.name}",
            f"users:        {s.users}",
            f"items:        {s.items}",
            f"interactions: {s.interactions}",
            f"density:      {100.0 * s.density:.4f}%",
        ]
        if self.expected is not None:
            e = self.expected
            out.append(f"reference {e.name}: {e.users} users, {e.items} items, {e.interactions} interactions")
            if e.printed_density is not None:
                out.append(
                    f"  printed density {100.0 * e.printed_density:.4f}%, from counts {100.0 * e.density:.4f}%"
                )
            for key, diff in self.differences().items():
                out.append(f"  {key:<13} {100.0 * diff:+.2f}%")
        return out


def dataset_stats(
    path: Path | str,
    format: str = "auto",
    *,
    min_value: float | None = 0.0,
    max_user_ratings: int = 0,
    expected_name: str = "",
) -> StatsReport:
    """Counts and density of a ratings file, compared against a reference dataset when named."""

    path = Path(path)
    X = load_interactions(path, format, min_value=min_value)
    if max_user_ratings > 0:
        X = filter_max_ratings(X, max_user_ratings)
    name = expected_name or path.stem
    expected = canonical_dataset(expected_name) if expected_name else None
    if expected_name and expected is None:
        _log.warning("no reference statistics for %r", expected_name)
    return StatsReport(stats=matrix_stats(X, name), expected=expected)

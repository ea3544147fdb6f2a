"""Ranking metrics for one user and their aggregation over users and folds.

All metrics rank the items a user has not interacted with in training.
Negatives are items outside both the training and the test positives.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence

import numpy as np

from bkcf.domain import BinaryInteractionMatrix, EvalReport, Fold, FoldMetrics, MetricSummary

_log = logging.getLogger(__name__)

METRICS = ("auc", "map_at_k", "ndcg_at_k")
DEFAULT_K = 10


class MetricError(RuntimeError):
    pass


def _positives_negatives(test_pos, train_pos, m: int) -> tuple[np.ndarray, np.ndarray]:
    test_pos = np.unique(np.asarray(test_pos, dtype=np.int64))
    train_pos = np.unique(np.asarray(train_pos, dtype=np.int64))
    if test_pos.size == 0:
        raise MetricError("user has no test positives")
    if np.intersect1d(test_pos, train_pos).size:
        raise MetricError("test and training positives overlap")
    known = np.zeros(m, dtype=bool)
    known[test_pos] = True
    known[train_pos] = True
    negatives = np.flatnonzero(~known)
    if negatives.size == 0:
        raise MetricError("user has no negative items")
    return test_pos, negatives


def auc(test_pos, train_pos, scores, *, tie_credit: bool = False) -> float:
    """Fraction of (positive, negative) pairs with the positive scored strictly higher.

    Counted from sorted negative scores instead of the double loop. With
    ``tie_credit`` ties count one half.
    """

    scores = np.asarray(scores, dtype=np.float64)
    pos, neg = _positives_negatives(test_pos, train_pos, scores.size)
    neg_sorted = np.sort(scores[neg])
    pos_scores = scores[pos]
    below = np.searchsorted(neg_sorted, pos_scores, side="left")
    wins = float(below.sum())
    if tie_credit:
        ties = np.searchsorted(neg_sorted, pos_scores, side="right") - below
        wins += 0.5 * float(ties.sum())
    return wins / (pos.size * neg.size)


def _top_k(train_pos, scores: np.ndarray, k: int) -> np.ndarray:
    candidates = np.ones(scores.size, dtype=bool)
    candidates[np.asarray(train_pos, dtype=np.int64)] = False
    items = np.flatnonzero(candidates)
    # Stable sort on negated scores: ties keep item order.
    order = np.argsort(-scores[items], kind="stable")
    return items[order[:k]]


def map_at_k(test_pos, train_pos, scores, k: int = DEFAULT_K) -> float:
    """Average precision over the top ``k`` divided by ``min(|P|, k)``."""

    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    pos, _ = _positives_negatives(test_pos, train_pos, scores.size)
    hits = np.isin(_top_k(train_pos, scores, k), pos)
    if not hits.any():
        return 0.0
    ranks = np.arange(1, hits.size + 1)
    precision = np.cumsum(hits) / ranks
    return float(precision[hits].sum() / min(pos.size, k))


def ndcg_at_k(test_pos, train_pos, scores, k: int = DEFAULT_K) -> float:
    """Binary-gain DCG with ``log2(rank + 1)`` discount over the ideal DCG."""

    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    pos, _ = _positives_negatives(test_pos, train_pos, scores.size)
    hits = np.isin(_top_k(train_pos, scores, k), pos)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(discounts[: hits.size][hits].sum())
    ideal = float(discounts[: min(pos.size, k)].sum())
    return dcg / ideal


def evaluate_fold(
    user_scores: Iterable[tuple[int, np.ndarray]],
    train: BinaryInteractionMatrix,
    fold: Fold,
    *,
    k: int = DEFAULT_K,
    tie_credit: bool = False,
) -> FoldMetrics:
    """Average each metric over the fold's evaluable test users (equal user weight)."""

    sums = {name: [] for name in METRICS}
    skipped = 0
    for user, scores in user_scores:
        test_pos = fold.test.get(user)
        if test_pos is None:
            continue
        train_pos = train.items_of(user)
        try:
            values = (
                auc(test_pos, train_pos, scores, tie_credit=tie_credit),
                map_at_k(test_pos, train_pos, scores, k),
                ndcg_at_k(test_pos, train_pos, scores, k),
            )
        except MetricError as e:
            skipped += 1
            _log.debug("skipping user %d: %s", user, e)
            continue
        for name, value in zip(METRICS, values):
            sums[name].append(value)

    evaluated = len(sums["auc"])
    if skipped:
        _log.warning("fold %d: skipped %d users without positives or negatives", fold.index, skipped)
    if evaluated == 0:
        raise MetricError(f"fold {fold.index} has no evaluable users")
    means = {name: math.fsum(vals) / evaluated for name, vals in sums.items()}
    return FoldMetrics(
        auc=means["auc"],
        map_at_k=means["map_at_k"],
        ndcg_at_k=means["ndcg_at_k"],
        users_evaluated=evaluated,
        users_skipped=skipped,
    )


def summarize(values: Sequence[float]) -> MetricSummary:
    """Mean and population standard deviation."""

    if not values:
        raise MetricError("cannot summarize an empty sequence")
    values = [float(v) for v in values]
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return MetricSummary(mean=mean, std=math.sqrt(var), per_fold=tuple(values))


def aggregate(per_fold: Sequence[FoldMetrics]) -> EvalReport:
    if not per_fold:
        raise MetricError("aggregate needs at least one fold")
    metrics = {name: summarize([f.value(name) for f in per_fold]) for name in METRICS}
    return EvalReport(metrics=metrics, folds=tuple(per_fold))

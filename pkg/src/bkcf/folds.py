"""Per-user half split cross-validation.

Users are shuffled into ``fold_count`` groups; each user's interactions are
shuffled and halved (training keeps the extra one on odd counts). Fold ``t``
tests the second half of group ``t``'s users and trains on everything else.
Shuffles use numpy's PCG64 generator seeded with the plan seed, so plans are
identical across platforms and numpy versions that keep PCG64 stable.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from bkcf.domain import BinaryInteractionMatrix, Fold, FoldPlan
from bkcf.io_utils import write_csv
from bkcf.loader import DataError

_log = logging.getLogger(__name__)

DEFAULT_FOLDS = 5
MIN_TRAIN_RATINGS = 5


def plan_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def split_halves(items, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle ``items`` and return sorted ``(train, test)`` halves; train gets the odd one."""

    shuffled = rng.permutation(np.asarray(items, dtype=np.int64))
    cut = (shuffled.size + 1) // 2
    return np.sort(shuffled[:cut]), np.sort(shuffled[cut:])


def make_folds(
    X: BinaryInteractionMatrix,
    seed: int,
    *,
    fold_count: int = DEFAULT_FOLDS,
    min_train: int = MIN_TRAIN_RATINGS,
) -> FoldPlan:
    """Build the fold plan for ``X``.

    A user is tested only when the training half keeps at least ``min_train``
    interactions; everyone else stays entirely in training in every fold.
    """

    if X.interaction_count == 0:
        raise DataError("cannot split an empty interaction matrix")
    if fold_count < 2:
        raise DataError(f"fold count must be >= 2, got {fold_count}")

    rng = plan_rng(seed)
    order = rng.permutation(X.user_count)
    groups = np.array_split(order, fold_count)

    folds: list[Fold] = []
    forced = 0
    for index, group in enumerate(groups):
        test: dict[int, np.ndarray] = {}
        for user in np.sort(group):
            train_half, test_half = split_halves(X.items_of(int(user)), rng)
            if train_half.size < min_train or test_half.size == 0:
                forced += 1
                continue
            test[int(user)] = test_half
        folds.append(Fold(index=index, test=test))

    _log.info(
        "fold plan seed=%d: %d folds, %d users forced into training",
        seed,
        fold_count,
        forced,
    )
    return FoldPlan(fold_count=fold_count, seed=seed, folds=tuple(folds))


def _pair_keys(items: np.ndarray, users: np.ndarray, user_count: int) -> np.ndarray:
    return items.astype(np.int64) * user_count + users.astype(np.int64)


def held_out_pairs(fold: Fold) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(items, users)`` of the fold's test interactions."""

    if not fold.test:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    users = np.concatenate([np.full(len(v), u, dtype=np.int64) for u, v in sorted(fold.test.items())])
    items = np.concatenate([v for _, v in sorted(fold.test.items())]).astype(np.int64)
    return items, users


def train_matrix(X: BinaryInteractionMatrix, fold: Fold) -> BinaryInteractionMatrix:
    """``X`` without the fold's test interactions; shape and labels are unchanged."""

    items, users = X.pairs()
    t_items, t_users = held_out_pairs(fold)
    held_out = np.isin(
        _pair_keys(items, users, X.user_count),
        _pair_keys(t_items, t_users, X.user_count),
    )
    return BinaryInteractionMatrix.from_pairs(
        items[~held_out],
        users[~held_out],
        item_count=X.item_count,
        user_count=X.user_count,
        item_labels=X.item_labels,
        user_labels=X.user_labels,
    )


def write_fold_manifest(dest: Path, X: BinaryInteractionMatrix, fold: Fold) -> Path:
    """Write every interaction as ``fold,user,item,split`` using the original tokens."""

    items, users = X.pairs()
    t_items, t_users = held_out_pairs(fold)
    is_test = np.isin(
        _pair_keys(items, users, X.user_count),
        _pair_keys(t_items, t_users, X.user_count),
    )
    order = np.lexsort((items, users))
    user_labels = X.user_labels or tuple(str(u) for u in range(X.user_count))
    item_labels = X.item_labels or tuple(str(i) for i in range(X.item_count))
    rows = (
        (fold.index, user_labels[users[k]], item_labels[items[k]], "test" if is_test[k] else "train")
        for k in order
    )
    return write_csv(dest, ("fold", "user", "item", "split"), rows)

import numpy as np
import pytest
from pytest import mark

from bkcf.domain import BinaryInteractionMatrix
from bkcf.folds import held_out_pairs, make_folds, plan_rng, split_halves, train_matrix, write_fold_manifest
from bkcf.io_utils import read_csv
from bkcf.loader import DataError

from conftest import random_binary


def _pair_set(X):
    items, users = X.pairs()
    return set(zip(items.tolist(), users.tolist()))


def test_split_halves_odd_count():
    train, test = split_halves(np.arange(7), plan_rng(0))
    assert (train.size, test.size) == (4, 3)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(7))


def test_ten_by_ten_protocol():
    X = BinaryInteractionMatrix.from_dense(np.ones((10, 10), dtype=int))
    plan = make_folds(X, seed=42)
    assert plan.fold_count == 5
    for fold in plan.folds:
        assert len(fold.test_users) == 2
        assert fold.test_interaction_count == 10
        assert train_matrix(X, fold).interaction_count == 90


def test_light_users_stay_in_training():
    dense = np.zeros((12, 6), dtype=int)
    dense[:, :5] = 1
    dense[:4, 5] = 1  # user 5 has 4 ratings
    X = BinaryInteractionMatrix.from_dense(dense)
    plan = make_folds(X, seed=1, min_train=5)
    assert all(5 not in fold.test for fold in plan.folds)
    # 12 ratings split 6/6 so every other user is tested once
    assert sorted(u for fold in plan.folds for u in fold.test) == [0, 1, 2, 3, 4]


def test_min_train_counts_training_half():
    # 8 ratings keep 4 in training: not testable with min_train=5
    X = BinaryInteractionMatrix.from_dense(np.ones((8, 5), dtype=int))
    assert not any(fold.test for fold in make_folds(X, seed=0).folds)
    assert any(fold.test for fold in make_folds(X, seed=0, min_train=4).folds)


@mark.parametrize("seed", range(15))
def test_partition_invariants(seed):
    rng = np.random.default_rng(seed)
    X = BinaryInteractionMatrix.from_dense(random_binary(rng, 40, 30, density=float(rng.uniform(0.1, 0.6))))
    plan = make_folds(X, seed)
    everything = _pair_set(X)
    tested_users: set[int] = set()
    for fold in plan.folds:
        train = train_matrix(X, fold)
        items, users = held_out_pairs(fold)
        test = set(zip(items.tolist(), users.tolist()))
        train_pairs = _pair_set(train)
        assert train_pairs | test == everything
        assert not train_pairs & test
        for user in fold.test_users:
            assert train.items_of(user).size >= 5
            assert user not in tested_users
            tested_users.add(user)


def test_same_seed_same_plan():
    rng = np.random.default_rng(3)
    X = BinaryInteractionMatrix.from_dense(random_binary(rng, 30, 20, density=0.5))
    a = make_folds(X, 7)
    b = make_folds(X, 7)
    for fa, fb in zip(a.folds, b.folds):
        assert fa.test_users == fb.test_users
        for u in fa.test_users:
            assert np.array_equal(fa.test[u], fb.test[u])


def test_bad_inputs():
    with pytest.raises(DataError):
        make_folds(BinaryInteractionMatrix.from_dense([[0, 0]]), 1)
    with pytest.raises(DataError):
        make_folds(BinaryInteractionMatrix.from_dense([[1, 0]]), 1, fold_count=1)


def test_manifest_lists_every_interaction(tmp_path):
    X = BinaryInteractionMatrix.from_pairs(
        [0, 1, 2, 3, 4, 5, 6, 7, 8, 9] * 2,
        [0] * 10 + [1] * 10,
        item_count=10,
        user_count=2,
        item_labels=tuple(f"i{k}" for k in range(10)),
        user_labels=("alice", "bob"),
    )
    plan = make_folds(X, 5, fold_count=2)
    fold = next(f for f in plan.folds if f.test)
    rows = read_csv(write_fold_manifest(tmp_path / "m.csv", X, fold))
    assert len(rows) == 20
    assert {r["split"] for r in rows} == {"train", "test"}
    assert sum(r["split"] == "test" for r in rows) == fold.test_interaction_count
    assert {r["user"] for r in rows} == {"alice", "bob"}
    assert all(r["fold"] == str(fold.index) for r in rows)

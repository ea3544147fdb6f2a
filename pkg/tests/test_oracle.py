import math

import numpy as np
import pytest
from pytest import mark

from bkcf import oracle
from bkcf.oracle import OracleGuardError


def test_conjunctive_embedding_examples():
    assert oracle.conjunctive_embedding([1, 1, 0], 2).tolist() == [1, 0, 0]
    assert oracle.conjunctive_embedding([1, 1, 1, 1], 3).tolist() == [1, 1, 1, 1]
    # subsets of 4 variables in order: 01 02 03 12 13 23
    assert oracle.conjunctive_embedding([1, 0, 1, 1], 2).tolist() == [0, 1, 1, 0, 0, 1]


def test_disjunctive_embedding_examples():
    assert oracle.disjunctive_embedding([1, 0, 0], 2).tolist() == [1, 1, 0]
    assert oracle.disjunctive_embedding([0, 0, 0, 0], 2).tolist() == [0] * 6
    assert oracle.disjunctive_embedding([1, 1, 0, 0], 2).tolist() == [1, 1, 1, 1, 1, 0]


def test_gram_from_embedding_examples():
    assert np.array_equal(oracle.gram_from_embedding(np.eye(3, dtype=int)), np.eye(3, dtype=int))
    same = np.ones((3, 5), dtype=int)
    assert np.array_equal(oracle.gram_from_embedding(same), np.full((3, 3), 5))


@mark.parametrize("n, d", [(5, 2), (8, 3), (12, 5), (6, 6)])
def test_embedding_dimension(n, d):
    x = np.zeros(n, dtype=int)
    assert oracle.conjunctive_embedding(x, d).size == math.comb(n, d)
    assert oracle.disjunctive_embedding(x, d).size == math.comb(n, d)


def test_conjunctive_dimension_peaks_at_half():
    for n in range(2, 13):
        sizes = [len(oracle.subsets(n, d)) for d in range(1, min(n, oracle.MAX_ARITY) + 1)]
        best = int(np.argmax(sizes)) + 1
        assert best == min(n // 2, oracle.MAX_ARITY)


@mark.parametrize("seed", range(10))
def test_disjunctive_self_count(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    d = int(rng.integers(1, min(5, n) + 1))
    x = (rng.random(n) < 0.4).astype(int)
    k = int(x.sum())
    assert int(oracle.disjunctive_embedding(x, d).sum()) == math.comb(n, d) - math.comb(n - k, d)


def test_guards():
    with pytest.raises(OracleGuardError):
        oracle.conjunctive_embedding(np.zeros(oracle.MAX_VARIABLES + 1, dtype=int), 2)
    with pytest.raises(OracleGuardError):
        oracle.disjunctive_embedding(np.zeros(10, dtype=int), oracle.MAX_ARITY + 1)
    with pytest.raises(ValueError):
        oracle.conjunctive_embedding([0, 2, 1], 1)

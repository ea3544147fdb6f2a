import logging

import numpy as np
import pytest
from pytest import approx, fixture, mark

from bkcf.domain import BinaryInteractionMatrix, KernelFamily, KernelSpec, RankerConfig
from bkcf.kernels import gram
from bkcf.ranker import (
    CfKomd,
    SolverError,
    compute_q,
    objective,
    project_simplex,
    recommend_all,
    score_user,
    solve_user,
    solve_user_model,
)

from conftest import random_binary

_log = logging.getLogger(__name__)

TIGHT = RankerConfig(lambda_p=0.1, max_iters=100_000, tol=1e-14)


def _simplex_grid(p: int, step: float = 1e-3) -> np.ndarray:
    ticks = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
    if p == 1:
        return np.ones((1, 1))
    if p == 2:
        return np.column_stack([ticks, 1.0 - ticks])
    a, b = np.meshgrid(ticks, ticks, indexing="ij")
    keep = a + b <= 1.0 + 1e-12
    a, b = a[keep], b[keep]
    return np.column_stack([a, b, np.maximum(1.0 - a - b, 0.0)])


def _grid_objective(K, q, lam, grid):
    return np.einsum("ni,ij,nj->n", grid, K, grid) + lam * (grid**2).sum(axis=1) - 2.0 * grid @ q


@fixture(scope="module")
def ranker_matrix():
    rng = np.random.default_rng(21)
    dense = random_binary(rng, 30, 12, density=0.35)
    dense[:, 0] = 1
    return BinaryInteractionMatrix.from_dense(dense)


@mark.parametrize(
    "v, expected",
    [([5.0, 1.0], [1.0, 0.0]), ([0.5, 0.5, 0.5], [1 / 3, 1 / 3, 1 / 3]), ([0.2, 0.3, 0.5], [0.2, 0.3, 0.5])],
)
def test_project_simplex_examples(v, expected):
    assert project_simplex(v) == approx(np.array(expected), abs=1e-15)


@mark.parametrize("seed", range(20))
def test_project_simplex_feasible(seed):
    rng = np.random.default_rng(seed)
    out = project_simplex(rng.normal(scale=3.0, size=int(rng.integers(1, 30))))
    assert out.min() >= 0.0
    assert out.sum() == approx(1.0, abs=1e-12)


def test_project_simplex_empty():
    with pytest.raises(SolverError):
        project_simplex([])


def test_solve_single_positive():
    K = np.array([[1.0]])
    model = solve_user_model(K, np.array([0.3]), RankerConfig())
    assert model.alpha.tolist() == [1.0]
    assert model.iterations == 0


def test_solve_identity_examples():
    cfg = RankerConfig(lambda_p=0.0)
    assert solve_user(np.eye(2), np.array([1.0, 0.0]), cfg) == approx(np.array([1.0, 0.0]), abs=1e-9)
    assert solve_user(np.eye(2), np.array([0.4, 0.4]), cfg) == approx(np.array([0.5, 0.5]), abs=1e-12)


def test_solve_rejects_bad_input():
    with pytest.raises(SolverError):
        solve_user(np.zeros((0, 0)), np.zeros(0), RankerConfig())
    with pytest.raises(SolverError):
        solve_user(np.eye(3), np.zeros(2), RankerConfig())


def test_ranker_config_validation():
    with pytest.raises(ValueError):
        RankerConfig(lambda_p=-1.0)
    with pytest.raises(ValueError):
        RankerConfig(max_iters=0)
    with pytest.raises(ValueError):
        RankerConfig(tol=0.0)


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 4))
    rows = random_binary(rng, p, 8, density=0.5)
    rows[:, 0] = 1
    K = gram(BinaryInteractionMatrix.from_dense(rows), KernelSpec(KernelFamily.LINEAR)).values
    q = rng.uniform(0.0, 1.0, size=p)
    return K, q


@mark.parametrize("seed", range(100))
def test_solver_matches_grid_search(seed):
    K, q = _random_instance(seed)
    model = solve_user_model(K, q, TIGHT)
    grid = _simplex_grid(q.size)
    best = float(_grid_objective(K, q, TIGHT.lambda_p, grid).min())
    assert model.objective <= best + 1e-6
    assert model.alpha.min() >= 0.0
    assert model.alpha.sum() == approx(1.0, abs=1e-12)


@mark.parametrize("seed", range(10))
def test_objective_history_non_increasing(seed):
    rng = np.random.default_rng(seed)
    rows = random_binary(rng, 12, 10, density=0.4)
    rows[:, 0] = 1
    K = gram(BinaryInteractionMatrix.from_dense(rows), KernelSpec(KernelFamily.DISJUNCTIVE, 2)).values
    q = rng.uniform(0.0, 1.0, size=12)
    history: list[float] = []
    model = solve_user_model(K, q, RankerConfig(), history=history)
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert history[-1] == model.objective
    assert model.objective == approx(objective(model.alpha, K, q, 0.1))


def test_solver_is_deterministic():
    K, q = _random_instance(3)
    first = solve_user(K, q, RankerConfig())
    second = solve_user(K, q, RankerConfig())
    assert np.array_equal(first, second)


def test_score_user_examples():
    k = np.array([0.9, 0.2, 0.5])
    q = np.array([0.3, 0.1, 0.2])
    assert score_user(k, np.array([1.0]), q) == approx(k - q)
    assert score_user(np.ones((2, 3)), np.array([0.3, 0.7]), np.ones(3)) == approx(np.zeros(3))
    rows = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.4]])
    assert score_user(rows, np.array([0.5, 0.5]), q) == approx(rows.mean(axis=0) - q)
    with pytest.raises(SolverError):
        score_user(rows, np.array([1.0]), q)


def test_compute_q_is_row_mean():
    K = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert compute_q(K) == approx(np.array([0.75, 0.75]))


def test_recommend_all_single_interaction():
    X = BinaryInteractionMatrix.from_dense([[1]])
    scores = recommend_all(X, KernelSpec(KernelFamily.LINEAR))
    assert list(scores) == [0]
    assert scores[0].shape == (1,)


def test_identical_users_get_identical_scores():
    X = BinaryInteractionMatrix.from_dense([[1, 1, 0], [0, 0, 1], [1, 1, 1], [0, 0, 0]])
    scores = recommend_all(X, KernelSpec(KernelFamily.DISJUNCTIVE, 2))
    assert np.array_equal(scores[0], scores[1])
    assert set(scores) == {0, 1, 2}


def test_cf_komd_parallel_matches_serial(ranker_matrix):
    spec = KernelSpec(KernelFamily.CONJUNCTIVE, 2)
    users = [int(u) for u in np.flatnonzero(ranker_matrix.user_degrees() > 0)]
    serial = dict(CfKomd(spec).fit(ranker_matrix).iter_scores(users))
    parallel = dict(CfKomd(spec, n_jobs=3).fit(ranker_matrix).iter_scores(users))
    for u in users:
        assert np.array_equal(serial[u], parallel[u])


def test_cf_komd_solve_records_model(ranker_matrix):
    model = CfKomd(KernelSpec(KernelFamily.TANIMOTO)).fit(ranker_matrix).solve(0)
    assert np.array_equal(model.positive_items, ranker_matrix.items_of(0))
    assert model.alpha.size == model.positive_items.size
    assert model.user_id == 0
    _log.info("user 0 solved in %d iterations, objective %.6f", model.iterations, model.objective)


def test_cf_komd_requires_fit():
    with pytest.raises(SolverError):
        CfKomd(KernelSpec(KernelFamily.LINEAR)).scores(0)
    with pytest.raises(SolverError):
        CfKomd(KernelSpec(KernelFamily.LINEAR)).fit(BinaryInteractionMatrix.from_dense([[0, 0]]))


from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from bkcf.domain import BinaryInteractionMatrix, KernelMatrix, KernelSpec, RankerConfig, UserModel
from bkcf.kernels import DEFAULT_BLOCK_SIZE, BinomialCache, gram

_log = logging.getLogger(__name__)

USER_BATCH = 256


class SolverError(RuntimeError):
    pass


def compute_q(K: KernelMatrix | np.ndarray) -> np.ndarray:
    """Row means of the full item kernel: ``q_i = mean_j K[i, j]``."""

    values = K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=np.float64)
    return values.mean(axis=1)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""

    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise SolverError("cannot project an empty vector onto the simplex")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = int(k[u - (css - 1.0) / k > 0][-1])
    theta = (css[rho - 1] - 1.0) / rho
    return np.maximum(v - theta, 0.0)


def objective(alpha: np.ndarray, K_pp: np.ndarray, q_p: np.ndarray, lambda_p: float) -> float:
    """``a'Ka + lambda_p |a|^2 - 2 a'q``."""

    return float(alpha @ (K_pp @ alpha) + lambda_p * (alpha @ alpha) - 2.0 * (alpha @ q_p))


def _lipschitz(K_pp: np.ndarray, lambda_p: float) -> float:
    # Gradient 2((K + lambda I) a - q) is Lipschitz with 2(lambda_max(K) + lambda).
    bound = min(float(np.trace(K_pp)), float(np.abs(K_pp).sum(axis=1).max()))
    lip = 2.0 * (bound + lambda_p)
    return lip if lip > 0.0 else 2.0


def solve_user_model(
    K_pp,
    q_p,
    cfg: RankerConfig,
    *,
    user_id: int = -1,
    positive_items: np.ndarray | None = None,
    history: list[float] | None = None,
) -> UserModel:
    """Projected gradient descent with step ``1/L`` from the uniform distribution.

    Stops when the objective decreases by less than ``cfg.tol`` or after
    ``cfg.max_iters`` steps; a step that would increase the objective is rejected.
    """

    K_pp = np.asarray(K_pp, dtype=np.float64)
    q_p = np.asarray(q_p, dtype=np.float64).ravel()
    p = q_p.size
    if p == 0:
        raise SolverError(f"user {user_id} has no positive items to solve over")
    if K_pp.shape != (p, p):
        raise SolverError(f"kernel block shape {K_pp.shape} does not match {p} positives")
    items = positive_items if positive_items is not None else np.arange(p)

    if p == 1:
        alpha = np.ones(1)
        f = objective(alpha, K_pp, q_p, cfg.lambda_p)
        if history is not None:
            history.append(f)
        return UserModel(user_id=user_id, positive_items=items, alpha=alpha, iterations=0, objective=f)

    lam = cfg.lambda_p
    step = 1.0 / _lipschitz(K_pp, lam)
    alpha = np.full(p, 1.0 / p)
    f = objective(alpha, K_pp, q_p, lam)
    if history is not None:
        history.append(f)

    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        grad = 2.0 * (K_pp @ alpha + lam * alpha - q_p)
        candidate = project_simplex(alpha - step * grad)
        f_next = objective(candidate, K_pp, q_p, lam)
        if f_next > f:
            break
        decrease = f - f_next
        alpha, f = candidate, f_next
        if history is not None:
            history.append(f)
        if decrease < cfg.tol:
            break

    return UserModel(user_id=user_id, positive_items=items, alpha=alpha, iterations=iterations, objective=f)


def solve_user(K_pp, q_p, cfg: RankerConfig) -> np.ndarray:
    return solve_user_model(K_pp, q_p, cfg).alpha


def score_user(K_rows, alpha, q) -> np.ndarray:
    """``K_rows' alpha - q``: one score per item, higher is better."""

    K_rows = np.atleast_2d(np.asarray(K_rows, dtype=np.float64))
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if K_rows.shape != (alpha.size, q.size):
        raise SolverError(
            f"kernel rows {K_rows.shape} do not match alpha ({alpha.size}) and q ({q.size})"
        )
    return alpha @ K_rows - q


class CfKomd:
    """Kernel ranker over one training matrix.

    ``fit`` builds the item Gram matrix and ``q`` once; each user is then solved
    and scored independently against the shared, read-only kernel.
    """

    def __init__(
        self,
        spec: KernelSpec,
        cfg: RankerConfig | None = None,
        *,
        n_jobs: int = 1,
        block_size: int = DEFAULT_BLOCK_SIZE,
        cache: BinomialCache | None = None,
    ) -> None:
        self.spec = spec
        self.cfg = cfg or RankerConfig()
        self.n_jobs = n_jobs
        self.block_size = block_size
        self.cache = cache
        self.train: BinaryInteractionMatrix | None = None
        self.kernel: KernelMatrix | None = None
        self.q: np.ndarray | None = None

    def fit(self, train: BinaryInteractionMatrix) -> "CfKomd":
        if train.item_count == 0 or train.interaction_count == 0:
            raise SolverError("training matrix is empty")
        self.train = train
        self.kernel = gram(
            train, self.spec, block_size=self.block_size, n_jobs=self.n_jobs, cache=self.cache
        )
        self.q = compute_q(self.kernel)
        return self

    def _require_fit(self) -> None:
        if self.kernel is None or self.train is None or self.q is None:
            raise SolverError("ranker is not fitted")

    def solve(self, user: int) -> UserModel:
        self._require_fit()
        items = self.train.items_of(user)
        K = self.kernel.values
        return solve_user_model(
            K[np.ix_(items, items)], self.q[items], self.cfg, user_id=user, positive_items=items
        )

    def scores(self, user: int) -> np.ndarray:
        model = self.solve(user)
        return score_user(self.kernel.values[model.positive_items], model.alpha, self.q)

    def iter_scores(
        self, users: Iterable[int], *, progress: bool = False
    ) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(user, scores)`` in the given order, solving batches in parallel."""

        self._require_fit()
        users = list(users)
        bar = tqdm(total=len(users), desc=f"users {self.spec.label}", unit="user", disable=not progress)
        try:
            for start in range(0, len(users), USER_BATCH):
                batch = users[start : start + USER_BATCH]
                if self.n_jobs == 1:
                    results = [self.scores(u) for u in batch]
                else:
                    results = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                        delayed(self.scores)(u) for u in batch
                    )
                yield from zip(batch, results)
                bar.update(len(batch))
        finally:
            bar.close()


def recommend_all(
    train: BinaryInteractionMatrix,
    spec: KernelSpec,
    cfg: RankerConfig | None = None,
    *,
    n_jobs: int = 1,
) -> dict[int, np.ndarray]:
    """Score every user with at least one training interaction."""

    model = CfKomd(spec, cfg, n_jobs=n_jobs).fit(train)
    degrees = train.user_degrees()
    users = [int(u) for u in np.flatnonzero(degrees > 0)]
    skipped = train.user_count - len(users)
    if skipped:
        _log.info("%d users without training interactions were not scored", skipped)
    return dict(model.iter_scores(users))

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class KernelFamily(str, Enum):
    LINEAR = "linear"
    CONJUNCTIVE = "conjunctive"
    DISJUNCTIVE = "disjunctive"
    MDNF = "mdnf"
    TANIMOTO = "tanimoto"

    @property
    def uses_arity(self) -> bool:
        return self in {KernelFamily.CONJUNCTIVE, KernelFamily.DISJUNCTIVE}

    @staticmethod
    def parse(value: str) -> "KernelFamily":
        key = str(value).strip().lower()
        aliases = {
            "c": "conjunctive",
            "ckernel": "conjunctive",
            "c-kernel": "conjunctive",
            "d": "disjunctive",
            "dkernel": "disjunctive",
            "d-kernel": "disjunctive",
            "jaccard": "tanimoto",
            "monotone-dnf": "mdnf",
        }
        key = aliases.get(key, key)
        return KernelFamily(key)


@dataclass(frozen=True)
class BinaryVectorStats:
    """Counts describing a pair of binary vectors over ``n`` variables."""

    n: int
    nx: int
    nz: int
    nxz: int

    def __post_init__(self) -> None:
        for name in ("n", "nx", "nz", "nxz"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
        if self.nxz > min(self.nx, self.nz) or max(self.nx, self.nz) > self.n:
            raise ValueError(f"inconsistent counts: {self}")

    @staticmethod
    def of(x, z) -> "BinaryVectorStats":
        xa = np.asarray(x, dtype=bool)
        za = np.asarray(z, dtype=bool)
        if xa.shape != za.shape:
            raise ValueError("vectors must have equal length")
        return BinaryVectorStats(
            n=int(xa.size),
            nx=int(xa.sum()),
            nz=int(za.sum()),
            nxz=int(np.logical_and(xa, za).sum()),
        )


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    arity: int = 1
    normalized: bool = True

    def __post_init__(self) -> None:
        if self.arity < 1:
            raise ValueError(f"arity must be >= 1, got {self.arity}")

    @property
    def label(self) -> str:
        if self.family.uses_arity:
            return f"{self.family.value}({self.arity})"
        return self.family.value

    @property
    def arity_cell(self) -> str:
        """Arity as written to result files; empty for arity-free families."""
        return str(self.arity) if self.family.uses_arity else ""


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    values: np.ndarray
    spec: KernelSpec

    @property
    def item_count(self) -> int:
        return int(self.values.shape[0])

    @property
    def normalized(self) -> bool:
        return self.spec.normalized


@dataclass(frozen=True, eq=False)
class BinaryInteractionMatrix:
    """Items x users binary matrix (item-based view: users are the variables).

    ``matrix`` is a CSR matrix with int32 ones, sorted indices and no duplicates.
    """

    matrix: sp.csr_matrix
    item_labels: tuple[str, ...] = ()
    user_labels: tuple[str, ...] = ()

    @staticmethod
    def from_pairs(
        items,
        users,
        *,
        item_count: int,
        user_count: int,
        item_labels: tuple[str, ...] = (),
        user_labels: tuple[str, ...] = (),
    ) -> "BinaryInteractionMatrix":
        items = np.asarray(items, dtype=np.int64)
        users = np.asarray(users, dtype=np.int64)
        if items.size and (items.min() < 0 or items.max() >= item_count):
            raise ValueError("item index out of range")
        if users.size and (users.min() < 0 or users.max() >= user_count):
            raise ValueError("user index out of range")
        coo = sp.coo_matrix(
            (np.ones(items.size, dtype=np.int32), (items, users)),
            shape=(item_count, user_count),
        )
        csr = coo.tocsr()
        csr.sum_duplicates()
        csr.data[:] = 1
        csr.sort_indices()
        return BinaryInteractionMatrix(matrix=csr, item_labels=item_labels, user_labels=user_labels)

    @staticmethod
    def from_dense(rows) -> "BinaryInteractionMatrix":
        dense = np.asarray(rows, dtype=bool)
        items, users = np.nonzero(dense)
        return BinaryInteractionMatrix.from_pairs(
            items, users, item_count=dense.shape[0], user_count=dense.shape[1]
        )

    @property
    def item_count(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def user_count(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def interaction_count(self) -> int:
        return int(self.matrix.nnz)

    @property
    def density(self) -> float:
        cells = self.item_count * self.user_count
        return self.interaction_count / cells if cells else 0.0

    def row(self, item: int) -> np.ndarray:
        start, end = self.matrix.indptr[item], self.matrix.indptr[item + 1]
        return self.matrix.indices[start:end]

    def rows(self) -> list[np.ndarray]:
        return [self.row(i) for i in range(self.item_count)]

    @cached_property
    def _by_user(self) -> sp.csc_matrix:
        csc = self.matrix.tocsc()
        csc.sort_indices()
        return csc

    def items_of(self, user: int) -> np.ndarray:
        csc = self._by_user
        start, end = csc.indptr[user], csc.indptr[user + 1]
        return csc.indices[start:end]

    def item_degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr).astype(np.int64)

    def user_degrees(self) -> np.ndarray:
        return np.diff(self._by_user.indptr).astype(np.int64)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (items, users) index arrays in row-major order."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray().astype(np.int64)


@dataclass(frozen=True, eq=False)
class Fold:
    index: int
    # user -> sorted test item indices
    test: dict[int, np.ndarray]

    @property
    def test_users(self) -> list[int]:
        return sorted(self.test)

    @property
    def test_interaction_count(self) -> int:
        return int(sum(len(v) for v in self.test.values()))


@dataclass(frozen=True, eq=False)
class FoldPlan:
    fold_count: int
    seed: int
    folds: tuple[Fold, ...]


@dataclass(frozen=True)
class RankerConfig:
    lambda_p: float = 0.1
    max_iters: int = 1000
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.lambda_p < 0:
            raise ValueError(f"lambda_p must be >= 0, got {self.lambda_p}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True, eq=False)
class UserModel:
    user_id: int
    positive_items: np.ndarray
    alpha: np.ndarray
    iterations: int = 0
    objective: float = 0.0


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    per_fold: tuple[float, ...]


@dataclass(frozen=True)
class FoldMetrics:
    """Per-user metric means for one fold."""

    auc: float
    map_at_k: float
    ndcg_at_k: float
    users_evaluated: int
    users_skipped: int

    def value(self, metric: str) -> float:
        return float(getattr(self, metric))


@dataclass(frozen=True)
class EvalReport:
    metrics: dict[str, MetricSummary]
    folds: tuple[FoldMetrics, ...] = field(default_factory=tuple)

    @property
    def users_evaluated(self) -> int:
        return sum(f.users_evaluated for f in self.folds)

    @property
    def users_skipped(self) -> int:
        return sum(f.users_skipped for f in self.folds)

    def cell(self, metric: str, *, digits: int = 4) -> str:
        s = self.metrics[metric]
        return f"{s.mean:.{digits}f} ± {s.std:.{digits}f}"

"""Explicit boolean feature maps for small inputs.

Used only to verify the closed forms in :mod:`bkcf.kernels`; coordinates are
the ``d``-subsets of variables in lexicographic order.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from bkcf.kernels import KernelDomainError

MAX_VARIABLES = 20
MAX_ARITY = 6


class OracleGuardError(KernelDomainError):
    pass


def _as_binary(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError("expected a 1-d binary vector")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("vector entries must be 0 or 1")
    return arr.astype(bool)


def _check_guard(n: int, d: int) -> None:
    if n > MAX_VARIABLES:
        raise OracleGuardError(f"explicit embeddings are limited to n <= {MAX_VARIABLES}, got {n}")
    if d < 1 or d > MAX_ARITY:
        raise OracleGuardError(f"explicit embeddings are limited to 1 <= d <= {MAX_ARITY}, got {d}")


def subsets(n: int, d: int) -> list[tuple[int, ...]]:
    return list(combinations(range(n), d))


def conjunctive_embedding(x, d: int) -> np.ndarray:
    """One coordinate per ``d``-subset: 1 iff every variable of the subset is active."""

    xb = _as_binary(x)
    _check_guard(xb.size, d)
    return np.array([int(all(xb[list(b)])) for b in subsets(xb.size, d)], dtype=np.int64)


def disjunctive_embedding(x, d: int) -> np.ndarray:
    """One coordinate per ``d``-subset: 1 iff the subset holds at least one active variable."""

    xb = _as_binary(x)
    _check_guard(xb.size, d)
    return np.array([int(any(xb[list(b)])) for b in subsets(xb.size, d)], dtype=np.int64)


def gram_from_embedding(embeddings) -> np.ndarray:
    phi = np.asarray(embeddings, dtype=np.int64)
    if phi.ndim != 2:
        raise ValueError("embeddings must be a 2-d array (one row per example)")
    return phi @ phi.T


def conjunctive_gram(X, d: int) -> np.ndarray:
    rows = np.asarray(X)
    return gram_from_embedding([conjunctive_embedding(r, d) for r in rows])


def disjunctive_gram(X, d: int) -> np.ndarray:
    rows = np.asarray(X)
    return gram_from_embedding([disjunctive_embedding(r, d) for r in rows])

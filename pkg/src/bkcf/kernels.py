from __future__ import annotations

import logging
import math
import threading
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
from joblib import Parallel, delayed

from bkcf.domain import (
    BinaryInteractionMatrix,
    BinaryVectorStats,
    KernelFamily,
    KernelMatrix,
    KernelSpec,
)

_log = logging.getLogger(__name__)

# Largest integer range where float64 arithmetic stays exact.
EXACT_LIMIT = 2**53
# mDNF values 2^k - 1 are returned exactly up to this exponent.
MDNF_EXACT_MAX = 30

DEFAULT_BLOCK_SIZE = 1024


class KernelDomainError(RuntimeError):
    pass


class BinomialCache:
    """Memo tables for binomial coefficients and ratio tables.

    Lookups are plain dict reads; insertion and the hit/miss counters are
    serialized by a lock so the cache can be shared by the threads filling
    Gram row blocks.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._binom: dict[tuple[int, int], float] = {}
        self._ratio: dict[tuple[int, int, int], float] = {}
        self._tables: dict[tuple[str, int, int], np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    def _get(self, store: dict, key):
        value = store.get(key)
        with self._lock:
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
        return value

    def _put(self, store: dict, key, value):
        with self._lock:
            return store.setdefault(key, value)

    def binom(self, q: int, d: int) -> float:
        key = (q, d)
        hit = self._get(self._binom, key)
        if hit is not None:
            return hit
        exact = _binom_int(q, d)
        try:
            value = float(exact)
        except OverflowError:
            value = math.inf
        return self._put(self._binom, key, value)

    def binom_ratio(self, a: int, b: int, d: int) -> float:
        key = (a, b, d)
        hit = self._get(self._ratio, key)
        if hit is not None:
            return hit
        if a < d:
            value = 0.0
        else:
            value = 1.0
            for i in range(d):
                value *= (a - i) / (b - i)
        return self._put(self._ratio, key, value)

    def log_ratio_table(self, n: int, d: int) -> np.ndarray:
        """Return ``L`` with ``L[a] = log(C(a, d) / C(n, d))`` for ``a`` in ``0..n``.

        Entries with ``a < d`` are ``-inf``.
        """

        key = ("log_ratio", n, d)
        hit = self._get(self._tables, key)
        if hit is not None:
            return hit
        a = np.arange(n + 1, dtype=np.float64)
        gap = n - a
        table = np.zeros(n + 1, dtype=np.float64)
        valid = a >= d
        with np.errstate(divide="ignore", invalid="ignore"):
            for i in range(d):
                table[valid] += np.log1p(-gap[valid] / (n - i))
        table[~valid] = -np.inf
        table.setflags(write=False)
        return self._put(self._tables, key, table)

    def binom_table(self, top: int, d: int) -> np.ndarray:
        """Return ``C(v, d)`` as float64 for ``v`` in ``0..top`` (``inf`` past float range)."""

        key = ("binom", top, d)
        hit = self._get(self._tables, key)
        if hit is not None:
            return hit
        table = np.zeros(top + 1, dtype=np.float64)
        acc = 1
        # C(v, d) = C(v-1, d) * v / (v - d), seeded with C(d, d) = 1.
        for v in range(d, top + 1):
            if v > d:
                acc = acc * v // (v - d)
            try:
                table[v] = float(acc)
            except OverflowError:
                table[v:] = np.inf
                break
        table.setflags(write=False)
        return self._put(self._tables, key, table)

    def exact_table(self, top: int, d: int) -> np.ndarray | None:
        """Like :meth:`binom_table` but ``None`` unless every entry is below 2**53."""

        table = self.binom_table(top, d)
        if top >= d and not table[top] < EXACT_LIMIT:
            return None
        return table

    def stats(self) -> dict[str, int]:
        return {
            "hits": self.hits,
            "misses": self.misses,
            "entries": len(self._binom) + len(self._ratio) + len(self._tables),
        }

    def clear(self) -> None:
        with self._lock:
            self._binom.clear()
            self._ratio.clear()
            self._tables.clear()
            self.hits = 0
            self.misses = 0


_CACHE = BinomialCache()


def binomial_cache() -> BinomialCache:
    return _CACHE


def _binom_int(q: int, d: int) -> int:
    if d < 0 or q < d:
        return 0
    acc = 1
    for i in range(d):
        acc = acc * (q - i) // (i + 1)
    return acc


def _check_count(name: str, value) -> int:
    if int(value) != value or value < 0:
        raise KernelDomainError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


# ---------------------------------------------------------------------------
# Binomial arithmetic
# ---------------------------------------------------------------------------


def binom(q: int, d: int, *, cache: BinomialCache | None = None) -> float:
    """Return ``C(q, d)``; zero when ``q < d``."""

    q = _check_count("q", q)
    d = _check_count("d", d)
    return (cache or _CACHE).binom(q, d)


def binom_ratio(a: int, b: int, d: int, *, cache: BinomialCache | None = None) -> float:
    """Return ``C(a, d) / C(b, d)`` as a product of ``d`` factors, never forming either binomial."""

    a = _check_count("a", a)
    b = _check_count("b", b)
    d = _check_count("d", d)
    if d < 1:
        raise KernelDomainError(f"d must be >= 1, got {d}")
    if a > b:
        raise KernelDomainError(f"binom_ratio requires a <= b, got a={a}, b={b}")
    if d > b:
        raise KernelDomainError(f"binom_ratio requires d <= b, got d={d}, b={b}")
    return (cache or _CACHE).binom_ratio(a, b, d)


def _log_binom_ratio(a: int, b: int, d: int) -> float:
    if a < d:
        return -math.inf
    gap = b - a
    if gap == 0:
        return 0.0
    return math.fsum(math.log1p(-gap / (b - i)) for i in range(d))


# ---------------------------------------------------------------------------
# Scalar kernels
# ---------------------------------------------------------------------------


def linear_kernel(stats: BinaryVectorStats) -> float:
    return float(stats.nxz)


def c_kernel(stats: BinaryVectorStats, d: int) -> float:
    """Number of conjunctions of ``d`` variables true in both vectors: ``C(<x,z>, d)``."""

    if d < 1:
        raise KernelDomainError(f"arity must be >= 1, got {d}")
    return binom(stats.nxz, d)


def disjunctive_fraction(stats: BinaryVectorStats, d: int) -> float:
    """D-Kernel value divided by ``C(n, d)``.

    Evaluates ``1 - r(n-nx) - r(n-nz) + r(n-nx-nz+nxz)`` with ``r(a) = C(a,d)/C(n,d)``
    regrouped as ``(1 - r(A)) - r(B) * (1 - r(U)/r(B))`` so both differences come
    from ``expm1`` of accurately summed logarithms.
    """

    n, nx, nz, nxz = stats.n, stats.nx, stats.nz, stats.nxz
    if d < 1 or d > n:
        raise KernelDomainError(f"D-Kernel arity must be in [1, n={n}], got {d}")
    a_count = n - nx
    b_count = n - nz
    u_count = n - nx - nz + nxz
    hit_x = -math.expm1(_log_binom_ratio(a_count, n, d))
    if b_count < d:
        return hit_x
    r_b = math.exp(_log_binom_ratio(b_count, n, d))
    miss_x_given_b = -math.expm1(_log_binom_ratio(u_count, b_count, d))
    return max(0.0, hit_x - r_b * miss_x_given_b)


def d_kernel(stats: BinaryVectorStats, d: int) -> float:
    """Number of disjunctions of ``d`` variables true in both vectors.

    Exact integer inclusion-exclusion while ``C(n, d) < 2**53``; above that the
    factored form ``C(n, d) * disjunctive_fraction``.
    """

    n = stats.n
    if d < 1 or d > n:
        raise KernelDomainError(f"D-Kernel arity must be in [1, n={n}], got {d}")
    total = binom(n, d)
    if total < EXACT_LIMIT:
        value = (
            _binom_int(n, d)
            - _binom_int(n - stats.nx, d)
            - _binom_int(n - stats.nz, d)
            + _binom_int(n - stats.nx - stats.nz + stats.nxz, d)
        )
        return float(value)
    if math.isinf(total):
        raise KernelDomainError(
            f"C({n},{d}) overflows float64; use the normalized D-Kernel instead"
        )
    return total * disjunctive_fraction(stats, d)


def mdnf_kernel(stats: BinaryVectorStats) -> tuple[float, bool]:
    """Return ``(value, is_log)`` for ``2^<x,z> - 1``.

    Exact below ``2^30``; above it ``(log2 value, True)`` with the ``-1`` dropped.
    """

    if stats.nxz <= MDNF_EXACT_MAX:
        return (float((1 << stats.nxz) - 1), False)
    return (float(stats.nxz), True)


def normalized_mdnf(stats: BinaryVectorStats) -> float:
    nx, nz, nxz = stats.nx, stats.nz, stats.nxz
    if nx == 0 or nz == 0:
        return 0.0
    if max(nx, nz) <= MDNF_EXACT_MAX:
        return ((1 << nxz) - 1) / math.sqrt(((1 << nx) - 1) * ((1 << nz) - 1))
    correction = _mdnf_correction(nxz) / math.sqrt(_mdnf_correction(nx) * _mdnf_correction(nz))
    return correction * 2.0 ** (nxz - (nx + nz) / 2.0)


def _mdnf_correction(v: int) -> float:
    # 1 - 2^-v, i.e. (2^v - 1) / 2^v
    return -math.expm1(-v * math.log(2.0))


def tanimoto_kernel(stats: BinaryVectorStats) -> float:
    """Jaccard similarity ``|x & z| / |x | z|``; 0 for two empty vectors."""

    union = stats.nx + stats.nz - stats.nxz
    if union == 0:
        _log.debug("tanimoto on two empty vectors; returning 0")
        return 0.0
    return stats.nxz / union


def kernel_value(stats: BinaryVectorStats, spec: KernelSpec) -> float:
    """Unnormalized scalar kernel value (mDNF must fit the exact range)."""

    family = spec.family
    if family is KernelFamily.LINEAR:
        return linear_kernel(stats)
    if family is KernelFamily.CONJUNCTIVE:
        return c_kernel(stats, spec.arity)
    if family is KernelFamily.DISJUNCTIVE:
        return d_kernel(stats, spec.arity)
    if family is KernelFamily.TANIMOTO:
        return tanimoto_kernel(stats)
    value, is_log = mdnf_kernel(stats)
    return 2.0 ** value - 1.0 if is_log else value


def normalized_value(stats: BinaryVectorStats, spec: KernelSpec) -> float:
    """Normalized scalar kernel value, with the null-embedding convention of :func:`normalize_kernel`."""

    if spec.family is KernelFamily.MDNF:
        return normalized_mdnf(stats)
    if spec.family is KernelFamily.DISJUNCTIVE and spec.arity > 1:
        fxz = disjunctive_fraction(stats, spec.arity)
        fxx = disjunctive_fraction(BinaryVectorStats(stats.n, stats.nx, stats.nx, stats.nx), spec.arity)
        fzz = disjunctive_fraction(BinaryVectorStats(stats.n, stats.nz, stats.nz, stats.nz), spec.arity)
        return 0.0 if fxx <= 0 or fzz <= 0 else min(1.0, fxz / math.sqrt(fxx * fzz))
    if spec.family is KernelFamily.CONJUNCTIVE:
        # C(nx, d) * C(nz, d) may exceed float64 even when both factors fit
        cxx = _binom_int(stats.nx, spec.arity)
        czz = _binom_int(stats.nz, spec.arity)
        if cxx == 0 or czz == 0:
            return 0.0
        cxz = _binom_int(stats.nxz, spec.arity)
        return min(1.0, math.sqrt(float(Fraction(cxz * cxz, cxx * czz))))
    kxz = kernel_value(stats, spec)
    kxx = kernel_value(BinaryVectorStats(stats.n, stats.nx, stats.nx, stats.nx), spec)
    kzz = kernel_value(BinaryVectorStats(stats.n, stats.nz, stats.nz, stats.nz), spec)
    if kxx <= 0 or kzz <= 0:
        return 0.0
    return min(1.0, kxz / (math.sqrt(kxx) * math.sqrt(kzz)))


# ---------------------------------------------------------------------------
# Gram matrices
# ---------------------------------------------------------------------------


def validate_spec(spec: KernelSpec, n: int) -> None:
    if spec.family.uses_arity and spec.arity > n:
        raise KernelDomainError(
            f"{spec.family.value} arity {spec.arity} exceeds the number of variables n={n}"
        )


class _EntryBuilder:
    """Vectorized kernel entries for one spec over blocks of item pairs.

    ``block(nx_rows, nx_cols, nxz)`` returns values proportional to the kernel
    (a common positive factor cancels under normalization). When
    ``prenormalized`` is set the values are already normalized.
    """

    def __init__(self, spec: KernelSpec, n: int, degrees: np.ndarray, cache: BinomialCache) -> None:
        self.spec = spec
        self.n = n
        self.cache = cache
        self.prenormalized = False
        self.degenerate_pairs = 0
        self._lock = threading.Lock()
        top = int(degrees.max()) if degrees.size else 0
        family = spec.family
        d = spec.arity

        if family is KernelFamily.CONJUNCTIVE:
            table = cache.binom_table(top, d)
            if np.isfinite(table[-1]):
                self._table = table
                self._fn = self._conjunctive
            elif spec.normalized:
                self._log_binom = _log_binom_table(top, d)
                self.prenormalized = True
                self._fn = self._conjunctive_normalized_log
            else:
                raise KernelDomainError(f"C({top},{d}) overflows float64; use the normalized C-Kernel")
        elif family is KernelFamily.DISJUNCTIVE:
            exact = cache.exact_table(n, d)
            if d == 1:
                self._fn = self._linear
            elif exact is not None:
                self._table = exact
                self._total = float(_binom_int(n, d))
                self._fn = self._disjunctive_exact
            else:
                self._log_ratio = cache.log_ratio_table(n, d)
                self._scale = 1.0 if spec.normalized else cache.binom(n, d)
                if math.isinf(self._scale):
                    raise KernelDomainError(
                        f"C({n},{d}) overflows float64; use the normalized D-Kernel"
                    )
                self._fn = self._disjunctive_factored
        elif family is KernelFamily.MDNF:
            if top <= MDNF_EXACT_MAX:
                self._fn = self._mdnf_exact
            elif spec.normalized:
                self.prenormalized = True
                self._fn = self._mdnf_normalized_log
            else:
                if top > 1023:
                    raise KernelDomainError(f"2^{top} overflows float64; use the normalized mDNF kernel")
                self._fn = self._mdnf_float
        elif family is KernelFamily.TANIMOTO:
            self._fn = self._tanimoto
        else:
            self._fn = self._linear

    def block(self, nx_rows: np.ndarray, nx_cols: np.ndarray, nxz: np.ndarray) -> np.ndarray:
        return self._fn(nx_rows, nx_cols, nxz)

    @staticmethod
    def _linear(nx_rows, nx_cols, nxz):
        return nxz.astype(np.float64)

    def _conjunctive(self, nx_rows, nx_cols, nxz):
        return self._table[nxz]

    def _conjunctive_normalized_log(self, nx_rows, nx_cols, nxz):
        lb = self._log_binom
        with np.errstate(invalid="ignore"):
            out = np.exp(lb[nxz] - 0.5 * (lb[nx_rows] + lb[nx_cols]))
        return np.nan_to_num(out, nan=0.0, posinf=0.0)

    def _disjunctive_exact(self, nx_rows, nx_cols, nxz):
        n, t = self.n, self._table
        return self._total - t[n - nx_rows] - t[n - nx_cols] + t[n - nx_rows - nx_cols + nxz]

    def _disjunctive_factored(self, nx_rows, nx_cols, nxz):
        n, lr = self.n, self._log_ratio
        log_a = lr[n - nx_rows]
        log_b = lr[n - nx_cols]
        log_u = lr[n - nx_rows - nx_cols + nxz]
        hit_x = -np.expm1(log_a)
        r_b = np.exp(log_b)
        with np.errstate(invalid="ignore"):
            miss = -np.expm1(log_u - log_b)
        cross = np.where(r_b > 0.0, r_b * np.nan_to_num(miss, nan=0.0), 0.0)
        frac = np.maximum(hit_x - cross, 0.0)
        return frac * self._scale

    @staticmethod
    def _mdnf_exact(nx_rows, nx_cols, nxz):
        return (np.left_shift(np.int64(1), nxz.astype(np.int64)) - 1).astype(np.float64)

    @staticmethod
    def _mdnf_float(nx_rows, nx_cols, nxz):
        return np.expm1(nxz * math.log(2.0))

    @staticmethod
    def _mdnf_normalized_log(nx_rows, nx_cols, nxz):
        ln2 = math.log(2.0)
        base = np.exp2(nxz - 0.5 * (nx_rows + nx_cols))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = -np.expm1(-nxz * ln2) / np.sqrt(np.expm1(-nx_rows * ln2) * np.expm1(-nx_cols * ln2))
        return np.nan_to_num(base * corr, nan=0.0, posinf=0.0)

    def _tanimoto(self, nx_rows, nx_cols, nxz):
        union = nx_rows + nx_cols - nxz
        empty = union == 0
        if empty.any():
            with self._lock:
                self.degenerate_pairs += int(empty.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(empty, 0.0, nxz / np.where(empty, 1, union))
        return out.astype(np.float64)


def _log_binom_table(top: int, d: int) -> np.ndarray:
    # log C(v, d), accumulated from log C(d, d) = 0; -inf below d.
    table = np.full(top + 1, -np.inf)
    if top >= d:
        v = np.arange(d + 1, top + 1, dtype=np.float64)
        steps = np.log(v) - np.log(v - d)
        table[d] = 0.0
        table[d + 1 :] = np.cumsum(steps)
    return table


def row_blocks(m: int, block_size: int) -> list[tuple[int, int]]:
    block_size = max(1, int(block_size))
    return [(s, min(s + block_size, m)) for s in range(0, m, block_size)]


def gram(
    X: BinaryInteractionMatrix,
    spec: KernelSpec,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    n_jobs: int = 1,
    cache: BinomialCache | None = None,
) -> KernelMatrix:
    """Item x item Gram matrix of ``spec`` over the rows of ``X``.

    Row blocks are filled upper-triangle first and mirrored, so the result is
    exactly symmetric regardless of block size or worker count.
    """

    cache = cache or _CACHE
    n = X.user_count
    m = X.item_count
    validate_spec(spec, n)

    started = time.perf_counter()
    degrees = X.item_degrees()
    builder = _EntryBuilder(spec, n, degrees, cache)
    csr = X.matrix
    csr_t = csr.T.tocsc()
    out = np.empty((m, m), dtype=np.float64)

    def fill(start: int, end: int) -> None:
        nxz = (csr[start:end] @ csr_t[:, start:]).toarray().astype(np.int64)
        vals = builder.block(degrees[start:end, None], degrees[None, start:], nxz)
        width = end - start
        square = vals[:, :width]
        lower = np.tril_indices(width, -1)
        square[lower] = square.T[lower]
        out[start:end, start:] = vals
        out[end:, start:end] = vals[:, width:].T

    blocks = row_blocks(m, block_size)
    if n_jobs == 1 or len(blocks) == 1:
        for start, end in blocks:
            fill(start, end)
    else:
        Parallel(n_jobs=n_jobs, prefer="threads")(delayed(fill)(s, e) for s, e in blocks)

    if builder.degenerate_pairs:
        _log.warning(
            "%d item pairs with two empty rows scored 0 by the Tanimoto kernel",
            builder.degenerate_pairs,
        )

    K = KernelMatrix(values=out, spec=replace(spec, normalized=False))
    if spec.normalized:
        K = normalize_kernel(K, inplace=True, block_size=block_size)
    _log.debug(
        "gram %s: %dx%d in %.3fs (binomial cache %s)",
        spec.label,
        m,
        m,
        time.perf_counter() - started,
        cache.stats(),
    )
    return K


def normalize_kernel(
    K: KernelMatrix, *, inplace: bool = False, block_size: int = DEFAULT_BLOCK_SIZE
) -> KernelMatrix:
    """Cosine-normalize ``K``; null embeddings (zero diagonal) get diagonal 1 and row/column 0."""

    if inplace and K.values.dtype == np.float64:
        values = K.values
    else:
        values = np.array(K.values, dtype=np.float64)
    diag = np.diag(values).copy()
    null = diag <= 0.0
    safe = np.where(null, 1.0, diag)
    roots = np.sqrt(safe)
    for start, end in row_blocks(values.shape[0], block_size):
        # sqrt(d_i) * sqrt(d_j) stays finite where d_i * d_j overflows
        values[start:end] /= np.outer(roots[start:end], roots)
    if null.any():
        _log.warning(
            "%d items have a null embedding under %s; forcing unit diagonal",
            int(null.sum()),
            K.spec.label,
        )
        values[null, :] = 0.0
        values[:, null] = 0.0
    np.minimum(values, 1.0, out=values)
    np.fill_diagonal(values, 1.0)
    return KernelMatrix(values=values, spec=replace(K.spec, normalized=True))

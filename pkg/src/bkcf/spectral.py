from __future__ import annotations

import math

import numpy as np

from bkcf.domain import KernelMatrix
from bkcf.kernels import DEFAULT_BLOCK_SIZE, KernelDomainError, row_blocks


def _values(K) -> np.ndarray:
    values = K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise KernelDomainError(f"expected a square matrix, got shape {values.shape}")
    return values


def frobenius_norm(K, *, block_size: int = DEFAULT_BLOCK_SIZE) -> float:
    """Frobenius norm with per-block pairwise sums combined by ``math.fsum``."""

    values = _values(K)
    partials = [
        float(np.square(values[s:e]).sum())
        for s, e in row_blocks(values.shape[0], block_size)
    ]
    return math.sqrt(math.fsum(partials))


def spectral_ratio(K) -> float:
    """Trace norm over Frobenius norm; for PSD matrices the trace is the trace norm."""

    values = _values(K)
    trace = math.fsum(np.diag(values).tolist())
    if trace <= 0.0:
        raise KernelDomainError("spectral ratio is undefined for a matrix with zero trace")
    return trace / frobenius_norm(values)


def normalized_spectral_ratio(K) -> float:
    """Spectral ratio rescaled to ``[0, 1]``: 0 for a constant matrix, 1 for the identity."""

    values = _values(K)
    m = values.shape[0]
    if m < 2:
        raise KernelDomainError(f"normalized spectral ratio needs at least 2 items, got {m}")
    return (spectral_ratio(values) - 1.0) / (math.sqrt(m) - 1.0)

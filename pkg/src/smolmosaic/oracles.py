"""Ground truth for tests and the ``verify`` command; O(M^2), never on the fast path."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .aca import BlockGenerator
from .kernels import KernelSpec

__all__ = [
    "MAX_DIRECT_M",
    "OracleSizeError",
    "analytic_constant_solution",
    "direct_f1",
    "direct_f2",
    "kernel_matrix",
    "matrix_f1",
    "matrix_f2",
    "svd_block_error",
]

MAX_DIRECT_M = 1 << 13
MAX_SVD_SIDE = 512
_ROWS = 256


class OracleSizeError(ValueError):
    pass


def _guard(M: int, limit: int = MAX_DIRECT_M):
    if M > limit:
        raise OracleSizeError(f"oracle refuses size {M} (limit {limit})")


def kernel_matrix(spec: KernelSpec, M: int) -> np.ndarray:
    _guard(M)
    s = np.arange(1, M + 1)
    return spec(s[:, None], s[None, :])


def matrix_f1(K: np.ndarray, n: np.ndarray, full: bool = False) -> np.ndarray:
    """Double-sum gain term for an explicit matrix (exact kernel or densified mosaic)."""
    M = n.size
    z = np.zeros(2 * M)
    for i in range(M):
        if n[i] != 0.0:
            # row i (size i+1) pairs with sizes j+1: slot (i+1)+(j+1)-1
            z[i + 1:i + 1 + M] += n[i] * K[i] * n
    z *= 0.5
    return z if full else z[:M]


def matrix_f2(K: np.ndarray, n: np.ndarray) -> np.ndarray:
    return n * (K @ n)


def direct_f1(spec: KernelSpec, n: np.ndarray, full: bool = False) -> np.ndarray:
    """Exact ``1/2 sum_{i+j=s} K_ij n_i n_j`` by double loop (``M <= 2^13``)."""
    n = np.asarray(n, dtype=np.float64)
    M = n.size
    _guard(M)
    s = np.arange(1, M + 1)
    z = np.zeros(2 * M)
    for lo in range(0, M, _ROWS):
        rows = s[lo:lo + _ROWS]
        K = spec(rows[:, None], s[None, :])
        for k, i in enumerate(range(lo, lo + rows.size)):
            if n[i] != 0.0:
                z[i + 1:i + 1 + M] += n[i] * K[k] * n
    z *= 0.5
    return z if full else z[:M]


def direct_f2(spec: KernelSpec, n: np.ndarray) -> np.ndarray:
    """Exact ``n_s sum_j K_sj n_j`` (``M <= 2^13``)."""
    n = np.asarray(n, dtype=np.float64)
    M = n.size
    _guard(M)
    s = np.arange(1, M + 1)
    y = np.empty(M)
    for lo in range(0, M, _ROWS):
        rows = s[lo:lo + _ROWS]
        y[lo:lo + rows.size] = spec(rows[:, None], s[None, :]) @ n
    return n * y


def analytic_constant_solution(k, t: float):
    """Smoluchowski's solution for ``K = 2`` and monodisperse start.

    ``n_k(t) = (1+t)^-2 exp(-(k-1) ln(1+1/t))``; ``k`` may be an array.
    """
    if t <= 0:
        raise ValueError("analytic solution is defined for t > 0")
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 1):
        raise ValueError("sizes start at 1")
    out = np.exp(-(k - 1.0) * np.log1p(1.0 / t)) / (1.0 + t) ** 2
    return float(out) if out.ndim == 0 else out


def svd_block_error(gen: BlockGenerator, r: int, values: Optional[np.ndarray] = None) -> float:
    """Eckart-Young optimum: Frobenius error of the best rank-``r`` approximation."""
    if gen.side > MAX_SVD_SIDE:
        raise OracleSizeError(f"block side {gen.side} exceeds {MAX_SVD_SIDE}")
    A = gen.materialize() if values is None else values
    sv = np.linalg.svd(A, compute_uv=False)
    tail = sv[r:]
    return float(np.sqrt(np.sum(tail * tail)))

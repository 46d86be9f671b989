"""Gain (convolution) and loss (matvec) terms of the truncated Smoluchowski system.

With ``n`` indexed by size ``s = 1..M`` (array slot ``s - 1``)::

    f1(s) = 1/2 sum_{i+j=s} K_ij n_i n_j
    f2(s) = n_s sum_j K_sj n_j

Each mosaic block with 1-based corner ``(a, b)`` and side ``m`` contributes to
``f2`` rows ``a..a+m-1`` and to ``f1`` sizes ``a+b .. a+b+2m-2``; sizes above
``M`` are dropped, and blocks with ``a + b > M`` are skipped outright.
Low-rank blocks convolve each weighted factor pair by FFT, dense blocks use
the direct anti-diagonal sum.
"""
from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .mosaic import MosaicKernel

__all__ = [
    "apply_f1",
    "apply_f2",
    "apply_rhs",
    "skeleton_f1",
    "skeleton_f2",
]

# complex entries per FFT work slab
_FFT_CHUNK = 1 << 22


def _check(mk: MosaicKernel, n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    if n.shape != (mk.M,):
        raise ValueError(f"state has shape {n.shape}, mosaic expects ({mk.M},)")
    return n


def _next_pow2(k: int) -> int:
    return 1 << (k - 1).bit_length()


def _gather(n: np.ndarray, start: np.ndarray, m: int) -> np.ndarray:
    return n[(start - 1)[:, None] + np.arange(m)]


def _scatter(out: np.ndarray, start: np.ndarray, vals: np.ndarray) -> None:
    """``out[start[k]-1 + q] += vals[k, q]``, dropping slots past ``out``."""
    width = vals.shape[1]
    idx = (start - 1)[:, None] + np.arange(width)
    if idx.size == 0:
        return
    if idx[:, -1].max() >= out.size:
        keep = idx < out.size
        idx, vals = idx[keep], vals[keep]
    out += np.bincount(idx.ravel(), weights=vals.ravel(), minlength=out.size)


def apply_f2(mk: MosaicKernel, n: np.ndarray, workers: int = 1) -> np.ndarray:
    """Loss term ``n * (K n)`` over the mosaic approximant."""
    n = _check(mk, n)
    y = np.zeros(mk.M)
    for g in mk.dense:
        if g.alpha.size:
            _scatter(y, g.alpha, np.matmul(g.values, _gather(n, g.beta, g.side)[:, :, None])[:, :, 0])
    for g in mk.lowrank:
        if g.rank == 0 or g.alpha.size == 0:
            continue
        nc = _gather(n, g.beta, g.side)
        t = np.matmul(nc[:, None, :], g.V)  # (nb, 1, r)
        _scatter(y, g.alpha, np.matmul(g.U, t.transpose(0, 2, 1))[:, :, 0])
    return n * y


def _dense_conv(values: np.ndarray, nr: np.ndarray, nc: np.ndarray) -> np.ndarray:
    nb, m, _ = values.shape
    z = np.zeros((nb, 2 * m - 1))
    wc = values * nc[:, None, :]
    for s in range(m):
        z[:, s:s + m] += nr[:, s, None] * wc[:, s, :]
    return z


def _lowrank_conv(U, V, nr, nc, workers):
    m = U.shape[1]
    L = _next_pow2(2 * m - 1)
    A = sfft.rfft(U * nr[:, :, None], n=L, axis=1, workers=workers)
    B = sfft.rfft(V * nc[:, :, None], n=L, axis=1, workers=workers)
    z = sfft.irfft(np.einsum("bfr,bfr->bf", A, B), n=L, axis=1, workers=workers)
    return z[:, :2 * m - 1]


def apply_f1(mk: MosaicKernel, n: np.ndarray, full: bool = False, workers: int = 1) -> np.ndarray:
    """Gain term ``1/2 sum_{i+j=s} K_ij n_i n_j``.

    Returns sizes ``1..M``; with ``full=True`` nothing is truncated and the
    result covers sizes ``1..2M``.
    """
    n = _check(mk, n)
    M = mk.M
    size = 2 * M if full else M
    out = np.zeros(size)

    def live(g):
        gamma = g.alpha + g.beta
        return np.flatnonzero(gamma <= size)

    for g in mk.dense:
        sel = live(g)
        if sel.size == 0:
            continue
        step = max(1, _FFT_CHUNK // (g.side * g.side))
        for lo in range(0, sel.size, step):
            k = sel[lo:lo + step]
            z = _dense_conv(g.values[k], _gather(n, g.alpha[k], g.side), _gather(n, g.beta[k], g.side))
            _scatter(out, g.alpha[k] + g.beta[k], z)
    for g in mk.lowrank:
        if g.rank == 0:
            continue
        sel = live(g)
        if sel.size == 0:
            continue
        L = _next_pow2(2 * g.side - 1)
        step = max(1, _FFT_CHUNK // (L * g.rank))
        for lo in range(0, sel.size, step):
            k = sel[lo:lo + step]
            z = _lowrank_conv(g.U[k], g.V[k], _gather(n, g.alpha[k], g.side),
                              _gather(n, g.beta[k], g.side), workers)
            _scatter(out, g.alpha[k] + g.beta[k], z)
    out *= 0.5
    return out


def apply_rhs(mk: MosaicKernel, n: np.ndarray, workers: int = 1) -> np.ndarray:
    """``dn/dt = f1 - f2``."""
    return apply_f1(mk, n, workers=workers) - apply_f2(mk, n, workers=workers)


# -- single global skeleton K ~ U V^T ------------------------------------------

def skeleton_f1(U: np.ndarray, V: np.ndarray, n: np.ndarray, full: bool = False) -> np.ndarray:
    """Gain term for a globally low-rank kernel: a sum of ``rank`` FFT convolutions."""
    M = n.size
    z = _lowrank_conv(U[None], V[None], n[None], n[None], 1)[0]
    # slot 0 of z is size 2
    out = np.zeros(2 * M if full else M)
    w = min(out.size - 1, z.size)
    out[1:1 + w] = 0.5 * z[:w]
    return out


def skeleton_f2(U: np.ndarray, V: np.ndarray, n: np.ndarray) -> np.ndarray:
    return n * (U @ (V.T @ n))

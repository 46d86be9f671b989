"""Adaptive cross approximation of function-generated blocks.

Pivoting: take the residual row at the current pivot row and pick its
largest unused column; then pick the largest unused row of that residual
column.  A few rook sweeps repeat the row/column search until the pivot is
maximal in both its row and its column, which keeps the cross error close to
the optimal truncation error.  Only pivot rows and columns are ever
evaluated.

The core routine :func:`aca_stack` approximates many equally sized blocks in
lock-step; :func:`aca_approximate` is the single-block front end.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels import KernelSpec

__all__ = [
    "BlockGenerator",
    "LowRankFactor",
    "RankCapExceeded",
    "aca_approximate",
    "aca_stack",
    "default_max_rank",
]

ZERO_PIVOT = 1e-300
ROOK_SWEEPS = 3


@dataclass(frozen=True)
class LowRankFactor:
    """Block represented as ``U @ V.T`` with ``U, V`` of shape ``(m, r)``."""

    U: np.ndarray
    V: np.ndarray
    estimates: tuple = field(default=(), compare=False)
    pivots: tuple = field(default=(), compare=False)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def mem(self) -> int:
        return 2 * self.rank * self.m

    def to_dense(self) -> np.ndarray:
        return self.U @ self.V.T


class RankCapExceeded(RuntimeError):
    """The stopping rule was not met within ``max_rank`` crosses.

    ``factor`` holds the approximation reached at the cap.
    """

    def __init__(self, factor: LowRankFactor, max_rank: int):
        super().__init__(f"ACA did not converge within rank {max_rank}")
        self.factor = factor
        self.max_rank = max_rank


@dataclass(frozen=True)
class BlockGenerator:
    """Square ``side x side`` block with 1-based global corner ``(row_offset, col_offset)``.

    ``element(s, t)`` takes broadcastable arrays of 1-based *local* indices.
    """

    row_offset: int
    col_offset: int
    side: int
    element: Callable[[np.ndarray, np.ndarray], np.ndarray]

    @classmethod
    def from_kernel(cls, spec: KernelSpec, row_offset: int, col_offset: int, side: int):
        a, b = row_offset - 1, col_offset - 1
        return cls(row_offset, col_offset, side, lambda s, t: spec(a + s, b + t))

    def rows(self, s: np.ndarray) -> np.ndarray:
        t = np.arange(1, self.side + 1)
        return np.asarray(self.element(np.asarray(s)[:, None] + 1, t[None, :]), dtype=np.float64)

    def cols(self, t: np.ndarray) -> np.ndarray:
        s = np.arange(1, self.side + 1)
        return np.asarray(self.element(s[None, :], np.asarray(t)[:, None] + 1), dtype=np.float64)

    def materialize(self) -> np.ndarray:
        s = np.arange(1, self.side + 1)
        return np.asarray(self.element(s[:, None], s[None, :]), dtype=np.float64)


def default_max_rank(m: int) -> int:
    return min(m, 64)


@dataclass
class StackResult:
    """Output of :func:`aca_stack`.

    ``groups`` maps rank -> (block indices, U, V) with ``U, V`` of shape
    ``(n, m, rank)``.  ``capped`` lists blocks that hit ``max_rank``;
    their entries in ``groups`` hold the capped approximation.  With
    tracking, ``estimates`` and ``pivots`` hold per-block cross norms and
    accepted ``(row, col)`` pivots.
    """

    groups: dict
    capped: np.ndarray
    estimates: Optional[list] = None
    pivots: Optional[list] = None


def aca_stack(
    fetch_rows: Callable[[np.ndarray, np.ndarray], np.ndarray],
    fetch_cols: Callable[[np.ndarray, np.ndarray], np.ndarray],
    nblocks: int,
    m: int,
    tol: float,
    max_rank: Optional[int] = None,
    track: bool = False,
    start: Optional[int] = None,
    sweeps: int = ROOK_SWEEPS,
) -> StackResult:
    """Run ACA on ``nblocks`` blocks of side ``m`` simultaneously.

    ``fetch_rows(b, s)`` returns the rows ``s[k]`` (0-based) of blocks
    ``b[k]`` as an array of shape ``(len(b), m)``; ``fetch_cols`` likewise
    for columns.

    A block stops when the candidate cross satisfies
    ``|u| |v| <= tol * |A_r|_F`` (the Frobenius norm of the approximant is
    accumulated incrementally).  The candidate is then dropped: its norm is
    the residual estimate of the approximant already built.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_rank is None:
        max_rank = default_max_rank(m)
    kmax = min(m, max_rank)
    groups: dict[int, list] = {}
    capped: list[np.ndarray] = []
    estimates = [[] for _ in range(nblocks)] if track else None
    pivots = [[] for _ in range(nblocks)] if track else None

    active = np.arange(nblocks)
    us: list[np.ndarray] = []  # accepted terms, rows aligned with `active`
    vs: list[np.ndarray] = []
    norm2 = np.zeros(nblocks)
    used_rows = np.zeros((nblocks, m), dtype=bool)
    used_cols = np.zeros((nblocks, m), dtype=bool)
    piv_row = np.full(nblocks, 0 if start is None else start, dtype=np.intp)

    def finalize(sel: np.ndarray):
        if sel.size == 0:
            return
        rank = len(us)
        if rank:
            U = np.stack([u[sel] for u in us], axis=-1)
            V = np.stack([v[sel] for v in vs], axis=-1)
        else:
            U = V = np.zeros((sel.size, m, 0))
        idx = active[sel]
        prev = groups.get(rank)
        groups[rank] = [idx, U, V] if prev is None else [
            np.concatenate([prev[0], idx]),
            np.concatenate([prev[1], U]),
            np.concatenate([prev[2], V]),
        ]

    def residual_rows(sel, rows):
        R = np.array(fetch_rows(active[sel], rows), dtype=np.float64)
        for u, v in zip(us, vs):
            R -= u[sel, rows][:, None] * v[sel]
        return R

    def residual_cols(sel, cols):
        C = np.array(fetch_cols(active[sel], cols), dtype=np.float64)
        for u, v in zip(us, vs):
            C -= v[sel, cols][:, None] * u[sel]
        return C

    def masked_argmax(X, used):
        A = np.abs(X)
        A[used] = -1.0
        return np.argmax(A, axis=1)

    for k in range(kmax + 1):
        if active.size == 0:
            break
        if k == kmax:
            # at full rank the residual vanishes; below it the cap was hit
            if kmax < m:
                capped.append(active.copy())
            finalize(np.arange(active.size))
            break
        na = active.size
        loc = np.arange(na)
        rows = piv_row[active]
        R = residual_rows(loc, rows)
        jc = masked_argmax(R, used_cols[active])
        live = np.abs(R[loc, jc]) > ZERO_PIVOT
        C = np.zeros((na, m))
        if np.any(live):
            C[live] = residual_cols(loc[live], jc[live])
        # rook refinement: move the pivot until it is maximal in its row and column
        for _ in range(sweeps):
            ir = masked_argmax(C, used_rows[active])
            moved = live & (ir != rows) & (np.abs(C[loc, ir]) > np.abs(R[loc, jc]))
            if not np.any(moved):
                break
            sel = loc[moved]
            rows[sel] = ir[sel]
            R[sel] = residual_rows(sel, rows[sel])
            jc[sel] = masked_argmax(R[sel], used_cols[active[sel]])
            C[sel] = residual_cols(sel, jc[sel])
        piv = R[loc, jc]
        dead = np.abs(piv) <= ZERO_PIVOT
        live = ~dead
        vnew = np.zeros_like(R)
        vnew[live] = R[live] / piv[live, None]
        unew = np.where(live[:, None], C, 0.0)
        nu = np.einsum("ij,ij->i", unew, unew)
        nv = np.einsum("ij,ij->i", vnew, vnew)
        term = np.sqrt(nu * nv)
        cross = np.zeros(na)
        for u, v in zip(us, vs):
            cross += np.einsum("ij,ij->i", u, unew) * np.einsum("ij,ij->i", v, vnew)
        new_norm2 = norm2[active] + 2.0 * cross + nu * nv
        converged = live & (term <= tol * np.sqrt(np.maximum(new_norm2, 0.0)))
        if track:
            for q in np.flatnonzero(live):
                estimates[active[q]].append(float(term[q]))
        done = dead | converged
        finalize(np.flatnonzero(done))
        keep = ~done
        # accept the cross on the remaining blocks
        kept = active[keep]
        if track:
            for q in np.flatnonzero(keep):
                pivots[active[q]].append((int(rows[q]), int(jc[q])))
        norm2[kept] = new_norm2[keep]
        used_rows[kept, rows[keep]] = True
        used_cols[kept, jc[keep]] = True
        us = [u[keep] for u in us] + [unew[keep]]
        vs = [v[keep] for v in vs] + [vnew[keep]]
        active = kept
        if active.size:
            piv_row[active] = masked_argmax(us[-1], used_rows[active])

    out = {r: tuple(g) for r, g in sorted(groups.items())}
    cap = np.sort(np.concatenate(capped)) if capped else np.zeros(0, dtype=np.intp)
    return StackResult(out, cap, estimates, pivots)


def aca_approximate(gen: BlockGenerator, tol: float, max_rank: Optional[int] = None) -> LowRankFactor:
    """Low-rank factorisation of a generated block to relative Frobenius tolerance ``tol``.

    Raises
    ------
    RankCapExceeded
        If the stopping rule is not met at ``max_rank`` (default ``min(m, 64)``).
    """
    m = gen.side
    if m < 1:
        raise ValueError("block side must be >= 1")
    res = aca_stack(
        lambda b, s: gen.rows(s),
        lambda b, t: gen.cols(t),
        1, m, tol, max_rank, track=True,
    )
    (rank, (_, U, V)), = res.groups.items()
    factor = LowRankFactor(U[0], V[0], tuple(res.estimates[0]), tuple(res.pivots[0]))
    if res.capped.size:
        raise RankCapExceeded(factor, rank)
    return factor

"""Mosaic-skeleton (block low-rank) representation of a coagulation kernel.

The ``M x M`` index square is bisected recursively.  A block is split while
it lies on the dense band of its level (the diagonal, or the diagonal plus
its two neighbours) and is larger than the leaf side; band blocks at leaf
size are stored dense, every other block is compressed with ACA.

Blocks of equal shape are stored stacked, so every operator works on whole
groups at once instead of looping over individual blocks.
"""
from __future__ import annotations

import enum
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Union

import numpy as np

from .aca import LowRankFactor, aca_stack, default_max_rank
from .kernels import KernelSpec, get_kernel

__all__ = [
    "Block",
    "DenseGroup",
    "LowRankGroup",
    "MosaicKernel",
    "Partition",
    "PartitionError",
    "Strategy",
    "build_mosaic",
    "build_partition",
    "load_mosaic",
    "mosaic_rank",
    "save_mosaic",
]

logger = logging.getLogger(__name__)

DEFAULT_LEAF = 32
# elements per ACA working slab (rows of all blocks in a chunk)
_ACA_CHUNK = 1 << 20
_DENSE_CHUNK = 1 << 22


class PartitionError(ValueError):
    pass


class Strategy(str, enum.Enum):
    DIAG = "diag"
    TRIDIAG = "tridiag"

    @property
    def band(self) -> int:
        return 0 if self is Strategy.DIAG else 1


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class BlockPos(NamedTuple):
    alpha: int
    beta: int
    side: int
    dense: bool


@dataclass(frozen=True)
class Partition:
    """Block tiling of ``[1, M]^2``; ``alpha``/``beta`` are 1-based corners."""

    M: int
    strategy: Strategy
    leaf_side: int
    alpha: np.ndarray
    beta: np.ndarray
    side: np.ndarray
    dense: np.ndarray

    @property
    def levels(self) -> int:
        return int(np.log2(self.M)) - int(np.log2(self.leaf_side))

    def __len__(self) -> int:
        return self.alpha.size

    def __iter__(self) -> Iterator[BlockPos]:
        for a, b, m, d in zip(self.alpha, self.beta, self.side, self.dense):
            yield BlockPos(int(a), int(b), int(m), bool(d))

    @property
    def blocks(self) -> list[BlockPos]:
        return list(self)


def build_partition(M: int, strategy: Union[Strategy, str] = Strategy.TRIDIAG,
                    leaf_side: int = DEFAULT_LEAF) -> Partition:
    """Recursive quad-tree tiling for the given dense-band strategy.

    Raises
    ------
    PartitionError
        If ``M`` or ``leaf_side`` is not a power of two, or ``leaf_side > M``.
    """
    strategy = Strategy(strategy)
    if not _is_pow2(M) or not _is_pow2(leaf_side) or leaf_side > M:
        raise PartitionError(
            f"M and leaf_side must be powers of two with leaf_side <= M (got {M}, {leaf_side})"
        )
    band = strategy.band
    alphas, betas, sides, dense = [], [], [], []
    bi = np.zeros(1, dtype=np.int64)
    bj = np.zeros(1, dtype=np.int64)
    m = M
    while True:
        near = np.abs(bi - bj) <= band
        far_i, far_j = bi[~near], bj[~near]
        alphas.append(far_i * m + 1)
        betas.append(far_j * m + 1)
        sides.append(np.full(far_i.size, m))
        dense.append(np.zeros(far_i.size, dtype=bool))
        bi, bj = bi[near], bj[near]
        if m == leaf_side:
            alphas.append(bi * m + 1)
            betas.append(bj * m + 1)
            sides.append(np.full(bi.size, m))
            dense.append(np.ones(bi.size, dtype=bool))
            break
        bi = (2 * bi[:, None] + np.array([0, 0, 1, 1])).ravel()
        bj = (2 * bj[:, None] + np.array([0, 1, 0, 1])).ravel()
        m //= 2
    return Partition(
        M, strategy, leaf_side,
        np.concatenate(alphas), np.concatenate(betas),
        np.concatenate(sides), np.concatenate(dense),
    )


@dataclass
class DenseGroup:
    side: int
    alpha: np.ndarray
    beta: np.ndarray
    values: np.ndarray  # (n, side, side)

    @property
    def mem(self) -> int:
        return self.alpha.size * self.side * self.side


@dataclass
class LowRankGroup:
    side: int
    rank: int
    alpha: np.ndarray
    beta: np.ndarray
    U: np.ndarray  # (n, side, rank)
    V: np.ndarray

    @property
    def mem(self) -> int:
        return 2 * self.alpha.size * self.rank * self.side


@dataclass(frozen=True)
class Block:
    alpha: int
    beta: int
    side: int
    payload: Union[np.ndarray, LowRankFactor]

    @property
    def is_dense(self) -> bool:
        return isinstance(self.payload, np.ndarray)

    @property
    def mem(self) -> int:
        return self.side * self.side if self.is_dense else self.payload.mem

    def to_dense(self) -> np.ndarray:
        return self.payload if self.is_dense else self.payload.to_dense()


@dataclass
class MosaicKernel:
    partition: Partition
    kernel: str
    params: dict
    tol: float
    dense: list[DenseGroup] = field(default_factory=list)
    lowrank: list[LowRankGroup] = field(default_factory=list)
    n_densified: int = 0

    @property
    def M(self) -> int:
        return self.partition.M

    @property
    def mem_total(self) -> int:
        return sum(g.mem for g in self.dense) + sum(g.mem for g in self.lowrank)

    @property
    def max_block_rank(self) -> int:
        return max((g.rank for g in self.lowrank if g.alpha.size), default=0)

    @property
    def mrank(self) -> float:
        return self.mem_total / (2 * self.M)

    @property
    def compression_rate(self) -> float:
        return self.mem_total / float(self.M) ** 2

    @property
    def n_blocks(self) -> int:
        return sum(g.alpha.size for g in self.dense) + sum(g.alpha.size for g in self.lowrank)

    @property
    def blocks(self) -> Iterator[Block]:
        for g in self.dense:
            for k in range(g.alpha.size):
                yield Block(int(g.alpha[k]), int(g.beta[k]), g.side, g.values[k])
        for g in self.lowrank:
            for k in range(g.alpha.size):
                yield Block(int(g.alpha[k]), int(g.beta[k]), g.side, LowRankFactor(g.U[k], g.V[k]))

    def materialize(self) -> np.ndarray:
        """Dense ``M x M`` approximant (for verification at small ``M``)."""
        K = np.zeros((self.M, self.M))
        for blk in self.blocks:
            a, b, m = blk.alpha - 1, blk.beta - 1, blk.side
            K[a:a + m, b:b + m] = blk.to_dense()
        return K

    def stats(self) -> dict:
        return {
            "M": self.M,
            "strategy": self.partition.strategy.value,
            "leaf_side": self.partition.leaf_side,
            "tol": self.tol,
            "blocks": self.n_blocks,
            "mem_total": self.mem_total,
            "max_block_rank": self.max_block_rank,
            "mrank": self.mrank,
            "compression_rate": self.compression_rate,
            "densified_blocks": self.n_densified,
        }


def mosaic_rank(mk: MosaicKernel) -> float:
    return mk.mrank


def _dense_values(spec: KernelSpec, alpha: np.ndarray, beta: np.ndarray, m: int) -> np.ndarray:
    out = np.empty((alpha.size, m, m))
    ar = np.arange(m)
    step = max(1, _DENSE_CHUNK // (m * m))
    for lo in range(0, alpha.size, step):
        a = alpha[lo:lo + step, None, None] + ar[None, :, None]
        b = beta[lo:lo + step, None, None] + ar[None, None, :]
        out[lo:lo + step] = spec(a, b)
    return out


def _merge_lowrank(groups: list[LowRankGroup]) -> list[LowRankGroup]:
    """Concatenate groups sharing ``(side, rank)``; empties ``groups`` to keep peak memory low."""
    by_key: dict[tuple[int, int], list[LowRankGroup]] = {}
    while groups:
        g = groups.pop(0)
        by_key.setdefault((g.side, g.rank), []).append(g)
    merged = []
    for key in sorted(by_key, key=lambda k: (-k[0], k[1])):
        gs = by_key.pop(key)
        if len(gs) == 1:
            merged.append(gs[0])
            continue
        m, r = key
        merged.append(LowRankGroup(
            m, r,
            np.concatenate([g.alpha for g in gs]), np.concatenate([g.beta for g in gs]),
            np.concatenate([g.U for g in gs]), np.concatenate([g.V for g in gs]),
        ))
        del gs
    return merged


def build_mosaic(spec: KernelSpec, partition: Partition, tol: float = 1e-6,
                 max_rank: Optional[int] = None) -> MosaicKernel:
    """Fill a partition: exact values on dense blocks, ACA factors elsewhere.

    Blocks whose ACA hits ``max_rank`` (default ``min(side, 64)``) are stored
    dense; their number is reported as ``n_densified``.
    """
    dense_groups: list[DenseGroup] = []
    lr_groups: list[LowRankGroup] = []
    n_densified = 0
    P = partition
    ar_cache: dict[int, np.ndarray] = {}

    leaf = P.dense
    if np.any(leaf):
        m = P.leaf_side
        a, b = P.alpha[leaf], P.beta[leaf]
        dense_groups.append(DenseGroup(m, a, b, _dense_values(spec, a, b, m)))

    low = ~P.dense
    for m in sorted(set(P.side[low].tolist()), reverse=True):
        sel = low & (P.side == m)
        alpha_all, beta_all = P.alpha[sel], P.beta[sel]
        ar = ar_cache.setdefault(m, np.arange(m))
        cap = default_max_rank(m) if max_rank is None else max_rank
        step = max(1, _ACA_CHUNK // m)
        for lo in range(0, alpha_all.size, step):
            alpha, beta = alpha_all[lo:lo + step], beta_all[lo:lo + step]

            def rows(bk, s, alpha=alpha, beta=beta):
                return spec((alpha[bk] + s)[:, None], beta[bk][:, None] + ar[None, :])

            def cols(bk, t, alpha=alpha, beta=beta):
                return spec(alpha[bk][:, None] + ar[None, :], (beta[bk] + t)[:, None])

            res = aca_stack(rows, cols, alpha.size, m, tol, cap)
            capped = np.zeros(alpha.size, dtype=bool)
            capped[res.capped] = True
            for r, (idx, U, V) in res.groups.items():
                ok = ~capped[idx]
                if ok.all():
                    lr_groups.append(LowRankGroup(m, r, alpha[idx], beta[idx], U, V))
                elif np.any(ok):
                    lr_groups.append(LowRankGroup(m, r, alpha[idx[ok]], beta[idx[ok]], U[ok], V[ok]))
            if res.capped.size:
                n_densified += res.capped.size
                a, b = alpha[res.capped], beta[res.capped]
                dense_groups.append(DenseGroup(m, a, b, _dense_values(spec, a, b, m)))
            del res
    if n_densified:
        logger.info("%d block(s) exceeded the ACA rank cap and were stored dense", n_densified)
    mk = MosaicKernel(P, spec.name, dict(spec.params), tol, _merge_dense(dense_groups),
                      _merge_lowrank(lr_groups), n_densified)
    return mk


def _merge_dense(groups: list[DenseGroup]) -> list[DenseGroup]:
    by_side: dict[int, list[DenseGroup]] = {}
    while groups:
        g = groups.pop(0)
        by_side.setdefault(g.side, []).append(g)
    out = []
    for m in sorted(by_side):
        gs = by_side.pop(m)
        out.append(gs[0] if len(gs) == 1 else DenseGroup(
            m, np.concatenate([g.alpha for g in gs]), np.concatenate([g.beta for g in gs]),
            np.concatenate([g.values for g in gs]),
        ))
        del gs
    return out


# -- binary dump ---------------------------------------------------------------
#
# magic (8 bytes) | header length (u64 LE) | JSON header | block table
# (n x 5 int64 LE: alpha, beta, side, kind, rank) | payloads as float64 LE in
# table order: dense blocks row-major, low-rank blocks U (side x rank) then V.

_MAGIC = b"SMOLMSK1"
_DENSE, _LOWRANK = 0, 1


def save_mosaic(mk: MosaicKernel, path: Union[str, Path]) -> None:
    header = {
        "M": mk.M,
        "strategy": mk.partition.strategy.value,
        "leaf_side": mk.partition.leaf_side,
        "tol": mk.tol,
        "kernel": mk.kernel,
        "params": mk.params,
        "densified": mk.n_densified,
        "blocks": mk.n_blocks,
    }
    rows = []
    for g in mk.dense:
        n = g.alpha.size
        rows.append(np.column_stack([g.alpha, g.beta, np.full(n, g.side), np.full(n, _DENSE), np.zeros(n, np.int64)]))
    for g in mk.lowrank:
        n = g.alpha.size
        rows.append(np.column_stack([g.alpha, g.beta, np.full(n, g.side), np.full(n, _LOWRANK), np.full(n, g.rank)]))
    table = np.concatenate(rows).astype("<i8") if rows else np.zeros((0, 5), "<i8")
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(table.tobytes())
        for g in mk.dense:
            fh.write(np.ascontiguousarray(g.values, dtype="<f8").tobytes())
        for g in mk.lowrank:
            fh.write(np.ascontiguousarray(np.concatenate([g.U, g.V], axis=1), dtype="<f8").tobytes())


def load_mosaic(path: Union[str, Path]) -> MosaicKernel:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not a mosaic dump")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    pos = 16 + hlen
    nb = header["blocks"]
    table = np.frombuffer(raw, "<i8", nb * 5, pos).reshape(nb, 5).astype(np.int64)
    pos += nb * 40
    payload = np.frombuffer(raw, "<f8", offset=pos)

    dense, lowrank = [], []
    off = 0
    k = 0
    while k < nb:
        kind, m, r = table[k, 3], table[k, 2], table[k, 4]
        end = k
        while end < nb and table[end, 3] == kind and table[end, 2] == m and table[end, 4] == r:
            end += 1
        n = end - k
        a, b = table[k:end, 0].copy(), table[k:end, 1].copy()
        if kind == _DENSE:
            size = n * m * m
            dense.append(DenseGroup(int(m), a, b, payload[off:off + size].reshape(n, m, m).copy()))
        else:
            size = n * 2 * m * r
            UV = payload[off:off + size].reshape(n, 2 * m, r)
            lowrank.append(LowRankGroup(int(m), int(r), a, b, UV[:, :m].copy(), UV[:, m:].copy()))
        off += size
        k = end
    partition = build_partition(header["M"], header["strategy"], header["leaf_side"])
    return MosaicKernel(partition, header["kernel"], header["params"], header["tol"],
                        dense, lowrank, header["densified"])


def kernel_of(mk: MosaicKernel) -> KernelSpec:
    """The registered kernel a mosaic was built from."""
    return get_kernel(mk.kernel, **mk.params)

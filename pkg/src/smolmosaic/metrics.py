"""Moments and error norms.

Sums use ``math.fsum`` (exactly rounded), since late-time concentrations
span many decades.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

__all__ = ["MomentReport", "m1_error", "m1_norm", "m2_relative_error", "moments"]


@dataclass(frozen=True)
class MomentReport:
    M0: float
    M1: float
    M2: float
    mass_leak: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def _sizes(n: np.ndarray) -> np.ndarray:
    return np.arange(1, n.size + 1, dtype=np.float64)


def moments(n, initial_mass: Optional[float] = None) -> MomentReport:
    n = np.asarray(n, dtype=np.float64)
    s = _sizes(n)
    m1 = math.fsum(s * n)
    leak = 0.0 if initial_mass is None else initial_mass - m1
    return MomentReport(math.fsum(n), m1, math.fsum(s * s * n), leak)


def m1_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return math.fsum(_sizes(a) * np.abs(a))


def m1_error(a, b) -> float:
    """``sum_i i |a_i - b_i|``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return m1_norm(a - b)


def m2_relative_error(a, ref) -> float:
    """Relative deviation of the second moment from a reference solution."""
    a = np.asarray(a, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if a.shape != ref.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {ref.shape}")
    mref = moments(ref).M2
    if mref == 0.0:
        raise ZeroDivisionError("reference second moment is zero")
    return abs(moments(a).M2 - mref) / mref

"""Time stepping for ``dn/dt = rhs(n)``: fixed-step RK4 and adaptive Runge-Kutta-Fehlberg 4(5)."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .metrics import MomentReport, moments

__all__ = [
    "Checkpoint",
    "IntegratorConfig",
    "Mode",
    "NonFiniteRHSError",
    "State",
    "StepUnderflowError",
    "Trajectory",
    "integrate",
    "step_rk4",
    "step_rkf45",
]

logger = logging.getLogger(__name__)

RHS = Callable[[np.ndarray], np.ndarray]

MASS_SLACK = 1e-12
NEGATIVE_MASS_FLAG = 1e-8


class NonFiniteRHSError(FloatingPointError):
    def __init__(self, t: float, index: int):
        super().__init__(f"non-finite right-hand side at t={t!r}, size index {index + 1}")
        self.t = t
        self.index = index


class StepUnderflowError(RuntimeError):
    def __init__(self, t: float, dt: float, err: float):
        super().__init__(f"step size underflow at t={t!r}: dt={dt:.3e}, error ratio {err:.3e}")
        self.t = t
        self.dt = dt
        self.err = err


class Mode(str, enum.Enum):
    RK4 = "rk4"
    RKF45 = "rkf45"


@dataclass(frozen=True)
class IntegratorConfig:
    mode: Mode = Mode.RK4
    dt: float = 0.1
    t_end: float = 1.0
    rtol: float = 1e-6
    atol: float = 1e-30
    dt_min: float = 1e-12
    dt_max: float = math.inf
    safety: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.dt_min <= self.dt <= self.dt_max:
            raise ValueError("need dt_min <= dt <= dt_max")
        if not 0 < self.safety < 1:
            raise ValueError("safety factor must lie in (0, 1)")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")


@dataclass(frozen=True)
class State:
    n: np.ndarray
    t: float = 0.0
    initial_mass: float = float("nan")

    @classmethod
    def initial(cls, n0, t: float = 0.0) -> "State":
        n0 = np.asarray(n0, dtype=np.float64)
        return cls(n0, t, moments(n0).M1)


def _eval(rhs: RHS, n: np.ndarray, t: float) -> np.ndarray:
    f = rhs(n)
    if not np.all(np.isfinite(f)):
        raise NonFiniteRHSError(t, int(np.flatnonzero(~np.isfinite(f))[0]))
    return f


def step_rk4(state: State, dt: float, rhs: RHS) -> State:
    """One classical four-stage Runge-Kutta step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n, t = state.n, state.t
    k1 = _eval(rhs, n, t)
    k2 = _eval(rhs, n + 0.5 * dt * k1, t)
    k3 = _eval(rhs, n + 0.5 * dt * k2, t)
    k4 = _eval(rhs, n + dt * k3, t)
    return replace(state, n=n + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), t=t + dt)


# Fehlberg 4(5) tableau
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_B5 = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)


def step_rkf45(state: State, config: IntegratorConfig, rhs: RHS, dt: Optional[float] = None):
    """One embedded Fehlberg attempt with step ``dt`` (default ``config.dt``).

    The fourth-order solution is propagated.  The error ratio is the max norm
    of the 4th/5th order difference scaled by ``atol + rtol * |n|``.

    Returns
    -------
    (State, bool, float)
        New state (the input state if rejected), acceptance flag, next step.
    """
    h = config.dt if dt is None else dt
    n, t = state.n, state.t
    ks = []
    for a in _A:
        y = n
        for coef, k in zip(a, ks):
            if coef:
                y = y + (h * coef) * k
        ks.append(_eval(rhs, y, t))
    y4 = n + h * sum(b * k for b, k in zip(_B4, ks) if b)
    y5 = n + h * sum(b * k for b, k in zip(_B5, ks) if b)
    scale = config.atol + config.rtol * np.maximum(np.abs(n), np.abs(y4))
    err = float(np.max(np.abs(y5 - y4) / scale)) if n.size else 0.0
    if err == 0.0:
        proposal = math.inf
    else:
        proposal = config.safety * h * err ** -0.2
    dt_next = min(max(proposal, config.dt_min), config.dt_max)
    if err <= 1.0:
        return replace(state, n=y4, t=t + h), True, dt_next
    if proposal < config.dt_min or h <= config.dt_min:
        raise StepUnderflowError(t, proposal, err)
    return state, False, dt_next


@dataclass(frozen=True)
class Checkpoint:
    t: float
    n: np.ndarray
    moments: MomentReport


@dataclass
class Trajectory:
    checkpoints: list[Checkpoint] = field(default_factory=list)
    steps: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    mass_violations: int = 0
    negative_flags: int = 0

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]


class _Counter:
    def __init__(self, rhs: RHS):
        self.rhs = rhs
        self.calls = 0

    def __call__(self, n):
        self.calls += 1
        return self.rhs(n)


def integrate(rhs: RHS, n0, config: IntegratorConfig,
              checkpoints: Optional[Sequence[float]] = None,
              on_step: Optional[Callable[[State], None]] = None) -> Trajectory:
    """Advance ``n0`` from ``t = 0`` to ``config.t_end``.

    States are recorded at ``checkpoints`` (always including ``t_end``); the
    fixed-step scheme shortens the last step before a checkpoint to land on it.
    """
    state = State.initial(n0)
    if not np.all(np.isfinite(state.n)):
        raise ValueError("initial state is not finite")
    if np.any(state.n < 0):
        raise ValueError("initial state has negative concentrations")
    targets = sorted({float(c) for c in (checkpoints or ()) if 0 <= c <= config.t_end} | {config.t_end})
    counter = _Counter(rhs)
    traj = Trajectory()
    m0 = state.initial_mass

    def record(st: State):
        traj.checkpoints.append(Checkpoint(st.t, st.n.copy(), moments(st.n, m0)))

    def accept(prev: State, new: State):
        traj.steps += 1
        sizes = np.arange(1, new.n.size + 1)
        m_prev, m_new = moments(prev.n).M1, moments(new.n).M1
        if m_new > m_prev + MASS_SLACK * abs(m0):
            traj.mass_violations += 1
            log = logger.warning if traj.mass_violations == 1 else logger.debug
            log("first moment grew at t=%g: %r -> %r", new.t, m_prev, m_new)
        neg = float(np.sum(sizes * np.clip(new.n, None, 0.0)))
        if -neg > NEGATIVE_MASS_FLAG * abs(m0):
            traj.negative_flags += 1
            if traj.negative_flags == 1:
                logger.warning("negative concentrations carry mass %.3e at t=%g", -neg, new.t)
        if on_step is not None:
            on_step(new)

    dt = config.dt
    for target in targets:
        if config.mode is Mode.RK4:
            t0 = state.t
            span = target - t0
            nfull = int(math.floor(span / config.dt * (1 + 1e-12)))
            for k in range(1, nfull + 1):
                new = step_rk4(state, config.dt, counter)
                new = replace(new, t=t0 + k * config.dt)
                accept(state, new)
                state = new
            rest = target - state.t
            if rest > 1e-12 * max(1.0, abs(target)):
                new = replace(step_rk4(state, rest, counter), t=target)
                accept(state, new)
                state = new
            state = replace(state, t=target)
        else:
            while state.t < target:
                h = min(dt, target - state.t)
                new, ok, dt_next = step_rkf45(state, config, counter, dt=h)
                if ok:
                    if target - new.t <= 1e-12 * max(1.0, abs(target)):
                        new = replace(new, t=target)
                    accept(state, new)
                    state = new
                    # a step shortened to hit a checkpoint should not shrink the next one
                    dt = max(dt_next, dt) if h < dt else dt_next
                else:
                    traj.rejected += 1
                    dt = dt_next
        record(state)
    traj.rhs_evals = counter.calls
    return traj

import math

import numpy as np
import pytest

from smolmosaic import analytic_constant_solution, apply_rhs, build_mosaic, build_partition, get_kernel
from smolmosaic.integrate import (
    IntegratorConfig,
    Mode,
    NonFiniteRHSError,
    State,
    StepUnderflowError,
    integrate,
    step_rk4,
    step_rkf45,
)
from smolmosaic.metrics import m1_error, moments


def constant_problem(M):
    mk = build_mosaic(get_kernel("constant"), build_partition(M, "tridiag", min(32, M)), 1e-6)
    n0 = np.zeros(M)
    n0[0] = 1.0
    return (lambda n: apply_rhs(mk, n)), n0


def test_rk4_exponential_decay():
    st = State.initial(np.array([1.0]))
    for _ in range(10):
        st = step_rk4(st, 0.1, lambda y: -y)
    assert abs(st.n[0] - math.exp(-1.0)) <= 1e-5
    assert st.t == pytest.approx(1.0)


def test_rk4_zero_rhs():
    n = np.array([0.3, 0.2, 0.1])
    st = step_rk4(State.initial(n), 0.25, lambda y: np.zeros_like(y))
    assert np.array_equal(st.n, n) and st.t == 0.25
    with pytest.raises(ValueError):
        step_rk4(State.initial(n), 0.0, lambda y: y)


def test_rkf45_zero_rhs_hits_dt_max():
    cfg = IntegratorConfig(mode="rkf45", dt=0.1, dt_max=2.0)
    st, ok, dt_next = step_rkf45(State.initial(np.ones(3)), cfg, lambda y: np.zeros_like(y))
    assert ok and dt_next == 2.0 and st.t == 0.1


def test_rkf45_exponential_growth():
    rtol = 1e-8
    cfg = IntegratorConfig(mode="rkf45", dt=0.1, t_end=1.0, rtol=rtol, atol=1e-30)
    tr = integrate(lambda y: y, np.array([1.0]), cfg)
    assert abs(tr.final.n[0] - math.e) <= 10 * rtol * math.e
    assert tr.final.t == 1.0


def test_rkf45_tableau_order():
    # on y' = y the fourth-order Fehlberg weights give 1 + z + ... + z^4/24 + z^5/104
    h = 0.1
    cfg = IntegratorConfig(mode="rkf45", dt=h, rtol=1.0, atol=1.0)
    st, ok, _ = step_rkf45(State.initial(np.array([1.0])), cfg, lambda y: y)
    assert ok
    stability = sum(h ** k / math.factorial(k) for k in range(5)) + h ** 5 / 104
    assert st.n[0] == pytest.approx(stability, rel=1e-14)


def test_t_end_zero():
    n0 = np.array([1.0, 0.5])
    tr = integrate(lambda y: -y, n0, IntegratorConfig(t_end=0.0))
    assert len(tr.checkpoints) == 1 and tr.steps == 0
    assert np.array_equal(tr.final.n, n0) and tr.final.t == 0.0


def test_constant_kernel_at_t_one():
    M = 256
    rhs, n0 = constant_problem(M)
    tr = integrate(rhs, n0, IntegratorConfig(dt=0.01, t_end=1.0))
    expected = 0.25 * 0.5 ** np.arange(M)
    assert m1_error(tr.final.n, expected) <= 1e-8
    np.testing.assert_allclose(tr.final.n[:10], expected[:10], rtol=1e-8)


def test_fixed_step_convergence_order():
    M = 512
    rhs, n0 = constant_problem(M)
    exact = analytic_constant_solution(np.arange(1, M + 1), 1.0)
    errs = [m1_error(integrate(rhs, n0, IntegratorConfig(dt=dt, t_end=1.0)).final.n, exact)
            for dt in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.0)


def test_adaptive_agrees_with_fixed():
    M = 256
    rhs, n0 = constant_problem(M)
    a = integrate(rhs, n0, IntegratorConfig(mode="rkf45", dt=0.01, t_end=10.0, rtol=1e-10))
    b = integrate(rhs, n0, IntegratorConfig(dt=0.01, t_end=10.0))
    assert m1_error(a.final.n, b.final.n) <= 1e-8


def test_checkpoints_recorded_exactly():
    rhs, n0 = constant_problem(64)
    for mode in Mode:
        cfg = IntegratorConfig(mode=mode, dt=0.3 if mode is Mode.RKF45 else 0.05, t_end=2.0, rtol=1e-8)
        tr = integrate(rhs, n0, cfg, checkpoints=[0.5, 1.0, 1.7, 5.0])
        assert [c.t for c in tr.checkpoints] == [0.5, 1.0, 1.7, 2.0]
        for c in tr.checkpoints:
            assert c.moments.M0 == pytest.approx(1.0 / (1.0 + c.t), rel=1e-5)


def test_mass_monotone_and_leak_reported():
    M = 1024
    mk = build_mosaic(get_kernel("baikal"), build_partition(M, "tridiag", 32), 1e-6)
    n0 = 1.0 / (np.arange(1, M + 1) + 1.0)
    masses = []
    tr = integrate(lambda n: apply_rhs(mk, n), n0,
                   IntegratorConfig(mode="rkf45", dt=1e-3, t_end=1.0),
                   on_step=lambda st: masses.append(moments(st.n).M1))
    m0 = moments(n0).M1
    steps = np.diff([m0] + masses)
    assert np.all(steps <= 1e-12 * m0)
    assert tr.mass_violations == 0
    assert tr.final.moments.mass_leak == pytest.approx(m0 - tr.final.moments.M1, abs=0)
    assert tr.final.moments.mass_leak > 0
    assert tr.rhs_evals == 6 * (tr.steps + tr.rejected)


def test_mass_growth_is_counted():
    tr = integrate(lambda y: np.array([0.0, 1.0]), np.array([1.0, 0.0]), IntegratorConfig(dt=0.5, t_end=1.0))
    assert tr.mass_violations == 2


def test_negative_concentrations_flagged_not_clamped():
    tr = integrate(lambda y: np.array([-1.0, 0.0]), np.array([0.1, 1.0]), IntegratorConfig(dt=0.5, t_end=1.0))
    assert tr.negative_flags >= 1
    assert tr.final.n[0] == pytest.approx(-0.9)


def test_non_finite_rhs():
    def rhs(y):
        out = np.zeros_like(y)
        out[2] = np.nan
        return out

    with pytest.raises(NonFiniteRHSError) as info:
        integrate(rhs, np.ones(4), IntegratorConfig(dt=0.1, t_end=1.0))
    assert info.value.index == 2 and info.value.t == 0.0


def test_step_underflow():
    calls = {"n": 0}

    def rhs(y):
        calls["n"] += 1
        return np.full_like(y, 1e10 if calls["n"] % 2 else -1e10)

    cfg = IntegratorConfig(mode="rkf45", dt=0.1, t_end=1.0, rtol=1e-8, atol=1e-30)
    with pytest.raises(StepUnderflowError):
        integrate(rhs, np.ones(2), cfg)


@pytest.mark.parametrize("kw", [
    {"dt": 0.0}, {"dt": -1.0}, {"safety": 1.0}, {"safety": 0.0},
    {"dt": 1e-14}, {"dt": 2.0, "dt_max": 1.0}, {"t_end": -1.0}, {"mode": "euler"},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)


@pytest.mark.parametrize("n0", [np.array([1.0, -0.1]), np.array([1.0, np.inf])])
def test_initial_state_checked(n0):
    with pytest.raises(ValueError):
        integrate(lambda y: y, n0, IntegratorConfig())


def test_self_convergence_of_second_moment():
    # coarse runs approach a finer reference as the step shrinks
    from smolmosaic.metrics import m2_relative_error

    M = 512
    mk = build_mosaic(get_kernel("baikal"), build_partition(M, "tridiag", 32), 1e-6)
    rhs = lambda n: apply_rhs(mk, n)
    n0 = 1.0 / (np.arange(1, M + 1) + 1.0)
    ref = integrate(rhs, n0, IntegratorConfig(dt=0.005, t_end=0.5)).final.n
    errs = [m2_relative_error(integrate(rhs, n0, IntegratorConfig(dt=dt, t_end=0.5)).final.n, ref)
            for dt in (0.1, 0.05, 0.025)]
    assert errs[0] > errs[1] > errs[2]

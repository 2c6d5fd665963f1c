import math

import numpy as np
import pytest
import scipy.linalg

from drem_observer.simkit import (
    Clock,
    DelayLine,
    FirstOrderFilter,
    IntegrationFault,
    SlidingWindowIntegral,
    rk4_step,
    steps_for,
)

A_K = np.array([[0.0, 1.0], [1.0, -0.2]]) - np.array([[30.5749], [64.3579]]) @ np.array([[1.0, 0.0]])


def integrate(f, x0, t_end, dt):
    x = np.array(x0, dtype=float)
    clock = Clock(0.0, dt)
    for _ in range(steps_for(t_end, dt)):
        x = rk4_step(f, clock.t, x, dt)
        clock.tick()
    return x


def test_rk4_constant_field():
    np.testing.assert_array_equal(integrate(lambda t, x: np.zeros(2), [2.0, 1.0], 1.0, 1e-3), [2.0, 1.0])


def test_rk4_exponential_decay():
    assert integrate(lambda t, x: -x, [1.0], 1.0, 1e-3)[0] == pytest.approx(math.exp(-1), abs=1e-6)


def test_rk4_matches_matrix_exponential():
    x = integrate(lambda t, x: A_K @ x, [1.0, 0.0], 1.0, 1e-3)
    np.testing.assert_allclose(x, scipy.linalg.expm(A_K) @ [1.0, 0.0], atol=1e-6)


def test_rk4_fourth_order():
    A = np.array([[0.0, 1.0], [-4.0, -0.3]])
    exact = scipy.linalg.expm(A * 2.0) @ [1.0, 0.0]
    errs = [np.linalg.norm(integrate(lambda t, x: A @ x, [1.0, 0.0], 2.0, dt) - exact) for dt in (0.02, 0.01)]
    assert errs[0] / errs[1] >= 15.0


def test_rk4_fault_names_block():
    with pytest.raises(IntegrationFault) as ei:
        rk4_step(lambda t, x: np.full(2, np.nan), 0.5, np.ones(2), 0.1, block="plant")
    assert ei.value.block == "plant"
    assert ei.value.t == 0.5


def test_steps_for_requires_integral_ratio():
    assert steps_for(30.0, 1e-3) == 30000
    assert steps_for(0.3, 0.1) == 3
    with pytest.raises(ValueError):
        steps_for(1.0, 0.3)


def test_clock_has_no_drift():
    c = Clock(0.0, 1e-3)
    for _ in range(300000):
        c.tick()
    assert c.t == 300.0


def test_delay_line_zero_before_fill():
    d = DelayLine(1.0, 0.1, 2)
    c = Clock(0.0, 0.1)
    for _ in range(10):
        d.push([5.0, 6.0])
        np.testing.assert_array_equal(d.read(c), [0.0, 0.0])
        c.tick()


def test_delay_line_constant_input():
    d = DelayLine(1.0, 0.1, 1)
    c = Clock(0.0, 0.1)
    for _ in range(30):
        d.push([3.0])
        c.tick()
    np.testing.assert_array_equal(d.read(c), [3.0])


def test_delay_line_returns_sample_of_age_T():
    dt = 1e-3
    d = DelayLine(1.0, dt, 1)
    c = Clock(0.0, dt)
    for _ in range(2000):
        d.push([math.sin(c.t)])
        c.tick()
    d.push([math.sin(c.t)])
    assert c.t == pytest.approx(2.0, abs=1e-12)
    assert d.read(c)[0] == pytest.approx(math.sin(1.0), abs=1e-9)


def test_sliding_window_examples():
    dt, T = 0.01, 1.0
    zero = SlidingWindowIntegral(T, dt)
    one = SlidingWindowIntegral(T, dt)
    for j in range(301):
        assert zero.update(0.0)[0] == 0.0
        v = one.update(1.0)[0]
        if j == 50:
            assert v == pytest.approx(0.5, abs=1e-12)
        if j >= 100:
            assert v == pytest.approx(1.0, abs=1e-12)


def test_sliding_window_matches_direct_quadrature():
    rng = np.random.default_rng(7)
    dt, T = 1e-2, 0.5
    N = steps_for(T, dt)
    stream = rng.normal(size=(4000, 3))
    w = SlidingWindowIntegral(T, dt, 3)
    for i, s in enumerate(stream):
        v = w.update(s)
        lo = max(0, i - N)
        seg = stream[lo:i + 1]
        ref = (0.5 * dt * (seg[:-1] + seg[1:]).sum(axis=0)) / T if len(seg) > 1 else np.zeros(3)
        np.testing.assert_allclose(v, ref, atol=1e-12)


def test_first_order_filter_unit_dc_gain():
    f = FirstOrderFilter(0.1, 1)
    for _ in range(20000):
        f.step(2.5, 0.01)
    assert f.state[0] == pytest.approx(2.5, rel=1e-8)
    with pytest.raises(ValueError):
        FirstOrderFilter(0.0)

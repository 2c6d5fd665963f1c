import itertools

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from drem_observer.matkit import (
    DimensionError,
    LyapunovError,
    ScaledScalar,
    adjugate,
    adjugate_scaled,
    det,
    is_hurwitz,
    is_positive_definite,
    pinv,
    solve_lyapunov,
    symmetric_eigenvalues,
    trace_product_adj,
)

RNG = np.random.default_rng(20240611)


def laplace_det(m):
    """Brute-force cofactor expansion along the first row."""
    n = len(m)
    if n == 0:
        return 1.0
    if n == 1:
        return m[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        total += (-1) ** j * m[0][j] * laplace_det(minor)
    return total


def cofactor_adj(m):
    n = len(m)
    out = [[0.0] * n for _ in range(n)]
    for i, j in itertools.product(range(n), repeat=2):
        minor = [row[:j] + row[j + 1:] for k, row in enumerate(m) if k != i]
        out[j][i] = (-1) ** (i + j) * laplace_det(minor)
    return np.array(out)


# -- det ---------------------------------------------------------------------


def test_det_identity():
    assert float(det(np.eye(4))) == 1.0


def test_det_duffing_A():
    assert float(det([[0, 1], [1, -0.2]])) == pytest.approx(-1.0, abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_det_matches_cofactor_expansion(n):
    for _ in range(50):
        m = RNG.uniform(-1, 1, (n, n))
        ref = laplace_det(m.tolist())
        assert float(det(m)) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_det_far_below_double_range():
    m = 1e-40 * np.eye(9)
    d = det(m)
    assert d.sign == 1
    assert d.log10abs() == pytest.approx(-360.0, abs=1e-12)


def test_det_singular_is_zero():
    m = np.array([[1.0, 2.0], [2.0, 4.0]])
    assert det(m).is_zero()
    assert det(np.zeros((4, 4))).is_zero()


def test_det_rejects_non_square():
    with pytest.raises(DimensionError):
        det(np.ones((2, 3)))


# -- adjugate ------------------------------------------------------------------


def test_adjugate_2x2_closed_form():
    a, b, c, d = 1.5, -2.0, 0.25, 3.0
    np.testing.assert_array_equal(adjugate([[a, b], [c, d]]), [[d, -b], [-c, a]])


def test_adjugate_zero_matrix():
    np.testing.assert_array_equal(adjugate(np.zeros((4, 4))), np.zeros((4, 4)))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_adjugate_matches_cofactor_definition(n):
    for _ in range(20):
        m = RNG.uniform(-1, 1, (n, n))
        np.testing.assert_allclose(adjugate(m), cofactor_adj(m.tolist()), rtol=1e-10, atol=1e-12)


def test_adjugate_rank_deficient_is_nonzero():
    # rank n-1: adj has rank one and is not zero
    u = RNG.normal(size=(4, 3))
    m = u @ RNG.normal(size=(3, 4))
    adj = adjugate(m)
    np.testing.assert_allclose(adj, cofactor_adj(m.tolist()), rtol=1e-8, atol=1e-10)
    assert np.abs(adj).max() > 1e-6
    np.testing.assert_allclose(adj @ m, 0.0, atol=1e-9)


def test_adjugate_scaled_survives_tiny_entries():
    m = 1e-100 * RNG.uniform(-1, 1, (4, 4))
    mant, e = adjugate_scaled(m)
    ref = cofactor_adj((m * 1e100).tolist())  # adj scales by s^(n-1)
    np.testing.assert_allclose(np.ldexp(mant, e) * 1e300, ref, rtol=1e-10, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_adjugate_identity_property(n, seed):
    m = np.random.default_rng(seed).uniform(-3, 3, (n, n))
    lhs = adjugate(m) @ m
    rhs = float(det(m)) * np.eye(n)
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.linalg.norm(m)) ** (n - 1)


# -- trace of adj product ---------------------------------------------------------


def test_trace_product_adj_examples():
    assert float(trace_product_adj(np.eye(2), np.eye(2))) == 2.0
    assert float(trace_product_adj(np.diag([2.0, 3.0]), np.eye(2))) == 5.0


def test_trace_product_adj_random_4x4():
    for _ in range(50):
        a, b = RNG.uniform(-1, 1, (2, 4, 4))
        ref = np.trace(cofactor_adj(a.tolist()) @ b)
        assert float(trace_product_adj(a, b)) == pytest.approx(ref, rel=1e-10, abs=1e-13)


def test_trace_product_adj_is_jacobi_derivative():
    a, b = RNG.uniform(-1, 1, (2, 4, 4))
    h = 1e-6
    fd = (laplace_det((a + h * b).tolist()) - laplace_det((a - h * b).tolist())) / (2 * h)
    assert float(trace_product_adj(a, b)) == pytest.approx(fd, rel=1e-7)


def test_trace_product_adj_size_mismatch():
    with pytest.raises(DimensionError):
        trace_product_adj(np.eye(2), np.eye(3))


# -- scaled scalars ------------------------------------------------------------------


def test_scaled_scalar_parse_extreme_exponents():
    g = ScaledScalar.parse("1e248")
    w = ScaledScalar.parse("2.5e-125")
    assert (g * w * w).exponent10 == -2
    assert (g * w * w).mantissa == pytest.approx(6.25, rel=1e-13)
    big = ScaledScalar.parse("-3.5e-1000")
    assert (big.sign, big.exponent10) == (-1, -1000)
    assert big.mantissa == pytest.approx(3.5, rel=1e-14)
    assert str(ScaledScalar.parse("7e12345")) == "7e12345"


def test_scaled_scalar_zero():
    z = ScaledScalar.parse(0)
    assert z.is_zero() and z.sign == 0 and float(z) == 0.0
    assert str(z) == "0"


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-1e300, max_value=1e300, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-300))
def test_scaled_scalar_float_round_trip(x):
    s = ScaledScalar.from_float(x)
    assert float(s) == pytest.approx(x, rel=1e-12)
    assert s.sign == (0 if x == 0 else (1 if x > 0 else -1))
    if x != 0:
        assert 1.0 <= s.mantissa < 10.0


@settings(max_examples=200, deadline=None)
@given(st.floats(1, 9.99), st.integers(-2000, 2000), st.floats(1, 9.99), st.integers(-2000, 2000))
def test_scaled_scalar_mul_div(m1, e1, m2, e2):
    a = ScaledScalar.parse(f"{m1!r}e{e1}")
    b = ScaledScalar.parse(f"{m2!r}e{e2}")
    p = a * b
    assert p == b * a
    q = p / b
    assert q.sign == a.sign
    assert q.log10abs() == pytest.approx(a.log10abs(), abs=1e-13)


def test_scaled_scalar_add_and_order():
    a = ScaledScalar.parse("1e-130")
    b = ScaledScalar.parse("-3e-131")
    s = a + b
    assert s.exponent10 == -131 and s.mantissa == pytest.approx(7.0, rel=1e-13)
    assert b < a and a > b
    assert (a - a).is_zero()


# -- eigenvalues, Lyapunov, Hurwitz -----------------------------------------------------


def test_symmetric_eigenvalues_match_eigvalsh():
    for n in range(1, 9):
        a = RNG.normal(size=(n, n))
        s = a + a.T
        np.testing.assert_allclose(symmetric_eigenvalues(s), np.linalg.eigvalsh(s), atol=1e-10)


def test_symmetric_eigenvalues_examples():
    np.testing.assert_allclose(symmetric_eigenvalues(np.eye(4)), np.ones(4))
    np.testing.assert_allclose(symmetric_eigenvalues(np.diag([0.0, 1.0, 2.0, 3.0])), [0, 1, 2, 3])


def test_symmetric_eigenvalues_rejects_asymmetry():
    with pytest.raises(ValueError):
        symmetric_eigenvalues([[1.0, 2.0], [0.0, 1.0]])


def test_lyapunov_trivial_cases():
    np.testing.assert_allclose(solve_lyapunov(-np.eye(2), 2 * np.eye(2)), np.eye(2), atol=1e-14)
    np.testing.assert_allclose(solve_lyapunov([[-1.0]], [[4.0]]), [[2.0]])


def test_lyapunov_duffing_against_scipy():
    A = np.array([[0.0, 1.0], [1.0, -0.2]])
    L = -np.array([[30.5749], [64.3579]])
    acl = A + L @ np.array([[1.0, 0.0]])
    P = solve_lyapunov(acl, np.eye(2))
    ref = scipy.linalg.solve_continuous_lyapunov(acl.T, -np.eye(2))
    np.testing.assert_allclose(P, ref, rtol=1e-10)
    assert np.linalg.norm(acl.T @ P + P @ acl + np.eye(2)) <= 1e-10
    np.testing.assert_array_equal(P, P.T)


def test_lyapunov_random_against_scipy():
    for n in range(1, 7):
        a = RNG.normal(size=(n, n))
        acl = a - (np.max(np.linalg.eigvals(a).real) + 1.0) * np.eye(n)
        b = RNG.normal(size=(n, n))
        q = b @ b.T + n * np.eye(n)
        P = solve_lyapunov(acl, q)
        np.testing.assert_allclose(P, scipy.linalg.solve_continuous_lyapunov(acl.T, -q), rtol=1e-9, atol=1e-12)
        assert np.linalg.norm(acl.T @ P + P @ acl + q) <= 1e-9 * np.linalg.norm(q)


def test_lyapunov_not_hurwitz():
    with pytest.raises(LyapunovError):
        solve_lyapunov([[0.0, 1.0], [1.0, -0.2]], np.eye(2))
    assert not is_hurwitz([[0.0, 1.0], [1.0, -0.2]])
    assert is_hurwitz([[-1.0, 5.0], [0.0, -2.0]])


def test_positive_definite():
    assert is_positive_definite(np.eye(3))
    assert not is_positive_definite(np.diag([1.0, 0.0]))
    assert not is_positive_definite(np.diag([1.0, -1.0]))


# -- pseudo-inverse ----------------------------------------------------------------


def test_pinv_examples():
    np.testing.assert_array_equal(pinv([[1.0], [0.0]]), [[1.0, 0.0]])
    np.testing.assert_allclose(pinv(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_array_equal(pinv(np.zeros((2, 3))), np.zeros((3, 2)))


def test_pinv_normal_equations_oracle():
    for _ in range(20):
        m = RNG.normal(size=(3, 2))
        np.testing.assert_allclose(pinv(m), np.linalg.solve(m.T @ m, m.T), atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1), st.data())
def test_pinv_penrose_identities(r, c, seed, data):
    rank = data.draw(st.integers(1, min(r, c)))
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(r, rank)) @ rng.normal(size=(rank, c))
    x = pinv(m)
    tol = 1e-10 * max(1.0, np.linalg.norm(m)) * max(1.0, np.linalg.norm(x)) ** 2
    assert np.abs(m @ x @ m - m).max() <= tol
    assert np.abs(x @ m @ x - x).max() <= tol
    assert np.abs((m @ x).T - m @ x).max() <= tol
    assert np.abs((x @ m).T - x @ m).max() <= tol

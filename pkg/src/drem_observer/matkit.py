"""Small dense linear algebra with extended-range determinants.

The regression pipeline multiplies determinants of determinants, so values
around 1e-125 (and gains around 1e248) are routine.  The jitted kernels carry
magnitudes as ``(mantissa, binary exponent)`` pairs, ``value = m * 2**e`` with
``0.5 <= |m| < 1`` (or ``m == 0``).  Matrices are "block scaled": one float
array plus a shared binary exponent.  Power-of-two rescaling is exact, so a
block-scaled computation returns the same digits as the plain one whenever
the plain one does not over/underflow.

:class:`ScaledScalar` is the public sign/decimal-mantissa/decimal-exponent
view of a pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext

import numpy as np
from numba import njit

LOG10_2 = math.log10(2.0)


class DimensionError(ValueError):
    pass


class LyapunovError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# scaled-pair kernels


@njit(cache=True)
def snorm(m, e):
    if m == 0.0:
        return 0.0, 0
    f, k = math.frexp(m)
    return f, e + k


@njit(cache=True)
def smul(am, ae, bm, be):
    return snorm(am * bm, ae + be)


@njit(cache=True)
def sadd(am, ae, bm, be):
    if am == 0.0:
        return bm, be
    if bm == 0.0:
        return am, ae
    if ae >= be:
        d = be - ae
        if d < -1100:
            return am, ae
        return snorm(am + math.ldexp(bm, d), ae)
    d = ae - be
    if d < -1100:
        return bm, be
    return snorm(bm + math.ldexp(am, d), be)


@njit(cache=True)
def srecip(m, e):
    # caller guarantees m != 0
    return snorm(1.0 / m, -e)


@njit(cache=True)
def sto_float(m, e):
    if m == 0.0:
        return 0.0
    if e > 1100:
        return math.copysign(math.inf, m)
    if e < -1200:
        return math.copysign(0.0, m)
    return math.ldexp(m, e)


@njit(cache=True)
def slog10abs(m, e):
    if m == 0.0:
        return -math.inf
    return math.log10(abs(m)) + e * LOG10_2


@njit(cache=True)
def block_normalize(a):
    """Return ``(b, k)`` with ``a == b * 2**k`` and ``max|b|`` in [0.5, 1)."""
    out = a.copy()
    flat = out.reshape(-1)
    amax = 0.0
    for i in range(flat.size):
        v = abs(flat[i])
        if v > amax:
            amax = v
    if amax == 0.0 or not math.isfinite(amax):
        return out, 0
    _, k = math.frexp(amax)
    for i in range(flat.size):
        flat[i] = math.ldexp(flat[i], -k)
    return out, k


@njit(cache=True)
def det_plain(a):
    """Determinant of a small matrix in working precision (no rescaling)."""
    n = a.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return a[0, 0]
    if n == 2:
        return a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if n == 3:
        return (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
                - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
                + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    w = a.copy()
    d = 1.0
    for c in range(n):
        piv = c
        for r in range(c + 1, n):
            if abs(w[r, c]) > abs(w[piv, c]):
                piv = r
        if w[piv, c] == 0.0:
            return 0.0
        if piv != c:
            for j in range(n):
                tmp = w[c, j]
                w[c, j] = w[piv, j]
                w[piv, j] = tmp
            d = -d
        d *= w[c, c]
        for r in range(c + 1, n):
            f = w[r, c] / w[c, c]
            for j in range(c + 1, n):
                w[r, j] -= f * w[c, j]
    return d


@njit(cache=True)
def det_scaled(a):
    """LU determinant with row equilibration and log-magnitude accumulation."""
    n = a.shape[0]
    if n == 0:
        return 0.5, 1
    w = a.copy()
    etot = 0
    for r in range(n):
        rmax = 0.0
        for j in range(n):
            v = abs(w[r, j])
            if v > rmax:
                rmax = v
        if rmax == 0.0:
            return 0.0, 0
        _, k = math.frexp(rmax)
        etot += k
        for j in range(n):
            w[r, j] = math.ldexp(w[r, j], -k)
    dm, de = 0.5, 1
    for c in range(n):
        piv = c
        for r in range(c + 1, n):
            if abs(w[r, c]) > abs(w[piv, c]):
                piv = r
        if w[piv, c] == 0.0:
            return 0.0, 0
        if piv != c:
            for j in range(n):
                tmp = w[c, j]
                w[c, j] = w[piv, j]
                w[piv, j] = tmp
            dm = -dm
        dm, de = snorm(dm * w[c, c], de)
        for r in range(c + 1, n):
            f = w[r, c] / w[c, c]
            for j in range(c + 1, n):
                w[r, j] -= f * w[c, j]
    return dm, de + etot


@njit(cache=True)
def _minor(w, skip_r, skip_c):
    n = w.shape[0]
    out = np.empty((n - 1, n - 1))
    ii = 0
    for i in range(n):
        if i == skip_r:
            continue
        jj = 0
        for j in range(n):
            if j == skip_c:
                continue
            out[ii, jj] = w[i, j]
            jj += 1
        ii += 1
    return out


@njit(cache=True)
def _cofactor4(w, sr, sc):
    # 3x3 minor determinant of a 4x4 without allocating
    r0 = 1 if sr == 0 else 0
    r1 = r0 + 1
    if r1 == sr:
        r1 += 1
    r2 = r1 + 1
    if r2 == sr:
        r2 += 1
    c0 = 1 if sc == 0 else 0
    c1 = c0 + 1
    if c1 == sc:
        c1 += 1
    c2 = c1 + 1
    if c2 == sc:
        c2 += 1
    d = (w[r0, c0] * (w[r1, c1] * w[r2, c2] - w[r1, c2] * w[r2, c1])
         - w[r0, c1] * (w[r1, c0] * w[r2, c2] - w[r1, c2] * w[r2, c0])
         + w[r0, c2] * (w[r1, c0] * w[r2, c1] - w[r1, c1] * w[r2, c0]))
    if (sr + sc) % 2 == 1:
        d = -d
    return d


@njit(cache=True)
def adj_scaled(a):
    """Adjugate by cofactors, returned block scaled as ``(mantissa, exp2)``.

    Never goes through the inverse, so singular inputs (including zero) are
    handled exactly in structure.
    """
    n = a.shape[0]
    out = np.zeros((n, n))
    if n == 1:
        out[0, 0] = 0.5
        return out, 1
    w, k = block_normalize(a)
    if n == 2:
        out[0, 0] = w[1, 1]
        out[0, 1] = -w[0, 1]
        out[1, 0] = -w[1, 0]
        out[1, 1] = w[0, 0]
    elif n == 3:
        for i in range(3):
            for j in range(3):
                c = det_plain(_minor(w, j, i))
                out[i, j] = -c if (i + j) % 2 == 1 else c
    elif n == 4:
        for i in range(4):
            for j in range(4):
                out[i, j] = _cofactor4(w, j, i)
    else:
        ms = np.zeros((n, n))
        es = np.zeros((n, n), dtype=np.int64)
        emax = -(1 << 62)
        for i in range(n):
            for j in range(n):
                m, e = det_scaled(_minor(w, j, i))
                if (i + j) % 2 == 1:
                    m = -m
                ms[i, j] = m
                es[i, j] = e
                if m != 0.0 and e > emax:
                    emax = e
        if emax == -(1 << 62):
            return out, 0
        for i in range(n):
            for j in range(n):
                out[i, j] = math.ldexp(ms[i, j], es[i, j] - emax) if ms[i, j] != 0.0 else 0.0
        b, kb = block_normalize(out)
        return b, kb + emax + (n - 1) * k
    b, kb = block_normalize(out)
    return b, kb + (n - 1) * k


@njit(cache=True)
def trace_product_adj_scaled(a, b):
    """``tr(adj(a) @ b)`` as a pair, summing only the diagonal of the product."""
    am, ae = adj_scaled(a)
    bm, be = block_normalize(b)
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += am[i, j] * bm[j, i]
    return snorm(acc, ae + be)


@njit(cache=True)
def jacobi_eigenvalues(s, sweeps=30):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations (ascending)."""
    a = 0.5 * (s + s.T)
    n = a.shape[0]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off == 0.0:
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - sn * arq
                    a[r, q] = sn * arp + c * arq
                for r in range(n):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - sn * aqr
                    a[q, r] = sn * apr + c * aqr
    ev = np.empty(n)
    for i in range(n):
        ev[i] = a[i, i]
    return np.sort(ev)


# ---------------------------------------------------------------------------
# public scalar type


def _pair_norm(m: float, e: int) -> tuple[float, int]:
    if m == 0.0:
        return 0.0, 0
    f, k = math.frexp(m)
    return f, e + k


@dataclass(frozen=True)
class ScaledScalar:
    """``sign * mantissa * 10**exponent10`` with ``1 <= mantissa < 10``.

    Arithmetic is done on the exact binary pair kept alongside, so chains of
    products never round through decimal.
    """

    sign: int
    mantissa: float
    exponent10: int
    _m2: float = field(default=0.0, repr=False, compare=False)
    _e2: int = field(default=0, repr=False, compare=False)

    @classmethod
    def from_pair(cls, m: float, e: int) -> "ScaledScalar":
        m, e = _pair_norm(float(m), int(e))
        if m == 0.0:
            return cls(0, 0.0, 0, 0.0, 0)
        if not math.isfinite(m):
            raise OverflowError("non-finite mantissa")
        lg = math.log10(abs(m)) + e * LOG10_2
        e10 = math.floor(lg)
        if -300 < e < 1000 and -280 < e10 < 300:
            # direct route keeps round-trips with float exact to ~1 ulp
            mant = abs(math.ldexp(m, e)) / 10.0 ** e10 if e10 >= 0 else abs(math.ldexp(m, e)) * 10.0 ** -e10
        else:
            with localcontext() as ctx:
                ctx.prec = 40
                ctx.Emax = 999999999
                ctx.Emin = -999999999
                d = Decimal(abs(m)) * Decimal(2) ** e
                e10 = d.adjusted()
                mant = float(d.scaleb(-e10))
        if mant >= 10.0:
            mant /= 10.0
            e10 += 1
        elif mant < 1.0:
            mant *= 10.0
            e10 -= 1
        return cls(1 if m > 0 else -1, mant, int(e10), m, e)

    @classmethod
    def from_float(cls, x: float) -> "ScaledScalar":
        if not math.isfinite(x):
            raise OverflowError(f"cannot scale non-finite value {x!r}")
        return cls.from_pair(x, 0)

    @classmethod
    def parse(cls, text) -> "ScaledScalar":
        """Parse a decimal literal with an arbitrary exponent, e.g. ``"1e-400"``."""
        if isinstance(text, ScaledScalar):
            return text
        if isinstance(text, (int, float)) and not isinstance(text, bool):
            return cls.from_float(float(text))
        with localcontext() as ctx:
            ctx.prec = 40
            ctx.Emax = 999999999
            ctx.Emin = -999999999
            d = Decimal(str(text).strip())
            if not d.is_finite():
                raise ValueError(f"not a finite number: {text!r}")
            if d == 0:
                return cls(0, 0.0, 0, 0.0, 0)
            lg2 = (d.copy_abs().log10() / Decimal(2).log10())
            k = int(lg2.to_integral_value(rounding="ROUND_FLOOR")) + 1
            m = float(d.scaleb(0) * (Decimal(2) ** -k))
        return cls.from_pair(m, k)

    @property
    def pair(self) -> tuple[float, int]:
        return self._m2, self._e2

    def __float__(self) -> float:
        return float(sto_float(self._m2, self._e2))

    def log10abs(self) -> float:
        return float(slog10abs(self._m2, self._e2))

    def is_zero(self) -> bool:
        return self._m2 == 0.0

    def __mul__(self, other):
        o = ScaledScalar.parse(other)
        return ScaledScalar.from_pair(self._m2 * o._m2, self._e2 + o._e2)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = ScaledScalar.parse(other)
        if o._m2 == 0.0:
            raise ZeroDivisionError("scaled division by zero")
        return ScaledScalar.from_pair(self._m2 / o._m2, self._e2 - o._e2)

    def __add__(self, other):
        o = ScaledScalar.parse(other)
        return ScaledScalar.from_pair(*sadd(self._m2, self._e2, o._m2, o._e2))

    __radd__ = __add__

    def __neg__(self):
        return ScaledScalar.from_pair(-self._m2, self._e2)

    def __sub__(self, other):
        return self + (-ScaledScalar.parse(other))

    def __rsub__(self, other):
        return ScaledScalar.parse(other) - self

    def __abs__(self):
        return ScaledScalar.from_pair(abs(self._m2), self._e2)

    def __eq__(self, other):
        if not isinstance(other, (ScaledScalar, int, float)):
            return NotImplemented
        o = ScaledScalar.parse(other)
        return self._m2 == o._m2 and self._e2 == o._e2

    def __hash__(self):
        return hash((self._m2, self._e2))

    def __lt__(self, other):
        return (self - other).sign < 0

    def __gt__(self, other):
        return (self - other).sign > 0

    def __str__(self):
        if self.sign == 0:
            return "0"
        return f"{'-' if self.sign < 0 else ''}{self.mantissa:.15g}e{self.exponent10}"


# ---------------------------------------------------------------------------
# public matrix operations


def _square(m, name="matrix") -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def det(m) -> ScaledScalar:
    return ScaledScalar.from_pair(*det_scaled(_square(m)))


def adjugate_scaled(m) -> tuple[np.ndarray, int]:
    mant, e = adj_scaled(_square(m))
    return mant, int(e)


def adjugate(m) -> np.ndarray:
    mant, e = adjugate_scaled(m)
    return np.ldexp(mant, e)


def trace_product_adj(a, b) -> ScaledScalar:
    a = _square(a, "a")
    b = _square(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"size mismatch {a.shape} vs {b.shape}")
    return ScaledScalar.from_pair(*trace_product_adj_scaled(a, b))


def symmetric_eigenvalues(s, sweeps: int = 30, tol: float = 1e-9) -> np.ndarray:
    a = _square(s)
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return jacobi_eigenvalues(a, sweeps)


def solve_lyapunov(acl, q) -> np.ndarray:
    """Solve ``acl.T @ P + P @ acl = -q`` by vectorisation.

    Raises :class:`LyapunovError` when the system is singular or the solution
    is not positive definite, which for symmetric positive definite ``q`` is
    exactly the case where ``acl`` is not Hurwitz.
    """
    a = _square(acl, "acl")
    q = _square(q, "q")
    if a.shape != q.shape:
        raise DimensionError(f"size mismatch {a.shape} vs {q.shape}")
    n = a.shape[0]
    eye = np.eye(n)
    # row-major vec: vec(X P Y) = kron(X, Y.T) vec(P)
    big = np.kron(a.T, eye) + np.kron(eye, a.T)
    try:
        p = np.linalg.solve(big, -q.reshape(-1)).reshape(n, n)
    except np.linalg.LinAlgError:
        raise LyapunovError("singular Lyapunov system", math.inf) from None
    p = 0.5 * (p + p.T)
    residual = float(np.linalg.norm(a.T @ p + p @ a + q))
    qn = float(np.linalg.norm(q))
    if not np.all(np.isfinite(p)) or residual > 1e-9 * max(qn, 1e-300):
        raise LyapunovError("Lyapunov solve inaccurate", residual)
    if not is_positive_definite(p):
        raise LyapunovError("solution not positive definite; acl is not Hurwitz", residual)
    return p


def is_positive_definite(s) -> bool:
    try:
        np.linalg.cholesky(0.5 * (s + s.T))
    except np.linalg.LinAlgError:
        return False
    return True


def is_hurwitz(acl) -> bool:
    try:
        solve_lyapunov(acl, np.eye(np.asarray(acl).shape[0]))
    except LyapunovError:
        return False
    return True


def pinv(m, rcond: float = 1e-13) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"pinv needs a matrix, got shape {a.shape}")
    if not np.any(a):
        return np.zeros(a.T.shape)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cut = rcond * s[0]
    inv = np.array([1.0 / v if v > cut else 0.0 for v in s])
    return (vt.T * inv) @ u.T

"""The simulated plant ``x' = A x + phi(y, u) + G(y, u) theta + D delta(t)``.

``phi`` and ``G`` are output-injection maps restricted to linear combinations
of a fixed basis in ``(y, u)`` so they can run inside the jitted engine:

    1, y_i, u_j, y_i**2, y_i**3, sin(y_i), cos(y_i)

``delta`` and ``u`` are a constant plus a sum of sinusoids per component.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from numba import njit


class PlantFault(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# jitted evaluation


@njit(cache=True)
def basis_eval(y, u):
    p = y.shape[0]
    m = u.shape[0]
    b = np.empty(1 + p + m + 4 * p)
    b[0] = 1.0
    for i in range(p):
        b[1 + i] = y[i]
    for j in range(m):
        b[1 + p + j] = u[j]
    off = 1 + p + m
    for i in range(p):
        yi = y[i]
        b[off + 4 * i] = yi * yi
        b[off + 4 * i + 1] = yi * yi * yi
        b[off + 4 * i + 2] = math.sin(yi)
        b[off + 4 * i + 3] = math.cos(yi)
    return b


@njit(cache=True)
def signal_eval(t, const, comp, amp, freq, phase, kind):
    v = const.copy()
    for i in range(comp.shape[0]):
        arg = freq[i] * t + phase[i]
        if kind[i] == 0:
            v[comp[i]] += amp[i] * math.sin(arg)
        else:
            v[comp[i]] += amp[i] * math.cos(arg)
    return v


@njit(cache=True)
def signal_deriv(t, const, comp, amp, freq, phase, kind):
    v = np.zeros_like(const)
    for i in range(comp.shape[0]):
        arg = freq[i] * t + phase[i]
        if kind[i] == 0:
            v[comp[i]] += amp[i] * freq[i] * math.cos(arg)
        else:
            v[comp[i]] -= amp[i] * freq[i] * math.sin(arg)
    return v


@njit(cache=True)
def map_vec(coef, b):
    n = coef.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(b.shape[0]):
            if coef[i, k] != 0.0:
                acc += coef[i, k] * b[k]
        out[i] = acc
    return out


@njit(cache=True)
def map_mat(coef, b):
    n = coef.shape[0]
    q = coef.shape[1]
    out = np.zeros((n, q))
    for i in range(n):
        for j in range(q):
            acc = 0.0
            for k in range(b.shape[0]):
                if coef[i, j, k] != 0.0:
                    acc += coef[i, j, k] * b[k]
            out[i, j] = acc
    return out


@njit(cache=True)
def plant_core(A, D, phi_v, G_m, theta, x, delta):
    n = x.shape[0]
    dx = np.empty(n)
    for i in range(n):
        acc = phi_v[i]
        for j in range(n):
            acc += A[i, j] * x[j]
        for j in range(theta.shape[0]):
            acc += G_m[i, j] * theta[j]
        for j in range(delta.shape[0]):
            acc += D[i, j] * delta[j]
        dx[i] = acc
    return dx


# ---------------------------------------------------------------------------
# signals


@dataclass(frozen=True)
class Signal:
    """Per-component ``const + sum(amp * sin|cos(freq * t + phase))``."""

    const: np.ndarray
    comp: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray
    kind: np.ndarray  # 0 = sin, 1 = cos

    @classmethod
    def build(cls, const, terms=()):
        """``terms`` is an iterable of ``(component, amp, freq, phase, 'sin'|'cos')``."""
        const = np.array(const, dtype=float).reshape(-1)
        rows = list(terms)
        for r in rows:
            if not 0 <= int(r[0]) < const.size:
                raise ValueError(f"signal term component {r[0]} out of range")
            if r[4] not in ("sin", "cos"):
                raise ValueError(f"signal term kind must be sin or cos, got {r[4]!r}")
        return cls(
            const,
            np.array([int(r[0]) for r in rows], dtype=np.int64),
            np.array([float(r[1]) for r in rows]),
            np.array([float(r[2]) for r in rows]),
            np.array([float(r[3]) for r in rows]),
            np.array([0 if r[4] == "sin" else 1 for r in rows], dtype=np.int64),
        )

    @property
    def dim(self) -> int:
        return self.const.size

    def arrays(self):
        return self.const, self.comp, self.amp, self.freq, self.phase, self.kind

    def __call__(self, t: float) -> np.ndarray:
        return signal_eval(float(t), *self.arrays())

    def derivative(self, t: float) -> np.ndarray:
        return signal_deriv(float(t), *self.arrays())

    def with_amplitude_scale(self, factor: float) -> "Signal":
        return Signal(self.const, self.comp, self.amp * factor, self.freq, self.phase, self.kind)


# ---------------------------------------------------------------------------
# output-injection maps

_NUM = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_ATOM = re.compile(
    r"(?P<trig>sin|cos)\(\s*y(?P<ti>\d*)\s*\)"
    r"|y(?P<yi>\d*)(?:\s*(?:\^|\*\*)\s*(?P<pw>[23]))?"
    r"|u(?P<ui>\d*)"
)


def _index(text: str, limit: int, sym: str, expr: str) -> int:
    i = int(text) - 1 if text else 0
    if not 0 <= i < limit:
        raise ValueError(f"{sym}{text} out of range in {expr!r}")
    return i


def parse_term_expr(expr, p: int, m: int) -> np.ndarray:
    """Coefficients of ``expr`` over the basis, e.g. ``"2.5*u - y^3 + 0.1"``."""
    nb = 1 + p + m + 4 * p
    coef = np.zeros(nb)
    if isinstance(expr, (int, float)) and not isinstance(expr, bool):
        coef[0] = float(expr)
        return coef
    s = str(expr)
    pos = 0
    first = True
    while True:
        while pos < len(s) and s[pos].isspace():
            pos += 1
        if pos >= len(s):
            break
        sign = 1.0
        if s[pos] in "+-":
            sign = -1.0 if s[pos] == "-" else 1.0
            pos += 1
        elif not first:
            raise ValueError(f"expected '+' or '-' at {pos} in {expr!r}")
        first = False
        while pos < len(s) and s[pos].isspace():
            pos += 1
        value = 1.0
        mnum = _NUM.match(s, pos)
        if mnum:
            value = float(mnum.group(0))
            pos = mnum.end()
            while pos < len(s) and s[pos].isspace():
                pos += 1
            if pos < len(s) and s[pos] == "*" and not s.startswith("**", pos):
                pos += 1
                while pos < len(s) and s[pos].isspace():
                    pos += 1
        mat = _ATOM.match(s, pos)
        if mat:
            pos = mat.end()
            off = 1 + p + m
            if mat.group("trig"):
                i = _index(mat.group("ti"), p, "y", s)
                k = off + 4 * i + (2 if mat.group("trig") == "sin" else 3)
            elif mat.group("ui") is not None and mat.group(0).startswith("u"):
                k = 1 + p + _index(mat.group("ui"), m, "u", s)
            else:
                i = _index(mat.group("yi"), p, "y", s)
                pw = mat.group("pw")
                k = 1 + i if pw is None else off + 4 * i + (0 if pw == "2" else 1)
        elif mnum:
            k = 0
        else:
            raise ValueError(f"cannot parse term at {pos} in {expr!r}")
        coef[k] += sign * value
    return coef


@dataclass(frozen=True)
class OutputMap:
    """A vector (``coef.ndim == 2``) or matrix (``coef.ndim == 3``) map of ``(y, u)``."""

    coef: np.ndarray
    p: int
    m: int

    @classmethod
    def from_expressions(cls, exprs, p: int, m: int) -> "OutputMap":
        arr = np.array(exprs, dtype=object)
        if arr.ndim not in (1, 2):
            raise ValueError("output map must be a vector or matrix of expressions")
        coef = np.array(
            [parse_term_expr(e, p, m) for e in arr.reshape(-1)]
        ).reshape(arr.shape + (1 + p + m + 4 * p,))
        return cls(coef, p, m)

    @classmethod
    def zeros(cls, shape, p: int, m: int) -> "OutputMap":
        return cls(np.zeros(tuple(shape) + (1 + p + m + 4 * p,)), p, m)

    @property
    def shape(self):
        return self.coef.shape[:-1]

    def __call__(self, y, u) -> np.ndarray:
        b = basis_eval(np.atleast_1d(np.asarray(y, dtype=float)),
                       np.atleast_1d(np.asarray(u, dtype=float)))
        if self.coef.ndim == 2:
            return map_vec(self.coef, b)
        return map_mat(self.coef, b)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray
    phi: OutputMap
    G: OutputMap
    theta_true: np.ndarray
    delta: Signal
    u: Signal
    x0: np.ndarray

    def __post_init__(self):
        for name in ("A", "C", "D", "theta_true", "x0"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        n = self.A.shape[0]
        problems = []
        if self.A.shape != (n, n):
            problems.append(f"A must be square, got {self.A.shape}")
        if self.C.ndim != 2 or self.C.shape[1] != n:
            problems.append(f"C must be p x {n}, got {self.C.shape}")
        if self.D.ndim != 2 or self.D.shape[0] != n:
            problems.append(f"D must be {n} x s, got {self.D.shape}")
        elif self.D.shape[1] != self.delta.dim:
            problems.append(f"D has {self.D.shape[1]} columns but delta has {self.delta.dim} components")
        if self.x0.shape != (n,):
            problems.append(f"x0 must have length {n}")
        q = self.theta_true.size
        if self.phi.shape != (n,):
            problems.append(f"phi must have {n} entries, got {self.phi.shape}")
        if self.G.shape != (n, q):
            problems.append(f"G must be {n} x {q}, got {self.G.shape}")
        if self.C.ndim == 2 and (self.phi.p != self.C.shape[0] or self.G.p != self.C.shape[0]):
            problems.append("phi/G were parsed for a different output dimension")
        if self.phi.m != self.u.dim or self.G.m != self.u.dim:
            problems.append("phi/G were parsed for a different input dimension")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def q(self) -> int:
        return self.theta_true.size

    @property
    def s(self) -> int:
        return self.D.shape[1]

    @property
    def m(self) -> int:
        return self.u.dim

    def output(self, x) -> np.ndarray:
        return self.C @ np.asarray(x, dtype=float)


def plant_rhs(model: PlantModel, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = model.C @ x
    u = model.u(t)
    phi_v = model.phi(y, u)
    G_m = model.G(y, u)
    if not (np.all(np.isfinite(phi_v)) and np.all(np.isfinite(G_m))):
        raise PlantFault(f"non-finite phi/G at t={t!r}")
    return plant_core(model.A, model.D, phi_v, G_m, model.theta_true, x, model.delta(t))


def duffing_preset(A_amp: float = 2.5) -> PlantModel:
    """Forced Duffing oscillator with unknown input gain and cubic stiffness."""
    p, m = 1, 1
    return PlantModel(
        A=np.array([[0.0, 1.0], [1.0, -0.2]]),
        C=np.array([[1.0, 0.0]]),
        D=np.array([[1.0], [0.0]]),
        phi=OutputMap.zeros((2,), p, m),
        G=OutputMap.from_expressions([["0", "0"], ["u", "-y^3"]], p, m),
        theta_true=np.array([1.0, 3.0]),
        delta=Signal.build([0.0], [(0, 0.5, 2.0, 0.0, "sin")]),
        u=Signal.build([0.0], [(0, A_amp, 1.0, 0.0, "cos")]),
        x0=np.array([2.0, 1.0]),
    )


def assumption_bounds(model: PlantModel, t, y) -> dict:
    """Sampled suprema of ``|delta|``, ``|delta'|``, ``|G|``, ``|G'|`` along a trajectory.

    Sampled, not proven: the caller compares them with whatever bound matters.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float).reshape(t.size, -1)
    d = np.array([model.delta(ti) for ti in t])
    dd = np.array([model.delta.derivative(ti) for ti in t])
    g = np.array([model.G(yi, model.u(ti)) for ti, yi in zip(t, y)])
    gnorm = np.linalg.norm(g.reshape(t.size, -1), axis=1)
    gdot = np.gradient(g.reshape(t.size, -1), t, axis=0) if t.size > 1 else np.zeros((1, 1))
    return {
        "delta_max": float(np.max(np.linalg.norm(d, axis=1))),
        "delta_dot_max": float(np.max(np.linalg.norm(dd, axis=1))),
        "G_max": float(np.max(gnorm)),
        "G_dot_max": float(np.max(np.linalg.norm(gdot, axis=1))),
    }

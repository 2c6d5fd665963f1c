"""Estimation law on the scalar regressions ``Lambda = omega * Theta + d``.

``kappa`` tracks ``1/omega``::

    kappa'    = -gamma * omega * (omega * kappa - 1) - omega' * kappa**2
    theta_hat = kappa * Lambda[:q]

With ``omega`` near 1e-125 and ``gamma`` near 1e248 every product goes
through the pair arithmetic of :mod:`drem_observer.matkit`.  The monitors
are read-only diagnostics for the excitation/identifiability conditions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .matkit import (
    LOG10_2,
    ScaledScalar,
    adj_scaled,
    det_scaled,
    sadd,
    smul,
    sto_float,
    symmetric_eigenvalues,
)
from .simkit import SlidingWindowIntegral

# |exponent10| limit; in binary exponent units
EXP10_LIMIT = 600
_EXP2_LIMIT = int(math.ceil(EXP10_LIMIT / LOG10_2))

OVERFLOW_PRODUCTS = (
    "",
    "gamma*omega",
    "gamma*omega*(omega*kappa-1)",
    "kappa**2",
    "omega_dot*kappa**2",
)


class EstimatorFault(RuntimeError):
    pass


class GroundTruthRequired(RuntimeError):
    pass


@njit(cache=True)
def estimator_core(gm, ge, wm, we, wdm, wde, km, ke):
    """Returns ``(dk_m, dk_e, code)``; ``code`` indexes OVERFLOW_PRODUCTS (0 = ok)."""
    gw_m, gw_e = smul(gm, ge, wm, we)
    if gw_m != 0.0 and gw_e > _EXP2_LIMIT:
        return 0.0, 0, 1
    a_m, a_e = smul(wm, we, km, ke)
    a_m, a_e = sadd(a_m, a_e, -0.5, 1)
    t1_m, t1_e = smul(gw_m, gw_e, a_m, a_e)
    if t1_m != 0.0 and t1_e > _EXP2_LIMIT:
        return 0.0, 0, 2
    k2_m, k2_e = smul(km, ke, km, ke)
    if k2_m != 0.0 and k2_e > _EXP2_LIMIT:
        return 0.0, 0, 3
    t2_m, t2_e = smul(wdm, wde, k2_m, k2_e)
    if t2_m != 0.0 and t2_e > _EXP2_LIMIT:
        return 0.0, 0, 4
    d_m, d_e = sadd(-t1_m, t1_e, -t2_m, t2_e)
    return d_m, d_e, 0


@njit(cache=True)
def read_theta_core(km, ke, Lam_m, Lam_e, q):
    out = np.empty(q)
    for i in range(q):
        out[i] = sto_float(km * Lam_m[i], ke + Lam_e)
    return out


@dataclass
class EstimatorState:
    kappa: ScaledScalar
    gamma: ScaledScalar
    q: int
    kappa0: ScaledScalar = None

    def __post_init__(self):
        self.kappa = ScaledScalar.parse(self.kappa)
        self.gamma = ScaledScalar.parse(self.gamma)
        if self.kappa0 is None:
            self.kappa0 = self.kappa
        if self.gamma.sign <= 0:
            raise ValueError("gamma must be positive")


def estimator_rhs(st: EstimatorState, omega, omega_dot) -> ScaledScalar:
    w = ScaledScalar.parse(omega)
    wd = ScaledScalar.parse(omega_dot)
    dm, de, code = estimator_core(*st.gamma.pair, *w.pair, *wd.pair, *st.kappa.pair)
    if code:
        raise EstimatorFault(f"exponent overflow in {OVERFLOW_PRODUCTS[code]}")
    return ScaledScalar.from_pair(dm, de)


def read_theta(st: EstimatorState, Lambda) -> np.ndarray:
    """``kappa * Lambda[:q]``.  ``Lambda`` may be floats or a ``(mantissa, exp2)`` block."""
    if isinstance(Lambda, tuple):
        mant, e = Lambda
    else:
        mant, e = np.asarray(Lambda, dtype=float), 0
    return read_theta_core(*st.kappa.pair, np.asarray(mant, float), int(e), st.q)


def track_inverse(omega, omega_dot, gamma, t_end: float, dt: float, kappa0=0.0, t0: float = 0.0,
                  Lambda=None):
    """Integrate the ``kappa`` law alone against prescribed ``omega(t)`` (RK4, pair arithmetic).

    ``omega``/``omega_dot``/``Lambda`` are callables of ``t`` returning floats or
    :class:`ScaledScalar` (``Lambda`` returns a vector).  Returns times, ``kappa``
    as :class:`ScaledScalar`, and ``theta_hat`` rows when ``Lambda`` is given.
    """
    from .simkit import steps_for

    g = ScaledScalar.parse(gamma).pair
    n = steps_for(t_end - t0, dt, "t_end - t0")
    k = ScaledScalar.parse(kappa0).pair

    def f(t, kp):
        w = ScaledScalar.parse(omega(t)).pair
        wd = ScaledScalar.parse(omega_dot(t)).pair
        dm, de, code = estimator_core(*g, *w, *wd, *kp)
        if code:
            raise EstimatorFault(f"exponent overflow in {OVERFLOW_PRODUCTS[code]} at t={t!r}")
        return dm, de

    times = [t0]
    kappas = [ScaledScalar.from_pair(*k)]
    for j in range(n):
        t = t0 + j * dt
        k = rk4_pair_step(f, t, k, dt)
        times.append(t0 + (j + 1) * dt)
        kappas.append(ScaledScalar.from_pair(*k))
    out = {"t": np.array(times), "kappa": kappas}
    if Lambda is not None:
        rows = []
        for t, kp in zip(times, kappas):
            lam = Lambda(t)
            if isinstance(lam, (list, tuple)) and lam and isinstance(lam[0], ScaledScalar):
                rows.append([float(kp * li) for li in lam])
            else:
                rows.append([float(kp * float(li)) for li in np.asarray(lam, float)])
        out["theta_hat"] = np.array(rows)
    return out


def rk4_pair_step(f, t, k, dt):
    """Classical RK4 on a scalar carried as a ``(mantissa, exp2)`` pair."""
    from .matkit import sadd as _add, smul as _mul, snorm as _norm

    h2 = _norm(0.5 * dt, 0)
    h6 = _norm(dt / 6.0, 0)
    hh = _norm(dt, 0)
    k1 = f(t, k)
    k2 = f(t + 0.5 * dt, _add(*k, *_mul(*h2, *k1)))
    k3 = f(t + 0.5 * dt, _add(*k, *_mul(*h2, *k2)))
    k4 = f(t + dt, _add(*k, *_mul(*hh, *k3)))
    acc = _add(*k1, *_mul(*k2, 0.5, 2))
    acc = _add(*acc, *_mul(*k3, 0.5, 2))
    acc = _add(*acc, *k4)
    return _add(*k, *_mul(*h6, *acc))


# ---------------------------------------------------------------------------
# monitors


@dataclass
class ConditionReport:
    """Monitor trajectories sampled at log instants (all read-only taps)."""

    t: np.ndarray
    gram_min: np.ndarray
    gram_max: np.ndarray
    c3_log10: np.ndarray
    c4_sign: np.ndarray
    c4_log10: np.ndarray
    independence: np.ndarray = None  # (samples, 2q), ground truth only


def monitor_c1(gram) -> tuple[float, float]:
    """Smallest and largest eigenvalue of the window Gram matrix (cyclic Jacobi)."""
    ev = symmetric_eigenvalues(gram)
    return float(ev[0]), float(ev[-1])


def monitor_c2(phi_stack_stream, f_stream, T: float, dt: float) -> np.ndarray:
    """Per-element window averages of ``phi_i * f`` on a fixed-step stream.

    ``f`` depends on the unknown disturbance, so this is only available when
    ground truth is (test harness, simulation).
    """
    if f_stream is None:
        raise GroundTruthRequired("the independence integrals need the ground-truth f(t) stream")
    phis = np.atleast_2d(np.asarray(phi_stack_stream, dtype=float))
    f = np.asarray(f_stream, dtype=float).reshape(-1)
    if phis.shape[0] != f.size:
        phis = phis.T
    win = SlidingWindowIntegral(T, dt, phis.shape[1])
    out = np.empty_like(phis)
    for i in range(f.size):
        out[i] = win.update(phis[i] * f[i])
    return out


def monitor_c3(gram, HT, L1) -> ScaledScalar:
    """``|det(H' adj(gram) L1)|``."""
    adj_m, adj_e = adj_scaled(np.ascontiguousarray(gram, dtype=float))
    B = np.asarray(HT, float) @ adj_m @ np.asarray(L1, float)
    m, e = det_scaled(np.ascontiguousarray(B))
    if m != 0.0:
        e += B.shape[0] * adj_e
    return abs(ScaledScalar.from_pair(m, e))


def monitor_c4(gamma, omega, omega_dot, kappa, eta) -> ScaledScalar:
    """``gamma w^3 + w w' kappa + w' - eta w``; negative values flag a violation."""
    g, w, wd, k, et = (ScaledScalar.parse(v) for v in (gamma, omega, omega_dot, kappa, eta))
    return g * w * w * w + w * wd * k + wd - et * w


@njit(cache=True)
def c4_margin_core(gm, ge, wm, we, wdm, wde, km, ke, em, ee):
    a = smul(gm, ge, wm, we)
    a = smul(a[0], a[1], wm, we)
    a = smul(a[0], a[1], wm, we)
    b = smul(wm, we, wdm, wde)
    b = smul(b[0], b[1], km, ke)
    c = smul(em, ee, wm, we)
    r = sadd(a[0], a[1], b[0], b[1])
    r = sadd(r[0], r[1], wdm, wde)
    return sadd(r[0], r[1], -c[0], c[1])

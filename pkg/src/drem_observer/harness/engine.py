"""Monolithic fixed-step simulation of plant, observer, regression pipeline and estimator.

Everything with a derivative lives in one float state vector (plus ``kappa``
as a scaled pair) and advances with one shared RK4 step, so no block ever
sees a stale neighbour.

Window averages use a delay line holding the *stage* samples of
``(phi_stack, z~, f)``: stage ``i`` of step ``j`` replays stage ``i`` of step
``j - T/dt``.  The delayed integrand is therefore the exact RK4 history of
the live one and the window is ``(I(t) - I(t-T)) / T`` to rounding, with no
interpolation.  Before ``t0 + T`` the buffer is still zero, which is the
clipped window ``[max(t0, t-T), t]``.

A ground-truth channel (``delta_f``, ``w_f``, ``W``) rides along for the test
harness.  It reads ``delta`` and ``x0`` but nothing from it feeds back.
"""
from __future__ import annotations

import math
from collections import namedtuple

import numpy as np
from numba import njit

from ..drem import annihilate_core, extend_core, filter_bank_core, final_core, raw_regression_core, scalarize_core
from ..estimator import c4_margin_core, estimator_core, read_theta_core
from ..matkit import jacobi_eigenvalues, sadd, smul, snorm, sto_float
from ..observer import observer_core
from ..plant import basis_eval, map_mat, map_vec, plant_core, signal_eval

BLOCKS = ("x", "xhat", "chi", "Pf", "Omega", "Phi_K", "z_f", "phi_f", "Y", "Phi",
          "Omega_f", "lam_f", "delta_f", "w_f", "W")

EngineParams = namedtuple("EngineParams", [
    "n", "p", "q", "s", "m",
    "A", "C", "D", "phi_coef", "G_coef", "theta",
    "d_const", "d_comp", "d_amp", "d_freq", "d_phase", "d_kind",
    "u_const", "u_comp", "u_amp", "u_freq", "u_phase", "u_kind",
    "L", "M", "mu",
    "K", "AK", "alpha", "T", "kf", "L1", "HT", "s_norm",
    "gm", "ge", "em", "ee",
    "feed_true", "gate_thr", "e0",
    "t0", "dt", "N", "n_steps", "dec",
    "off",
])

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_OVERFLOW = 2


def layout(n: int, q: int) -> dict:
    sizes = dict(x=n, xhat=n, chi=n, Pf=n, Omega=n * q, Phi_K=n * n, z_f=1, phi_f=q,
                 Y=2 * q, Phi=4 * q * q, Omega_f=4 * q * q, lam_f=2 * q, delta_f=n, w_f=1, W=2 * q)
    out = {}
    pos = 0
    for name in BLOCKS:
        out[name] = slice(pos, pos + sizes[name])
        pos += sizes[name]
    out["size"] = pos
    return out


def aux_layout(p: int, m: int, s: int, q: int) -> dict:
    sizes = [("y", p), ("u", m), ("delta", s), ("deltahat", s), ("theta_hat", q),
             ("theta_feed", q), ("z", 1), ("ztilde", 1), ("phi_stack", 2 * q), ("w", 1), ("f", 1),
             ("lam", 2 * q), ("omega", 2), ("omega_dot", 2), ("mixing_det", 2),
             ("Lambda_m", 2 * q), ("Lambda_e", 1), ("gram_eig", 2), ("c4", 2)]
    out = {}
    pos = 0
    for name, k in sizes:
        out[name] = slice(pos, pos + k)
        pos += k
    out["size"] = pos
    return out


@njit(cache=True)
def _to_float_block(mant, e):
    out = np.empty_like(mant)
    fo = out.reshape(-1)
    fm = mant.reshape(-1)
    for i in range(fo.size):
        fo[i] = sto_float(fm[i], e)
    return out


@njit(cache=True)
def _stage(P, t, X, km, ke, dphis, dzt, dff, gate_open):
    """Derivative of the full state at ``(t, X, kappa)``.

    Returns ``(dX, dk_m, dk_e, code, phis, z~, f, aux)``.
    """
    n, p, q, s = P.n, P.p, P.q, P.s
    o = P.off
    q2 = 2 * q
    x = X[o[0]:o[0] + n]
    xh = X[o[1]:o[1] + n]
    chi = X[o[2]:o[2] + n]
    Pf = X[o[3]:o[3] + n]
    Om = X[o[4]:o[4] + n * q].copy().reshape((n, q))
    PhiK = X[o[5]:o[5] + n * n].copy().reshape((n, n))
    zf = X[o[6]]
    phif = X[o[7]:o[7] + q]
    Y = X[o[8]:o[8] + q2].copy()
    Phi = X[o[9]:o[9] + q2 * q2].copy().reshape((q2, q2))
    Omf = X[o[10]:o[10] + q2 * q2].copy().reshape((q2, q2))
    lamf = X[o[11]:o[11] + q2].copy()
    df = X[o[12]:o[12] + n]
    wf = X[o[13]]

    y = np.zeros(p)
    for i in range(p):
        for j in range(n):
            y[i] += P.C[i, j] * x[j]
    u = signal_eval(t, P.u_const, P.u_comp, P.u_amp, P.u_freq, P.u_phase, P.u_kind)
    b = basis_eval(y, u)
    phi_v = map_vec(P.phi_coef, b)
    G_m = map_mat(P.G_coef, b)

    dX = np.empty_like(X)

    # truth: the plant
    delta = signal_eval(t, P.d_const, P.d_comp, P.d_amp, P.d_freq, P.d_phase, P.d_kind)
    dX[o[0]:o[0] + n] = plant_core(P.A, P.D, phi_v, G_m, P.theta, x, delta)

    # estimation path: sees y, u and known structure only
    dchi, dPf, dOm, dPhiK = filter_bank_core(P.AK, P.K, y, phi_v, G_m, chi, Pf, Om, PhiK)
    dX[o[2]:o[2] + n] = dchi
    dX[o[3]:o[3] + n] = dPf
    dX[o[4]:o[4] + n * q] = dOm.reshape(-1)
    dX[o[5]:o[5] + n * n] = dPhiK.reshape(-1)
    z, phi = raw_regression_core(P.C, y, chi, Pf, Om)
    dX[o[6]] = P.alpha * (z - zf)
    dX[o[7]:o[7] + q] = P.alpha * (phi - phif)
    zt = z - zf
    phis = np.empty(q2)
    phis[:q] = phi
    phis[q:] = phif
    dY, dPhi = extend_core(phis, zt, dphis, dzt, P.T)
    dX[o[8]:o[8] + q2] = dY
    dX[o[9]:o[9] + q2 * q2] = dPhi.reshape(-1)
    lam_m, lam_e, om_m, om_e, Mm, Me = annihilate_core(Y, Phi, P.L1, P.HT)
    lam = _to_float_block(lam_m, lam_e)
    Omat = _to_float_block(om_m, om_e)
    dOmf, dlamf = scalarize_core(Omf, lamf, Omat, lam, P.kf)
    dX[o[10]:o[10] + q2 * q2] = dOmf.reshape(-1)
    dX[o[11]:o[11] + q2] = dlamf
    Lam_m, Lam_e, wm, we, wdm, wde = final_core(Omf, lamf, dOmf, P.s_norm)
    dkm, dke, code = estimator_core(P.gm, P.ge, wm, we, wdm, wde, km, ke)
    theta_hat = read_theta_core(km, ke, Lam_m, Lam_e, q)
    if P.feed_true:
        feed = P.theta.copy()
    elif gate_open:
        feed = theta_hat
    else:
        feed = np.zeros(q)
    dxh, dh = observer_core(P.A, P.C, P.D, P.L, P.M, P.mu, phi_v, G_m, feed, xh, y)
    dX[o[1]:o[1] + n] = dxh

    # truth: disturbance channel of the regression (never fed back)
    pe = np.zeros(n)
    for i in range(n):
        acc = df[i]
        for j in range(n):
            acc += PhiK[i, j] * P.e0[j]
        pe[i] = acc
    w = 0.0
    for i in range(p):
        for j in range(n):
            w -= P.C[i, j] * pe[j]
    ddf = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += P.AK[i, j] * df[j]
        for j in range(s):
            acc -= P.D[i, j] * delta[j]
        ddf[i] = acc
    dX[o[12]:o[12] + n] = ddf
    dX[o[13]] = P.alpha * (w - wf)
    f = w - wf
    for i in range(q2):
        dX[o[14] + i] = (phis[i] * f - dphis[i] * dff) / P.T

    aux = np.zeros(P.off[16])
    a = 0
    aux[a:a + p] = y
    a += p
    aux[a:a + P.m] = u
    a += P.m
    aux[a:a + s] = delta
    a += s
    aux[a:a + s] = dh
    a += s
    aux[a:a + q] = theta_hat
    a += q
    aux[a:a + q] = feed
    a += q
    aux[a] = z
    aux[a + 1] = zt
    a += 2
    aux[a:a + q2] = phis
    a += q2
    aux[a] = w
    aux[a + 1] = f
    a += 2
    aux[a:a + q2] = lam
    a += q2
    aux[a] = wm
    aux[a + 1] = we
    aux[a + 2] = wdm
    aux[a + 3] = wde
    aux[a + 4] = Mm
    aux[a + 5] = Me
    a += 6
    aux[a:a + q2] = Lam_m
    a += q2
    aux[a] = Lam_e
    return dX, dkm, dke, code, phis, zt, f, aux


@njit(cache=True)
def _gate_check(P, X):
    q2 = 2 * P.q
    o = P.off
    Phi = X[o[9]:o[9] + q2 * q2].copy().reshape((q2, q2))
    ev = jacobi_eigenvalues(Phi, 30)
    return ev[0] > P.gate_thr


@njit(cache=True)
def _block_of(P, X):
    o = P.off
    for i in range(X.shape[0]):
        if not math.isfinite(X[i]):
            for b in range(14, -1, -1):
                if i >= o[b]:
                    return b
    return -1


@njit(cache=True)
def run_core(P, X0, k0m, k0e, n_log):
    """Integrate; returns ``(status, fail_step, detail, logX, logK, logGate, n_logged)``."""
    nx = X0.shape[0]
    q2 = 2 * P.q
    N = P.N
    dt = P.dt
    width = q2 + 2
    dly = np.zeros((N, 4, width))
    X = X0.copy()
    km, ke = snorm(k0m, k0e)
    logX = np.empty((n_log, nx))
    logK = np.empty((n_log, 2))
    logG = np.empty(n_log)
    gate_open = P.gate_thr <= 0.0 or P.feed_true
    h2m, h2e = snorm(0.5 * dt, 0)
    hm, he = snorm(dt, 0)
    h6m, h6e = snorm(dt / 6.0, 0)
    li = 0
    samples = np.empty((4, width))
    for j in range(P.n_steps + 1):
        if j % P.dec == 0:
            logX[li] = X
            logK[li, 0] = km
            logK[li, 1] = ke
            logG[li] = 1.0 if gate_open else 0.0
            li += 1
        if j == P.n_steps:
            break
        t = P.t0 + j * dt
        tm = P.t0 + (j + 0.5) * dt
        t1 = P.t0 + (j + 1) * dt
        slot = j % N
        d = dly[slot].copy()

        dX1, k1m, k1e, c1, ph1, zt1, f1, _ = _stage(P, t, X, km, ke, d[0, :q2], d[0, q2], d[0, q2 + 1], gate_open)
        a = smul(h2m, h2e, k1m, k1e)
        kk = sadd(km, ke, a[0], a[1])
        dX2, k2m, k2e, c2, ph2, zt2, f2, _ = _stage(P, tm, X + 0.5 * dt * dX1, kk[0], kk[1],
                                                     d[1, :q2], d[1, q2], d[1, q2 + 1], gate_open)
        a = smul(h2m, h2e, k2m, k2e)
        kk = sadd(km, ke, a[0], a[1])
        dX3, k3m, k3e, c3, ph3, zt3, f3, _ = _stage(P, tm, X + 0.5 * dt * dX2, kk[0], kk[1],
                                                     d[2, :q2], d[2, q2], d[2, q2 + 1], gate_open)
        a = smul(hm, he, k3m, k3e)
        kk = sadd(km, ke, a[0], a[1])
        dX4, k4m, k4e, c4, ph4, zt4, f4, _ = _stage(P, t1, X + dt * dX3, kk[0], kk[1],
                                                     d[3, :q2], d[3, q2], d[3, q2 + 1], gate_open)
        code = max(max(c1, c2), max(c3, c4))
        if code != 0:
            return STATUS_OVERFLOW, j, code, logX, logK, logG, li

        X = X + (dt / 6.0) * (dX1 + 2.0 * dX2 + 2.0 * dX3 + dX4)
        acc = sadd(k1m, k1e, k2m, k2e + 1)
        acc = sadd(acc[0], acc[1], k3m, k3e + 1)
        acc = sadd(acc[0], acc[1], k4m, k4e)
        acc = smul(h6m, h6e, acc[0], acc[1])
        km, ke = sadd(km, ke, acc[0], acc[1])

        samples[0, :q2] = ph1
        samples[0, q2] = zt1
        samples[0, q2 + 1] = f1
        samples[1, :q2] = ph2
        samples[1, q2] = zt2
        samples[1, q2 + 1] = f2
        samples[2, :q2] = ph3
        samples[2, q2] = zt3
        samples[2, q2 + 1] = f3
        samples[3, :q2] = ph4
        samples[3, q2] = zt4
        samples[3, q2 + 1] = f4
        dly[slot] = samples

        blk = _block_of(P, X)
        if blk >= 0 or not math.isfinite(km):
            return STATUS_NONFINITE, j, blk, logX, logK, logG, li
        if not gate_open:
            gate_open = _gate_check(P, X)
    return STATUS_OK, -1, 0, logX, logK, logG, li


@njit(cache=True)
def postprocess_core(P, logX, logK, logG, n):
    """Algebraic outputs and monitors at each logged state."""
    width = P.off[16]
    out = np.zeros((n, width))
    q2 = 2 * P.q
    o = P.off
    z = np.zeros(q2)
    for r in range(n):
        t = P.t0 + r * P.dec * P.dt
        X = logX[r]
        _, _, _, _, _, _, _, aux = _stage(P, t, X, logK[r, 0], int(logK[r, 1]), z, 0.0, 0.0, logG[r] > 0.5)
        Phi = X[o[9]:o[9] + q2 * q2].copy().reshape((q2, q2))
        ev = jacobi_eigenvalues(Phi, 30)
        # aux tail: gram_eig(2), c4(2)
        aux[width - 4] = ev[0]
        aux[width - 3] = ev[-1]
        a0 = width - 4 - 1 - q2 - 6
        wm, we, wdm, wde = aux[a0], int(aux[a0 + 1]), aux[a0 + 2], int(aux[a0 + 3])
        cm, ce = c4_margin_core(P.gm, P.ge, wm, we, wdm, wde, logK[r, 0], int(logK[r, 1]), P.em, P.ee)
        aux[width - 2] = cm
        aux[width - 1] = ce
        out[r] = aux
    return out

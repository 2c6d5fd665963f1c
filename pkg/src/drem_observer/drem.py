"""Regressor extension and mixing: from measured ``(y, u)`` to scalar regressions.

Pipeline, per time instant:

1. filters ``chi, Pf, Omega, Phi_K`` driven by ``A_K = A - K C``;
2. raw regression ``z = phi' theta + w`` with ``z = 1'(y - C chi - C Pf)``,
   ``phi' = 1' C Omega``;
3. ``alpha/(s+alpha)`` copies ``z_f, phi_f``; ``z~ = z - z_f``,
   ``phi_stack = [phi; phi_f]`` so ``z~ = phi_stack' [theta; -theta] + f``;
4. window averages ``Y, Phi`` of ``phi_stack z~`` and ``phi_stack phi_stack'``
   over ``[max(t0, t-T), t]``;
5. annihilation of the perturbation-coupled part with the selector ``L1`` and
   annihilator ``H'``: ``lambda = det(B) Y - L1 adj(B) H' adj(Phi) Y``,
   ``Omega_mat = det(B) Phi`` where ``B = H' adj(Phi) L1``;
6. ``k/(s+k)`` copies ``Omega_f, lambda_f`` and finally
   ``Lambda = adj(Omega_f) lambda_f``, ``omega = det(Omega_f)``.

``Pf`` is the filter the literature calls ``P(t)`` and ``Omega_mat`` the
product it calls ``Omega(t)``; both are renamed to keep them apart from the
Lyapunov ``P`` and the filter ``Omega``.  All determinant/adjugate products
are block scaled (see :mod:`drem_observer.matkit`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .matkit import (
    LyapunovError,
    ScaledScalar,
    adj_scaled,
    block_normalize,
    det_scaled,
    snorm,
    solve_lyapunov,
)
from .plant import PlantModel

# ---------------------------------------------------------------------------
# jitted kernels


@njit(cache=True)
def _mm(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for k in range(a.shape[1]):
            aik = a[i, k]
            if aik != 0.0:
                for j in range(b.shape[1]):
                    out[i, j] += aik * b[k, j]
    return out


@njit(cache=True)
def _mv(a, x):
    out = np.zeros(a.shape[0])
    for i in range(a.shape[0]):
        acc = 0.0
        for k in range(a.shape[1]):
            acc += a[i, k] * x[k]
        out[i] = acc
    return out


@njit(cache=True)
def _block(v, e):
    b, k = block_normalize(v)
    if k == 0 and b.size > 0 and np.max(np.abs(b)) == 0.0:
        return b, 0
    return b, e + k


@njit(cache=True)
def block_sub(am, ae, bm, be):
    """``am*2**ae - bm*2**be`` as a normalised block."""
    a_zero = np.max(np.abs(am)) == 0.0
    b_zero = np.max(np.abs(bm)) == 0.0
    if a_zero and b_zero:
        return np.zeros_like(am), 0
    if b_zero:
        return _block(am, ae)
    if a_zero:
        return _block(-bm, be)
    e = max(ae, be)
    out = np.empty_like(am)
    fa = out.reshape(-1)
    xa = am.reshape(-1)
    xb = bm.reshape(-1)
    for i in range(fa.size):
        fa[i] = math.ldexp(xa[i], ae - e) - math.ldexp(xb[i], be - e)
    return _block(out, e)


@njit(cache=True)
def filter_bank_core(AK, K, y, phi_v, G_m, chi, Pf, Om, PhiK):
    dchi = _mv(AK, chi) + _mv(K, y)
    dPf = _mv(AK, Pf) + phi_v
    dOm = _mm(AK, Om) + G_m
    dPhiK = _mm(AK, PhiK)
    return dchi, dPf, dOm, dPhiK


@njit(cache=True)
def raw_regression_core(C, y, chi, Pf, Om):
    p = y.shape[0]
    q = Om.shape[1]
    z = 0.0
    for i in range(p):
        acc = y[i]
        for j in range(chi.shape[0]):
            acc -= C[i, j] * (chi[j] + Pf[j])
        z += acc
    phi = np.zeros(q)
    for c in range(q):
        acc = 0.0
        for i in range(p):
            for j in range(Om.shape[0]):
                acc += C[i, j] * Om[j, c]
        phi[c] = acc
    return z, phi


@njit(cache=True)
def extend_core(phis, zt, phis_d, zt_d, T):
    m = phis.shape[0]
    dY = np.empty(m)
    dPhi = np.empty((m, m))
    for i in range(m):
        dY[i] = (phis[i] * zt - phis_d[i] * zt_d) / T
        for j in range(m):
            dPhi[i, j] = (phis[i] * phis[j] - phis_d[i] * phis_d[j]) / T
    return dY, dPhi


@njit(cache=True)
def annihilate_core(Y, Phi, L1, H):
    """Returns ``(lam_m, lam_e, Om_m, Om_e, Mm, Me)``; each block is ``mant * 2**exp``."""
    adj_m, adj_e = adj_scaled(Phi)
    ycal_m, ycal_e = _block(_mv(adj_m, Y), adj_e)
    B_m, B_e = _block(_mm(_mm(H, adj_m), L1), adj_e)
    r = B_m.shape[0]
    Mm, Me = det_scaled(B_m)
    if Mm != 0.0:
        Me += r * B_e
    adjB_m, adjB_e = adj_scaled(B_m)
    adjB_e += (r - 1) * B_e
    n_m, n_e = _block(_mv(adjB_m, _mv(H, ycal_m)), adjB_e + ycal_e)
    t1_m, t1_e = _block(Mm * Y, Me)
    t2_m, t2_e = _block(_mv(L1, n_m), n_e)
    lam_m, lam_e = block_sub(t1_m, t1_e, t2_m, t2_e)
    om_m, om_e = _block(Mm * Phi, Me)
    return lam_m, lam_e, om_m, om_e, Mm, Me


@njit(cache=True)
def scalarize_core(Omf, lamf, Omat, lam, k):
    return k * (Omat - Omf), k * (lam - lamf)


@njit(cache=True)
def final_core(Omf, lamf, dOmf, s_norm):
    """``Lambda`` (block), ``omega`` and ``omega_dot`` (pairs) of the gauged ``Omega_f``."""
    W = s_norm * Omf
    adj_m, adj_e = adj_scaled(W)
    wm, we = det_scaled(W)
    Lam_m, Lam_e = _block(_mv(adj_m, s_norm * lamf), adj_e)
    dW_m, dW_e = block_normalize(s_norm * dOmf)
    acc = 0.0
    n = W.shape[0]
    for i in range(n):
        for j in range(n):
            acc += adj_m[i, j] * dW_m[j, i]
    wdm, wde = snorm(acc, adj_e + dW_e)
    return Lam_m, Lam_e, wm, we, wdm, wde


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class AnnihilatorConfig:
    """Selectors ``L1`` (2q x 2m), ``L2`` (2q x 2q-2m) and annihilator ``H'`` (2m x 2q)."""

    L1: np.ndarray
    L2: np.ndarray
    HT: np.ndarray

    @classmethod
    def build(cls, L1T, HT=None) -> "AnnihilatorConfig":
        L1T = np.atleast_2d(np.array(L1T, dtype=float))
        r, nq = L1T.shape
        if r % 2 or nq % 2:
            raise ValueError(f"L1' must be 2m x 2q, got {L1T.shape}")
        q = nq // 2
        if HT is None:
            HT = np.hstack([np.eye(q), np.eye(q)])[:r]
        HT = np.atleast_2d(np.array(HT, dtype=float))
        problems = []
        if HT.shape != L1T.shape:
            problems.append(f"H' must be {L1T.shape}, got {HT.shape}")
        picked = []
        for row in L1T:
            ones = np.flatnonzero(row)
            if len(ones) != 1 or row[ones[0]] != 1.0:
                problems.append("each row of L1' must be a standard basis vector")
                break
            picked.append(int(ones[0]))
        if len(set(picked)) != len(picked):
            problems.append("L1' selects the same regressor element twice")
        if not problems:
            if not np.array_equal(HT[:, :q], HT[:, q:]):
                problems.append("H' must have the form [S S] to annihilate [theta; -theta]")
            elif np.linalg.matrix_rank(HT) != r:
                problems.append(f"H' must have full row rank {r} (needs 2m <= q)")
        if problems:
            raise ValueError("; ".join(problems))
        rest = [i for i in range(nq) if i not in picked]
        L2 = np.eye(nq)[:, rest]
        return cls(np.ascontiguousarray(L1T.T), np.ascontiguousarray(L2), np.ascontiguousarray(HT))

    @property
    def q(self) -> int:
        return self.L1.shape[0] // 2

    @property
    def m(self) -> int:
        return self.L1.shape[1] // 2

    @property
    def L0(self) -> np.ndarray:
        q = self.q
        return np.hstack([np.eye(q), np.zeros((q, q))])


def duffing_annihilator() -> AnnihilatorConfig:
    return AnnihilatorConfig.build([[0, 1, 0, 0], [0, 0, 0, 1]], [[1, 0, 1, 0], [0, 1, 0, 1]])


@dataclass(frozen=True)
class FilterBank:
    """Known plant structure plus the filter gain ``K`` (``A - K C`` Hurwitz)."""

    model: PlantModel
    K: np.ndarray
    chi0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", np.atleast_2d(np.array(self.K, dtype=float)))
        object.__setattr__(self, "chi0", np.array(self.chi0, dtype=float))
        if self.K.shape != (self.model.n, self.model.p):
            raise ValueError(f"K must be {self.model.n} x {self.model.p}, got {self.K.shape}")
        try:
            solve_lyapunov(self.A_K, np.eye(self.model.n))
        except LyapunovError as exc:
            raise ValueError(f"A - K C is not Hurwitz: {exc}") from None

    @property
    def A_K(self) -> np.ndarray:
        return self.model.A - self.K @ self.model.C

    def initial_state(self) -> "BankState":
        n, q = self.model.n, self.model.q
        return BankState(self.chi0.copy(), np.zeros(n), np.zeros((n, q)), np.eye(n))


class BankState(NamedTuple):
    chi: np.ndarray
    Pf: np.ndarray
    Omega: np.ndarray
    Phi_K: np.ndarray


class RawRegression(NamedTuple):
    z: float
    phi: np.ndarray


class Annihilation(NamedTuple):
    lam: np.ndarray
    Omega_mat: np.ndarray
    mixing_det: ScaledScalar


class FinalRegression(NamedTuple):
    Lambda: np.ndarray
    omega: ScaledScalar
    omega_dot: ScaledScalar
    Lambda_scaled: tuple


def filter_bank_rhs(bank: FilterBank, state: BankState, t: float, y, u) -> BankState:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    model = bank.model
    return BankState(*filter_bank_core(
        bank.A_K, bank.K, y, model.phi(y, u), model.G(y, u),
        np.asarray(state.chi, float), np.asarray(state.Pf, float),
        np.ascontiguousarray(state.Omega, float), np.ascontiguousarray(state.Phi_K, float),
    ))


def raw_regression(bank: FilterBank, state: BankState, y) -> RawRegression:
    z, phi = raw_regression_core(bank.model.C, np.atleast_1d(np.asarray(y, float)),
                                 np.asarray(state.chi, float), np.asarray(state.Pf, float),
                                 np.ascontiguousarray(state.Omega, float))
    return RawRegression(float(z), phi)


def extend_rhs(phi_stack, ztilde, phi_stack_delayed, ztilde_delayed, T: float):
    """``(Y', Phi')`` of the window averages; delayed samples are zero before ``t0 + T``."""
    return extend_core(np.asarray(phi_stack, float), float(ztilde),
                       np.asarray(phi_stack_delayed, float), float(ztilde_delayed), float(T))


def annihilate(cfg: AnnihilatorConfig, Y, Phi) -> Annihilation:
    lam_m, lam_e, om_m, om_e, Mm, Me = annihilate_core(
        np.asarray(Y, float), np.ascontiguousarray(Phi, float), cfg.L1, cfg.HT)
    return Annihilation(np.ldexp(lam_m, lam_e), np.ldexp(om_m, om_e), ScaledScalar.from_pair(Mm, Me))


def scalarize_rhs(Omega_f, lam_f, lam, Omega_mat, k: float):
    if not k > 0:
        raise ValueError("k must be positive")
    return scalarize_core(np.asarray(Omega_f, float), np.asarray(lam_f, float),
                          np.asarray(Omega_mat, float), np.asarray(lam, float), float(k))


def final_regression(Omega_f, lam_f, Omega_mat, k: float, s_norm: float = 1.0) -> FinalRegression:
    Omega_f = np.ascontiguousarray(Omega_f, float)
    lam_f = np.asarray(lam_f, float)
    dOmf = k * (np.asarray(Omega_mat, float) - Omega_f)
    Lm, Le, wm, we, wdm, wde = final_core(Omega_f, lam_f, dOmf, float(s_norm))
    return FinalRegression(np.ldexp(Lm, Le), ScaledScalar.from_pair(wm, we),
                           ScaledScalar.from_pair(wdm, wde), (Lm, int(Le)))

"""High-gain adaptive observer with output-injection disturbance estimate.

    delta_hat = -mu M (y_hat - y)
    x_hat'    = A x_hat + phi(y, u) + G(y, u) theta_hat + D delta_hat + L (y_hat - y)

``P`` and ``Q`` never enter the observer itself; :func:`verify_matching` and
:func:`suggest_matching` are diagnostics for the matching conditions
``(A+LC)'P + P(A+LC) = -Q``, ``D'P = MC``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .matkit import DimensionError, LyapunovError, is_positive_definite, pinv, solve_lyapunov
from .plant import PlantModel


class ObserverFault(RuntimeError):
    pass


@njit(cache=True)
def disturbance_core(C, M, mu, xh, y):
    p = y.shape[0]
    innov = np.empty(p)
    for i in range(p):
        acc = -y[i]
        for j in range(xh.shape[0]):
            acc += C[i, j] * xh[j]
        innov[i] = acc
    s = M.shape[0]
    dh = np.empty(s)
    for i in range(s):
        acc = 0.0
        for j in range(p):
            acc += M[i, j] * innov[j]
        dh[i] = -mu * acc
    return dh, innov


@njit(cache=True)
def observer_core(A, C, D, L, M, mu, phi_v, G_m, theta_hat, xh, y):
    dh, innov = disturbance_core(C, M, mu, xh, y)
    n = xh.shape[0]
    dxh = np.empty(n)
    for i in range(n):
        acc = phi_v[i]
        for j in range(n):
            acc += A[i, j] * xh[j]
        for j in range(theta_hat.shape[0]):
            acc += G_m[i, j] * theta_hat[j]
        for j in range(dh.shape[0]):
            acc += D[i, j] * dh[j]
        for j in range(innov.shape[0]):
            acc += L[i, j] * innov[j]
        dxh[i] = acc
    return dxh, dh


@dataclass(frozen=True)
class ObserverConfig:
    L: np.ndarray
    M: np.ndarray
    mu: float
    xhat0: np.ndarray

    def __post_init__(self):
        for name in ("L", "M", "xhat0"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        if not self.mu > 0:
            raise ValueError("mu must be positive")

    def check_against(self, model: PlantModel) -> list[str]:
        problems = []
        if self.L.shape != (model.n, model.p):
            problems.append(f"observer L must be {model.n} x {model.p}, got {self.L.shape}")
        if self.M.shape != (model.s, model.p):
            problems.append(f"observer M must be {model.s} x {model.p}, got {self.M.shape}")
        if self.xhat0.shape != (model.n,):
            problems.append(f"observer xhat0 must have length {model.n}")
        return problems


def duffing_observer() -> ObserverConfig:
    return ObserverConfig(
        L=-np.array([[30.5749], [64.3579]]), M=np.array([[28.644]]), mu=25.0, xhat0=np.zeros(2)
    )


def disturbance_estimate(cfg: ObserverConfig, C, xhat, y) -> np.ndarray:
    dh, _ = disturbance_core(np.asarray(C, float), cfg.M, float(cfg.mu),
                             np.asarray(xhat, float), np.atleast_1d(np.asarray(y, float)))
    return dh


def observer_rhs(model: PlantModel, cfg: ObserverConfig, t: float, xhat, y, u, theta_hat) -> np.ndarray:
    """``x_hat'``. Uses only the known structure of ``model`` (never ``theta_true``/``delta``)."""
    xhat = np.asarray(xhat, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    theta_hat = np.asarray(theta_hat, dtype=float)
    if not all(np.all(np.isfinite(v)) for v in (xhat, y, u, theta_hat)):
        raise ObserverFault(f"non-finite observer input at t={t!r}")
    dxh, _ = observer_core(model.A, model.C, model.D, cfg.L, cfg.M, float(cfg.mu),
                           model.phi(y, u), model.G(y, u), theta_hat, xhat, y)
    if not np.all(np.isfinite(dxh)):
        raise ObserverFault(f"non-finite observer derivative at t={t!r}")
    return dxh


@dataclass(frozen=True)
class MatchingReport:
    lyapunov_residual: float
    matching_residual: float
    P_positive: bool
    Q_positive: bool
    passed: bool


def verify_matching(A, C, D, L, P, Q, M) -> MatchingReport:
    A, C, D, L, P, Q, M = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (A, C, D, L, P, Q, M))
    n = A.shape[0]
    p = C.shape[0]
    s = D.shape[1]
    if (A.shape != (n, n) or C.shape != (p, n) or D.shape[0] != n or L.shape != (n, p)
            or P.shape != (n, n) or Q.shape != (n, n) or M.shape != (s, p)):
        raise DimensionError("inconsistent dimensions for the matching conditions")
    acl = A + L @ C
    r1 = float(np.linalg.norm(acl.T @ P + P @ acl + Q))
    r2 = float(np.linalg.norm(D.T @ P - M @ C))
    p_pd = is_positive_definite(P)
    q_pd = is_positive_definite(Q)
    ok = (r1 <= 1e-6 * float(np.linalg.norm(Q)) and r2 <= 1e-6 * float(np.linalg.norm(P))
          and p_pd and q_pd)
    return MatchingReport(r1, r2, p_pd, q_pd, ok)


@dataclass(frozen=True)
class MatchingSuggestion:
    P: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    residual: float
    relative_residual: float


def suggest_matching(A, C, D, L, points: int = 9, budget: int = 20000) -> MatchingSuggestion:
    """Grid search over ``Q = diag(q)``, ``q_i`` log-spaced in [1e-2, 1e2].

    For each grid point ``P`` solves the Lyapunov equation and ``M = D'P C^+``;
    the point with the smallest ``|D'P - MC| / |P|`` wins (ties keep the first).
    The residual is always returned; an infeasible structure shows up there.
    """
    A, C, D, L = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (A, C, D, L))
    n = A.shape[0]
    acl = A + L @ C
    try:
        solve_lyapunov(acl, np.eye(n))
    except LyapunovError as exc:
        raise ValueError(f"A+LC is not Hurwitz: {exc}") from None
    per_dim = max(2, min(points, int(math.floor(budget ** (1.0 / n)))))
    grid = np.logspace(-2.0, 2.0, per_dim)
    c_pinv = pinv(C)
    best = None
    for qs in itertools.product(grid, repeat=n):
        Q = np.diag(qs)
        P = solve_lyapunov(acl, Q)
        M = D.T @ P @ c_pinv
        res = float(np.linalg.norm(D.T @ P - M @ C))
        rel = res / float(np.linalg.norm(P))
        if best is None or rel < best.relative_residual:
            best = MatchingSuggestion(P, Q, M, res, rel)
    return best

"""Assemble a scenario into the engine, run it, and turn the log into columns and metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..estimator import OVERFLOW_PRODUCTS
from ..matkit import LOG10_2
from ..simkit import steps_for
from . import engine
from .scenario import Scenario, validate


class RuntimeFault(RuntimeError):
    """A run stopped early; ``t`` and ``block`` say where."""

    def __init__(self, t: float, block: str, detail: str):
        self.t = t
        self.block = block
        self.detail = detail
        super().__init__(f"t={t!r}: {detail} in {block}")


@dataclass
class TrajectoryLog:
    columns: dict
    states: np.ndarray
    aux: np.ndarray
    layout: dict
    aux_layout: dict
    scenario: Scenario = field(repr=False)

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]

    def state(self, block: str) -> np.ndarray:
        return self.states[:, self.layout[block]]

    def signal(self, name: str) -> np.ndarray:
        return self.aux[:, self.aux_layout[name]]

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class MetricsReport:
    window_start: float
    mean_errx: float
    max_errx: float
    mean_errdelta: float
    max_errdelta: float
    mean_errtheta: float
    max_errtheta: float
    settle_errx: float
    settle_errdelta: float
    settle_errtheta: float
    c1_floor: float
    log10_c3_floor: float
    c4_min_sign: float
    c4_min_log10: float
    log10_omega_floor: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# assembly


def _pair(s) -> tuple[float, int]:
    m, e = s.pair
    return float(m), int(e)


def build_params(s: Scenario, t_end: float | None = None) -> tuple:
    pl, ob, dr, es, ck = s.plant, s.observer, s.drem, s.estimator, s.clock
    n, p, q, sd, m = pl.n, pl.p, pl.q, pl.s, pl.m
    lay = engine.layout(n, q)
    aux = engine.aux_layout(p, m, sd, q)
    off = np.zeros(17, dtype=np.int64)
    for i, name in enumerate(engine.BLOCKS):
        off[i] = lay[name].start
    off[15] = lay["size"]
    off[16] = aux["size"]
    t_end = ck.t_end if t_end is None else t_end
    n_steps = steps_for(t_end - ck.t0, ck.dt, "t_end - t0")
    N = steps_for(dr.T, ck.dt, "T")
    dc = pl.delta.arrays()
    uc = pl.u.arrays()
    gm, ge = _pair(es.gamma)
    em, ee = _pair(es.eta)
    f = lambda a: np.ascontiguousarray(a, dtype=float)
    P = engine.EngineParams(
        n, p, q, sd, m,
        f(pl.A), f(pl.C), f(pl.D), f(pl.phi.coef), f(pl.G.coef), f(pl.theta_true),
        f(dc[0]), np.asarray(dc[1], np.int64), f(dc[2]), f(dc[3]), f(dc[4]), np.asarray(dc[5], np.int64),
        f(uc[0]), np.asarray(uc[1], np.int64), f(uc[2]), f(uc[3]), f(uc[4]), np.asarray(uc[5], np.int64),
        f(ob.L), f(ob.M), float(ob.mu),
        f(dr.K), f(pl.A - dr.K @ pl.C), float(dr.alpha), float(dr.T), float(dr.k),
        f(dr.annihilator.L1), f(dr.annihilator.HT), float(dr.s_norm),
        gm, ge, em, ee,
        s.theta_feed == "true", float(es.gate_threshold), f(dr.chi0 - pl.x0),
        float(ck.t0), float(ck.dt), int(N), int(n_steps), int(s.outputs.decimation),
        off,
    )
    X0 = np.zeros(lay["size"])
    X0[lay["x"]] = pl.x0
    X0[lay["xhat"]] = ob.xhat0
    X0[lay["chi"]] = dr.chi0
    X0[lay["Phi_K"]] = np.eye(n).reshape(-1)
    return P, X0, lay, aux


def simulate(s: Scenario, t_end: float | None = None, check: bool = True) -> TrajectoryLog:
    """Run ``s`` (optionally to an earlier ``t_end``) and return the decimated log."""
    if check:
        validate(s)
    P, X0, lay, aux = build_params(s, t_end)
    n_log = P.n_steps // P.dec + 1
    km, ke = _pair(s.estimator.kappa0)
    status, step, detail, logX, logK, logG, n = engine.run_core(P, X0, km, ke, n_log)
    if status != engine.STATUS_OK:
        t = P.t0 + step * P.dt
        if status == engine.STATUS_OVERFLOW:
            raise RuntimeFault(t, "estimator", f"exponent overflow in {OVERFLOW_PRODUCTS[detail]}")
        block = engine.BLOCKS[detail] if detail >= 0 else "kappa"
        raise RuntimeFault(t, block, "non-finite value")
    A = engine.postprocess_core(P, logX, logK, logG, n)
    cols = _columns(s, P, logX, logK, logG, A, lay, aux)
    return TrajectoryLog(cols, logX, A, lay, aux, s)


def _signed_log(m, e):
    """(sign, log10|m 2^e|) arrays; zero gives (0, -inf)."""
    m = np.asarray(m, float)
    e = np.asarray(e, float)
    sign = np.sign(m)
    with np.errstate(divide="ignore"):
        lg = np.where(m != 0.0, np.log10(np.abs(m)) + e * LOG10_2, -np.inf)
    return sign, lg


def _names(base: str, k: int, suffix: str = "") -> list[str]:
    return [f"{base}{suffix}"] if k == 1 else [f"{base}{i + 1}{suffix}" for i in range(k)]


def _columns(s, P, logX, logK, logG, A, lay, aux) -> dict:
    pl = s.plant
    n, p, q, sd, m = pl.n, pl.p, pl.q, pl.s, pl.m
    rows = A.shape[0]
    t = P.t0 + np.arange(rows) * (P.dec * P.dt)
    X = logX[:rows]
    cols: dict[str, np.ndarray] = {"t": t}

    def put(names, data):
        data = np.asarray(data).reshape(rows, -1)
        for i, nm in enumerate(names):
            cols[nm] = np.ascontiguousarray(data[:, i], dtype=float)

    x = X[:, lay["x"]]
    xh = X[:, lay["xhat"]]
    put([f"x{i + 1}" for i in range(n)], x)
    put([f"xhat{i + 1}" for i in range(n)], xh)
    put(_names("delta", sd), A[:, aux["delta"]])
    put(_names("deltahat", sd), A[:, aux["deltahat"]])
    th = A[:, aux["theta_hat"]]
    put([f"theta{i + 1}hat" for i in range(q)], th)
    wsign, wlog = _signed_log(A[:, aux["omega"]][:, 0], A[:, aux["omega"]][:, 1])
    cols["log10_abs_omega"] = wlog
    cols["omega_sign"] = wsign
    cols["errx"] = np.linalg.norm(x - xh, axis=1)
    put([f"errx{i + 1}" for i in range(n)], x - xh)
    cols["errdelta"] = np.linalg.norm(A[:, aux["delta"]] - A[:, aux["deltahat"]], axis=1)
    et = th - pl.theta_true
    put([f"errtheta{i + 1}" for i in range(q)], et)
    cols["errtheta"] = np.linalg.norm(et, axis=1)
    put(_names("y", p), A[:, aux["y"]])
    put(_names("u", m), A[:, aux["u"]])
    cols["z"] = A[:, aux["z"]][:, 0].copy()
    cols["ztilde"] = A[:, aux["ztilde"]][:, 0].copy()
    put([f"Y{i + 1}" for i in range(2 * q)], X[:, lay["Y"]])
    ksign, klog = _signed_log(logK[:rows, 0], logK[:rows, 1])
    cols["log10_abs_kappa"] = klog
    cols["kappa_sign"] = ksign
    dsign, dlog = _signed_log(A[:, aux["omega_dot"]][:, 0], A[:, aux["omega_dot"]][:, 1])
    cols["log10_abs_omegadot"] = dlog
    cols["omegadot_sign"] = dsign
    ge = A[:, aux["gram_eig"]]
    cols["c1_min"] = ge[:, 0].copy()
    cols["c1_max"] = ge[:, 1].copy()
    _, c3 = _signed_log(A[:, aux["mixing_det"]][:, 0], A[:, aux["mixing_det"]][:, 1])
    cols["log10_c3"] = c3
    csign, clog = _signed_log(A[:, aux["c4"]][:, 0], A[:, aux["c4"]][:, 1])
    cols["c4_sign"] = csign
    cols["log10_abs_c4"] = clog
    cols["gate"] = np.asarray(logG[:rows], float)
    cols["w"] = A[:, aux["w"]][:, 0].copy()
    return cols


# ---------------------------------------------------------------------------
# metrics


def _settle(t, v, thr):
    above = np.flatnonzero(~(v <= thr))
    if above.size == 0:
        return float(t[0])
    if above[-1] == v.size - 1:
        return math.inf
    return float(t[above[-1] + 1])


def compute_metrics(cols: dict, steady_fraction: float = 0.2, thresholds=(0.1, 0.1, 0.1)) -> MetricsReport:
    """Metrics from the trajectory columns only (works on a CSV read back in)."""
    t = np.asarray(cols["t"], float)
    start = t[-1] - steady_fraction * (t[-1] - t[0])
    w = t >= start
    ex, ed, et = (np.asarray(cols[k], float) for k in ("errx", "errdelta", "errtheta"))
    c4s = np.asarray(cols["c4_sign"], float)[w]
    c4l = np.asarray(cols["log10_abs_c4"], float)[w]
    # most negative value first, otherwise smallest positive
    if np.any(c4s < 0):
        i = int(np.argmax(np.where(c4s < 0, c4l, -np.inf)))
    elif np.any(c4s == 0):
        i = int(np.flatnonzero(c4s == 0)[0])
    else:
        i = int(np.argmin(c4l))
    return MetricsReport(
        window_start=float(start),
        mean_errx=float(np.mean(ex[w])), max_errx=float(np.max(ex[w])),
        mean_errdelta=float(np.mean(ed[w])), max_errdelta=float(np.max(ed[w])),
        mean_errtheta=float(np.mean(et[w])), max_errtheta=float(np.max(et[w])),
        settle_errx=_settle(t, ex, thresholds[0]),
        settle_errdelta=_settle(t, ed, thresholds[1]),
        settle_errtheta=_settle(t, et, thresholds[2]),
        c1_floor=float(np.min(np.asarray(cols["c1_min"], float)[w])),
        log10_c3_floor=float(np.min(np.asarray(cols["log10_c3"], float)[w])),
        c4_min_sign=float(c4s[i]),
        c4_min_log10=float(c4l[i]),
        log10_omega_floor=float(np.min(np.asarray(cols["log10_abs_omega"], float)[w])),
    )


def run_scenario(s: Scenario) -> tuple[TrajectoryLog, MetricsReport]:
    log = simulate(s)
    return log, compute_metrics(log.columns, s.outputs.steady_fraction)

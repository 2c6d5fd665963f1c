"""Scenario files: a YAML key/value tree describing one experiment.

Numbers may be written as YAML numbers or as strings (``"1e248"``); both are
parsed with ``float()`` on the decimal literal, except ``gamma`` and ``eta``
which accept any exponent.  See README.md for the full grammar.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ..drem import AnnihilatorConfig, duffing_annihilator
from ..matkit import LyapunovError, ScaledScalar, solve_lyapunov
from ..observer import ObserverConfig, duffing_observer
from ..plant import OutputMap, PlantModel, Signal, duffing_preset
from ..simkit import steps_for

SWEEP_PARAMS = ("T", "A_amp", "mu", "gamma", "k", "alpha")
# RK4 real-axis stability limit
RK4_LIMIT = 2.785


class ScenarioError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class DremConfig:
    K: np.ndarray
    alpha: float
    T: float
    k: float
    annihilator: AnnihilatorConfig
    chi0: np.ndarray
    s_norm: float = 1.0


@dataclass(frozen=True)
class EstimatorConfig:
    gamma: ScaledScalar
    kappa0: ScaledScalar
    eta: ScaledScalar
    gate_threshold: float = 0.0


@dataclass(frozen=True)
class ClockConfig:
    t0: float = 0.0
    dt: float = 1e-3
    t_end: float = 300.0


@dataclass(frozen=True)
class OutputConfig:
    csv: str | None = None
    metrics_csv: str | None = None
    decimation: int = 100
    plot_script: bool = False
    steady_fraction: float = 0.2


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple


@dataclass(frozen=True)
class Scenario:
    plant: PlantModel
    observer: ObserverConfig
    drem: DremConfig
    estimator: EstimatorConfig
    clock: ClockConfig = field(default_factory=ClockConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepSpec | None = None
    theta_feed: str = "estimate"
    preset: str | None = None
    A_amp: float | None = None
    name: str = "scenario"


def duffing_scenario(A_amp: float = 2.5, T: float = 30.0, **clock) -> Scenario:
    """The Duffing experiment with every gain at its published value."""
    return Scenario(
        plant=duffing_preset(A_amp),
        observer=duffing_observer(),
        drem=DremConfig(
            K=np.array([[30.5749], [64.3579]]), alpha=0.1, T=T, k=1.0,
            annihilator=duffing_annihilator(), chi0=np.zeros(2),
        ),
        estimator=EstimatorConfig(
            gamma=ScaledScalar.parse("1e248"), kappa0=ScaledScalar.parse(0), eta=ScaledScalar.parse("1e-130"),
        ),
        clock=ClockConfig(**clock),
        preset="duffing",
        A_amp=A_amp,
        name="duffing",
    )


# ---------------------------------------------------------------------------
# parsing


def _num(v, what: str) -> float:
    if isinstance(v, bool):
        raise ValueError(f"{what}: expected a number, got {v!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ValueError(f"{what}: expected a number, got {v!r}") from None


def _mat(v, what: str) -> np.ndarray:
    arr = np.array(v, dtype=object)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if what.endswith("(column)") else arr.reshape(1, -1)
    return np.vectorize(lambda e: _num(e, what), otypes=[float])(arr)


def _vec(v, what: str) -> np.ndarray:
    return np.array([_num(e, what) for e in np.atleast_1d(np.array(v, dtype=object)).reshape(-1)])


def _signal(spec, what: str) -> Signal:
    if spec is None:
        raise ValueError(f"{what} is required")
    comps = spec if isinstance(spec, list) else [spec]
    const = []
    terms = []
    for i, c in enumerate(comps):
        if not isinstance(c, dict):
            const.append(_num(c, what))
            continue
        const.append(_num(c.get("const", 0.0), what))
        for term in c.get("terms", []) or []:
            terms.append((i, _num(term.get("amp", 0.0), what), _num(term.get("freq", 0.0), what),
                          _num(term.get("phase", 0.0), what), term.get("kind", "sin")))
    return Signal.build(const, terms)


def _plant(spec: dict, problems: list) -> tuple[PlantModel | None, str | None, float | None]:
    preset = spec.get("preset")
    if preset is not None:
        if preset != "duffing":
            problems.append(f"unknown plant preset {preset!r}")
            return None, None, None
        try:
            A_amp = _num(spec.get("A_amp", 2.5), "plant.A_amp")
            model = duffing_preset(A_amp)
            # a preset may still override its disturbance and initial state
            if "delta" in spec:
                model = replace(model, delta=_signal(spec["delta"], "plant.delta"))
            if "x0" in spec:
                model = replace(model, x0=_vec(spec["x0"], "plant.x0"))
        except ValueError as exc:
            problems.append(f"plant: {exc}")
            return None, None, None
        return model, "duffing", A_amp
    try:
        A = _mat(spec["A"], "plant.A")
        C = _mat(spec["C"], "plant.C")
        D = _mat(spec["D"], "plant.D (column)")
        theta = _vec(spec["theta"], "plant.theta")
        x0 = _vec(spec["x0"], "plant.x0")
        delta = _signal(spec.get("delta"), "plant.delta")
        u = _signal(spec.get("u"), "plant.u")
        n, p, m, q = A.shape[0], C.shape[0], u.dim, theta.size
        phi = (OutputMap.from_expressions(spec["phi"], p, m) if "phi" in spec
               else OutputMap.zeros((n,), p, m))
        G = OutputMap.from_expressions(spec["G"], p, m) if "G" in spec else OutputMap.zeros((n, q), p, m)
        return PlantModel(A, C, D, phi, G, theta, delta, u, x0), None, None
    except KeyError as exc:
        problems.append(f"plant.{exc.args[0]} is required")
    except ValueError as exc:
        problems.append(f"plant: {exc}")
    return None, None, None


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario file must be a mapping at top level"])
    problems: list[str] = []
    plant, preset, A_amp = _plant(doc.get("plant") or {}, problems)
    duffing = preset == "duffing"
    base = duffing_scenario(A_amp or 2.5) if duffing else None

    obs = doc.get("observer") or {}
    observer = None
    try:
        if duffing:
            d = base.observer
            observer = ObserverConfig(
                L=_mat(obs["L"], "observer.L (column)") if "L" in obs else d.L,
                M=_mat(obs["M"], "observer.M") if "M" in obs else d.M,
                mu=_num(obs.get("mu", d.mu), "observer.mu"),
                xhat0=_vec(obs["xhat0"], "observer.xhat0") if "xhat0" in obs else d.xhat0,
            )
        elif plant is not None:
            observer = ObserverConfig(
                L=_mat(obs["L"], "observer.L (column)"), M=_mat(obs["M"], "observer.M"),
                mu=_num(obs["mu"], "observer.mu"),
                xhat0=_vec(obs["xhat0"], "observer.xhat0") if "xhat0" in obs else np.zeros(plant.n),
            )
    except KeyError as exc:
        problems.append(f"observer.{exc.args[0]} is required for a custom plant")
    except ValueError as exc:
        problems.append(f"observer: {exc}")
    theta_feed = obs.get("theta_feed", "estimate")
    if theta_feed not in ("estimate", "true"):
        problems.append("observer.theta_feed must be 'estimate' or 'true'")

    dr = doc.get("drem") or {}
    drem = None
    try:
        if duffing or plant is not None:
            d = base.drem if duffing else None
            K = _mat(dr["K"], "drem.K (column)") if "K" in dr else (d.K if d else None)
            if K is None:
                raise KeyError("K")
            if "L1T" in dr:
                ann = AnnihilatorConfig.build(_mat(dr["L1T"], "drem.L1T"),
                                              _mat(dr["HT"], "drem.HT") if "HT" in dr else None)
            elif d is not None:
                ann = d.annihilator
            else:
                raise KeyError("L1T")
            if "m" in dr and int(dr["m"]) != ann.m:
                problems.append(f"drem.m={dr['m']} disagrees with L1T ({ann.m})")
            drem = DremConfig(
                K=K,
                alpha=_num(dr.get("alpha", d.alpha if d else None), "drem.alpha"),
                T=_num(dr.get("T", d.T if d else None), "drem.T"),
                k=_num(dr.get("k", d.k if d else None), "drem.k"),
                annihilator=ann,
                chi0=_vec(dr["chi0"], "drem.chi0") if "chi0" in dr else np.zeros(plant.n if plant else 2),
                s_norm=_num(dr.get("s_norm", 1.0), "drem.s_norm"),
            )
    except KeyError as exc:
        problems.append(f"drem.{exc.args[0]} is required for a custom plant")
    except ValueError as exc:
        problems.append(f"drem: {exc}")

    es = doc.get("estimator") or {}
    estimator = None
    try:
        if not duffing and "gamma" not in es:
            raise KeyError("gamma")
        estimator = EstimatorConfig(
            gamma=ScaledScalar.parse(es.get("gamma", "1e248")),
            kappa0=ScaledScalar.parse(es.get("kappa0", 0)),
            eta=ScaledScalar.parse(es.get("eta", "1e-130")),
            gate_threshold=_num(es.get("gate_threshold", 0.0), "estimator.gate_threshold"),
        )
    except KeyError as exc:
        problems.append(f"estimator.{exc.args[0]} is required for a custom plant")
    except ValueError as exc:
        problems.append(f"estimator: {exc}")

    ck = doc.get("clock") or {}
    clock = None
    try:
        clock = ClockConfig(t0=_num(ck.get("t0", 0.0), "clock.t0"), dt=_num(ck.get("dt", 1e-3), "clock.dt"),
                            t_end=_num(ck.get("t_end", 300.0), "clock.t_end"))
    except ValueError as exc:
        problems.append(str(exc))

    out = doc.get("outputs") or {}
    outputs = None
    try:
        dec = out.get("decimation", 100)
        if isinstance(dec, bool) or int(dec) != _num(dec, "outputs.decimation"):
            raise ValueError("outputs.decimation must be an integer")
        outputs = OutputConfig(
            csv=out.get("csv"), metrics_csv=out.get("metrics_csv"), decimation=int(dec),
            plot_script=bool(out.get("plot_script", False)),
            steady_fraction=_num(out.get("steady_fraction", 0.2), "outputs.steady_fraction"),
        )
    except ValueError as exc:
        problems.append(str(exc))

    sweep = None
    if doc.get("sweep"):
        sw = doc["sweep"]
        try:
            sweep = SweepSpec(str(sw["param"]), tuple(sw.get("values") or ()))
        except KeyError:
            problems.append("sweep.param is required")

    if problems:
        raise ScenarioError(problems)
    scen = Scenario(plant, observer, drem, estimator, clock, outputs, sweep, theta_feed, preset, A_amp, name)
    validate(scen)
    return scen


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ScenarioError([f"cannot read {path}: {exc}"]) from None
    except yaml.YAMLError as exc:
        raise ScenarioError([f"YAML error in {path}: {exc}"]) from None
    scen = scenario_from_dict(doc or {}, name=path.stem)
    # relative output paths are relative to the scenario file
    out = scen.outputs
    fix = {k: str(path.parent / v) for k in ("csv", "metrics_csv")
           if (v := getattr(out, k)) and not os.path.isabs(v)}
    return replace(scen, outputs=replace(out, **fix)) if fix else scen


# ---------------------------------------------------------------------------
# validation


def _hurwitz_problem(M, what: str) -> str | None:
    try:
        solve_lyapunov(M, np.eye(M.shape[0]))
    except LyapunovError as exc:
        return f"{what} is not Hurwitz ({exc})"
    return None


def problems_of(s: Scenario) -> list[str]:
    out: list[str] = []
    pl, ob, dr, es, ck = s.plant, s.observer, s.drem, s.estimator, s.clock
    out += ob.check_against(pl)
    if not out:
        if (msg := _hurwitz_problem(pl.A + ob.L @ pl.C, "A + L C")):
            out.append(msg)
    if dr.K.shape != (pl.n, pl.p):
        out.append(f"drem.K must be {pl.n} x {pl.p}, got {dr.K.shape}")
    elif (msg := _hurwitz_problem(pl.A - dr.K @ pl.C, "A - K C")):
        out.append(msg)
    if dr.chi0.shape != (pl.n,):
        out.append(f"drem.chi0 must have length {pl.n}")
    if dr.annihilator.q != pl.q:
        out.append(f"L1T/HT are sized for q={dr.annihilator.q} but theta has {pl.q} entries")
    for name, v in (("drem.alpha", dr.alpha), ("drem.k", dr.k), ("drem.T", dr.T), ("drem.s_norm", dr.s_norm)):
        if not v > 0:
            out.append(f"{name} must be positive")
    if es.gamma.sign <= 0:
        out.append("estimator.gamma must be positive")
    if es.eta.sign <= 0:
        out.append("estimator.eta must be positive")
    if not ck.dt > 0:
        out.append("clock.dt must be positive")
    elif not ck.t_end > ck.t0:
        out.append("clock.t_end must exceed clock.t0")
    else:
        for what, dur in (("drem.T", dr.T), ("t_end - t0", ck.t_end - ck.t0)):
            try:
                steps_for(dur, ck.dt, what)
            except ValueError as exc:
                out.append(str(exc))
        # explicit RK4 on the fastest linear mode
        if not out:
            fast = {
                "observer error (A + L C - mu D M C)": pl.A + ob.L @ pl.C - ob.mu * pl.D @ ob.M @ pl.C,
                "filter (A - K C)": pl.A - dr.K @ pl.C,
            }
            for what, M in fast.items():
                rho = float(np.max(np.abs(np.linalg.eigvals(M))))
                if rho * ck.dt >= RK4_LIMIT:
                    out.append(f"dt={ck.dt} is outside the RK4 stability region for the {what} "
                               f"(|eig| = {rho:.4g}; need dt < {RK4_LIMIT / rho:.3g})")
            for what, g in (("drem.alpha", dr.alpha), ("drem.k", dr.k)):
                if g * ck.dt >= RK4_LIMIT:
                    out.append(f"dt too large for {what}={g}")
    oc = s.outputs
    if oc.decimation < 1:
        out.append("outputs.decimation must be >= 1")
    if not 0 < oc.steady_fraction <= 1:
        out.append("outputs.steady_fraction must be in (0, 1]")
    for path in (oc.csv, oc.metrics_csv):
        if path and (msg := _unwritable(path)):
            out.append(msg)
    if s.sweep is not None and s.sweep.param not in SWEEP_PARAMS:
        out.append(f"sweep.param must be one of {', '.join(SWEEP_PARAMS)}")
    if s.sweep is not None and s.sweep.param == "A_amp" and s.preset != "duffing":
        out.append("sweeping A_amp needs the duffing preset")
    return out


def _unwritable(path: str) -> str | None:
    parent = Path(path).resolve().parent
    try:
        parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return f"cannot create output directory {parent}: {exc}"
    if not os.access(parent, os.W_OK):
        return f"output directory {parent} is not writable"
    if Path(path).is_dir():
        return f"output path {path} is a directory"
    return None


def validate(s: Scenario) -> None:
    problems = problems_of(s)
    if problems:
        raise ScenarioError(problems)


def with_param(s: Scenario, param: str, value) -> Scenario:
    """Copy of ``s`` with one sweepable parameter replaced."""
    if param == "T":
        return replace(s, drem=replace(s.drem, T=float(value)))
    if param == "alpha":
        return replace(s, drem=replace(s.drem, alpha=float(value)))
    if param == "k":
        return replace(s, drem=replace(s.drem, k=float(value)))
    if param == "mu":
        return replace(s, observer=replace(s.observer, mu=float(value)))
    if param == "gamma":
        return replace(s, estimator=replace(s.estimator, gamma=ScaledScalar.parse(value)))
    if param == "A_amp":
        if s.preset != "duffing":
            raise ScenarioError(["sweeping A_amp needs the duffing preset"])
        u = duffing_preset(float(value)).u
        return replace(s, plant=replace(s.plant, u=u), A_amp=float(value))
    raise ScenarioError([f"unknown sweep parameter {param!r}"])


def with_outputs(s: Scenario, **kw) -> Scenario:
    return replace(s, outputs=replace(s.outputs, **kw))


def deepcopy_scenario(s: Scenario) -> Scenario:
    return copy.deepcopy(s)

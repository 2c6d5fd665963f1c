"""Parameter sweeps: one isolated run per value, one comparison table."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .outputs import emit_outputs, write_plot_script, write_table_csv
from .runner import MetricsReport, RuntimeFault, run_scenario
from .scenario import SWEEP_PARAMS, Scenario, ScenarioError, validate, with_outputs, with_param

METRIC_FIELDS = list(MetricsReport.__dataclass_fields__)


@dataclass(frozen=True)
class SweepResult:
    param: str
    value: object
    report: MetricsReport | None
    error: str | None
    csv: str | None = None

    @property
    def ok(self) -> bool:
        return self.report is not None

    def row(self) -> dict:
        out = {"param": self.param, "value": str(self.value), "status": "ok" if self.ok else self.error}
        if self.ok:
            out.update(self.report.as_dict())
        return out


def _suffixed(path: str | None, param: str, value) -> str | None:
    if not path:
        return None
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{param}={value}{p.suffix}"))


def _one(args) -> SweepResult:
    s, param, value = args
    try:
        s = with_param(s, param, value)
        oc = s.outputs
        s = with_outputs(s, csv=_suffixed(oc.csv, param, value),
                         metrics_csv=_suffixed(oc.metrics_csv, param, value), plot_script=False)
        validate(s)
        log, rep = run_scenario(s)
        emit_outputs(log, rep, s)
        return SweepResult(param, value, rep, None, s.outputs.csv)
    except (ScenarioError, RuntimeFault, ValueError) as exc:
        return SweepResult(param, value, None, f"{type(exc).__name__}: {exc}".replace("\n", " "))


def sweep(s: Scenario, param: str, values, workers: int = 1, table: str | None = None) -> list[SweepResult]:
    """Run ``s`` once per value of ``param``; a failing value does not stop the others."""
    if param not in SWEEP_PARAMS:
        raise ScenarioError([f"sweep parameter must be one of {', '.join(SWEEP_PARAMS)}, got {param!r}"])
    jobs = [(s, param, v) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    if table:
        write_table_csv([r.row() for r in results], table, ["param", "value", "status"] + METRIC_FIELDS)
    runs = [(f"{param}={r.value}", r.csv) for r in results if r.csv]
    if s.outputs.plot_script and runs:
        write_plot_script(runs, str(Path(runs[0][1]).parent / f"sweep_{param}_plot.py"))
    return results

"""Command line: ``run``, ``sweep`` and ``check`` on a scenario file.

Exit codes: 0 success, 2 invalid scenario, 3 runtime fault.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from ..observer import suggest_matching, verify_matching
from ..simkit import steps_for
from .outputs import emit_outputs
from .runner import RuntimeFault, run_scenario
from .scenario import SWEEP_PARAMS, ScenarioError, load_scenario, with_outputs
from .sweep import sweep

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAULT = 3


def _print_metrics(rep, out) -> None:
    for k, v in rep.as_dict().items():
        print(f"  {k:<20} {v!r}", file=out)


def cmd_run(args) -> int:
    s = load_scenario(args.scenario)
    if args.csv:
        s = with_outputs(s, csv=args.csv)
    log, rep = run_scenario(s)
    written = emit_outputs(log, rep, s)
    print(f"{s.name}: {len(log)} rows, t in [{float(log.t[0])!r}, {float(log.t[-1])!r}]")
    _print_metrics(rep, sys.stdout)
    for w in written:
        print(f"wrote {w}")
    return EXIT_OK


def _values(raw: list[str]) -> list[str]:
    out = []
    for chunk in raw:
        out += [v for v in chunk.replace(",", " ").split() if v]
    return out


def cmd_sweep(args) -> int:
    s = load_scenario(args.scenario)
    param = args.param or (s.sweep.param if s.sweep else None)
    if param is None:
        raise ScenarioError(["no sweep parameter: pass --param or add a sweep section"])
    values = _values(args.values) if args.values is not None else [str(v) for v in (s.sweep.values if s.sweep else ())]
    table = args.out or (str(s.outputs.metrics_csv).replace(".csv", "") + f"_sweep_{param}.csv"
                         if s.outputs.metrics_csv else None)
    results = sweep(s, param, values, workers=args.workers, table=table)
    for r in results:
        if r.ok:
            print(f"{param}={r.value}: steady |theta err| mean {r.report.mean_errtheta!r}, "
                  f"|delta err| mean {r.report.mean_errdelta!r}, log10|omega| floor {r.report.log10_omega_floor!r}")
        else:
            print(f"{param}={r.value}: FAILED {r.error}")
    if table:
        print(f"wrote {table}")
    return EXIT_OK


def cmd_check(args) -> int:
    s = load_scenario(args.scenario)
    pl, ob, dr, es, ck = s.plant, s.observer, s.drem, s.estimator, s.clock
    print(f"scenario {s.name}: valid")
    print(f"  n={pl.n} p={pl.p} q={pl.q} s={pl.s} m(u)={pl.m} m(selectors)={dr.annihilator.m}")
    print(f"  eig(A+LC) = {np.linalg.eigvals(pl.A + ob.L @ pl.C)}")
    print(f"  eig(A-KC) = {np.linalg.eigvals(pl.A - dr.K @ pl.C)}")
    print("output matching (D'P = MC with (A+LC)'P + P(A+LC) = -Q):")
    sug = suggest_matching(pl.A, pl.C, pl.D, ob.L)
    rep = verify_matching(pl.A, pl.C, pl.D, ob.L, sug.P, sug.Q, ob.M)
    print(f"  best diagonal Q = {np.diag(sug.Q)!r}, M = {sug.M.ravel()!r}, "
          f"relative residual {sug.relative_residual:.3g}")
    print(f"  configured M = {ob.M.ravel()!r}: matching residual {rep.matching_residual:.3g} "
          f"with that P ({'passes' if rep.passed else 'does not pass'})")
    print("monitors:")
    print(f"  gamma={es.gamma} kappa0={es.kappa0} eta={es.eta} gate_threshold={es.gate_threshold!r}")
    print(f"  window T={dr.T!r} ({steps_for(dr.T, ck.dt)} steps), k={dr.k!r}, alpha={dr.alpha!r}")
    n_steps = steps_for(ck.t_end - ck.t0, ck.dt)
    print(f"  clock t0={ck.t0!r} dt={ck.dt!r} t_end={ck.t_end!r}: {n_steps} steps, "
          f"{n_steps // s.outputs.decimation + 1} logged rows")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drem-observer", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one scenario and write its outputs")
    r.add_argument("scenario")
    r.add_argument("--csv", help="override the trajectory CSV path")
    r.set_defaults(func=cmd_run)
    sw = sub.add_parser("sweep", help="run a scenario once per parameter value")
    sw.add_argument("scenario")
    sw.add_argument("--param", choices=SWEEP_PARAMS)
    sw.add_argument("--values", nargs="*", help="values, comma or space separated")
    sw.add_argument("--workers", type=int, default=1)
    sw.add_argument("--out", help="comparison CSV path")
    sw.set_defaults(func=cmd_sweep)
    c = sub.add_parser("check", help="validate a scenario and report the matching conditions")
    c.add_argument("scenario")
    c.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except RuntimeFault as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())

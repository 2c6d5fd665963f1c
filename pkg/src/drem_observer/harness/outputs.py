"""CSV files and plot-script emission.

Floats are written with ``repr`` so a CSV read back with ``float()`` gives the
same doubles.  Every file is written to a temporary sibling and renamed, so an
aborted run never leaves a partial file behind.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        # mkstemp files are private; give the result the usual umask mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    return repr(float(v))


def trajectory_text(columns: dict) -> str:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in data.tolist():
        buf.write(",".join(map(repr, row)) + "\n")
    return buf.getvalue()


def write_trajectory_csv(columns: dict, path) -> None:
    _atomic_write(path, trajectory_text(columns))


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    return {name: data[:, i].copy() for i, name in enumerate(header)}


def write_table_csv(rows: list[dict], path, header: list[str] | None = None) -> None:
    if header is None:
        header = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(k, "")) for k in header])
    _atomic_write(path, buf.getvalue())


def read_table_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_metrics_csv(report, path) -> None:
    write_table_csv([report.as_dict()], path)


PLOT_TEMPLATE = '''"""Plots regenerated from the trajectory CSVs listed below.

Run with:  python {name}
"""
import csv

import matplotlib.pyplot as plt

RUNS = {runs!r}


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {{k: [float(r[k]) for r in rows] for k in rows[0]}}


data = [(label, load(path)) for label, path in RUNS]

fig, ax = plt.subplots()
for label, d in data:
    ax.plot(d["t"], d["log10_abs_omega"], label=label)
ax.set_xlabel("t, s")
ax.set_ylabel("log10 |omega|")
ax.legend()
fig.savefig("{stem}_omega.png", dpi=150)

fig, axes = plt.subplots(4, 1, sharex=True, figsize=(7, 9))
for label, d in data:
    axes[0].plot(d["t"], [abs(v) for v in d["errx2"]], label=label)
    axes[1].plot(d["t"], d["errdelta"], label=label)
    axes[2].plot(d["t"], d["errtheta1"], label=label)
    axes[3].plot(d["t"], d["errtheta2"], label=label)
for a, name in zip(axes, ["|x2 error|", "|delta error|", "theta1 error", "theta2 error"]):
    a.set_ylabel(name)
axes[-1].set_xlabel("t, s")
axes[0].legend()
fig.savefig("{stem}_errors.png", dpi=150)
plt.show()
'''


def write_plot_script(runs: list[tuple[str, str]], path) -> None:
    """A standalone matplotlib program plotting ``log10|omega|`` and the error panels."""
    path = Path(path)
    runs = [(label, str(Path(p).resolve())) for label, p in runs]
    _atomic_write(path, PLOT_TEMPLATE.format(name=path.name, runs=runs, stem=path.stem))


def emit_outputs(log, report, s) -> list[str]:
    """Write whatever ``s.outputs`` asks for; returns the paths written."""
    oc = s.outputs
    written = []
    if oc.csv:
        write_trajectory_csv(log.columns, oc.csv)
        written.append(oc.csv)
    if oc.metrics_csv:
        write_metrics_csv(report, oc.metrics_csv)
        written.append(oc.metrics_csv)
    if oc.plot_script and oc.csv:
        script = str(Path(oc.csv).with_suffix("")) + "_plot.py"
        write_plot_script([(s.name, oc.csv)], script)
        written.append(script)
    return written

"""Average and worst-case linearization errors, and Table-I-style rendering.

Errors are absolute deviations ``|y_hat - y|`` in p.u.  ``avg`` is the mean
over every (sample, row) pair and ``wc`` the joint maximum, so each
(model, level) pair yields one scalar of each.  Tables print values in
units of 1e-3 p.u. with three significant digits.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .lpfcore import LinearPFModel, predict

UNIT = 1e-3
METHOD_ORDER = ("M1", "M2", "LS")


@dataclass
class ErrorReport:
    method: str
    level: float
    avg: float
    wc: float
    row_avg: np.ndarray
    row_wc: np.ndarray
    n_samples: int
    n_rows: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.row_avg = np.asarray(self.row_avg, dtype=float)
        self.row_wc = np.asarray(self.row_wc, dtype=float)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "level": self.level,
            "avg": self.avg,
            "wc": self.wc,
            "row_avg": self.row_avg.tolist(),
            "row_wc": self.row_wc.tolist(),
            "n_samples": self.n_samples,
            "n_rows": self.n_rows,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ErrorReport:
        return cls(d["method"], float(d["level"]), float(d["avg"]), float(d["wc"]), d["row_avg"], d["row_wc"],
                   int(d["n_samples"]), int(d["n_rows"]), d.get("meta", {}))


def evaluate(model: LinearPFModel, data, method: str | None = None, level: float | None = None) -> ErrorReport:
    """Errors of ``model`` on an evaluation dataset."""
    X = np.asarray(data.X, dtype=float)
    Y = np.asarray(data.Y, dtype=float)
    if X.shape[1] != model.map.n_x or Y.shape[1] != model.map.n_y:
        raise ValueError(f"dataset ({X.shape[1]} inputs, {Y.shape[1]} outputs) does not match the model "
                         f"({model.map.n_x}, {model.map.n_y})")
    if data.map is not None and data.map != model.map:
        raise ValueError("dataset and model use different variable maps")
    if X.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    E = np.abs(predict(model, X) - Y)
    meta = dict(getattr(data, "meta", {}) or {})
    if level is None:
        level = float(meta.get("level", float("nan")))
    # sorted sums keep the mean independent of sample order
    per_row = np.sort(E, axis=0)
    row_avg = per_row.sum(axis=0) / E.shape[0]
    avg = float(np.sort(E.ravel()).sum() / E.size)
    return ErrorReport(method or model.method or "model", float(level), avg, float(E.max()),
                       row_avg, E.max(axis=0), E.shape[0], E.shape[1],
                       {"eval": {k: meta[k] for k in ("case", "seed", "level", "K", "pct") if k in meta}})


def _sig3(v: float) -> str:
    if not math.isfinite(v):
        return "nan"
    if v == 0:
        return "0.00"
    digits = 3 - int(math.floor(math.log10(abs(v)))) - 1
    return f"{round(v, digits):.{max(digits, 0)}f}"


def _order(methods):
    known = [m for m in METHOD_ORDER if m in methods]
    return known + sorted(m for m in methods if m not in METHOD_ORDER)


def table_cells(reports):
    """``(methods, rows)`` with rows ``(label, {method: value in 1e-3 p.u.})``."""
    methods = _order({r.method for r in reports})
    levels = sorted({r.level for r in reports})
    index = {(r.method, r.level): r for r in reports}
    rows = []
    for stat in ("avg", "wc"):
        for lv in levels:
            label = f"{'Avg.' if stat == 'avg' else 'WC.'} {lv * 100:g}%"
            rows.append((label, stat, lv, {m: getattr(index[(m, lv)], stat) / UNIT
                                           for m in methods if (m, lv) in index}))
    return methods, rows


def render_table(reports, fmt: str = "markdown") -> str:
    """Render reports as a markdown, CSV or JSON table (values in 1e-3 p.u.)."""
    reports = list(reports)
    methods, rows = table_cells(reports)
    if fmt in ("markdown", "md"):
        out = ["| Error (x1e-3 p.u.) | " + " | ".join(methods) + " |" if methods else "| Error (x1e-3 p.u.) |",
               "|---|" + "---|" * len(methods)]
        for label, _, _, vals in rows:
            out.append(f"| {label} | " + " | ".join(_sig3(vals[m]) if m in vals else "" for m in methods) + " |")
        return "\n".join(out) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "level"] + methods)
        for _, stat, lv, vals in rows:
            w.writerow([stat, lv] + [_sig3(vals[m]) if m in vals else "" for m in methods])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps({
            "units": "1e-3 p.u.",
            "methods": methods,
            "rows": [{"metric": stat, "level": lv, "values": {m: float(_sig3(v)) for m, v in vals.items()}}
                     for _, stat, lv, vals in rows],
            "reports": [r.to_dict() for r in sorted(reports, key=lambda r: (methods.index(r.method), r.level))],
        }, indent=1, sort_keys=True)
    raise ValueError(f"unknown format {fmt!r}")

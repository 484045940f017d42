"""CSV / markdown tables: parameters, dice, step times and pairwise p-values."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..models.presets import reference_params


@dataclass
class BenchReport:
    arch: str
    preset: str
    param_count: int
    timing: object | None = None  # TimingRecord
    dice: list[float] = field(default_factory=list)

    def __post_init__(self):
        if any(not (0.0 <= d <= 1.0) for d in self.dice):
            raise ValueError(f"{self.arch}/{self.preset}: dice values must lie in [0, 1]")


def _order(items):
    seen = []
    for it in items:
        if it not in seen:
            seen.append(it)
    return seen


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _md(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(v) for v in r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def params_table(reports):
    archs, presets = _order(r.arch for r in reports), _order(r.preset for r in reports)
    cell = {(r.arch, r.preset): r.param_count for r in reports}
    return ["architecture", *presets], [[a, *[cell.get((a, p)) for p in presets]] for a in archs]


def dice_table(reports):
    archs, presets = _order(r.arch for r in reports), _order(r.preset for r in reports)
    cell = {(r.arch, r.preset): (float(np.mean(r.dice)) if r.dice else None) for r in reports}
    return ["architecture", *presets], [[a, *[cell.get((a, p)) for p in presets]] for a in archs]


TIMING_HEADER = ["architecture", "preset", "batch", "height", "width", "params", "reps", "warmup",
                 "forward_ms_median", "forward_ms_iqr", "step_ms_median", "step_ms_iqr", "threads", "dtype"]


def timing_table(reports):
    rows = []
    for r in reports:
        t = r.timing
        if t is None:
            continue
        rows.append([r.arch, r.preset, t.batch_size, t.input_hw[0], t.input_hw[1], r.param_count, t.reps, t.warmup,
                     t.forward_median, t.forward_iqr, t.step_median, t.step_iqr,
                     t.fingerprint.get("threads"), t.fingerprint.get("dtype")])
    return TIMING_HEADER, rows


def pvalue_table(names, matrix):
    return ["architecture", *names], [[n, *[None if math.isnan(v) else float(v) for v in row]]
                                      for n, row in zip(names, np.asarray(matrix, dtype=float))]


def _md_params(header, rows):
    presets = header[1:]
    out = []
    for a, *vals in rows:
        cells = []
        for p, v in zip(presets, vals):
            if v is None:
                cells.append("")
                continue
            ref = reference_params(a, p) if a else None
            s = f"{v / 1e6:.2f}M"
            cells.append(s + (f" ({v / 1e6 - ref:+.2f} vs {ref:.2f})" if ref else ""))
        out.append([a, *cells])
    return out


def emit_report(reports, out_dir, formats=("csv", "markdown"), pvalues=None) -> list[Path]:
    """Write params/dice/timing (and p-value) tables; returns the written paths."""
    reports = list(reports)
    if not reports:
        raise ValueError("emit_report: empty report set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {"params": params_table(reports)}
    if any(r.dice for r in reports):
        tables["dice"] = dice_table(reports)
    if any(r.timing is not None for r in reports):
        tables["timing"] = timing_table(reports)
    if pvalues is not None:
        tables["pvalues"] = pvalue_table(*pvalues)
    written = []
    for name, (header, rows) in tables.items():
        if "csv" in formats:
            p = out / f"{name}.csv"
            p.write_text(_csv(header, rows))
            written.append(p)
        if "markdown" in formats:
            if name == "params":
                md_rows = _md_params(header, rows)
            else:
                md_rows = [[r[0], *[(f"{v:.4g}" if isinstance(v, float) else ("" if v is None else v))
                                    for v in r[1:]]] for r in rows]
            p = out / f"{name}.md"
            p.write_text(_md(header, md_rows))
            written.append(p)
    return written


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


__all__ = ["BenchReport", "TIMING_HEADER", "dice_table", "emit_report", "params_table", "pvalue_table",
           "read_csv_table", "timing_table"]

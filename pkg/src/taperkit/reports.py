"""CSV and manifest writers for traces and population sweeps.

Floats are rendered with repr (shortest round-trip form), so identical
inputs always produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

from .experiments import CurvePoint, constants_hash
from .simulate import SimulationTrace, TraceMetrics


def fmt_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(path: str | Path, trace: SimulationTrace) -> None:
    """Columns t, u, y, y_nat, y_min, phase; the final row has no dose."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "u", "y", "y_nat", "y_min", "phase"])
        T = trace.horizon
        for t in range(T + 1):
            phase = "warmup" if t < trace.warmup_len else "taper"
            u = trace.doses[t] if t < T else None
            w.writerow([
                t, fmt_value(u), fmt_value(trace.wellbeing[t]), fmt_value(trace.nat[t]),
                fmt_value(trace.y_min_path[t]), phase,
            ])


def write_metrics_json(path: str | Path, metrics: TraceMetrics | None, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    if metrics is None:
        doc["warmup_only"] = True
    else:
        doc.update({
            "avg_cum_dose": metrics.avg_cum_dose,
            "avg_cum_violation": metrics.avg_cum_violation,
            "fully_tapered": metrics.fully_tapered,
            "taper_time": metrics.taper_time,
            "long_term_violation": list(metrics.long_term_violation),
        })
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


UNIT_COLUMNS = [
    "system", "protocol", "param", "unit", "y_min",
    "avg_cum_violation", "avg_cum_dose", "fully_tapered", "taper_time",
]


def write_unit_rows_csv(path: str | Path, rows: Iterable[dict]) -> None:
    """Long-format population file, one row per (protocol, param, unit)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(UNIT_COLUMNS)
        for row in rows:
            w.writerow([fmt_value(row[c]) for c in UNIT_COLUMNS])


CURVE_COLUMNS = [
    "system", "protocol", "param", "mean_violation", "sem_violation",
    "mean_dose", "sem_dose", "fraction_fully_tapered", "n_units",
]


def write_curves_csv(path: str | Path, system_id: str, points: Sequence[CurvePoint], extras: dict | None = None) -> None:
    """Summary of curve points, one row per swept value."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        header = list(CURVE_COLUMNS)
        extra_cols = sorted(extras) if extras else []
        w.writerow(header + extra_cols)
        for p in points:
            row = [
                system_id, p.family, fmt_value(p.param), fmt_value(p.mean_violation),
                fmt_value(p.sem_violation), fmt_value(p.mean_dose), fmt_value(p.sem_dose),
                fmt_value(p.fraction_fully_tapered), p.n_units,
            ]
            w.writerow(row + [fmt_value(extras[c]) for c in extra_cols])


def write_manifest(path: str | Path, seed: int, settings: dict) -> None:
    from . import __version__

    doc = {
        "seed": seed,
        "constants_sha256": constants_hash(),
        "version": __version__,
        "settings": settings,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

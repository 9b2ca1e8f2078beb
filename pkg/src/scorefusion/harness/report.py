"""Report writing: ``report.json`` (everything) and ``report.csv`` (one row per result).

Files are rendered from plain data only, with sorted keys and no timestamps,
so rerunning a command with the same configuration gives byte-identical
output.  Persisted numbers are fractions; percentages only appear in the
console summary.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..metrics import MetricReport

METRIC_COLUMNS = ("rank1", "map", "tar", "fnir_mean", "fnir_std", "overall")


@dataclass
class ResultRow:
    """One evaluated configuration: a label, its swept parameters and its metrics."""

    label: str
    report: MetricReport
    params: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        r = self.report
        return {
            "rank1": r.rank1,
            "map": r.map,
            "tar": r.tar,
            "fnir_mean": r.fnir_mean,
            "fnir_std": r.fnir_std,
            "overall": r.overall,
        }

    def as_dict(self) -> dict:
        return {"label": self.label, "params": self.params, "metrics": self.metrics(), "report": self.report.as_dict()}


@dataclass
class Results:
    command: str
    config: dict
    seeds: dict
    rows: list[ResultRow]
    sort_by: str | None = None
    extra: dict = field(default_factory=dict)

    def ordered_rows(self) -> list[ResultRow]:
        if self.sort_by is None:
            return list(self.rows)
        return sorted(self.rows, key=lambda r: r.params[self.sort_by])


def _clean(obj):
    """Make values JSON-safe: tuples become lists and non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalar
        return _clean(obj.item())
    return obj


def render_json(results: Results) -> str:
    doc = {
        "command": results.command,
        "config": results.config,
        "seeds": results.seeds,
        "rows": [r.as_dict() for r in results.ordered_rows()],
        "extra": results.extra,
    }
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def render_csv(results: Results) -> str:
    rows = results.ordered_rows()
    param_cols = sorted({k for r in rows for k in r.params})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", *param_cols, *METRIC_COLUMNS])
    for r in rows:
        metrics = r.metrics()
        writer.writerow(
            [r.label, *(_fmt(r.params.get(c, "")) for c in param_cols), *(f"{metrics[c]:.6f}" for c in METRIC_COLUMNS)]
        )
    return buf.getvalue()


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return "+".join(str(v) for v in value)
    return str(value)


def emit_report(results: Results, out_dir: str | Path) -> list[Path]:
    """Write ``report.json`` and ``report.csv`` into ``out_dir``; returns the paths written."""
    if not results.rows:
        raise ValueError("nothing to report: results have no rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "report.json", out_dir / "report.csv"]
    paths[0].write_text(render_json(results), encoding="utf-8")
    paths[1].write_text(render_csv(results), encoding="utf-8")
    return paths


def summary_table(rows: Sequence[ResultRow]) -> str:
    """Console table with metrics rendered as percentages."""
    width = max([len(r.label) for r in rows] + [5])
    lines = [f"{'label':<{width}}  {'Rank1':>7} {'mAP':>7} {'TAR':>7} {'FNIR':>14} {'overall':>8}"]
    for r in rows:
        m = r.report
        fnir = f"{100 * m.fnir_mean:.2f}±{100 * m.fnir_std:.2f}"
        lines.append(
            f"{r.label:<{width}}  {100 * m.rank1:7.2f} {100 * m.map:7.2f} {100 * m.tar:7.2f} {fnir:>14} {m.overall:8.4f}"
        )
    return "\n".join(lines)

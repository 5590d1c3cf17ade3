"""Serialize metric rows and ablation comparisons to JSON, Markdown and CSV."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .errors import DataError
from .metrics import (
    METRIC_NAMES,
    METRIC_TITLES,
    MetricsReport,
    format_signed,
    format_value,
    reports_to_markdown,
)

FORMATS = ("markdown", "json", "csv")
SUFFIX = {"markdown": ".md", "json": ".json", "csv": ".csv"}


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def metrics_document(reports, config_fingerprint: str | None = None, **extra) -> dict:
    return {"kind": "metrics", "config_fingerprint": config_fingerprint,
            "rows": [r.to_dict() for r in reports], **extra}


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "n", *METRIC_NAMES])
    for r in reports:
        w.writerow([r.group_key, r.n, *[format_value(r.value(m)) for m in METRIC_NAMES]])
    return buf.getvalue()


def _mean_sd(agg: dict | None) -> str:
    if agg is None:
        return "n/a"
    sd = agg.get("sd")
    return f"{agg['mean']:.4f} ± {sd:.4f}" if sd is not None else f"{agg['mean']:.4f}"


def ablation_markdown(doc: dict) -> str:
    """Two Table-1-shaped blocks (converged folds only, all folds) with Improvement rows."""
    header = "| Method | " + " | ".join(METRIC_TITLES[m] for m in METRIC_NAMES) + " |"
    rule = "|---|" + "|".join([":---:"] * len(METRIC_NAMES)) + "|"
    out = []
    for scope, title in (("converged_only", "Converged folds only"), ("all_folds", "All folds")):
        out += [f"### {title}", "", header, rule]
        for arm in doc["arms"]:
            aggs = arm["aggregates"][scope]
            cells = [_mean_sd(None if aggs is None else aggs.get(m)) for m in METRIC_NAMES]
            out.append(f"| crop ratio {arm['ratio']:g} | " + " | ".join(cells) + " |")
        for cmp in doc["improvements"][scope]:
            delta = cmp["delta"]
            cells = ["n/a" if delta is None or delta.get(m) is None else format_signed(delta[m]) for m in METRIC_NAMES]
            label = "Improvement" if len(doc["improvements"][scope]) == 1 else f"Improvement ({cmp['ratio']:g} vs {cmp['baseline']:g})"
            out.append(f"| **{label}** | " + " | ".join(cells) + " |")
        out.append("")
    out.append("### Fold convergence")
    out.append("")
    for arm in doc["arms"]:
        flags = ", ".join("ok" if f else "fail" for f in arm["converged"])
        out.append(f"- crop ratio {arm['ratio']:g}: {flags}")
    return "\n".join(out) + "\n"


def ablation_csv(doc: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scope", "method", *[f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "sd")]])
    for scope in ("converged_only", "all_folds"):
        for arm in doc["arms"]:
            aggs = arm["aggregates"][scope] or {}
            row = []
            for m in METRIC_NAMES:
                a = aggs.get(m)
                row += [format_value(a["mean"]) if a else "n/a", format_value(a["sd"]) if a else "n/a"]
            w.writerow([scope, f"ratio_{arm['ratio']:g}", *row])
        for cmp in doc["improvements"][scope]:
            d = cmp["delta"] or {}
            w.writerow([scope, f"improvement_{cmp['ratio']:g}_vs_{cmp['baseline']:g}",
                        *[x for m in METRIC_NAMES for x in ((format_signed(d[m]) if d.get(m) is not None else "n/a"), "")]])
    return buf.getvalue()


def render(doc: dict, fmt: str) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
    if fmt == "json":
        return _dumps(doc)
    kind = doc.get("kind", "metrics")
    if kind == "ablation":
        return ablation_markdown(doc) if fmt == "markdown" else ablation_csv(doc)
    rows = doc.get("rows") or []
    if not rows:
        raise ValueError("empty metrics list")
    reports = [MetricsReport.from_dict(r) for r in rows]
    first = "Fold" if doc.get("grouping") == "fold" else "Domain"
    return reports_to_markdown(reports, first_column=first) if fmt == "markdown" else reports_to_csv(reports)


def emit_report(doc: dict, fmt: str, path) -> Path:
    path = Path(path)
    text = render(doc, fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def read_document(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"metrics artifact not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON metrics artifact ({exc})") from None

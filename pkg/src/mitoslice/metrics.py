"""Confusion counts, balanced accuracy, ROC AUC, per-domain rows and fold aggregation.

Positive class is AMF (label 1). A metric that is undefined for its inputs
(no positives, no negatives, a single class for AUC) is reported as ``None``
and listed in ``MetricsReport.undefined``; it is never silently 0 or NaN.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

METRIC_NAMES = ("roc_auc", "accuracy", "sensitivity", "specificity", "balanced_accuracy")
METRIC_TITLES = {
    "roc_auc": "ROC AUC",
    "accuracy": "Accuracy",
    "sensitivity": "Sensitivity",
    "specificity": "Specificity",
    "balanced_accuracy": "Balanced Accuracy",
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class Rates:
    sensitivity: float | None
    specificity: float | None
    accuracy: float | None


@dataclass
class MetricsReport:
    group_key: str
    n: int
    roc_auc: float | None
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    balanced_accuracy: float | None
    counts: ConfusionCounts | None = None
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = asdict(self.counts) if self.counts is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        if d.get("counts") is not None:
            d["counts"] = ConfusionCounts(**d["counts"])
        d.setdefault("undefined", [n for n in METRIC_NAMES if d.get(n) is None])
        return cls(**d)

    def value(self, name: str) -> float | None:
        return getattr(self, name)


def _as_binary(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{what} must be binary (0/1)")
    return arr.astype(int)


def confusion(true_labels, pred_labels) -> ConfusionCounts:
    y = _as_binary(true_labels, "true_labels")
    p = _as_binary(pred_labels, "pred_labels")
    if len(y) != len(p):
        raise ValueError(f"length mismatch: {len(y)} truths vs {len(p)} predictions")
    if len(y) == 0:
        raise ValueError("need at least one sample")
    return ConfusionCounts(
        tp=int(np.sum((y == 1) & (p == 1))),
        fp=int(np.sum((y == 0) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
        fn=int(np.sum((y == 1) & (p == 0))),
    )


def basic_rates(c: ConfusionCounts) -> Rates:
    pos, neg = c.tp + c.fn, c.tn + c.fp
    return Rates(
        sensitivity=c.tp / pos if pos else None,
        specificity=c.tn / neg if neg else None,
        accuracy=(c.tp + c.tn) / c.total if c.total else None,
    )


def balanced_accuracy_from_rates(sensitivity: float | None, specificity: float | None) -> float | None:
    if sensitivity is None or specificity is None:
        return None
    return (sensitivity + specificity) / 2


def balanced_accuracy(c: ConfusionCounts) -> float | None:
    r = basic_rates(c)
    return balanced_accuracy_from_rates(r.sensitivity, r.specificity)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # start index of each run of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def roc_auc(scores, true_labels) -> float | None:
    """Tie-corrected Mann-Whitney AUC in O(n log n). ``None`` for single-class input."""
    s = np.asarray(scores, dtype=np.float64)
    y = _as_binary(true_labels, "true_labels")
    if len(s) != len(y):
        raise ValueError(f"length mismatch: {len(s)} scores vs {len(y)} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def detect_non_convergence(pred_labels, true_labels=None, criterion: str = "single_class") -> bool:
    """Flag a collapsed fold.

    ``single_class``: every prediction is the same label (default).
    ``chance_ba``: balanced accuracy on ``true_labels`` is at or below 0.5.
    """
    p = np.asarray(pred_labels)
    if p.size == 0:
        raise ValueError("need at least one prediction")
    if criterion == "single_class":
        if p.size == 1:
            log.warning("non-convergence check on a single prediction is trivially true")
        return bool(np.all(p == p[0]))
    if criterion == "chance_ba":
        if true_labels is None:
            raise ValueError("chance_ba criterion needs true_labels")
        ba = balanced_accuracy(confusion(true_labels, p))
        return ba is None or ba <= 0.5
    raise ValueError(f"unknown criterion {criterion!r}")


def compute_report(group_key: str, true_labels, pred_labels, scores) -> MetricsReport:
    c = confusion(true_labels, pred_labels)
    r = basic_rates(c)
    values = {
        "roc_auc": roc_auc(scores, true_labels),
        "accuracy": r.accuracy,
        "sensitivity": r.sensitivity,
        "specificity": r.specificity,
        "balanced_accuracy": balanced_accuracy_from_rates(r.sensitivity, r.specificity),
    }
    return MetricsReport(
        group_key=group_key,
        n=c.total,
        counts=c,
        undefined=[k for k, v in values.items() if v is None],
        **values,
    )


def _domain_sort_key(d: str):
    return (0, int(d), d) if d.lstrip("-").isdigit() else (1, 0, d)


def per_domain_report(records: Sequence) -> list[MetricsReport]:
    """One row per domain (natural order) then a pooled "overall" row.

    ``records`` need ``domain_id``, ``true_label``, ``predicted_label`` and
    ``ensemble_prob`` attributes.
    """
    if not records:
        raise ValueError("no prediction records")
    if any(r.true_label is None for r in records):
        raise ValueError("per-domain report needs true labels for every record")
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(str(r.domain_id), []).append(r)
    rows = []
    for key in sorted(groups, key=_domain_sort_key) + ["overall"]:
        rs = records if key == "overall" else groups[key]
        rows.append(
            compute_report(
                key,
                [r.true_label for r in rs],
                [r.predicted_label for r in rs],
                [r.ensemble_prob for r in rs],
            )
        )
    return rows


@dataclass
class FoldAggregate:
    values: list[float | None]
    converged: list[bool]
    converged_only: bool
    included: list[int]
    mean: float
    sd: float | None

    def to_dict(self):
        return asdict(self)


def fold_aggregate(values: Sequence[float | None], converged_flags: Sequence[bool] | None = None,
                   converged_only: bool = False) -> FoldAggregate:
    """Mean and sample SD (n-1) over the included folds.

    Folds are excluded when ``converged_only`` and their flag is False, or when
    their value is undefined. SD is ``None`` with fewer than two folds.
    """
    values = list(values)
    flags = [True] * len(values) if converged_flags is None else [bool(f) for f in converged_flags]
    if len(flags) != len(values):
        raise ValueError("values and converged_flags differ in length")
    included = [i for i, (v, ok) in enumerate(zip(values, flags)) if v is not None and (ok or not converged_only)]
    if not included:
        raise ValueError("no folds left to aggregate")
    x = np.array([values[i] for i in included], dtype=np.float64)
    sd = float(np.std(x, ddof=1)) if len(x) >= 2 else None
    return FoldAggregate(values, flags, converged_only, included, float(x.mean()), sd)


def aggregate_reports(reports: Sequence[MetricsReport], converged_flags: Sequence[bool] | None = None,
                      converged_only: bool = False) -> dict[str, FoldAggregate]:
    return {
        name: fold_aggregate([r.value(name) for r in reports], converged_flags, converged_only)
        for name in METRIC_NAMES
    }


def ablation_compare(agg_a: dict, agg_b: dict) -> dict[str, float]:
    """Signed difference of means, ``b - a``, per metric."""
    if set(agg_a) != set(agg_b):
        raise ValueError(f"metric sets differ: {sorted(agg_a)} vs {sorted(agg_b)}")

    def mean(a):
        return a.mean if isinstance(a, FoldAggregate) else float(a)

    return {k: mean(agg_b[k]) - mean(agg_a[k]) for k in agg_a}


def format_signed(x: float) -> str:
    s = f"{x:+.4f}"
    # avoid "-0.0000" for tiny negative residue
    return "+0.0000" if s == "-0.0000" else s


def format_value(x: float | None) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def reports_to_markdown(reports: Iterable[MetricsReport], first_column: str = "Domain") -> str:
    reports = list(reports)
    if not reports:
        raise ValueError("empty metrics list")
    header = [first_column] + [METRIC_TITLES[n] for n in METRIC_NAMES]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] + [":---:"] * len(METRIC_NAMES)) + "|"]
    for r in reports:
        label = "Overall" if r.group_key == "overall" else (
            f"Domain {r.group_key}" if first_column == "Domain" else r.group_key)
        lines.append("| " + " | ".join([label] + [format_value(r.value(n)) for n in METRIC_NAMES]) + " |")
    return "\n".join(lines) + "\n"


def parse_markdown_table(text: str) -> list[dict[str, float | None]]:
    """Read back a table written by :func:`reports_to_markdown`."""
    rows = [ln for ln in text.strip().splitlines() if ln.startswith("|")]
    out = []
    for ln in rows[2:]:
        cells = [c.strip() for c in ln.strip("|").split("|")]
        out.append(
            {"label": cells[0], **{n: (None if c == "n/a" else float(c)) for n, c in zip(METRIC_NAMES, cells[1:])}}
        )
    return out

"""Confusion matrices, the five screening metrics, fold aggregation, reports.

The abnormal class (label 1) is the positive class throughout.  Any metric
with a zero denominator is reported as None (undefined) rather than being
silently coerced to zero.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import EmptyInput, LengthMismatch
from .signal_io import Label

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    precision: float | None = None
    f1: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def confusion(probs, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Tally predictions against labels; p >= threshold predicts Abnormal."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray([int(v) for v in labels])
    if len(probs) != len(labels):
        raise LengthMismatch(f"{len(probs)} probabilities vs {len(labels)} labels")
    pred = probs >= threshold
    truth = labels == int(Label.ABNORMAL)
    return ConfusionMatrix(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    acc = _ratio(cm.tp + cm.tn, cm.total)
    sens = _ratio(cm.tp, cm.tp + cm.fn)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    prec = _ratio(cm.tp, cm.tp + cm.fp)
    if prec is None or sens is None or prec + sens == 0.0:
        f1 = None
    else:
        f1 = 2.0 * prec * sens / (prec + sens)
    return MetricsReport(accuracy=acc, sensitivity=sens, specificity=spec,
                         precision=prec, f1=f1)


@dataclass(frozen=True)
class AggregateReport:
    mean: MetricsReport
    std: MetricsReport
    max: MetricsReport
    excluded: dict[str, int]  # undefined entries dropped, per metric
    n_folds: int


def aggregate_folds(reports: list[MetricsReport]) -> AggregateReport:
    """Mean/std/max per metric over the defined values only."""
    if not reports:
        raise EmptyInput("no fold reports to aggregate")
    mean: dict[str, float | None] = {}
    std: dict[str, float | None] = {}
    mx: dict[str, float | None] = {}
    excluded: dict[str, int] = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        excluded[name] = len(reports) - len(vals)
        if vals:
            mean[name] = statistics.fmean(vals)
            std[name] = statistics.pstdev(vals) if len(vals) > 1 else 0.0
            mx[name] = max(vals)
        else:
            mean[name] = std[name] = mx[name] = None
    return AggregateReport(mean=MetricsReport(**mean), std=MetricsReport(**std),
                           max=MetricsReport(**mx), excluded=excluded,
                           n_folds=len(reports))


# --------------------------------------------------------------------------
# Emission
# --------------------------------------------------------------------------

def _fmt(v: float | None, pct: bool = False) -> str:
    if v is None:
        return "undefined"
    return f"{100.0 * v:.2f}%" if pct else f"{v:.6f}"


def write_metrics_csv(path, rows: list[tuple[int, ConfusionMatrix, MetricsReport]]) -> None:
    """`fold,tp,fp,tn,fn,accuracy,sensitivity,specificity,precision,f1`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "tp", "fp", "tn", "fn", *METRIC_NAMES])
        for fold, cm, rep in rows:
            w.writerow([fold, cm.tp, cm.fp, cm.tn, cm.fn,
                        *[_fmt(getattr(rep, n)) for n in METRIC_NAMES]])


def read_metrics_csv(path) -> list[tuple[int, ConfusionMatrix, MetricsReport]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            cm = ConfusionMatrix(tp=int(row["tp"]), fp=int(row["fp"]),
                                 tn=int(row["tn"]), fn=int(row["fn"]))
            vals = {n: (None if row[n] == "undefined" else float(row[n]))
                    for n in METRIC_NAMES}
            rows.append((int(row["fold"]), cm, MetricsReport(**vals)))
    return rows


def format_report(study: str,
                  config_echo: dict,
                  rows: list[tuple[int, ConfusionMatrix, MetricsReport]],
                  aggregate: AggregateReport,
                  reference: MetricsReport | None = None,
                  reference_tolerance: float = 0.03) -> str:
    """Human-readable study report with config echo and per-fold detail."""
    lines = [f"study: {study}", "", "configuration:"]
    for key in sorted(config_echo):
        lines.append(f"  {key} = {config_echo[key]}")
    lines.append("")
    lines.append("per-fold results (positive class = abnormal):")
    for fold, cm, rep in rows:
        lines.append(f"  fold {fold}: tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
        lines.append("    " + "  ".join(
            f"{n}={_fmt(getattr(rep, n), pct=True)}" for n in METRIC_NAMES))
    lines.append("")
    lines.append(f"aggregate over {aggregate.n_folds} folds (mean +- std, max):")
    for n in METRIC_NAMES:
        mean_v = getattr(aggregate.mean, n)
        if mean_v is None:
            lines.append(f"  {n}: undefined in all folds")
            continue
        std_v = getattr(aggregate.std, n)
        max_v = getattr(aggregate.max, n)
        note = ""
        if aggregate.excluded[n]:
            note = f"  ({aggregate.excluded[n]} undefined fold(s) excluded)"
        lines.append(f"  {n}: {_fmt(mean_v, pct=True)} +- "
                     f"{100.0 * std_v:.2f}pp, max {_fmt(max_v, pct=True)}{note}")
    if reference is not None:
        lines.append("")
        lines.append(f"reference comparison (reproduced = within "
                     f"{100 * reference_tolerance:.0f} percentage points):")
        for n in METRIC_NAMES:
            ref_v = getattr(reference, n)
            got = getattr(aggregate.mean, n)
            if ref_v is None:
                continue
            if got is None:
                lines.append(f"  {n}: undefined vs reference {_fmt(ref_v, pct=True)}")
                continue
            delta = got - ref_v
            verdict = "reproduced" if abs(delta) <= reference_tolerance else "gap"
            lines.append(f"  {n}: {_fmt(got, pct=True)} vs {_fmt(ref_v, pct=True)} "
                         f"({delta:+.4f}) -> {verdict}")
    lines.append("")
    return "\n".join(lines)


def write_report(path, *args, **kwargs) -> None:
    Path(path).write_text(format_report(*args, **kwargs))


def float_close(a: float, b: float, tol: float = 1e-9) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)

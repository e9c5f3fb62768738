"""Confusion-matrix bookkeeping and the derived precision/recall/accuracy
numbers at multi-class, one-vs-all, and encryption-restricted granularity.

Convention throughout: confusion[p][t] counts samples predicted p whose
true label is t (rows = predicted, columns = true).  Undefined ratios
(0/0) are reported as None and rendered "n/a", never coerced to 0 or 1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import labels as label_scheme


class BinaryCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class ClassMetrics:
    precision: float | None
    recall: float | None
    accuracy: float | None


@dataclass
class MetricsReport:
    confusion: np.ndarray  # (n, n) int64, predicted x true
    class_names: list[str]

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        n = self.confusion.shape[0]
        if self.confusion.shape != (n, n):
            raise ValueError("confusion matrix must be square")
        if len(self.class_names) != n:
            raise ValueError("need one name per class")

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]


def confusion_from_predictions(
    predicted: Sequence[int], true: Sequence[int], n_classes: int
) -> np.ndarray:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (np.asarray(predicted), np.asarray(true)), 1)
    return confusion


def one_vs_all_counts(confusion: np.ndarray, positive: int | set[int]) -> BinaryCounts:
    """Collapse the matrix to binary counts for a positive class (or a group
    of classes treated as one)."""
    pos = {positive} if isinstance(positive, (int, np.integer)) else set(positive)
    idx = np.array(sorted(pos), dtype=np.int64)
    mask = np.zeros(confusion.shape[0], dtype=bool)
    mask[idx] = True
    tp = int(confusion[np.ix_(mask, mask)].sum())
    fp = int(confusion[np.ix_(mask, ~mask)].sum())
    fn = int(confusion[np.ix_(~mask, mask)].sum())
    tn = int(confusion[np.ix_(~mask, ~mask)].sum())
    return BinaryCounts(tp, fp, fn, tn)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def metrics_from_counts(c: BinaryCounts) -> ClassMetrics:
    return ClassMetrics(
        precision=_ratio(c.tp, c.tp + c.fp),
        recall=_ratio(c.tp, c.tp + c.fn),
        accuracy=_ratio(c.tp + c.tn, c.tp + c.fp + c.fn + c.tn),
    )


def one_vs_all_metrics(confusion: np.ndarray, positive: int | set[int]) -> ClassMetrics:
    return metrics_from_counts(one_vs_all_counts(confusion, positive))


def per_class_metrics(confusion: np.ndarray) -> list[ClassMetrics]:
    return [one_vs_all_metrics(confusion, c) for c in range(confusion.shape[0])]


def multiclass_accuracy(confusion: np.ndarray) -> float | None:
    total = int(confusion.sum())
    return _ratio(int(np.trace(confusion)), total)


def restrict_confusion(confusion: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Sub-matrix over a label subset (both predictions and truths must be
    in the subset to be counted)."""
    idx = np.asarray(list(keep), dtype=np.int64)
    return confusion[np.ix_(idx, idx)]


def mean_defined(values: Iterable[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


def encryption_scoped_metrics(
    confusion: np.ndarray, encryption: label_scheme.Encryption
) -> dict[str, ClassMetrics]:
    """Restrict the 14-class matrix to one encryption's labels, then score
    each traffic class one-vs-all inside that restriction."""
    if confusion.shape[0] != label_scheme.NUM_CLASSES:
        raise ValueError("encryption scoping needs the 14-class matrix")
    members = label_scheme.labels_for_encryption(encryption)
    keep = [lab.index for lab in members]
    sub = restrict_confusion(confusion, keep)
    out = {}
    for local, lab in enumerate(members):
        out[lab.traffic_class.value] = one_vs_all_metrics(sub, local)
    return out


def _fmt(value: float | None, percent: bool = True) -> str:
    if value is None:
        return "n/a"
    return f"{100.0 * value:.1f}" if percent else f"{value:.4f}"


def _csv_table(header: list[str], rows: list[list[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def confusion_csv(report: MetricsReport) -> str:
    header = ["predicted\\true"] + report.class_names
    rows = [
        [report.class_names[p]] + [int(v) for v in report.confusion[p]]
        for p in range(report.n_classes)
    ]
    return _csv_table(header, rows)


def per_class_csv(report: MetricsReport) -> str:
    rows = []
    for c, m in enumerate(per_class_metrics(report.confusion)):
        rows.append(
            [
                report.class_names[c],
                _fmt(m.recall),
                _fmt(m.precision),
                _fmt(m.accuracy),
            ]
        )
    return _csv_table(["class", "recall_pct", "precision_pct", "accuracy_pct"], rows)


def _uses_label_scheme(report: MetricsReport) -> bool:
    return (
        report.n_classes == label_scheme.NUM_CLASSES
        and report.class_names == label_scheme.LABEL_NAMES
    )


def traffic_class_csv(report: MetricsReport) -> str:
    """One-vs-all scores per traffic class, encryption methods pooled."""
    rows = []
    for tc in label_scheme.TrafficClass:
        group = {lab.index for lab in label_scheme.labels_for_traffic_class(tc)}
        m = one_vs_all_metrics(report.confusion, group)
        rows.append([tc.value, _fmt(m.recall), _fmt(m.precision), _fmt(m.accuracy)])
    return _csv_table(
        ["traffic_class", "recall_pct", "precision_pct", "accuracy_pct"], rows
    )


def encryption_csv(report: MetricsReport) -> str:
    """Average one-vs-all accuracy of the traffic classes within each
    encryption method."""
    rows = []
    for enc in label_scheme.Encryption:
        scoped = encryption_scoped_metrics(report.confusion, enc)
        avg = mean_defined(m.accuracy for m in scoped.values())
        rows.append([enc.value, _fmt(avg)])
    return _csv_table(["encryption", "avg_accuracy_pct"], rows)


def report_tables(report: MetricsReport) -> dict[str, str]:
    """All machine-readable tables for this report (keys are file stems).
    Encryption-scoped tables only exist for the 14-label scheme."""
    if report.n_samples == 0:
        raise ValueError("empty evaluation: no samples to report on")
    tables = {
        "confusion": confusion_csv(report),
        "per_class": per_class_csv(report),
    }
    if _uses_label_scheme(report):
        tables["traffic_class"] = traffic_class_csv(report)
        tables["encryption"] = encryption_csv(report)
    return tables


def human_report(report: MetricsReport) -> str:
    """Plain-text summary: overall accuracy, per-class table, confusion."""
    if report.n_samples == 0:
        raise ValueError("empty evaluation: no samples to report on")
    lines = []
    overall = multiclass_accuracy(report.confusion)
    avg_prec = mean_defined(m.precision for m in per_class_metrics(report.confusion))
    lines.append(f"samples evaluated : {report.n_samples}")
    lines.append(f"overall accuracy  : {_fmt(overall)}%")
    lines.append(f"average precision : {_fmt(avg_prec)}%")
    lines.append("")
    width = max(len(n) for n in report.class_names)
    lines.append(f"{'class':<{width}}  recall%  precision%  accuracy%")
    for c, m in enumerate(per_class_metrics(report.confusion)):
        lines.append(
            f"{report.class_names[c]:<{width}}  {_fmt(m.recall):>7}  "
            f"{_fmt(m.precision):>10}  {_fmt(m.accuracy):>9}"
        )
    if _uses_label_scheme(report):
        lines.append("")
        lines.append("traffic classes pooled over encryption (one vs all):")
        for tc in label_scheme.TrafficClass:
            group = {lab.index for lab in label_scheme.labels_for_traffic_class(tc)}
            m = one_vs_all_metrics(report.confusion, group)
            lines.append(
                f"  {tc.value:<13} Re {_fmt(m.recall):>6}  Pr {_fmt(m.precision):>6}"
                f"  Ac {_fmt(m.accuracy):>6}"
            )
        lines.append("")
        lines.append("average one-vs-all accuracy per encryption:")
        for enc in label_scheme.Encryption:
            scoped = encryption_scoped_metrics(report.confusion, enc)
            avg = mean_defined(m.accuracy for m in scoped.values())
            lines.append(f"  {enc.value:<12} {_fmt(avg):>6}")
    lines.append("")
    lines.append("confusion matrix (rows = predicted, columns = true):")
    for p in range(report.n_classes):
        row = " ".join(f"{int(v):>6}" for v in report.confusion[p])
        lines.append(f"  {report.class_names[p]:<{width}} {row}")
    return "\n".join(lines) + "\n"

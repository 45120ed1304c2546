"""Classification metrics: per-class precision/recall/F1, accuracy, confusion.

One report covers one layer and one slice of the data (a frequency band, a
congestion level, or "all"). The confusion matrix is indexed (true row,
predicted column) in the layer's fixed class order; precision, recall and
F1 fall out of its margins. Classes with zero support stay in the report
with zeroed metrics so the shape is stable across slices; a warning flags
them.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class EmptyReportError(ValueError):
    """score() got no predictions."""


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Report:
    slice_name: str
    class_order: tuple[str, ...]
    classes: tuple[ClassMetrics, ...]
    accuracy: float
    total: int
    confusion: np.ndarray  # rows true, columns predicted

    def row(self, label: str) -> ClassMetrics:
        for metrics in self.classes:
            if metrics.label == label:
                return metrics
        raise KeyError(label)


def confusion_matrix(pairs: Iterable[tuple[str, str]],
                     class_order: Sequence[str]) -> np.ndarray:
    index = {label: i for i, label in enumerate(class_order)}
    matrix = np.zeros((len(index), len(index)), dtype=np.int64)
    for true, predicted in pairs:
        if true not in index:
            raise ValueError(f"true label {true!r} not in class order")
        if predicted not in index:
            raise ValueError(f"predicted label {predicted!r} not in class order")
        matrix[index[true], index[predicted]] += 1
    return matrix


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def score(pairs: Sequence[tuple[str, str]], class_order: Sequence[str],
          slice_name: str = "all") -> Report:
    """Standard multiclass metrics over (true, predicted) label pairs."""
    if not pairs:
        raise EmptyReportError(f"no predictions to score for slice {slice_name!r}")
    return _report_from_matrix(confusion_matrix(pairs, class_order),
                               tuple(class_order), slice_name)


def _report_from_matrix(matrix: np.ndarray, class_order: tuple[str, ...],
                        slice_name: str) -> Report:
    rows = []
    for i, label in enumerate(class_order):
        support = int(matrix[i].sum())
        tp = float(matrix[i, i])
        precision = _safe_div(tp, float(matrix[:, i].sum()))
        recall = _safe_div(tp, float(support))
        f1 = _safe_div(2 * precision * recall, precision + recall)
        if support == 0:
            warnings.warn(f"class {label!r} has zero support in slice "
                          f"{slice_name!r}", stacklevel=2)
        rows.append(ClassMetrics(label=label, precision=precision,
                                 recall=recall, f1=f1, support=support))
    total = int(matrix.sum())
    accuracy = float(np.trace(matrix)) / total
    return Report(
        slice_name=slice_name,
        class_order=class_order,
        classes=tuple(rows),
        accuracy=accuracy,
        total=total,
        confusion=matrix,
    )


def report_to_dict(report: Report) -> dict:
    return {
        "slice": report.slice_name,
        "class_order": list(report.class_order),
        "classes": [
            {
                "label": m.label,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
            }
            for m in report.classes
        ],
        "accuracy": report.accuracy,
        "total": report.total,
        "confusion": report.confusion.tolist(),
    }


def report_from_dict(obj: dict) -> Report:
    return Report(
        slice_name=obj["slice"],
        class_order=tuple(obj["class_order"]),
        classes=tuple(ClassMetrics(**row) for row in obj["classes"]),
        accuracy=float(obj["accuracy"]),
        total=int(obj["total"]),
        confusion=np.asarray(obj["confusion"], dtype=np.int64),
    )


def render_report(report: Report) -> str:
    """Fixed-width table for terminals; one row per class plus accuracy."""
    lines = [f"slice: {report.slice_name}"]
    header = f"{'class':<8}{'precision':>10}{'recall':>10}{'f1':>10}{'support':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for m in report.classes:
        lines.append(f"{m.label:<8}{m.precision:>10.3f}{m.recall:>10.3f}"
                     f"{m.f1:>10.3f}{m.support:>10d}")
    lines.append("-" * len(header))
    lines.append(f"{'accuracy':<8}{report.accuracy:>30.3f}{report.total:>10d}")
    return "\n".join(lines)


def render_confusion(report: Report) -> str:
    width = max(7, max(len(c) for c in report.class_order) + 2)
    lines = ["confusion (rows true, columns predicted):"]
    lines.append(" " * width + "".join(f"{c:>{width}}" for c in report.class_order))
    for i, label in enumerate(report.class_order):
        cells = "".join(f"{int(v):>{width}d}" for v in report.confusion[i])
        lines.append(f"{label:>{width}}" + cells)
    return "\n".join(lines)


def merge_reports(reports: Sequence[Report], slice_name: str = "merged") -> Report:
    """Sum compatible slices; equals scoring the concatenated predictions."""
    if not reports:
        raise EmptyReportError("nothing to merge")
    order = reports[0].class_order
    if any(r.class_order != order for r in reports):
        raise ValueError("reports use different class orders")
    matrix = np.sum([r.confusion for r in reports], axis=0)
    if matrix.sum() == 0:
        raise EmptyReportError("merged slices hold no predictions")
    return _report_from_matrix(matrix, order, slice_name)


def write_reports(path, reports: Sequence[Report]) -> None:
    doc = [report_to_dict(r) for r in reports]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

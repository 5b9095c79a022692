"""Decision rules and evaluation metrics.

Precision, recall and F1 are reported per class and as macro and weighted
averages; the metrics table uses the macro values. ROC AUC is computed by
the trapezoidal rule over all distinct thresholds, which equals the
Mann-Whitney statistic with ties counted as one half.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import TaskKind
from .errors import (
    DegenerateLabels,
    EmptyMatrix,
    EmptyVector,
    LabelOutOfRange,
    LengthMismatch,
    ScoreOutOfRange,
)

TABLE_METRICS = (
    "Test Accuracy",
    "Precision",
    "Recall",
    "Micro Average AUC",
    "Macro Average AUC",
    "F1-Score",
)


def binary_decision(score: float, threshold: float = 0.5) -> int:
    """0 when ``score <= threshold``, else 1."""
    if not 0.0 <= score <= 1.0:
        raise ScoreOutOfRange(f"score {score} outside [0, 1]")
    return 0 if score <= threshold else 1


def argmax_decision(probs) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if probs.size == 0:
        raise EmptyVector("cannot take argmax of an empty vector")
    return int(np.argmax(probs))


def predict_labels(scores, threshold: float = 0.5) -> np.ndarray:
    """Vectorised decision: threshold for a 1-D score array, argmax for a probability matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        if scores.size and (scores.min() < 0 or scores.max() > 1):
            raise ScoreOutOfRange("binary scores must lie in [0, 1]")
        return (scores > threshold).astype(np.int64)
    if scores.shape[1] == 0:
        raise EmptyVector("probability rows are empty")
    return scores.argmax(axis=1).astype(np.int64)


@dataclass(frozen=True)
class ConfusionMatrix:
    cells: np.ndarray  # rows = true class, columns = predicted class

    @property
    def k(self) -> int:
        return self.cells.shape[0]

    @property
    def total(self) -> int:
        return int(self.cells.sum())

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise EmptyMatrix("confusion matrix is empty")
        return float(np.trace(self.cells) / self.total)


def confusion_matrix(y_true, y_pred, k: int) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise LabelOutOfRange(f"labels must lie in [0, {k})")
    cells = np.zeros((k, k), dtype=np.int64)
    np.add.at(cells, (y_true, y_pred), 1)
    return ConfusionMatrix(cells)


@dataclass(frozen=True)
class PrecisionRecallF1:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    # (metric, class) pairs whose denominator was zero and were set to 0
    degenerate: tuple[tuple[str, int], ...] = ()

    @property
    def macro(self) -> dict[str, float]:
        return {m: float(getattr(self, m).mean()) for m in ("precision", "recall", "f1")}

    @property
    def weighted(self) -> dict[str, float]:
        w = self.support / self.support.sum()
        return {m: float((getattr(self, m) * w).sum()) for m in ("precision", "recall", "f1")}


def _safe_ratio(num, den, name, flags):
    out = np.zeros(len(num))
    for c, (a, b) in enumerate(zip(num, den)):
        if b == 0:
            flags.append((name, c))
        else:
            out[c] = a / b
    return out


def precision_recall_f1(cm: ConfusionMatrix) -> PrecisionRecallF1:
    cells = cm.cells
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    tp = np.diag(cells).astype(np.float64)
    flags: list[tuple[str, int]] = []
    precision = _safe_ratio(tp, cells.sum(axis=0), "precision", flags)
    recall = _safe_ratio(tp, cells.sum(axis=1), "recall", flags)
    f1 = _safe_ratio(2 * precision * recall, precision + recall, "f1", flags)
    return PrecisionRecallF1(precision, recall, f1, cells.sum(axis=1), tuple(flags))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] is +inf, the "predict nothing" point

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores, positives) -> RocCurve:
    """ROC swept over every distinct score, highest first (predict positive when score >= t)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    if scores.shape != positives.shape:
        raise LengthMismatch("scores and labels differ in length")
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positives[order]
    # index of the last element of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(p)[last]
    fps = (last + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(fpr, tpr, thresholds)


def auc(curve: RocCurve) -> float:
    x, y = curve.fpr, curve.tpr
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1])) / 2.0)


@dataclass(frozen=True)
class MulticlassAuc:
    micro_auc: float
    macro_auc: float
    per_class_auc: dict[int, float]
    curves: dict[str, RocCurve]
    skipped: tuple[int, ...] = ()


def _macro_curve(curves: list[RocCurve]) -> RocCurve:
    grid = np.unique(np.concatenate([c.fpr for c in curves]))
    tpr = np.mean([np.interp(grid, c.fpr, c.tpr) for c in curves], axis=0)
    return RocCurve(grid, tpr, np.full(len(grid), np.nan))


def multiclass_auc(prob_matrix, y_true) -> MulticlassAuc:
    """One-vs-rest AUCs: macro averages per-class AUCs, micro pools all (sample, class) pairs.

    Classes absent from ``y_true`` (or present in every row) are skipped in
    the macro average and listed in ``skipped``.
    """
    probs = np.asarray(prob_matrix, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    if probs.ndim != 2 or len(probs) != len(y_true):
        raise LengthMismatch("probability matrix must be (samples, classes) matching y_true")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise ValueError("probability rows must sum to 1 within 1e-6")
    k = probs.shape[1]
    onehot = np.zeros_like(probs, dtype=bool)
    onehot[np.arange(len(y_true)), y_true] = True
    curves: dict[str, RocCurve] = {}
    per_class: dict[int, float] = {}
    skipped = []
    for c in range(k):
        try:
            curve = roc_curve(probs[:, c], onehot[:, c])
        except DegenerateLabels:
            skipped.append(c)
            continue
        curves[f"class_{c}"] = curve
        per_class[c] = auc(curve)
    if not per_class:
        raise DegenerateLabels("every class is degenerate")
    micro = roc_curve(probs.ravel(), onehot.ravel())
    curves["micro"] = micro
    curves["macro"] = _macro_curve([curves[f"class_{c}"] for c in per_class])
    macro_auc = float(np.mean(list(per_class.values())))
    return MulticlassAuc(auc(micro), macro_auc, per_class, curves, tuple(skipped))


@dataclass
class EvalReport:
    task: TaskKind
    accuracy: float
    confusion: ConfusionMatrix
    prf: PrecisionRecallF1
    aucs: MulticlassAuc
    notes: list[str] = field(default_factory=list)

    @property
    def micro_auc(self) -> float:
        return self.aucs.micro_auc

    @property
    def macro_auc(self) -> float:
        return self.aucs.macro_auc

    def table(self) -> dict[str, float]:
        macro = self.prf.macro
        return {
            "Test Accuracy": self.accuracy,
            "Precision": macro["precision"],
            "Recall": macro["recall"],
            "Micro Average AUC": self.micro_auc,
            "Macro Average AUC": self.macro_auc,
            "F1-Score": macro["f1"],
        }

    def to_dict(self) -> dict:
        def curve(c: RocCurve):
            thr = [None if not math.isfinite(t) else float(t) for t in c.thresholds]
            return {"fpr": c.fpr.tolist(), "tpr": c.tpr.tolist(), "threshold": thr}

        return {
            "task": self.task.name,
            "accuracy": self.accuracy,
            "table": self.table(),
            "per_class": {
                "precision": self.prf.precision.tolist(),
                "recall": self.prf.recall.tolist(),
                "f1": self.prf.f1.tolist(),
                "support": self.prf.support.tolist(),
                "auc": {str(c): v for c, v in self.aucs.per_class_auc.items()},
            },
            "macro": self.prf.macro,
            "weighted": self.prf.weighted,
            "micro_auc": self.micro_auc,
            "macro_auc": self.macro_auc,
            "confusion": self.confusion.cells.tolist(),
            "roc": {name: curve(c) for name, c in self.aucs.curves.items()},
            "degenerate": [list(f) for f in self.prf.degenerate],
            "auc_skipped_classes": list(self.aucs.skipped),
            "notes": list(self.notes),
        }


def evaluate(scores, y_true, task) -> EvalReport:
    """Apply the task's decision rule and compute every metric.

    ``scores`` is a 1-D sigmoid output for BINARY, else a (samples, k)
    probability matrix.
    """
    task = TaskKind.parse(task)
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    k = task.class_count
    if task is TaskKind.BINARY:
        if scores.ndim != 1:
            raise LengthMismatch("binary evaluation expects one score per sample")
        probs = np.stack([1.0 - scores, scores], axis=1)
    else:
        if scores.ndim != 2 or scores.shape[1] != k:
            raise LengthMismatch(f"{task.name} evaluation expects a (samples, {k}) probability matrix")
        probs = scores
    if len(scores) != len(y_true):
        raise LengthMismatch(f"{len(scores)} predictions vs {len(y_true)} labels")
    y_pred = predict_labels(scores)
    cm = confusion_matrix(y_true, y_pred, k)
    notes = []
    aucs = multiclass_auc(probs, y_true)
    if aucs.skipped:
        notes.append(f"classes {list(aucs.skipped)} absent or universal; skipped in macro AUC")
    return EvalReport(task, cm.accuracy, cm, precision_recall_f1(cm), aucs, notes)


# --------------------------------------------------------------- writers


def write_table_csv(columns: dict[str, dict[str, float]], path) -> None:
    """Metrics table: one row per metric name, one column per labelled report."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Metric", *columns])
        for name in TABLE_METRICS:
            w.writerow([name, *(repr(float(col[name])) for col in columns.values())])


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred", *range(cm.k)])
        for t, row in enumerate(cm.cells.tolist()):
            w.writerow([t, *row])


def write_roc_csv(curves: dict[str, RocCurve], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "fpr", "tpr", "threshold"])
        for name, c in curves.items():
            for f, t, th in zip(c.fpr.tolist(), c.tpr.tolist(), c.thresholds.tolist()):
                w.writerow([name, repr(f), repr(t), "" if math.isnan(th) else repr(th)])


def write_report(report: EvalReport, out_dir, label: str = "model") -> list[Path]:
    """Write report.json, metrics_table.csv, confusion.csv and roc.csv into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / n for n in ("report.json", "metrics_table.csv", "confusion.csv", "roc.csv")]
    paths[0].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_table_csv({label: report.table()}, paths[1])
    write_confusion_csv(report.confusion, paths[2])
    write_roc_csv(report.aucs.curves, paths[3])
    return paths

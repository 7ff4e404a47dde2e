"""
Classification metrics: confusion counts, accuracy, recall, ROC/AUC and CSV reports.

Percentages in reports carry three decimals.
"""

import csv
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field
from sklearn.metrics import auc, confusion_matrix, roc_curve

from errors import MetricError

RocCurve = List[Tuple[float, float, float]]


class ConfusionMatrix(BaseModel):
    """Two-class counts with the configured class as positive."""
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    fn: int = Field(ge=0)
    tn: int = Field(ge=0)
    positive_class: int = Field(default=1, ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _labels(values: Sequence[int], name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.int64).reshape(-1)
    if np.any(array < 0):
        raise MetricError(f"{name} must be non-negative class indices")
    return array


def confusion(pred_labels: Sequence[int], true_labels: Sequence[int], positive_class: int = 1) -> ConfusionMatrix:
    """One-vs-rest counts against positive_class."""
    pred = _labels(pred_labels, "predictions")
    true = _labels(true_labels, "labels")
    if pred.shape != true.shape:
        raise MetricError(f"{len(pred)} predictions for {len(true)} labels")
    (tn, fp), (fn, tp) = confusion_matrix(true == positive_class, pred == positive_class, labels=[False, True])
    return ConfusionMatrix(tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn), positive_class=positive_class)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("accuracy of an empty confusion matrix")
    return (cm.tp + cm.tn) / cm.total


def recall(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0:
        raise MetricError("recall is undefined without positive samples")
    return cm.tp / (cm.tp + cm.fn)


def top1_accuracy(pred_labels: Sequence[int], true_labels: Sequence[int]) -> float:
    """Fraction of exact class matches (C-class argmax correctness)."""
    pred = _labels(pred_labels, "predictions")
    true = _labels(true_labels, "labels")
    if pred.shape != true.shape:
        raise MetricError(f"{len(pred)} predictions for {len(true)} labels")
    if pred.size == 0:
        raise MetricError("accuracy of an empty prediction set")
    return float((pred == true).mean())


def roc_auc(scores: Sequence[float], true_labels: Sequence[int], positive_class: int = 1) -> Tuple[RocCurve, float]:
    """
    ROC over every distinct threshold, plus the trapezoid AUC.

    Equal scores form one threshold step. The curve starts at (0, 0) with an
    infinite threshold and ends at (1, 1).

    Returns:
        ([(threshold, fpr, tpr), ...], auc)

    Raises:
        MetricError: length mismatch or a single-class label set
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    positive = _labels(true_labels, "labels") == positive_class
    if scores.shape != positive.shape:
        raise MetricError(f"{len(scores)} scores for {len(positive)} labels")
    if positive.all() or not positive.any():
        raise MetricError("ROC needs both positive and negative samples")
    fpr, tpr, thresholds = roc_curve(positive, scores, drop_intermediate=False)
    curve = [(float(t), float(f), float(r)) for t, f, r in zip(thresholds, fpr, tpr)]
    return curve, float(auc(fpr, tpr))


def confusion_table(pred_labels: Sequence[int], true_labels: Sequence[int], num_classes: int) -> np.ndarray:
    """Full C x C counts, rows = true class, columns = predicted class."""
    pred = _labels(pred_labels, "predictions")
    true = _labels(true_labels, "labels")
    if pred.shape != true.shape:
        raise MetricError(f"{len(pred)} predictions for {len(true)} labels")
    return confusion_matrix(true, pred, labels=list(range(num_classes)))


def percent(value: float) -> str:
    return f"{100.0 * value:.3f}"


def write_metrics_csv(path: Union[str, Path], metrics: Dict[str, float]) -> Path:
    """metric,value,percent rows; counts are written without a percent column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["metric", "value", "percent"])
        for name, value in metrics.items():
            if isinstance(value, int):
                writer.writerow([name, value, ""])
            elif value != value:
                writer.writerow([name, "nan", ""])
            else:
                writer.writerow([name, repr(float(value)), percent(value)])
    return path


def write_roc_csv(path: Union[str, Path], curve: RocCurve) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["threshold", "fpr", "tpr"])
        for threshold, fpr, tpr in curve:
            writer.writerow([repr(threshold), repr(fpr), repr(tpr)])
    return path


def write_confusion_csv(path: Union[str, Path], table: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["true\\pred"] + [str(c) for c in range(table.shape[1])])
        for c, row in enumerate(table):
            writer.writerow([str(c)] + [int(v) for v in row])
    return path


def write_predictions_csv(
    path: Union[str, Path],
    paths: Sequence[str],
    labels: Sequence[int],
    predictions: Sequence[int],
    scores: Sequence[float],
) -> Path:
    """Per-sample rows: path, label, prediction, positive-class score."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label", "prediction", "score"])
        for row in zip(paths, labels, predictions, scores):
            writer.writerow([row[0], int(row[1]), int(row[2]), repr(float(row[3]))])
    return path


def read_predictions_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(labels, predictions, scores) from a predictions.csv."""
    with Path(path).open("r", encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    return (
        np.array([int(r["label"]) for r in rows], dtype=np.int64),
        np.array([int(r["prediction"]) for r in rows], dtype=np.int64),
        np.array([float(r["score"]) for r in rows]),
    )

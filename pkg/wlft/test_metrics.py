"""
Confusion counts, accuracy/recall, ROC/AUC and the CSV reports.
"""

import numpy as np
import pytest

from errors import MetricError
from metrics import (
    ConfusionMatrix,
    accuracy,
    confusion,
    confusion_table,
    percent,
    read_predictions_csv,
    recall,
    roc_auc,
    top1_accuracy,
    write_metrics_csv,
    write_predictions_csv,
    write_roc_csv,
)


def _mann_whitney_auc(scores, positive):
    pos, neg = scores[positive], scores[~positive]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_perfect_predictions():
    labels = [0] * 42 + [1] * 58
    cm = confusion(labels, labels)
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (58, 0, 0, 42)
    assert accuracy(cm) == 1.0
    assert recall(cm) == 1.0


def test_all_predicted_positive():
    labels = [0] * 42 + [1] * 58
    cm = confusion([1] * 100, labels)
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (58, 42, 0, 0)
    assert recall(cm) == 1.0
    assert accuracy(cm) == pytest.approx(0.58)


def test_swapping_arguments_transposes_errors():
    rng = np.random.default_rng(0)
    pred, true = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    a, b = confusion(pred, true), confusion(true, pred)
    assert (a.fp, a.fn, a.tp, a.tn) == (b.fn, b.fp, b.tp, b.tn)


def test_worked_example():
    cm = ConfusionMatrix(tp=55, fp=2, fn=3, tn=40)
    assert accuracy(cm) == pytest.approx(0.95)
    assert recall(cm) == pytest.approx(55 / 58)
    assert percent(accuracy(cm)) == "95.000"
    assert percent(recall(cm)) == "94.828"


def test_all_negative_predictions_have_zero_recall():
    cm = confusion([0, 0, 0], [1, 0, 1])
    assert recall(cm) == 0.0


def test_undefined_metrics_raise():
    with pytest.raises(MetricError):
        accuracy(ConfusionMatrix(tp=0, fp=0, fn=0, tn=0))
    with pytest.raises(MetricError):
        recall(confusion([0, 1], [0, 0]))
    with pytest.raises(MetricError):
        confusion([0, 1], [0])
    with pytest.raises(MetricError):
        top1_accuracy([], [])


def test_counts_match_direct_counting():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        pred, true = rng.integers(0, 3, n), rng.integers(0, 3, n)
        cm = confusion(pred, true, positive_class=2)
        assert cm.tp == np.sum((pred == 2) & (true == 2))
        assert cm.fp == np.sum((pred == 2) & (true != 2))
        assert cm.fn == np.sum((pred != 2) & (true == 2))
        assert cm.tn == np.sum((pred != 2) & (true != 2))
        assert cm.total == n


def test_top1_and_full_table():
    pred, true = [0, 2, 1, 2], [0, 1, 1, 2]
    assert top1_accuracy(pred, true) == 0.75
    table = confusion_table(pred, true, 3)
    assert table.tolist() == [[1, 0, 0], [0, 1, 1], [0, 0, 1]]


def test_roc_perfect_and_uninformative():
    _, perfect = roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert perfect == pytest.approx(1.0)
    curve, flat = roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0])
    assert flat == pytest.approx(0.5)
    assert [(f, t) for _, f, t in curve] == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_matches_mann_whitney_with_ties():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(4, 60))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = np.round(rng.random(n), 1)
        curve, area = roc_auc(scores, labels)
        assert abs(area - _mann_whitney_auc(scores, labels == 1)) < 1e-10
        fprs = [f for _, f, _ in curve]
        tprs = [t for _, _, t in curve]
        assert (fprs[0], tprs[0]) == (0.0, 0.0)
        assert (fprs[-1], tprs[-1]) == (1.0, 1.0)
        assert np.all(np.diff(fprs) >= 0) and np.all(np.diff(tprs) >= 0)


def test_roc_invariant_to_monotone_transform():
    rng = np.random.default_rng(3)
    scores, labels = rng.random(30), rng.integers(0, 2, 30)
    labels[:2] = [0, 1]
    _, a = roc_auc(scores, labels)
    _, b = roc_auc(np.exp(3 * scores), labels)
    assert a == pytest.approx(b, abs=1e-12)


def test_roc_needs_both_classes():
    with pytest.raises(MetricError):
        roc_auc([0.2, 0.4], [1, 1])
    with pytest.raises(MetricError):
        roc_auc([0.2], [0, 1])


def test_reports_round_trip(tmp_path):
    labels, predictions, scores = [0, 1, 1, 0], [0, 1, 0, 0], [0.1, 0.9, 0.4, 0.2]
    path = write_predictions_csv(tmp_path / "predictions.csv", ["a", "b", "c", "d"], labels, predictions, scores)
    l2, p2, s2 = read_predictions_csv(path)
    assert top1_accuracy(p2, l2) == top1_accuracy(predictions, labels)
    assert s2.tolist() == scores

    metrics = write_metrics_csv(tmp_path / "metrics.csv", {"accuracy": 0.75, "recall": float("nan"), "tp": 1})
    lines = metrics.read_text().splitlines()
    assert lines == ["metric,value,percent", "accuracy,0.75,75.000", "recall,nan,", "tp,1,"]

    curve, _ = roc_auc(scores, labels)
    roc = write_roc_csv(tmp_path / "roc.csv", curve).read_text().splitlines()
    assert roc[0] == "threshold,fpr,tpr"
    assert len(roc) == len(curve) + 1

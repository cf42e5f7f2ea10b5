"""Binary classification metrics."""
from __future__ import annotations

import numpy as np


def confusion(y_true, y_pred):
    y_true = np.asarray(y_true).astype(np.int64)
    y_pred = np.asarray(y_pred).astype(np.int64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("y_true and y_pred must be nonempty and the same length")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    return tp, tn, fp, fn


def metrics(y_true, y_pred):
    """(accuracy, balanced accuracy, F1 of the positive class).

    Balanced accuracy averages the recall of the classes present in
    ``y_true``; with both present it is (TPR + TNR) / 2.
    """
    tp, tn, fp, fn = confusion(y_true, y_pred)
    n = tp + tn + fp + fn
    recalls = []
    if tp + fn:
        recalls.append(tp / (tp + fn))
    if tn + fp:
        recalls.append(tn / (tn + fp))
    f1_den = 2 * tp + fp + fn
    return (tp + tn) / n, sum(recalls) / len(recalls), (2 * tp / f1_den if f1_den else 0.0)


def roc_auc(y_true, scores):
    """AUC and ROC points (thresholds, fpr, tpr).

    One point per distinct score, swept from high to low; a row is
    predicted positive when its score >= threshold. The area is the
    trapezoid rule evaluated on integer counts, which equals the
    Mann-Whitney statistic with ties counted as one half.
    """
    y = np.asarray(y_true).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.size == 0:
        raise ValueError("y_true and scores must be nonempty and the same length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes in y_true")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s) - 1]
    tps = np.cumsum(y_sorted)[last]
    fps = (last + 1) - tps
    tps = np.r_[0, tps]
    fps = np.r_[0, fps]
    twice_area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    thresholds = np.r_[np.inf, s_sorted[last]]
    return auc, (thresholds, fps / n_neg, tps / n_pos)

"""Evaluation metrics computed from first principles.

Classification metrics are derived from the confusion matrix; ranking metrics
(AUROC, AUC-PR) integrate over the threshold sweep of distinct scores with the
trapezoid rule; regression metrics follow the textbook formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SingleClassLabels(ValueError):
    pass


@dataclass
class EvalReport:
    """Named metric values for one evaluation pass."""

    task: str                      # "binary", "multiclass", "regression"
    metrics: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]

    def as_row(self) -> dict[str, float]:
        return dict(self.metrics)


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(labels, preds):
        cm[int(t), int(p)] += 1
    return cm


def balanced_accuracy(labels: np.ndarray, preds: np.ndarray) -> float:
    """Mean per-class recall over the classes present in the labels."""
    classes = np.unique(labels)
    recalls = []
    for c in classes:
        mask = labels == c
        recalls.append(np.mean(preds[mask] == c))
    return float(np.mean(recalls))


def cohens_kappa(labels: np.ndarray, preds: np.ndarray) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e)."""
    n = len(labels)
    classes = np.unique(np.concatenate([labels, preds]))
    p_o = float(np.mean(labels == preds))
    p_e = 0.0
    for c in classes:
        p_e += float(np.sum(labels == c)) * float(np.sum(preds == c)) / (n * n)
    if p_e == 1.0:
        return 0.0  # degenerate single-cell distribution; agreement is trivial
    return (p_o - p_e) / (1.0 - p_e)


def weighted_f1(labels: np.ndarray, preds: np.ndarray) -> float:
    """Support-weighted harmonic mean of per-class precision and recall."""
    classes = np.unique(labels)
    n = len(labels)
    total = 0.0
    for c in classes:
        tp = float(np.sum((labels == c) & (preds == c)))
        fp = float(np.sum((labels != c) & (preds == c)))
        fn = float(np.sum((labels == c) & (preds != c)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)) if precision + recall > 0 else 0.0
        total += (tp + fn) / n * f1
    return total


def _roc_points(labels: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) at every distinct-score threshold, from all-positive to all-negative."""
    pos = float(np.sum(labels == 1))
    neg = float(np.sum(labels == 0))
    if pos == 0 or neg == 0:
        raise SingleClassLabels("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    tps = np.cumsum(sorted_labels == 1)
    fps = np.cumsum(sorted_labels == 0)
    # Keep only the last point of each tied-score run.
    distinct = np.r_[np.diff(sorted_scores) != 0, True]
    tpr = np.r_[0.0, tps[distinct] / pos]
    fpr = np.r_[0.0, fps[distinct] / neg]
    return fpr, tpr


def auroc(labels: np.ndarray, scores: np.ndarray) -> float:
    fpr, tpr = _roc_points(labels, scores)
    return float(np.trapezoid(tpr, fpr))


def auc_pr(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under precision-recall via trapezoids over the threshold sweep."""
    pos = float(np.sum(labels == 1))
    if pos == 0 or float(np.sum(labels == 0)) == 0:
        raise SingleClassLabels("PR curve needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    tps = np.cumsum(sorted_labels == 1)
    total = np.arange(1, len(labels) + 1)
    distinct = np.r_[np.diff(sorted_scores) != 0, True]
    recall = tps[distinct] / pos
    precision = tps[distinct] / total[distinct]
    # Anchor at recall 0 with the first threshold's precision.
    recall = np.r_[0.0, recall]
    precision = np.r_[precision[0], precision]
    return float(np.trapezoid(precision, recall))


def pearson_r(y: np.ndarray, yhat: np.ndarray) -> float:
    yc = y - y.mean()
    pc = yhat - yhat.mean()
    denom = np.sqrt(np.sum(yc ** 2)) * np.sqrt(np.sum(pc ** 2))
    if denom == 0:
        return 0.0
    return float(np.sum(yc * pc) / denom)


def r2_score(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 0.0 if ss_res > 0 else 1.0
    return 1.0 - ss_res / ss_tot


def rmse(y: np.ndarray, yhat: np.ndarray) -> float:
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def evaluate_metrics(
    preds: np.ndarray,
    labels: np.ndarray,
    task: str,
    scores: np.ndarray | None = None,
) -> EvalReport:
    """Compute the metric suite for one task kind.

    ``preds`` are hard labels for classification and real values for
    regression; binary tasks additionally take positive-class ``scores``
    for the ranking metrics.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    if task == "regression":
        return EvalReport(task=task, metrics={
            "pearson_r": pearson_r(labels, preds),
            "r2": r2_score(labels, preds),
            "rmse": rmse(labels, preds),
        })
    preds = preds.astype(int)
    labels = labels.astype(int)
    out = {
        "balanced_accuracy": balanced_accuracy(labels, preds),
        "cohens_kappa": cohens_kappa(labels, preds),
        "weighted_f1": weighted_f1(labels, preds),
    }
    if task == "binary":
        if scores is not None:
            out["auroc"] = auroc(labels, np.asarray(scores, dtype=float))
            out["auc_pr"] = auc_pr(labels, np.asarray(scores, dtype=float))
        return EvalReport(task=task, metrics=out)
    if task == "multiclass":
        return EvalReport(task=task, metrics=out)
    raise ValueError(f"unknown task kind {task!r}")

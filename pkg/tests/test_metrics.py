"""Metric suite versus independently coded brute-force oracles."""

import numpy as np
import pytest

from neuroscale.metrics import (
    SingleClassLabels, auc_pr, auroc, balanced_accuracy, cohens_kappa,
    evaluate_metrics, pearson_r, r2_score, rmse, weighted_f1,
)

# -- brute-force oracles (deliberately different constructions) -----------------

def oracle_balanced_accuracy(labels, preds):
    recalls = []
    for c in sorted(set(labels.tolist())):
        hit = sum(1 for t, p in zip(labels, preds) if t == c and p == c)
        total = sum(1 for t in labels if t == c)
        recalls.append(hit / total)
    return sum(recalls) / len(recalls)


def oracle_kappa(labels, preds):
    n = len(labels)
    classes = sorted(set(labels.tolist()) | set(preds.tolist()))
    po = sum(1 for t, p in zip(labels, preds) if t == p) / n
    pe = sum(
        (sum(1 for t in labels if t == c) / n) * (sum(1 for p in preds if p == c) / n)
        for c in classes
    )
    if pe == 1.0:
        return 0.0
    return (po - pe) / (1 - pe)


def oracle_weighted_f1(labels, preds):
    n = len(labels)
    out = 0.0
    for c in sorted(set(labels.tolist())):
        tp = sum(1 for t, p in zip(labels, preds) if t == c and p == c)
        fp = sum(1 for t, p in zip(labels, preds) if t != c and p == c)
        fn = sum(1 for t, p in zip(labels, preds) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out += (tp + fn) / n * f1
    return out


def oracle_auroc(labels, scores):
    """Mann-Whitney pair counting with half credit for ties."""
    pos = [s for s, t in zip(scores, labels) if t == 1]
    neg = [s for s, t in zip(scores, labels) if t == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def oracle_auc_pr(labels, scores):
    """Re-derive the PR curve threshold by threshold, then trapezoid."""
    thresholds = sorted(set(scores.tolist()), reverse=True)
    recalls, precisions = [0.0], []
    pos = sum(1 for t in labels if t == 1)
    first_prec = None
    for th in thresholds:
        tp = sum(1 for t, s in zip(labels, scores) if s >= th and t == 1)
        fp = sum(1 for t, s in zip(labels, scores) if s >= th and t == 0)
        precisions.append(tp / (tp + fp))
        recalls.append(tp / pos)
        if first_prec is None:
            first_prec = precisions[0]
    precisions = [first_prec] + precisions
    area = 0.0
    for i in range(1, len(recalls)):
        area += (recalls[i] - recalls[i - 1]) * (precisions[i] + precisions[i - 1]) / 2
    return area


def oracle_pearson(y, yhat):
    n = len(y)
    my, mp = sum(y) / n, sum(yhat) / n
    num = sum((a - my) * (b - mp) for a, b in zip(y, yhat))
    da = sum((a - my) ** 2 for a in y) ** 0.5
    db = sum((b - mp) ** 2 for b in yhat) ** 0.5
    return num / (da * db)


class TestAnalyticAnchors:
    def test_perfect_predictions(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        assert balanced_accuracy(labels, labels) == 1.0
        assert cohens_kappa(labels, labels) == 1.0
        assert weighted_f1(labels, labels) == 1.0

    def test_binary_confusion_case(self):
        # TP=1, FN=1, TN=2, FP=0 with positive class 1.
        labels = np.array([1, 1, 0, 0])
        preds = np.array([1, 0, 0, 0])
        assert abs(balanced_accuracy(labels, preds) - 0.75) < 1e-15

    def test_marginal_independent_kappa_zero(self):
        # Predictions constant: observed accuracy equals chance agreement.
        labels = np.array([0, 0, 1, 1, 1, 0])
        preds = np.zeros(6, dtype=int)
        assert abs(cohens_kappa(labels, preds)) < 1e-12
        # Block-structured independence: prediction marginals replicated per class.
        labels = np.array([0] * 8 + [1] * 4)
        preds = np.array(([0] * 6 + [1] * 2) + ([0] * 3 + [1] * 1))
        assert abs(cohens_kappa(labels, preds)) < 1e-12

    def test_auroc_known_value(self):
        labels = np.array([0, 0, 1, 1])
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        assert abs(auroc(labels, scores) - 0.75) < 1e-12

    def test_single_class_rejected(self):
        with pytest.raises(SingleClassLabels):
            auroc(np.array([1, 1, 1]), np.array([0.1, 0.2, 0.3]))
        with pytest.raises(SingleClassLabels):
            auc_pr(np.array([0, 0]), np.array([0.1, 0.2]))

    def test_regression_anchors(self):
        y = np.array([1.0, 2.0, 3.0])
        assert rmse(y, y) == 0.0
        assert r2_score(y, y) == 1.0
        assert abs(pearson_r(y, 2 * y + 1) - 1.0) < 1e-12
        assert abs(pearson_r(y, -y) + 1.0) < 1e-12
        assert r2_score(y, np.full(3, y.mean())) == 0.0


class TestOracleFuzz:
    N_CASES = 1000

    def test_classification_metrics_against_oracles(self):
        rng = np.random.default_rng(0)
        for _ in range(self.N_CASES):
            k = int(rng.integers(2, 6))
            n = int(rng.integers(k, 40))
            labels = rng.integers(0, k, size=n)
            while len(np.unique(labels)) < 2:
                labels = rng.integers(0, k, size=n)
            preds = rng.integers(0, k, size=n)
            assert abs(balanced_accuracy(labels, preds)
                       - oracle_balanced_accuracy(labels, preds)) <= 1e-10
            assert abs(cohens_kappa(labels, preds) - oracle_kappa(labels, preds)) <= 1e-10
            assert abs(weighted_f1(labels, preds) - oracle_weighted_f1(labels, preds)) <= 1e-10

    def test_ranking_metrics_against_oracles(self):
        rng = np.random.default_rng(1)
        for _ in range(self.N_CASES):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, size=n)
            while len(np.unique(labels)) < 2:
                labels = rng.integers(0, 2, size=n)
            # Quantized scores produce plenty of ties.
            scores = np.round(rng.random(n), 1)
            assert abs(auroc(labels, scores) - oracle_auroc(labels, scores)) <= 1e-10
            assert abs(auc_pr(labels, scores) - oracle_auc_pr(labels, scores)) <= 1e-10

    def test_regression_metrics_against_oracles(self):
        rng = np.random.default_rng(2)
        for _ in range(self.N_CASES):
            n = int(rng.integers(3, 50))
            y = rng.standard_normal(n)
            yhat = rng.standard_normal(n)
            assert abs(pearson_r(y, yhat) - oracle_pearson(y, yhat)) <= 1e-10
            assert abs(rmse(y, yhat)
                       - (sum((a - b) ** 2 for a, b in zip(y, yhat)) / n) ** 0.5) <= 1e-10
            mean = sum(y) / n
            r2_oracle = 1 - sum((a - b) ** 2 for a, b in zip(y, yhat)) / sum(
                (a - mean) ** 2 for a in y)
            assert abs(r2_score(y, yhat) - r2_oracle) <= 1e-10


class TestBoundsFuzz:
    def test_metric_ranges(self):
        rng = np.random.default_rng(3)
        for _ in range(10_000):
            k = int(rng.integers(2, 5))
            n = int(rng.integers(2, 20))
            labels = rng.integers(0, k, size=n)
            preds = rng.integers(0, k, size=n)
            assert 0.0 <= balanced_accuracy(labels, preds) <= 1.0
            assert -1.0 <= cohens_kappa(labels, preds) <= 1.0
            assert 0.0 <= weighted_f1(labels, preds) <= 1.0

    def test_ranking_ranges(self):
        rng = np.random.default_rng(4)
        for _ in range(2_000):
            n = int(rng.integers(4, 30))
            labels = rng.integers(0, 2, size=n)
            if len(np.unique(labels)) < 2:
                continue
            scores = rng.random(n)
            assert 0.0 <= auroc(labels, scores) <= 1.0
            assert 0.0 <= auc_pr(labels, scores) <= 1.0 + 1e-12

    def test_pearson_range(self):
        rng = np.random.default_rng(5)
        for _ in range(2_000):
            n = int(rng.integers(3, 30))
            y, yhat = rng.standard_normal(n), rng.standard_normal(n)
            assert -1.0 - 1e-12 <= pearson_r(y, yhat) <= 1.0 + 1e-12


class TestEvaluateMetrics:
    def test_binary_report(self):
        labels = np.array([0, 1, 0, 1, 1])
        preds = np.array([0, 1, 1, 1, 0])
        scores = np.array([0.2, 0.9, 0.6, 0.7, 0.4])
        rep = evaluate_metrics(preds, labels, "binary", scores=scores)
        assert set(rep.metrics) == {"balanced_accuracy", "cohens_kappa",
                                    "weighted_f1", "auroc", "auc_pr"}

    def test_multiclass_report(self):
        rep = evaluate_metrics(np.array([0, 1, 2]), np.array([0, 1, 2]), "multiclass")
        assert rep["balanced_accuracy"] == 1.0

    def test_regression_report(self):
        rep = evaluate_metrics(np.array([1.0, 2.0]), np.array([1.0, 2.0]), "regression")
        assert rep["rmse"] == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evaluate_metrics(np.array([]), np.array([]), "binary")

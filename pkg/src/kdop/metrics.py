"""Imbalance-aware evaluation metrics for binary outcomes."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, UndefinedMetricError


def _prep(y, scores):
    y = np.asarray(y).astype(np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1 or len(y) == 0:
        raise DimensionError(f"labels {y.shape} and scores {s.shape} must be equal-length vectors")
    return y, s


def roc_auc(y, scores) -> float:
    """Mann-Whitney form: P(pos > neg) + P(pos == neg) / 2, via average ranks."""
    y, s = _prep(y, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(y, scores) -> float:
    """Average precision; tied scores enter as a single cut point."""
    y, s = _prep(y, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    seen = (np.flatnonzero(last_of_group) + 1).astype(np.float64)
    precision = tp / seen
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return float((d_recall * precision).sum())


def confusion(y, y_hat):
    y = np.asarray(y).astype(bool)
    y_hat = np.asarray(y_hat).astype(bool)
    return {
        "tp": int(np.sum(y & y_hat)),
        "fp": int(np.sum(~y & y_hat)),
        "tn": int(np.sum(~y & ~y_hat)),
        "fn": int(np.sum(y & ~y_hat)),
    }


def macro_prf(y, y_hat):
    """Macro precision, recall and F1 over the two classes.

    Precision of a class never predicted is 0. A class absent from ``y``
    is left out of the recall and F1 means.
    """
    y = np.asarray(y).astype(np.int64)
    y_hat = np.asarray(y_hat).astype(np.int64)
    if y.shape != y_hat.shape:
        raise DimensionError("labels and predictions differ in length")
    precisions, recalls, f1s = [], [], []
    for c in (0, 1):
        tp = np.sum((y == c) & (y_hat == c))
        n_pred = np.sum(y_hat == c)
        n_true = np.sum(y == c)
        prec = tp / n_pred if n_pred else 0.0
        precisions.append(prec)
        if n_true:
            rec = tp / n_true
            recalls.append(rec)
            f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0  # noqa: E731
    return mean(precisions), mean(recalls), mean(f1s)


def module_contribution(pr_auc_dynamic: float, pr_auc_full: float):
    """Share of the two modules in the justification bar, from their PR-AUCs."""
    total = pr_auc_dynamic + pr_auc_full
    if total <= 0:
        raise UndefinedMetricError("both PR-AUCs are zero")
    w_dynamic = pr_auc_dynamic / total
    return w_dynamic, 1.0 - w_dynamic


@dataclass
class MetricReport:
    pr_auc: float
    roc_auc: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    gamma: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def evaluate(y, p, gamma) -> MetricReport:
    y = np.asarray(y)
    p = np.asarray(p, dtype=np.float64)
    y_hat = (p >= gamma).astype(np.int64)
    prec, rec, f1 = macro_prf(y, y_hat)
    return MetricReport(pr_auc(y, p), roc_auc(y, p), prec, rec, f1, **confusion(y, y_hat),
                        gamma=float(gamma))


def summarize(values):
    """Mean and min-max range of a list of per-rotation values."""
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "min": float(arr.min()), "max": float(arr.max())}


def average_over_intervals(summaries: dict) -> dict:
    """Average per-interval fold means into one row per model and metric.

    ``summaries`` maps interval days to a report summary
    (``{model: {metric: {"mean": ...}}}``). Each interval counts once,
    whatever its number of folds.
    """
    if not summaries:
        raise UndefinedMetricError("no intervals to average")
    first = next(iter(summaries.values()))
    return {
        model: {m: float(np.mean([s[model][m]["mean"] for s in summaries.values()]))
                for m in first[model]}
        for model in first
    }

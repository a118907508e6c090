"""Sample-weighted gradient boosted trees for binary outcomes.

Logistic loss, exact greedy splits, Newton leaf values. Sample weights are
normalised to mean one after zero-weight rows are removed, so the fitted
model does not depend on the overall weight scale and rows with zero
weight have no influence at all.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, ThresholdError, TrainingError
from .numerics import make_rng, sigmoid

MODEL_VERSION = 1
_P_EPS = 1e-15


@dataclass
class GbConfig:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")


@dataclass
class RegressionTree:
    """Preorder node arrays. Leaves have ``feature == -1``."""

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)

    def _add(self, feature=-1, threshold=0.0, value=0.0):
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def predict(self, X):
        out = np.empty(len(X))
        for r, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[r] = self.value[node]
        return out

    def depth(self, node=0):
        if self.feature[node] < 0:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))


@dataclass
class GbModel:
    base_score: float
    trees: list
    learning_rate: float
    n_features: int
    feature_names: list = field(default_factory=list)
    gains: list = field(default_factory=list)  # per-tree list of (feature, gain)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "version": MODEL_VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "trees": [asdict(t) for t in self.trees],
            "gains": self.gains,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        trees = [RegressionTree(**t) for t in d["trees"]]
        gains = [[(int(f), float(g)) for f, g in tree] for tree in d["gains"]]
        return cls(d["base_score"], trees, d["learning_rate"], d["n_features"],
                   d["feature_names"], gains, d["config"])


def save_model(path, model: GbModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, sort_keys=True)


def load_model(path) -> GbModel:
    with open(path, encoding="utf-8") as fh:
        return GbModel.from_dict(json.load(fh))


# -- training ---------------------------------------------------------------


def _best_split(X, g, h, rows, min_leaf):
    """Exact greedy split over all features; returns (gain, feature, threshold) or None."""
    G, H = g[rows].sum(), h[rows].sum()
    parent = G * G / H
    best = None
    for j in range(X.shape[1]):
        xs = X[rows, j]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        gl = np.cumsum(g[rows][order])[:-1]
        hl = np.cumsum(h[rows][order])[:-1]
        n_left = np.arange(1, len(rows))
        ok = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (len(rows) - n_left >= min_leaf)
        ok &= (hl > 0) & (H - hl > 0)
        if not ok.any():
            continue
        cand = np.flatnonzero(ok)
        gain = gl[cand] ** 2 / hl[cand] + (G - gl[cand]) ** 2 / (H - hl[cand]) - parent
        k = int(np.argmax(gain))  # first max -> lowest threshold
        if gain[k] > 1e-12 and (best is None or gain[k] > best[0]):
            i = cand[k]
            best = (float(gain[k]), j, float((xs[i] + xs[i + 1]) / 2.0))
    return best


def _grow(tree, X, g, h, rows, depth, config, gains):
    G, H = g[rows].sum(), h[rows].sum()
    split = None
    if depth < config.max_depth and len(rows) >= 2 * config.min_samples_leaf:
        split = _best_split(X, g, h, rows, config.min_samples_leaf)
    if split is None:
        return tree._add(value=float(-G / H) if H > 0 else 0.0)
    gain, j, thr = split
    gains.append((j, gain / 2.0))
    node = tree._add(feature=j, threshold=thr)
    go_left = X[rows, j] <= thr
    tree.left[node] = _grow(tree, X, g, h, rows[go_left], depth + 1, config, gains)
    tree.right[node] = _grow(tree, X, g, h, rows[~go_left], depth + 1, config, gains)
    return node


def _check_inputs(X, y, w):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or not (len(X) == len(y) == len(w)):
        raise DimensionError(f"X {X.shape}, y {y.shape}, weights {w.shape} disagree")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample weights must be finite and non-negative")
    if not w.any():
        raise ValueError("sample weights are all zero")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    return X, y.astype(np.float64), w


def train_gb(X, y, weights=None, config: GbConfig | None = None, feature_names=None) -> GbModel:
    """Boosted logistic-loss ensemble with per-row sample weights."""
    config = config or GbConfig()
    X, y, w = _check_inputs(X, y, weights)
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    if y.min() == y.max():
        raise TrainingError("training labels contain a single class")
    w = w / w.mean()
    base = float(np.log((w * y).sum() / (w * (1 - y)).sum()))
    F = np.full(len(y), base)
    rng = make_rng(config.seed)
    trees, all_gains = [], []
    for _ in range(config.n_trees):
        p = sigmoid(F)
        g = w * (p - y)
        h = w * p * (1 - p)
        rows = np.arange(len(y))
        if config.subsample < 1.0:
            m = max(2 * config.min_samples_leaf, int(round(config.subsample * len(y))))
            rows = np.sort(rng.choice(len(y), size=min(m, len(y)), replace=False))
        tree, gains = RegressionTree(), []
        _grow(tree, X, g, h, rows, 0, config, gains)
        trees.append(tree)
        all_gains.append(gains)
        F = F + config.learning_rate * tree.predict(X)
    return GbModel(base, trees, config.learning_rate, X.shape[1],
                   list(feature_names) if feature_names is not None else [],
                   all_gains, asdict(config))


def decision_function(model: GbModel, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionError(f"model expects {model.n_features} features, got shape {X.shape}")
    F = np.full(len(X), model.base_score)
    for tree in model.trees:
        F += model.learning_rate * tree.predict(X)
    return F


def predict_proba(model: GbModel, X):
    return np.clip(sigmoid(decision_function(model, X)), _P_EPS, 1 - _P_EPS)


def weighted_log_loss(model: GbModel, X, y, weights=None, n_trees=None) -> float:
    """Mean weighted log-loss after the first ``n_trees`` rounds (all by default)."""
    X, y, w = _check_inputs(X, y, weights)
    F = np.full(len(y), model.base_score)
    for tree in model.trees[:n_trees]:
        F += model.learning_rate * tree.predict(X)
    # log(1 + e^F) - yF, stable
    loss = np.logaddexp(0.0, F) - y * F
    return float((w * loss).sum() / w.sum())


def feature_importance(model: GbModel) -> np.ndarray:
    """Total split gain per feature, normalised to sum to one (zeros if no splits)."""
    imp = np.zeros(model.n_features)
    for gains in model.gains:
        for j, gain in gains:
            imp[j] += gain
    total = imp.sum()
    return imp / total if total > 0 else imp


# -- thresholding -----------------------------------------------------------


def _f1_recall(y, p, gamma):
    pred = p >= gamma
    tp = np.sum(pred & (y == 1))
    fp = np.sum(pred & (y == 0))
    fn = np.sum(~pred & (y == 1))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return f1, tp / (tp + fn)


def select_threshold(y_valid, p_valid) -> float:
    """F1-maximising cut on validation probabilities.

    Candidates are 0, 1 and midpoints between consecutive distinct
    probabilities. Ties go to higher recall, then to the lower threshold.
    """
    y = np.asarray(y_valid)
    p = np.asarray(p_valid, dtype=np.float64)
    if len(y) != len(p):
        raise DimensionError("labels and probabilities differ in length")
    if len(np.unique(y)) < 2:
        raise ThresholdError("threshold selection needs both classes")
    u = np.unique(p)
    cands = np.unique(np.concatenate([[0.0, 1.0], (u[1:] + u[:-1]) / 2.0]))
    best, best_key = 0.0, None
    for gamma in cands:
        f1, rec = _f1_recall(y, p, gamma)
        key = (f1, rec)
        if best_key is None or key > best_key:
            best, best_key = float(gamma), key
    return best


def classify(p, gamma):
    """1 where the probability reaches the threshold."""
    return (np.asarray(p) >= gamma).astype(np.int64)

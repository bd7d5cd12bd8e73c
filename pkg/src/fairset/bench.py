"""Baseline classifiers and the accuracy-comparison table across test sets.

Four classic models, each trained on [0,1]-scaled flat pixels with a fixed
seed: multinomial logistic regression under mini-batch SGD, a one-vs-all
perceptron, a Gini CART tree, and a bagged forest with per-split feature
subsampling. Tree splits use 256-bin class histograms, which is exact here
because pixels only take 256 values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .idx import ImageSet

MODEL_KINDS = ("sgd-linear", "perceptron", "decision-tree", "random-forest")
NUM_CLASSES = 10
NUM_PIXELS = 784


@dataclass
class BenchConfig:
    seed: int = 0
    sgd_learning_rate: float = 0.1
    sgd_epochs: int = 5
    sgd_batch_size: int = 32
    perceptron_epochs: int = 10
    tree_max_depth: int = 20
    tree_min_leaf: int = 5
    forest_trees: int = 30
    forest_features: int = 28  # floor(sqrt(784))


def flatten_scaled(image_set: ImageSet) -> tuple[np.ndarray, np.ndarray]:
    x = image_set.images.reshape(image_set.n, -1).astype(np.float32) / 255.0
    return x, image_set.labels.astype(np.int64)


class SgdLinearClassifier:
    """Multinomial logistic regression; lr decays as 1/sqrt(step)."""

    def __init__(self, config: BenchConfig):
        self.config = config
        self.w = np.zeros((NUM_PIXELS, NUM_CLASSES), dtype=np.float64)
        self.b = np.zeros(NUM_CLASSES, dtype=np.float64)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "SgdLinearClassifier":
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        n = x.shape[0]
        for epoch in range(cfg.sgd_epochs):
            perm = rng.permutation(n)
            lr = cfg.sgd_learning_rate / np.sqrt(epoch + 1)
            for s in range(0, n, cfg.sgd_batch_size):
                idx = perm[s : s + cfg.sgd_batch_size]
                xb, yb = x[idx], y[idx]
                logits = xb @ self.w + self.b
                logits -= logits.max(axis=1, keepdims=True)
                probs = np.exp(logits)
                probs /= probs.sum(axis=1, keepdims=True)
                probs[np.arange(len(idx)), yb] -= 1.0
                probs /= len(idx)
                self.w -= lr * (xb.T @ probs)
                self.b -= lr * probs.sum(axis=0)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (x @ self.w + self.b).argmax(axis=1)


class PerceptronOvA:
    """One-vs-all perceptron rule, online updates, reshuffled each epoch."""

    def __init__(self, config: BenchConfig):
        self.config = config
        self.w = np.zeros((NUM_CLASSES, NUM_PIXELS + 1), dtype=np.float64)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "PerceptronOvA":
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        n = x.shape[0]
        xb = np.hstack([x, np.ones((n, 1), dtype=x.dtype)]).astype(np.float64)
        targets = np.where(y[:, None] == np.arange(NUM_CLASSES)[None, :], 1.0, -1.0)
        for _ in range(cfg.perceptron_epochs):
            for i in rng.permutation(n):
                xi = xb[i]
                wrong = (self.w @ xi) * targets[i] <= 0.0
                if wrong.any():
                    self.w[wrong] += np.outer(targets[i][wrong], xi)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        xb = np.hstack([x, np.ones((x.shape[0], 1), dtype=x.dtype)])
        return (xb @ self.w.T).argmax(axis=1)


def _to_bins(x: np.ndarray) -> np.ndarray:
    """Back to the 256 integer pixel levels; exact for MNIST-family data."""
    return np.rint(x * 255.0).astype(np.int64)


def _best_split(xb, y, features, min_leaf):
    """Scan class histograms over all 256 thresholds for each candidate feature.

    Returns (feature, threshold, score) of the best Gini-weighted split, or
    None when no split satisfies the leaf-size floor.
    """
    n = xb.shape[0]
    f = len(features)
    codes = (np.arange(f)[None, :] * 256 + xb[:, features]) * NUM_CLASSES + y[:, None]
    counts = np.bincount(codes.ravel(), minlength=f * 256 * NUM_CLASSES).reshape(
        f, 256, NUM_CLASSES
    )
    left = counts.cumsum(axis=1).astype(np.float64)  # class counts for x <= v
    total = left[:, -1:, :]
    right = total - left
    n_left = left.sum(axis=2)
    n_right = n - n_left

    with np.errstate(invalid="ignore", divide="ignore"):
        gini_l = 1.0 - ((left / np.maximum(n_left, 1)[:, :, None]) ** 2).sum(axis=2)
        gini_r = 1.0 - ((right / np.maximum(n_right, 1)[:, :, None]) ** 2).sum(axis=2)
    score = (n_left * gini_l + n_right * gini_r) / n
    score[(n_left < min_leaf) | (n_right < min_leaf)] = np.inf
    score = score[:, :-1]  # threshold 255 sends everything left

    flat = int(score.argmin())
    fi, v = divmod(flat, 255)
    if not np.isfinite(score[fi, v]):
        return None
    return int(features[fi]), int(v), float(score[fi, v])


class DecisionTree:
    """CART with Gini impurity over discretized pixel levels."""

    def __init__(self, config: BenchConfig, feature_rng: np.random.Generator | None = None):
        self.config = config
        self.feature_rng = feature_rng  # set -> per-split feature subsampling
        self.nodes: list[tuple] = []  # ("leaf", class) | ("split", feat, thr, left, right)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "DecisionTree":
        xb = _to_bins(x)
        self._grow(xb, y, np.arange(xb.shape[0]), depth=0)
        return self

    def _leaf(self, y_node) -> int:
        counts = np.bincount(y_node, minlength=NUM_CLASSES)
        self.nodes.append(("leaf", int(counts.argmax())))
        return len(self.nodes) - 1

    def _grow(self, xb, y, idx, depth) -> int:
        y_node = y[idx]
        cfg = self.config
        if depth >= cfg.tree_max_depth or len(idx) < 2 * cfg.tree_min_leaf or len(set(y_node.tolist())) == 1:
            return self._leaf(y_node)
        if self.feature_rng is not None:
            features = np.sort(
                self.feature_rng.choice(NUM_PIXELS, size=cfg.forest_features, replace=False)
            )
        else:
            features = np.arange(NUM_PIXELS)
        split = _best_split(xb[idx], y_node, features, cfg.tree_min_leaf)
        if split is None:
            return self._leaf(y_node)
        feat, thr, _ = split
        mask = xb[idx, feat] <= thr
        self.nodes.append(None)  # reserve slot so children index correctly
        pos = len(self.nodes) - 1
        left = self._grow(xb, y, idx[mask], depth + 1)
        right = self._grow(xb, y, idx[~mask], depth + 1)
        self.nodes[pos] = ("split", feat, thr, left, right)
        return pos

    def predict(self, x: np.ndarray) -> np.ndarray:
        xb = _to_bins(x)
        out = np.zeros(xb.shape[0], dtype=np.int64)
        # the root is node 0; vectorize by routing index groups down the tree
        stack = [(0, np.arange(xb.shape[0]))]
        while stack:
            node_id, idx = stack.pop()
            if idx.size == 0:
                continue
            node = self.nodes[node_id]
            if node[0] == "leaf":
                out[idx] = node[1]
                continue
            _, feat, thr, left, right = node
            mask = xb[idx, feat] <= thr
            stack.append((left, idx[mask]))
            stack.append((right, idx[~mask]))
        return out


class RandomForest:
    """Bootstrap-bagged CART trees, 28 random candidate features per split."""

    def __init__(self, config: BenchConfig):
        self.config = config
        self.trees: list[DecisionTree] = []

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RandomForest":
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        n = x.shape[0]
        self.trees = []
        for _ in range(cfg.forest_trees):
            sample = rng.integers(0, n, n)
            tree = DecisionTree(cfg, feature_rng=np.random.default_rng(rng.integers(2**63)))
            tree.fit(x[sample], y[sample])
            self.trees.append(tree)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        votes = np.zeros((x.shape[0], NUM_CLASSES), dtype=np.int64)
        for tree in self.trees:
            votes[np.arange(x.shape[0]), tree.predict(x)] += 1
        return votes.argmax(axis=1)


_MODELS = {
    "sgd-linear": SgdLinearClassifier,
    "perceptron": PerceptronOvA,
    "decision-tree": DecisionTree,
    "random-forest": RandomForest,
}


def train_baseline(kind: str, train_set: ImageSet, config: BenchConfig | None = None):
    if kind not in _MODELS:
        raise DataError(f"unknown baseline kind {kind!r}; expected one of {MODEL_KINDS}")
    if train_set.n == 0:
        raise DataError("empty training set")
    x, y = flatten_scaled(train_set)
    return _MODELS[kind](config or BenchConfig()).fit(x, y)


def evaluate(model, test_set: ImageSet) -> float:
    if test_set.images.shape[1:] != (28, 28):
        raise ShapeError(f"test images must be (N,28,28), got {test_set.images.shape}")
    x, y = flatten_scaled(test_set)
    return float((model.predict(x) == y).mean())


def knn1_accuracy(train_set: ImageSet, test_set: ImageSet, block: int = 256) -> float:
    """1-nearest-neighbor memorizer on raw pixels; the contamination probe."""
    xtr, ytr = flatten_scaled(train_set)
    xte, yte = flatten_scaled(test_set)
    tr_sq = (xtr.astype(np.float64) ** 2).sum(axis=1)
    correct = 0
    for s in range(0, xte.shape[0], block):
        chunk = xte[s : s + block].astype(np.float64)
        d = (chunk**2).sum(axis=1)[:, None] + tr_sq[None, :] - 2.0 * chunk @ xtr.T.astype(np.float64)
        correct += int((ytr[d.argmin(axis=1)] == yte[s : s + block]).sum())
    return correct / xte.shape[0]


@dataclass
class ComparisonTable:
    rows: dict[str, dict[str, float]]  # model kind -> column name -> accuracy
    columns: list[str]
    metadata: dict = field(default_factory=dict)

    def to_markdown(self) -> str:
        header = "| Model | " + " | ".join(self.columns) + " |"
        sep = "|---" * (len(self.columns) + 1) + "|"
        lines = [header, sep]
        for kind in self.rows:
            cells = " | ".join(f"{self.rows[kind][c]:.3f}" for c in self.columns)
            lines.append(f"| {kind} | {cells} |")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(
            {"rows": self.rows, "columns": self.columns, "metadata": self.metadata},
            indent=2,
            sort_keys=True,
        ) + "\n"


def compare(
    models: dict[str, object],
    test_sets: list[tuple[str, ImageSet]],
    metadata: dict | None = None,
) -> ComparisonTable:
    columns = [name for name, _ in test_sets]
    rows = {}
    for kind, model in models.items():
        rows[kind] = {name: round(evaluate(model, ts), 3) for name, ts in test_sets}
    meta = dict(metadata or {})
    meta.setdefault("test_set_sizes", {name: ts.n for name, ts in test_sets})
    return ComparisonTable(rows=rows, columns=columns, metadata=meta)

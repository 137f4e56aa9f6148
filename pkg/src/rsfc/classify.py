"""Developmental-stage classifiers and evaluation helpers.

Three self-contained classifiers (k-nearest-neighbour, random forest of CART
trees, linear one-vs-rest SVM) with deterministic training given a seed and
versioned JSON persistence: a saved model reloads to one that produces
identical predictions.  Vote and score ties always break toward the smaller
class label so results never depend on dict ordering or float noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rsfc.errors import DataError

__all__ = [
    "stratified_split",
    "KnnClassifier",
    "RandomForest",
    "LinearSvm",
    "save_model",
    "load_model",
    "accuracy",
    "confusion_matrix",
    "per_class_recall",
]


def stratified_split(
    labels: np.ndarray, test_fraction: float, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test split preserving per-class proportions.

    Each class contributes ``round(test_fraction * n_c)`` test items (at
    least one and at most n_c - 1 when the class has two or more members, so
    no class vanishes from either side).  Returns sorted index arrays.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    test_parts = []
    train_parts = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        n_c = idx.shape[0]
        perm = rng.permutation(n_c)
        if n_c == 1:
            n_test = 0
        else:
            n_test = int(round(test_fraction * n_c))
            n_test = min(max(n_test, 1), n_c - 1)
        test_parts.append(idx[perm[:n_test]])
        train_parts.append(idx[perm[n_test:]])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts)) if any(p.size for p in test_parts) else np.array([], dtype=np.int64)
    return train, test


def _as_xy(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, d) with matching 1-D labels")
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    return x, y


# ---------------------------------------------------------------------------
# k-nearest neighbours
# ---------------------------------------------------------------------------


class KnnClassifier:
    """Majority vote over the k nearest training points (Euclidean)."""

    def __init__(self, k: int = 5):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self._x: np.ndarray | None = None
        self._y: np.ndarray | None = None
        self.classes_: np.ndarray | None = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "KnnClassifier":
        x, y = _as_xy(x, y)
        if self.k > x.shape[0]:
            raise ValueError(f"k={self.k} exceeds training size {x.shape[0]}")
        self.classes_ = np.unique(y)
        self._x = x.copy()
        self._y = y.copy()
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("classifier is not fitted")
        x = np.asarray(x, dtype=np.float64)
        d = (
            np.sum(x * x, axis=1)[:, None]
            + np.sum(self._x * self._x, axis=1)[None, :]
            - 2.0 * (x @ self._x.T)
        )
        # stable sort: distance ties resolve to the earlier training row
        nn = np.argsort(d, axis=1, kind="stable")[:, : self.k]
        out = np.empty(x.shape[0], dtype=self.classes_.dtype)
        for i in range(x.shape[0]):
            votes = self._y[nn[i]]
            counts = [(int(np.sum(votes == c))) for c in self.classes_]
            out[i] = self.classes_[int(np.argmax(counts))]
        return out

    def to_json_dict(self) -> dict:
        if self._x is None:
            raise RuntimeError("classifier is not fitted")
        return {
            "model": "knn",
            "version": 1,
            "k": self.k,
            "train_x": self._x.tolist(),
            "train_y": self._y.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "KnnClassifier":
        if obj.get("model") != "knn" or obj.get("version") != 1:
            raise DataError("not a version-1 knn model")
        inst = cls(k=int(obj["k"]))
        inst.fit(np.array(obj["train_x"], dtype=np.float64), np.array(obj["train_y"]))
        return inst


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------


@dataclass
class _Tree:
    feature: list[int]  # -1 for leaves
    threshold: list[float]
    left: list[int]
    right: list[int]
    leaf_class: list[int]  # class index, -1 for internal nodes

    def predict_one(self, row: np.ndarray) -> int:
        node = 0
        while self.feature[node] >= 0:
            if row[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return self.leaf_class[node]


def _gini(counts: np.ndarray, total: int) -> float:
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _grow_tree(
    x: np.ndarray,
    y_idx: np.ndarray,
    n_classes: int,
    rng: np.random.Generator,
    max_features: int,
    min_samples_split: int,
    max_depth: int | None,
) -> _Tree:
    n, d = x.shape
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), y_idx] = 1.0
    tree = _Tree([], [], [], [], [])

    def new_node() -> int:
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.leaf_class.append(-1)
        return len(tree.feature) - 1

    def make_leaf(node: int, rows: np.ndarray) -> None:
        counts = np.bincount(y_idx[rows], minlength=n_classes)
        tree.leaf_class[node] = int(np.argmax(counts))  # tie -> smaller class

    root = new_node()
    stack: list[tuple[int, np.ndarray, int]] = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        m = rows.shape[0]
        counts = np.bincount(y_idx[rows], minlength=n_classes)
        parent_gini = _gini(counts, m)
        if (
            m < min_samples_split
            or parent_gini == 0.0
            or (max_depth is not None and depth >= max_depth)
        ):
            make_leaf(node, rows)
            continue

        feats = np.sort(rng.choice(d, size=max_features, replace=False))
        xr = x[rows]
        hot = onehot[rows]
        best_score = np.inf
        best_feat = -1
        best_thr = 0.0
        best_mask: np.ndarray | None = None
        for f in feats.tolist():
            v = xr[:, f]
            order = np.argsort(v, kind="stable")
            vs = v[order]
            if vs[0] == vs[-1]:
                continue
            cum = np.cumsum(hot[order], axis=0)
            left = cum[:-1]
            nl = np.arange(1, m, dtype=np.float64)
            nr = m - nl
            right = cum[-1][None, :] - left
            gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
            gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
            score = (nl * gl + nr * gr) / m
            score[vs[1:] == vs[:-1]] = np.inf  # can only cut between distinct values
            t = int(np.argmin(score))
            if score[t] < best_score:
                best_score = float(score[t])
                best_feat = f
                best_thr = 0.5 * (vs[t] + vs[t + 1])
                best_mask = v <= best_thr
        if best_feat < 0 or best_score >= parent_gini - 1e-12:
            make_leaf(node, rows)
            continue

        tree.feature[node] = best_feat
        tree.threshold[node] = best_thr
        li = new_node()
        ri = new_node()
        tree.left[node] = li
        tree.right[node] = ri
        stack.append((ri, rows[~best_mask], depth + 1))
        stack.append((li, rows[best_mask], depth + 1))
    return tree


class RandomForest:
    """Bagged CART trees, gini splits, sqrt(d) features per split."""

    def __init__(
        self,
        n_trees: int = 100,
        max_depth: int | None = None,
        min_samples_split: int = 2,
        seed: int = 0,
    ):
        if n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.seed = seed
        self.classes_: np.ndarray | None = None
        self._trees: list[_Tree] = []

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RandomForest":
        x, y = _as_xy(x, y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n, d = x.shape
        max_features = max(1, math.isqrt(d))
        root = np.random.default_rng(self.seed)
        tree_seeds = root.integers(0, 2**63 - 1, size=self.n_trees)
        self._trees = []
        for ts in tree_seeds:
            rng = np.random.default_rng(int(ts))
            boot = rng.integers(0, n, size=n)
            self._trees.append(
                _grow_tree(
                    x[boot],
                    y_idx[boot],
                    len(self.classes_),
                    rng,
                    max_features,
                    self.min_samples_split,
                    self.max_depth,
                )
            )
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if not self._trees:
            raise RuntimeError("classifier is not fitted")
        x = np.asarray(x, dtype=np.float64)
        votes = np.zeros((x.shape[0], len(self.classes_)), dtype=np.int64)
        for tree in self._trees:
            for i in range(x.shape[0]):
                votes[i, tree.predict_one(x[i])] += 1
        return self.classes_[np.argmax(votes, axis=1)]  # tie -> smaller class

    def to_json_dict(self) -> dict:
        if not self._trees:
            raise RuntimeError("classifier is not fitted")
        return {
            "model": "random_forest",
            "version": 1,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "seed": self.seed,
            "classes": self.classes_.tolist(),
            "trees": [
                {
                    "feature": t.feature,
                    "threshold": t.threshold,
                    "left": t.left,
                    "right": t.right,
                    "leaf_class": t.leaf_class,
                }
                for t in self._trees
            ],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RandomForest":
        if obj.get("model") != "random_forest" or obj.get("version") != 1:
            raise DataError("not a version-1 random_forest model")
        inst = cls(
            n_trees=int(obj["n_trees"]),
            max_depth=obj["max_depth"],
            min_samples_split=int(obj["min_samples_split"]),
            seed=int(obj["seed"]),
        )
        inst.classes_ = np.array(obj["classes"])
        inst._trees = [
            _Tree(
                [int(v) for v in t["feature"]],
                [float(v) for v in t["threshold"]],
                [int(v) for v in t["left"]],
                [int(v) for v in t["right"]],
                [int(v) for v in t["leaf_class"]],
            )
            for t in obj["trees"]
        ]
        return inst


# ---------------------------------------------------------------------------
# linear SVM (one-vs-rest, hinge loss, full-batch subgradient descent)
# ---------------------------------------------------------------------------


class LinearSvm:
    """Linear one-vs-rest SVM trained by deterministic subgradient descent.

    Features are standardised internally (the scaler is part of the model).
    With ``class_weight="balanced"`` each sample's hinge loss is weighted by
    n / (C * n_class), which lifts minority-class recall on skewed cohorts.
    The per-epoch regularised objective is recorded in ``objective_history``
    and the weights giving the lowest objective are kept.
    """

    def __init__(
        self,
        lam: float = 1e-3,
        lr: float = 0.5,
        epochs: int = 300,
        class_weight: str | None = None,
    ):
        if lam <= 0 or lr <= 0 or epochs < 1:
            raise ValueError("lam and lr must be positive, epochs >= 1")
        if class_weight not in (None, "balanced"):
            raise ValueError("class_weight must be None or 'balanced'")
        self.lam = lam
        self.lr = lr
        self.epochs = epochs
        self.class_weight = class_weight
        self.classes_: np.ndarray | None = None
        self._w: np.ndarray | None = None  # (C, d)
        self._b: np.ndarray | None = None  # (C,)
        self._mu: np.ndarray | None = None
        self._sd: np.ndarray | None = None
        self.objective_history: list[float] = []

    def _sample_weights(self, y_idx: np.ndarray, n_classes: int) -> np.ndarray:
        n = y_idx.shape[0]
        if self.class_weight is None:
            return np.ones(n)
        counts = np.bincount(y_idx, minlength=n_classes)
        w_class = n / (n_classes * np.maximum(counts, 1))
        return w_class[y_idx]

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LinearSvm":
        x, y = _as_xy(x, y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n_classes = len(self.classes_)
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self._mu = np.mean(x, axis=0)
        sd = np.std(x, axis=0)
        self._sd = np.where(sd > 0, sd, 1.0)
        xs = (x - self._mu) / self._sd
        n, d = xs.shape
        cw = self._sample_weights(y_idx, n_classes)

        w = np.zeros((n_classes, d))
        b = np.zeros(n_classes)
        signs = np.where(y_idx[None, :] == np.arange(n_classes)[:, None], 1.0, -1.0)  # (C, n)

        def objective(wm: np.ndarray, bm: np.ndarray) -> float:
            margins = 1.0 - signs * (xs @ wm.T + bm[None, :]).T  # (C, n)
            hinge = np.maximum(margins, 0.0)
            return float(
                0.5 * self.lam * np.sum(wm * wm) + np.sum(cw[None, :] * hinge) / n
            )

        best_obj = objective(w, b)
        best_w = w.copy()
        best_b = b.copy()
        self.objective_history = [best_obj]
        for t in range(1, self.epochs + 1):
            scores = xs @ w.T + b[None, :]  # (n, C)
            active = (signs * scores.T) < 1.0  # (C, n)
            coef = cw[None, :] * signs * active  # (C, n)
            grad_w = self.lam * w - (coef @ xs) / n
            grad_b = -np.sum(coef, axis=1) / n
            step = self.lr / (1.0 + 0.02 * t)
            w = w - step * grad_w
            b = b - step * grad_b
            obj = objective(w, b)
            self.objective_history.append(obj)
            if obj < best_obj:
                best_obj = obj
                best_w = w.copy()
                best_b = b.copy()
        self._w = best_w
        self._b = best_b
        return self

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        if self._w is None:
            raise RuntimeError("classifier is not fitted")
        x = np.asarray(x, dtype=np.float64)
        xs = (x - self._mu) / self._sd
        return xs @ self._w.T + self._b[None, :]

    def predict(self, x: np.ndarray) -> np.ndarray:
        scores = self.decision_scores(x)
        return self.classes_[np.argmax(scores, axis=1)]  # tie -> smaller class

    def to_json_dict(self) -> dict:
        if self._w is None:
            raise RuntimeError("classifier is not fitted")
        return {
            "model": "linear_svm",
            "version": 1,
            "lam": self.lam,
            "lr": self.lr,
            "epochs": self.epochs,
            "class_weight": self.class_weight,
            "classes": self.classes_.tolist(),
            "w": self._w.tolist(),
            "b": self._b.tolist(),
            "mu": self._mu.tolist(),
            "sd": self._sd.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "LinearSvm":
        if obj.get("model") != "linear_svm" or obj.get("version") != 1:
            raise DataError("not a version-1 linear_svm model")
        inst = cls(
            lam=float(obj["lam"]),
            lr=float(obj["lr"]),
            epochs=int(obj["epochs"]),
            class_weight=obj["class_weight"],
        )
        inst.classes_ = np.array(obj["classes"])
        inst._w = np.array(obj["w"], dtype=np.float64)
        inst._b = np.array(obj["b"], dtype=np.float64)
        inst._mu = np.array(obj["mu"], dtype=np.float64)
        inst._sd = np.array(obj["sd"], dtype=np.float64)
        return inst


# ---------------------------------------------------------------------------
# persistence and metrics
# ---------------------------------------------------------------------------

_MODEL_TYPES = {
    "knn": KnnClassifier,
    "random_forest": RandomForest,
    "linear_svm": LinearSvm,
}


def save_model(path: str | Path, model) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json_dict(), fh)
        fh.write("\n")


def load_model(path: str | Path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid model JSON: {exc}") from exc
    kind = obj.get("model")
    if kind not in _MODEL_TYPES:
        raise DataError(f"{path}: unknown model type {kind!r}")
    return _MODEL_TYPES[kind].from_json_dict(obj)


def accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("label arrays must be non-empty and matching")
    return float(np.mean(y_true == y_pred))


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, classes: np.ndarray) -> np.ndarray:
    classes = np.asarray(classes)
    lut = {c: i for i, c in enumerate(classes.tolist())}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(np.asarray(y_true).tolist(), np.asarray(y_pred).tolist()):
        cm[lut[t], lut[p]] += 1
    return cm


def per_class_recall(y_true: np.ndarray, y_pred: np.ndarray, classes: np.ndarray) -> np.ndarray:
    cm = confusion_matrix(y_true, y_pred, classes)
    totals = cm.sum(axis=1)
    out = np.full(len(classes), np.nan)
    nz = totals > 0
    out[nz] = np.diag(cm)[nz] / totals[nz]
    return out

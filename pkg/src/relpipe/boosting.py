"""Multiclass gradient boosting with softmax loss over depth-limited trees.

Each round fits one regression tree per class to the residual
``onehot - softmax``.  Splits are exact greedy variance reduction on the
residual; leaves take one Newton step, damped by ``(K - 1) / K`` as in
Friedman's multiclass formulation, and are scaled by the learning rate.

A Newton leaf can overshoot badly when it holds a rare class (tiny hessian),
so each round's step is halved until the training loss does not increase;
a round that never stops increasing it is kept with zero leaves.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError

log = logging.getLogger(__name__)

_MIN_GAIN = 1e-12
_MIN_HESS = 1e-12
_TIE_RTOL = 1e-9   # gains this close count as ties; earlier feature/threshold wins
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class BoostingParams:
    rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 3
    min_leaf: int = 5

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass(frozen=True)
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf.  Left means ``x <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.value[node]
            r, n, f = rows[inner], node[inner], feat[inner]
            go_left = X[r, f] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def to_json(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"value": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_json(int(self.left[i])),
            "right": self.to_json(int(self.right[i])),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def add(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "value" in node:
                value[i] = float(node["value"])
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                left[i] = add(node["left"])
                right[i] = add(node["right"])
            return i

        add(obj)
        return cls(np.array(feature, dtype=np.int64), np.array(threshold),
                   np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                   np.array(value))


def _best_split(X, orders, g, min_leaf):
    """Best (gain, feature, threshold) over all features for one node, or None."""
    n = orders[0].size
    if n < 2 * min_leaf:
        return None
    total = g[orders[0]].sum()
    base = total * total / n
    best = None
    n_left = np.arange(1, n)
    for f, order in enumerate(orders):
        x = X[order, f]
        cs = np.cumsum(g[order])[:-1]
        ok = (x[1:] > x[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not ok.any():
            continue
        sl = cs[ok]
        nl = n_left[ok]
        gain = sl * sl / nl + (total - sl) ** 2 / (n - nl) - base
        top = gain.max()
        j = int(np.argmax(gain >= top - _TIE_RTOL * abs(top)))
        if top > _MIN_GAIN and (best is None or top > best[0] * (1 + _TIE_RTOL)):
            pos = int(np.flatnonzero(ok)[j])
            best = (float(top), f, 0.5 * (x[pos] + x[pos + 1]))
    return best


def fit_tree(X: np.ndarray, presorted: list[np.ndarray], g: np.ndarray, h: np.ndarray,
             max_depth: int, min_leaf: int, leaf_scale: float = 1.0) -> Tree:
    """Regression tree on residuals ``g`` with Newton leaves ``scale * sum(g) / sum(h)``.

    ``presorted[f]`` lists all row indices ordered by feature ``f``; node
    orderings are derived by stable partitioning, so no per-node sort.
    """
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(rows):
        den = h[rows].sum()
        return leaf_scale * g[rows].sum() / den if den > _MIN_HESS else 0.0

    def grow(orders, depth):
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        split = _best_split(X, orders, g, min_leaf) if depth < max_depth else None
        if split is None:
            value[i] = leaf_value(orders[0])
            return i
        _, f, t = split
        goes_left = np.zeros(X.shape[0], dtype=bool)
        goes_left[orders[0][X[orders[0], f] <= t]] = True
        lo = [o[goes_left[o]] for o in orders]
        hi = [o[~goes_left[o]] for o in orders]
        feature[i] = f
        threshold[i] = t
        left[i] = grow(lo, depth + 1)
        right[i] = grow(hi, depth + 1)
        return i

    grow(presorted, 0)
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value))


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_loss(P: np.ndarray, y_idx: np.ndarray) -> float:
    p = P[np.arange(y_idx.size), y_idx]
    return float(-np.mean(np.log(np.clip(p, 1e-300, None))))


@dataclass(frozen=True)
class BoostedModel:
    classes: tuple[int, ...]
    n_features: int
    init_scores: np.ndarray
    trees: tuple[tuple[Tree, ...], ...]     # [round][class]
    params: BoostingParams
    train_loss: tuple[float, ...] = field(default=(), compare=False)

    @property
    def rounds(self) -> int:
        return len(self.trees)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        F = np.tile(self.init_scores, (X.shape[0], 1))
        lr = self.params.learning_rate
        for round_trees in self.trees:
            for k, tree in enumerate(round_trees):
                F[:, k] += lr * tree.predict(X)
        return F

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Relation ids; ties resolve to the lowest class index."""
        idx = np.argmax(self.decision_function(X), axis=1)
        return np.asarray(self.classes, dtype=np.int64)[idx]

    def to_json(self) -> dict:
        return {
            "format": "relpipe.boosted_model",
            "version": 1,
            "classes": list(self.classes),
            "n_features": self.n_features,
            "learning_rate": self.params.learning_rate,
            "rounds": self.params.rounds,
            "max_depth": self.params.max_depth,
            "min_leaf": self.params.min_leaf,
            "init_scores": self.init_scores.tolist(),
            "ensemble": [[t.to_json() for t in rt] for rt in self.trees],
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BoostedModel":
        if obj.get("format") != "relpipe.boosted_model":
            raise ValueError("not a boosted model file")
        if obj.get("version") != 1:
            raise ValueError(f"unsupported boosted model version {obj.get('version')}")
        params = BoostingParams(int(obj["rounds"]), float(obj["learning_rate"]),
                                int(obj["max_depth"]), int(obj["min_leaf"]))
        trees = tuple(tuple(Tree.from_json(t) for t in rt) for rt in obj["ensemble"])
        n_features = int(obj["n_features"])
        for rt in trees:
            for t in rt:
                if np.any(t.feature >= n_features) or not np.all(np.isfinite(t.value)):
                    raise ValueError("corrupt tree in boosted model")
        return cls(
            classes=tuple(int(c) for c in obj["classes"]),
            n_features=n_features,
            init_scores=np.asarray(obj["init_scores"], dtype=np.float64),
            trees=trees,
            params=params,
            train_loss=tuple(obj.get("train_loss", ())),
        )


def train_boosted(X, y, params: BoostingParams = BoostingParams(), threads: int = 1) -> BoostedModel:
    """Fit the ensemble on design matrix ``X`` and relation ids ``y``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be 2-D with one row per label")
    classes, y_idx = np.unique(y, return_inverse=True)
    K = classes.size
    if K < 2:
        raise ModelError(
            "boosted training needs at least two relation classes; "
            "route this group to frequency prediction instead"
        )
    n = y.size
    priors = np.bincount(y_idx, minlength=K) / n
    init = np.log(priors)
    Y = np.zeros((n, K))
    Y[np.arange(n), y_idx] = 1.0
    F = np.tile(init, (n, 1))
    presorted = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    scale = (K - 1) / K
    trees = []
    losses = [log_loss(softmax(F), y_idx)]
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for r in range(params.rounds):
            P = softmax(F)

            def fit(k):
                g = Y[:, k] - P[:, k]
                hess = P[:, k] * (1.0 - P[:, k])
                return fit_tree(X, presorted, g, hess, params.max_depth, params.min_leaf, scale)

            round_trees = tuple(pool.map(fit, range(K)) if pool else map(fit, range(K)))
            D = params.learning_rate * np.column_stack([t.predict(X) for t in round_trees])
            step = 1.0
            for _ in range(_MAX_HALVINGS):
                loss = log_loss(softmax(F + step * D), y_idx)
                if loss <= losses[-1]:
                    break
                step *= 0.5
            else:
                step, loss = 0.0, losses[-1]
            if step != 1.0:
                log.debug("round %d step shrunk to %g", r + 1, step)
                round_trees = tuple(replace(t, value=t.value * step) for t in round_trees)
            F += step * D
            trees.append(round_trees)
            losses.append(loss)
            log.debug("round %d loss %.6f", r + 1, loss)
    finally:
        if pool:
            pool.shutdown()
    return BoostedModel(
        classes=tuple(int(c) for c in classes),
        n_features=X.shape[1],
        init_scores=init,
        trees=tuple(trees),
        params=params,
        train_loss=tuple(losses),
    )

"""CART regression tree on binary options, used for option importance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import AggregatedDataset
from ..errors import DataError

MAX_DEPTH = 8
MIN_LEAF = 5


@dataclass
class _Node:
    value: float
    feature: int | None = None
    left: _Node | None = None  # option disabled
    right: _Node | None = None  # option enabled


@dataclass(frozen=True, eq=False)
class ImportanceVector:
    """Per-option share of the total error reduction; all zero if none."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0):
            raise ValueError("importance weights must be >= 0")
        total = w.sum()
        if total != 0 and abs(total - 1) > 1e-9:
            raise ValueError("importance weights must sum to 0 or 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


class RegressionTree:
    """Variance-reduction splits; ties go to the lowest option index."""

    def __init__(self, max_depth: int = MAX_DEPTH, min_leaf: int = MIN_LEAF):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.root: _Node | None = None
        self.sse_reduction: np.ndarray | None = None

    def fit(self, X, y) -> RegressionTree:
        X = np.asarray(X, dtype=bool)
        y = np.asarray(y, dtype=np.float64)
        self._X, self._y = X, y
        self.sse_reduction = np.zeros(X.shape[1])
        self.root = self._grow(np.arange(y.size), 0)
        del self._X, self._y
        return self

    def _grow(self, idx: np.ndarray, depth: int) -> _Node:
        y = self._y[idx]
        n = y.size
        mean = float(y.mean())
        node = _Node(mean)
        yc = y - mean
        sse = float(yc @ yc)
        if depth >= self.max_depth or n < 2 * self.min_leaf or sse <= 0.0:
            return node
        Xs = self._X[idx]
        n1 = Xs.sum(axis=0)
        n0 = n - n1
        ok = (n1 >= self.min_leaf) & (n0 >= self.min_leaf)
        if not ok.any():
            return node
        s1 = yc @ Xs
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, s1 * s1 * n / (n1 * n0), -np.inf)
        best = float(gain.max())
        if best <= 1e-12 * sse:
            return node
        # near-equal gains count as ties so the choice survives rounding
        feature = int(np.flatnonzero(gain >= best - 1e-12 * sse)[0])
        self.sse_reduction[feature] += gain[feature]
        mask = Xs[:, feature]
        node.feature = feature
        node.left = self._grow(idx[~mask], depth + 1)
        node.right = self._grow(idx[mask], depth + 1)
        return node

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=bool)
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            node = self.root
            while node.feature is not None:
                node = node.right if row[node.feature] else node.left
            out[i] = node.value
        return out

    def importance(self) -> ImportanceVector:
        total = self.sse_reduction.sum()
        if total <= 0:
            return ImportanceVector(np.zeros_like(self.sse_reduction))
        return ImportanceVector(self.sse_reduction / total)


def fit_tree_importance(ds: AggregatedDataset, *, max_depth: int = MAX_DEPTH,
                        min_leaf: int = MIN_LEAF) -> ImportanceVector:
    ok = ds.valid_only()
    if ok.n_configs < 10:
        raise DataError(f"tree importance needs >= 10 valid configurations, got {ok.n_configs}")
    tree = RegressionTree(max_depth, min_leaf).fit(ok.configs, ok.mean_perf)
    return tree.importance()

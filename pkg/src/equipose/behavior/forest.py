"""Random forest of Gini decision trees, grown from scratch on numpy arrays."""

from __future__ import annotations

import numbers
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..errors import ConfigError


class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def node_count(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=int)
        for i in range(self.node_count):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            go_left = X[rows, np.where(internal, feat, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)

    def predict_proba1(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"value": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
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
                return i
            feature[i] = int(node["feature"])
            threshold[i] = float(node["threshold"])
            left[i] = add(node["left"])
            right[i] = add(node["right"])
            return i

        add(d)
        return cls(feature, threshold, left, right, value)


def _best_split(Xn: np.ndarray, yn: np.ndarray, min_leaf: int):
    """Lowest weighted Gini split over the columns of ``Xn``.

    Returns ``(column, threshold, impurity)`` or ``None`` when every column is
    constant (or no split respects ``min_leaf``).
    """
    n, m = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    pos_left = np.cumsum(yn[order], axis=0)[:-1]
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    pos_total = yn.sum()
    p_left = pos_left / n_left
    p_right = (pos_total - pos_left) / n_right
    # weighted Gini: n_l * 2p_l(1-p_l) + n_r * 2p_r(1-p_r)
    impurity = 2.0 * (n_left * p_left * (1 - p_left) + n_right * p_right * (1 - p_right))
    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    flat = int(np.argmin(impurity))
    i, col = divmod(flat, m)
    lo, hi = xs[i, col], xs[i + 1, col]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return col, float(thr), float(impurity[i, col])


def build_tree(X: np.ndarray, y: np.ndarray, sample_idx: np.ndarray, gen: np.random.Generator, *,
               max_features: int, min_samples_split: int = 2, min_samples_leaf: int = 1,
               max_depth: int | None = None) -> Tree:
    """Grow one tree on the (possibly repeated) rows ``sample_idx``.

    Each node draws ``max_features`` candidate features without replacement;
    if all of them are constant on the node, the remaining features are tried
    as well before the node becomes a leaf.
    """
    n_features = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    stack = [(new_node(sample_idx), sample_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        n = idx.size
        pos = yn.sum()
        if (pos == 0 or pos == n or n < min_samples_split
                or (max_depth is not None and depth >= max_depth)):
            continue
        perm = gen.permutation(n_features)
        split = None
        for cols in (perm[:max_features], perm[max_features:]):
            if cols.size == 0:
                continue
            found = _best_split(X[np.ix_(idx, cols)], yn, min_samples_leaf)
            if found is not None:
                c, thr, _ = found
                split = (int(cols[c]), thr)
                break
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(feature, threshold, left, right, value)


class RandomForest(ClassifierMixin, BaseEstimator):
    """Binary random forest with bootstrap rows and per-node feature subsampling.

    Parameters
    ----------
    n_estimators : int, default=100
    max_features : {"sqrt", "log2"}, int, float or None, default="sqrt"
        Candidate features per node.
    min_samples_split : int, default=2
    min_samples_leaf : int, default=1
    max_depth : int or None
        ``None`` grows every tree until its leaves are pure.
    bootstrap : bool, default=True
    random_state : int or None
        Seeds every tree through a spawned ``SeedSequence``.
    n_jobs : int or None
        Threads used to grow trees; results do not depend on it.
    """

    def __init__(self, n_estimators=100, max_features="sqrt", min_samples_split=2,
                 min_samples_leaf=1, max_depth=None, bootstrap=True, random_state=None,
                 n_jobs=None):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _n_candidates(self, n_features: int) -> int:
        mf = self.max_features
        if mf is None:
            k = n_features
        elif mf == "sqrt":
            k = int(np.sqrt(n_features))
        elif mf == "log2":
            k = int(np.log2(n_features))
        elif isinstance(mf, numbers.Integral):
            k = int(mf)
        elif isinstance(mf, numbers.Real) and 0 < mf <= 1:
            k = int(mf * n_features)
        else:
            raise ConfigError(f"invalid max_features {mf!r}")
        return max(1, min(k, n_features))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        classes = np.unique(y)
        if classes.size < 2:
            raise ConfigError("training data contains a single class")
        if not set(classes.tolist()) <= {0, 1}:
            raise ConfigError(f"labels must be 0/1, got {classes.tolist()}")
        if not isinstance(self.n_estimators, numbers.Integral) or self.n_estimators < 1:
            raise ConfigError("n_estimators must be a positive integer")
        y = y.astype(float)
        n = X.shape[0]
        k = self._n_candidates(X.shape[1])
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)

        def grow(seed):
            gen = np.random.default_rng(seed)
            rows = gen.integers(0, n, n) if self.bootstrap else np.arange(n)
            return build_tree(X, y, rows, gen, max_features=k,
                              min_samples_split=self.min_samples_split,
                              min_samples_leaf=self.min_samples_leaf, max_depth=self.max_depth)

        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as ex:
                self.trees_ = list(ex.map(grow, seeds))
        else:
            self.trees_ = [grow(s) for s in seeds]
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ConfigError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        p1 = np.zeros(X.shape[0])
        for tree in self.trees_:
            p1 += tree.predict_proba1(X)
        p1 /= len(self.trees_)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        return {
            "params": self.get_params(),
            "n_features": int(self.n_features_in_),
            "classes": [0, 1],
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RandomForest:
        est = cls(**d["params"])
        est.trees_ = [Tree.from_dict(t) for t in d["trees"]]
        est.n_features_in_ = int(d["n_features"])
        est.classes_ = np.array(d["classes"])
        for t in est.trees_:
            if t.feature.max(initial=-1) >= est.n_features_in_:
                raise ConfigError("tree split feature index out of range")
        return est

"""Bagged regression forest.

Trees are grown depth-first by exhaustive variance-reduction split search.
The inner loops are compiled with numba; everything random is drawn up front
from a per-tree Philox stream so that trees can be grown in any order (or in
parallel) without changing the result.

Seeding: tree ``t`` of a forest with seed ``s`` uses
``numpy.random.Philox(key=(s + t) mod 2**64)``. From that stream the tree
first draws its bootstrap sample (``integers(0, n, n)``, only when
``bootstrap`` is on) and then a ``(2m - 1, d)`` block of uniform keys that
orders feature candidates at each node.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Union

import numba
import numpy as np

MODEL_FORMAT_VERSION = 1
_U64 = 2 ** 64


class ModelFormatError(Exception):
    pass


class DimensionError(ValueError):
    pass


@dataclass
class ForestParams:
    n_trees: int = 560
    max_depth: int = 40
    min_samples_leaf: int = 1
    features_per_split: Union[int, str, None] = None  # None -> ceil(d / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        fps = self.features_per_split
        if not (fps is None or fps == "all" or (isinstance(fps, int) and fps >= 1)):
            raise ValueError(f"features_per_split must be a positive int, 'all' or None, got {fps!r}")

    def resolve_mtry(self, d: int) -> int:
        fps = self.features_per_split
        if fps is None:
            return max(1, math.ceil(d / 3))
        if fps == "all":
            return d
        if fps > d:
            raise ValueError(f"features_per_split={fps} exceeds dimensionality {d}")
        return int(fps)


@dataclass
class Tree:
    """Flat array form of one regression tree. Node 0 is the root.

    Leaves have ``feature == -1``; internal nodes send ``x`` left iff
    ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature,
                             self.threshold, self.left, self.right, self.value)


@numba.njit(cache=True, nogil=True)
def _grow(X, y, sample, max_depth, min_leaf, mtry, keys):
    m = sample.shape[0]
    d = X.shape[1]
    cap = 2 * m - 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)

    idx = sample.copy()
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    chosen = np.empty(d, np.int64)

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        size = hi - lo

        ymin = y[idx[lo]]
        ymax = ymin
        ysum = 0.0
        for p in range(lo, hi):
            v = y[idx[p]]
            ysum += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        if ymin == ymax:
            value[node] = ymin
            continue
        mean = ysum / size
        if mean < ymin:
            mean = ymin
        elif mean > ymax:
            mean = ymax
        value[node] = mean
        if depth >= max_depth or size < 2 * min_leaf:
            continue

        # draw candidate features in key order, skipping ones constant in this node
        order = np.argsort(keys[node])
        n_chosen = 0
        for q in range(d):
            f = order[q]
            fmin = X[idx[lo], f]
            fmax = fmin
            for p in range(lo + 1, hi):
                v = X[idx[p], f]
                if v < fmin:
                    fmin = v
                elif v > fmax:
                    fmax = v
            if fmax > fmin:
                chosen[n_chosen] = f
                n_chosen += 1
                if n_chosen == mtry:
                    break
        if n_chosen == 0:
            continue
        cand = np.sort(chosen[:n_chosen])

        yc = np.empty(size, np.float64)
        xs = np.empty(size, np.float64)
        total_ss = 0.0
        for p in range(size):
            r = y[idx[lo + p]] - mean
            total_ss += r * r
        tol = 1e-10 * total_ss
        best_score = -1.0
        best_f = -1
        best_t = 0.0
        for c in range(n_chosen):
            f = cand[c]
            for p in range(size):
                xs[p] = X[idx[lo + p], f]
            perm = np.argsort(xs, kind="mergesort")
            s_tot = 0.0
            for p in range(size):
                yc[p] = y[idx[lo + perm[p]]] - mean
                s_tot += yc[p]
            s_left = 0.0
            for p in range(1, size):
                s_left += yc[p - 1]
                if p < min_leaf or size - p < min_leaf:
                    continue
                a = xs[perm[p - 1]]
                b = xs[perm[p]]
                if not a < b:
                    continue
                s_right = s_tot - s_left
                score = s_left * s_left / p + s_right * s_right / (size - p)
                if best_f < 0 or score > best_score + tol:
                    best_score = score
                    best_f = f
                    t = 0.5 * (a + b)
                    if not t < b:
                        t = a
                    best_t = t
        if best_f < 0:
            continue

        # partition idx[lo:hi] in place, preserving relative order
        tmp = np.empty(size, np.int64)
        nl = 0
        for p in range(lo, hi):
            if X[idx[p], best_f] <= best_t:
                tmp[nl] = idx[p]
                nl += 1
        k = nl
        for p in range(lo, hi):
            if X[idx[p], best_f] > best_t:
                tmp[k] = idx[p]
                k += 1
        for p in range(size):
            idx[lo + p] = tmp[p]

        feature[node] = best_f
        threshold[node] = best_t
        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        left[node] = l_id
        right[node] = r_id
        # push right first so the left subtree is numbered before the right
        st_node[top] = r_id
        st_lo[top] = lo + nl
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = l_id
        st_lo[top] = lo
        st_hi[top] = lo + nl
        st_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


@numba.njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) + int(tree_index)) % _U64))


def grow_tree(X: np.ndarray, y: np.ndarray, params: ForestParams, tree_index: int,
              mtry: Optional[int] = None) -> Tree:
    """Grow tree ``tree_index`` of a forest with ``params``."""
    n, d = X.shape
    if mtry is None:
        mtry = params.resolve_mtry(d)
    rng = tree_rng(params.seed, tree_index)
    if params.bootstrap:
        sample = rng.integers(0, n, n).astype(np.int64)
    else:
        sample = np.arange(n, dtype=np.int64)
    keys = rng.random((max(2 * len(sample) - 1, 1), d))
    arrays = _grow(X, y, sample, params.max_depth, params.min_samples_leaf, mtry, keys)
    return Tree(*[np.array(a) for a in arrays])


@dataclass
class Forest:
    params: ForestParams
    trees: List[Tree]
    feature_schema: List[str]

    @property
    def n_features(self) -> int:
        return len(self.feature_schema)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains non-finite values")
        return np.ascontiguousarray(X)

    def predict_trees(self, X) -> np.ndarray:
        """Per-tree predictions, shape ``(n_trees, n_samples)``."""
        X = self._check(X)
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        per_tree = self.predict_trees(X)
        out = per_tree.sum(axis=0) / len(self.trees)
        return np.clip(out, per_tree.min(axis=0), per_tree.max(axis=0))


def train(X, y, params: ForestParams, feature_schema: Optional[Sequence[str]] = None,
          threads: int = 1) -> Forest:
    """Fit a forest to ``X`` (n x d) and ``y`` (n).

    ``threads`` only changes wall time; the model is identical for any value.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training set is empty")
    n, d = X.shape
    if y.shape != (n,):
        raise DimensionError(f"y has shape {y.shape}, expected ({n},)")
    if feature_schema is None:
        feature_schema = [f"x{i}" for i in range(d)]
    feature_schema = list(feature_schema)
    if len(feature_schema) != d:
        raise DimensionError(f"schema has {len(feature_schema)} names for {d} columns")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data contains non-finite values")
    mtry = params.resolve_mtry(d)
    if threads > 1 and params.n_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(lambda t: grow_tree(X, y, params, t, mtry),
                                  range(params.n_trees)))
    else:
        trees = [grow_tree(X, y, params, t, mtry) for t in range(params.n_trees)]
    return Forest(params, trees, feature_schema)


def predict(forest: Forest, x) -> Union[float, np.ndarray]:
    """Mean tree output for one vector (returns a float) or a matrix."""
    x = np.asarray(x, dtype=np.float64)
    out = forest.predict(x)
    return float(out[0]) if x.ndim == 1 else out


def _node_to_dict(tree: Tree, node: int) -> dict:
    f = int(tree.feature[node])
    if f < 0:
        return {"value": float(tree.value[node])}
    return {"feature": f, "threshold": float(tree.threshold[node]),
            "left": _node_to_dict(tree, int(tree.left[node])),
            "right": _node_to_dict(tree, int(tree.right[node]))}


def _tree_from_dict(doc: dict) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def visit(nd):
        me = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        if "value" in nd:
            v = float(nd["value"])
            if not math.isfinite(v):
                raise ModelFormatError("non-finite leaf value")
            value[me] = v
        else:
            feature[me] = int(nd["feature"])
            threshold[me] = float(nd["threshold"])
            left[me] = visit(nd["left"])
            right[me] = visit(nd["right"])
        return me

    visit(doc)
    return Tree(np.array(feature, np.int64), np.array(threshold, np.float64),
                np.array(left, np.int64), np.array(right, np.int64),
                np.array(value, np.float64))


def forest_to_dict(forest: Forest) -> dict:
    return {"format_version": MODEL_FORMAT_VERSION, "params": asdict(forest.params),
            "feature_schema": list(forest.feature_schema),
            "trees": [_node_to_dict(t, 0) for t in forest.trees]}


def forest_from_dict(doc: dict) -> Forest:
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {doc.get('format_version')!r}")
    if "feature_schema" not in doc:
        raise ModelFormatError("model file has no feature_schema")
    try:
        params = ForestParams(**doc["params"])
        trees = [_tree_from_dict(t) for t in doc["trees"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model: {exc}") from exc
    d = len(doc["feature_schema"])
    for t in trees:
        if np.any(t.feature >= d):
            raise ModelFormatError("tree references a feature outside the schema")
    return Forest(params, trees, list(doc["feature_schema"]))


def save_model(forest: Forest, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(forest_to_dict(forest), fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path) -> Forest:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: not a model document")
    return forest_from_dict(doc)

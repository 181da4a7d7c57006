"""Least-squares gradient boosting over depth-limited regression trees.

Split search is exact and greedy: every midpoint between consecutive
distinct values of every feature is scored, per node, with the L2-penalized
gain ``GL²/(nL+λ) + GR²/(nR+λ) - G²/(n+λ)`` where G sums residuals.
Leaf values are ``G / (n + λ)``.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numba import njit

from ..ingest import EncodedMatrix
from .base import FittedModel, GBTConfig, Tree, _tree_outputs


def _tie_rank(columns, seed: int) -> np.ndarray:
    """Seeded priority per column name; lower wins among equal gains."""
    keys = [hashlib.blake2b(f"{seed}:{c}".encode(), digest_size=8).digest() for c in columns]
    order = sorted(range(len(columns)), key=lambda j: keys[j])
    rank = np.empty(len(columns), dtype=np.int64)
    rank[order] = np.arange(len(columns))
    return rank


@njit(cache=True)
def _grow_tree(X, order, col_pref, resid, depth, l2):
    """Grow one tree breadth-first.

    ``order[j]`` lists rows sorted by column ``j``. One pass per column scores
    every open node of the current level. Columns are visited in
    ``col_pref`` order and only strict improvements are kept, so ties go to
    the preferred column and then to the smallest threshold.
    Returns node arrays (feature, threshold, left, right, value), the node
    count and the leaf id of every row.
    """
    n, p = X.shape
    cap = 2 ** (depth + 1)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    node_of = np.zeros(n, np.int64)
    n_nodes = 1
    frontier = np.zeros(cap, np.int64)
    n_front = 1
    slot = np.full(cap, -1, np.int64)

    for _level in range(depth):
        if n_front == 0:
            break
        for s in range(n_front):
            slot[frontier[s]] = s
        g_node = np.zeros(n_front)
        sq_node = np.zeros(n_front)
        c_node = np.zeros(n_front, np.int64)
        for r in range(n):
            s = slot[node_of[r]]
            if s >= 0:
                g_node[s] += resid[r]
                sq_node[s] += resid[r] * resid[r]
                c_node[s] += 1
        best_gain = np.full(n_front, -np.inf)
        best_feat = np.full(n_front, -1, np.int64)
        best_thr = np.zeros(n_front)
        g_left = np.zeros(n_front)
        c_left = np.zeros(n_front, np.int64)
        last_x = np.zeros(n_front)
        for jj in range(p):
            j = col_pref[jj]
            g_left[:] = 0.0
            c_left[:] = 0
            for k in range(n):
                r = order[j, k]
                s = slot[node_of[r]]
                if s < 0:
                    continue
                x = X[r, j]
                if c_left[s] > 0 and x > last_x[s]:
                    n_l = c_left[s]
                    n_r = c_node[s] - n_l
                    g_l = g_left[s]
                    g_r = g_node[s] - g_l
                    gain = (g_l * g_l / (n_l + l2) + g_r * g_r / (n_r + l2)
                            - g_node[s] * g_node[s] / (c_node[s] + l2))
                    if gain > best_gain[s]:
                        best_gain[s] = gain
                        best_feat[s] = j
                        thr = 0.5 * (last_x[s] + x)
                        if not (last_x[s] <= thr and thr < x):
                            thr = last_x[s]
                        best_thr[s] = thr
                g_left[s] += resid[r]
                c_left[s] += 1
                last_x[s] = x
        new_front = np.zeros(cap, np.int64)
        n_new = 0
        for s in range(n_front):
            nid = frontier[s]
            slot[nid] = -1
            # zero-gain splits are kept so interactions such as XOR stay reachable
            if best_feat[s] < 0 or best_gain[s] < -1e-12 * max(1.0, sq_node[s]):
                continue
            feature[nid] = best_feat[s]
            threshold[nid] = best_thr[s]
            left[nid] = n_nodes
            right[nid] = n_nodes + 1
            new_front[n_new] = n_nodes
            new_front[n_new + 1] = n_nodes + 1
            n_new += 2
            n_nodes += 2
        for r in range(n):
            nid = node_of[r]
            if feature[nid] >= 0 and left[nid] >= n_nodes - n_new:
                if X[r, feature[nid]] <= threshold[nid]:
                    node_of[r] = left[nid]
                else:
                    node_of[r] = right[nid]
        frontier = new_front
        n_front = n_new

    sums = np.zeros(n_nodes)
    counts = np.zeros(n_nodes)
    for r in range(n):
        sums[node_of[r]] += resid[r]
        counts[node_of[r]] += 1.0
    for nid in range(n_nodes):
        if feature[nid] < 0 and counts[nid] > 0:
            value[nid] = sums[nid] / (counts[nid] + l2)
    return feature, threshold, left, right, value, n_nodes, node_of


class _Grower:
    def __init__(self, X: np.ndarray, depth: int, l2: float, tie_rank: np.ndarray):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.order = np.ascontiguousarray(np.argsort(self.X, axis=0, kind="stable").T)
        self.col_pref = np.argsort(tie_rank, kind="stable").astype(np.int64)
        self.depth = depth
        self.l2 = float(l2)

    def grow(self, resid: np.ndarray) -> tuple[Tree, np.ndarray]:
        """Fit one tree to ``resid``; returns the tree and per-row leaf values."""
        feature, threshold, left, right, value, n_nodes, node_of = _grow_tree(
            self.X, self.order, self.col_pref, np.ascontiguousarray(resid, dtype=np.float64),
            self.depth, self.l2)
        nodes = [[int(feature[i]), float(threshold[i]), int(left[i]), int(right[i]), float(value[i])]
                 for i in range(n_nodes)]
        return _preorder(nodes), value[node_of]


def _preorder(nodes) -> Tree:
    order = []
    stack = [0]
    while stack:
        nid = stack.pop()
        order.append(nid)
        if nodes[nid][0] >= 0:
            stack.append(nodes[nid][3])
            stack.append(nodes[nid][2])
    pos = {nid: i for i, nid in enumerate(order)}
    feature = np.array([nodes[i][0] for i in order], dtype=np.int64)
    threshold = np.array([nodes[i][1] for i in order], dtype=float)
    value = np.array([nodes[i][4] for i in order], dtype=float)
    left = np.array([pos[nodes[i][2]] if nodes[i][0] >= 0 else -1 for i in order], dtype=np.int64)
    right = np.array([pos[nodes[i][3]] if nodes[i][0] >= 0 else -1 for i in order], dtype=np.int64)
    return Tree(feature, threshold, value, left, right)


def fit_gbt(train: EncodedMatrix, config: GBTConfig) -> FittedModel:
    X = np.asarray(train.values, dtype=float)
    y = np.asarray(train.target, dtype=float)
    base = float(y.mean())
    pred = np.full(len(y), base)
    trees = []
    if config.iterations > 0:
        grower = _Grower(X, config.depth, config.l2_leaf_reg, _tie_rank(train.columns, config.seed))
        for _ in range(config.iterations):
            tree, leaf = grower.grow(y - pred)
            trees.append(tree)
            pred = pred + config.learning_rate * leaf
    return FittedModel("gbt", train.target_name, tuple(train.columns), base, trees=tuple(trees),
                       learning_rate=config.learning_rate, config=config, encoding=train.meta,
                       info={"train_rmse": float(np.sqrt(np.mean((y - pred) ** 2)))})


def staged_predict(model: FittedModel, X: np.ndarray, stages) -> dict[int, np.ndarray]:
    """Predictions using only the first ``k`` trees, for each ``k`` in ``stages``."""
    outputs = _tree_outputs(model.trees, np.asarray(X, dtype=float))
    csum = np.concatenate([np.zeros((outputs.shape[0], 1)), np.cumsum(outputs, axis=1)], axis=1)
    result = {}
    for k in stages:
        y_hat = model.intercept + model.learning_rate * csum[:, k]
        if model.target == "energy":
            y_hat = np.maximum(y_hat, 0.0)
        result[k] = y_hat
    return result

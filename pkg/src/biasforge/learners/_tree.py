"""Histogram tree construction shared by the tree, forest and boosting learners.

Features are pre-binned into at most ``MAX_BINS`` quantile bins; a split on
bin ``k`` of feature ``f`` sends rows with ``bin <= k`` (equivalently raw value
``<= edges[f][k]``) to the left child. Nodes are grown depth-first with the
sibling histogram obtained by subtraction from the parent.

Two split criteria are supported:

* ``GINI`` with per-row statistics ``(w * y, w, w)``; leaf value ``sum(w*y)/sum(w)``.
* ``NEWTON`` with per-row statistics ``(g, h, 1)``; leaf value ``-G / (H + lam)``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MAX_BINS = 64
GINI = 0
NEWTON = 1
LEAF = -1


def bin_edges(X: np.ndarray, max_bins: int = MAX_BINS) -> list[np.ndarray]:
    """Per-column split candidates: midpoints between unique values, or quantiles when there are many."""
    edges = []
    qs = np.arange(1, max_bins) / max_bins
    for j in range(X.shape[1]):
        col = X[:, j]
        uniq = np.unique(col)
        if uniq.size <= max_bins:
            e = (uniq[:-1] + uniq[1:]) / 2
        else:
            e = np.unique(np.quantile(col, qs, method="lower"))
            e = e[e < uniq[-1]]
        edges.append(e.astype(np.float64))
    return edges


def apply_bins(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    out = np.empty(X.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        out[:, j] = np.searchsorted(e, X[:, j], side="left")
    return out


@njit(cache=True)
def _score(s1, s2, criterion, lam):
    if criterion == GINI:
        if s2 <= 0.0:
            return 0.0
        return -2.0 * s1 * (s2 - s1) / s2
    return s1 * s1 / (s2 + lam)


@njit(cache=True)
def _leaf_value(s1, s2, criterion, lam):
    if criterion == GINI:
        if s2 <= 0.0:
            return 0.0
        return s1 / s2
    return -s1 / (s2 + lam)


@njit(cache=True)
def _fill_hist(hist, binned, s1, s2, cnt, rows, start, end, features):
    hist[:] = 0.0
    for i in range(start, end):
        r = rows[i]
        a = s1[r]
        b = s2[r]
        c = cnt[r]
        for fi in range(features.size):
            k = binned[r, features[fi]]
            hist[fi, k, 0] += a
            hist[fi, k, 1] += b
            hist[fi, k, 2] += c


@njit(cache=True)
def build_tree(binned, s1, s2, cnt, rows, features, n_bins, max_depth, min_leaf, criterion, lam, min_gain):
    """Grow one tree over ``rows`` (partitioned in place) and return its node arrays.

    ``n_bins[j]`` is the bin count of column ``j``; ``features`` lists the
    columns eligible for splitting. Returns ``(feature, split_bin, left,
    right, value)`` with ``feature == -1`` marking leaves.
    """
    n_rows = rows.size
    nf = features.size
    max_nodes = 2 * n_rows + 1
    limit = 2 ** (max_depth + 1) - 1
    if limit > 0 and limit < max_nodes:
        max_nodes = limit
    feat = np.full(max_nodes, -1, dtype=np.int32)
    split = np.zeros(max_nodes, dtype=np.int32)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes, dtype=np.float64)

    depth_cap = max_depth + 2
    hist_stack = np.zeros((depth_cap, nf, MAX_BINS + 1, 3))
    st_node = np.zeros(depth_cap, dtype=np.int64)
    st_start = np.zeros(depth_cap, dtype=np.int64)
    st_end = np.zeros(depth_cap, dtype=np.int64)
    st_depth = np.zeros(depth_cap, dtype=np.int64)
    tmp = np.zeros((nf, MAX_BINS + 1, 3))

    _fill_hist(hist_stack[0], binned, s1, s2, cnt, rows, 0, n_rows, features)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_rows
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        slot = top
        node = st_node[slot]
        start = st_start[slot]
        end = st_end[slot]
        depth = st_depth[slot]
        hist = hist_stack[slot]

        S1 = 0.0
        S2 = 0.0
        C = 0.0
        f0 = features[0]
        for k in range(n_bins[f0]):
            S1 += hist[0, k, 0]
            S2 += hist[0, k, 1]
            C += hist[0, k, 2]
        value[node] = _leaf_value(S1, S2, criterion, lam)

        if depth >= max_depth or C < 2 * min_leaf:
            continue
        if criterion == GINI and (S1 <= 0.0 or S1 >= S2):
            continue
        if n_nodes + 2 > max_nodes:
            continue

        parent_score = _score(S1, S2, criterion, lam)
        best_gain = min_gain
        best_f = -1
        best_k = -1
        for fi in range(nf):
            f = features[fi]
            l1 = 0.0
            l2 = 0.0
            lc = 0.0
            for k in range(n_bins[f] - 1):
                l1 += hist[fi, k, 0]
                l2 += hist[fi, k, 1]
                lc += hist[fi, k, 2]
                if lc < min_leaf:
                    continue
                if C - lc < min_leaf:
                    break
                gain = _score(l1, l2, criterion, lam) + _score(S1 - l1, S2 - l2, criterion, lam) - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_f = fi
                    best_k = k
        if best_f < 0:
            continue

        col = features[best_f]
        i = start
        j = end - 1
        while i <= j:
            if binned[rows[i], col] <= best_k:
                i += 1
            else:
                t = rows[i]
                rows[i] = rows[j]
                rows[j] = t
                j -= 1
        mid = i
        if mid == start or mid == end:
            continue

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        feat[node] = col
        split[node] = best_k
        left[node] = li
        right[node] = ri

        # smaller child histogram built directly, larger one by subtraction
        if mid - start <= end - mid:
            _fill_hist(tmp, binned, s1, s2, cnt, rows, start, mid, features)
            small_node, small_start, small_end = li, start, mid
            big_node, big_start, big_end = ri, mid, end
        else:
            _fill_hist(tmp, binned, s1, s2, cnt, rows, mid, end, features)
            small_node, small_start, small_end = ri, mid, end
            big_node, big_start, big_end = li, start, mid
        hist -= tmp
        st_node[slot] = big_node
        st_start[slot] = big_start
        st_end[slot] = big_end
        st_depth[slot] = depth + 1
        hist_stack[slot + 1] = tmp
        st_node[slot + 1] = small_node
        st_start[slot + 1] = small_start
        st_end[slot + 1] = small_end
        st_depth[slot + 1] = depth + 1
        top = slot + 2

    return feat[:n_nodes], split[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def predict_binned(binned, feat, split, left, right, value, out, scale):
    """Add ``scale * leaf value`` of one tree to ``out`` for every binned row."""
    for r in range(binned.shape[0]):
        node = 0
        while feat[node] >= 0:
            if binned[r, feat[node]] <= split[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += scale * value[node]


@njit(cache=True)
def predict_raw(X, feat, threshold, left, right, value, offsets, out, scale):
    """Sum ``scale * leaf value`` over a packed ensemble; tree ``t`` occupies ``offsets[t]:offsets[t+1]``."""
    for t in range(offsets.size - 1):
        base = offsets[t]
        for r in range(X.shape[0]):
            node = 0
            while feat[base + node] >= 0:
                if X[r, feat[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[r] += scale * value[base + node]


@njit(cache=True)
def logistic_grad_hess(F, y, w, g, h):
    """Fill weighted logistic-loss gradient and hessian at margins ``F``; return the mean weighted loss."""
    loss = 0.0
    for i in range(F.size):
        z = F[i]
        e = np.exp(-abs(z))
        p = 1.0 / (1.0 + e) if z >= 0 else e / (1.0 + e)
        g[i] = w[i] * (p - y[i])
        h[i] = max(w[i] * p * (1.0 - p), 1e-12)
        s = z if y[i] == 0 else -z
        loss += w[i] * (max(s, 0.0) + np.log1p(e))
    return loss / F.size

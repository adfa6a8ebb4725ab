"""Decision trees over dense count matrices, stored as flat arrays.

One split search serves both ensembles. Every sample carries two
statistics ``a`` and ``b`` and a child's quality is

* ``GINI``:   -2 b (a - b) / a   (a = class weight, b = weight if positive)
* ``NEWTON``: b^2 / (a + lam)     (a = hessian, b = gradient)

A split is taken when q(left) + q(right) - q(parent) is positive.
Every distinct value of a feature is a candidate cut and thresholds sit
halfway between adjacent distinct values, so a row goes left iff
``x[f] <= threshold``. Count features take few distinct values, so a
node accumulates its statistics per distinct value first and then scans
the cuts in order; this is the exact sorted scan without the sort.

Two implementations of the split search and the tree walk exist: explicit
loops compiled with numba, and vectorized numpy. The growth driver is
shared. Both paths see identical inputs in identical order and produce
the same trees.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel

GINI = 0
NEWTON = 1

_MIN_GAIN = 1e-12
_LCG_MUL = 48271
_LCG_MOD = 2147483647


@_accel.jitable
def _quality(a, b, mode, lam):
    if mode == GINI:
        if a <= 0.0:
            return 0.0
        return -2.0 * b * (a - b) / a
    return b * b / (a + lam)


def _split_loops(codes, offsets, bin_values, a, b, idx, feats, min_leaf, mode, lam):
    n_bins = bin_values.shape[0]
    a_bin = np.zeros(n_bins)
    b_bin = np.zeros(n_bins)
    n_bin = np.zeros(n_bins, dtype=np.int64)
    for ii in range(idx.shape[0]):
        r = idx[ii]
        for fi in range(feats.shape[0]):
            k = offsets[feats[fi]] + codes[r, feats[fi]]
            a_bin[k] += a[r]
            b_bin[k] += b[r]
            n_bin[k] += 1
    n = idx.shape[0]
    best_gain = _MIN_GAIN
    best_f = -1
    best_thr = 0.0
    for fi in range(feats.shape[0]):
        f = feats[fi]
        lo = offsets[f]
        hi = offsets[f + 1]
        a_tot = 0.0
        b_tot = 0.0
        for k in range(lo, hi):
            a_tot += a_bin[k]
            b_tot += b_bin[k]
        parent = _quality(a_tot, b_tot, mode, lam)
        a_left = 0.0
        b_left = 0.0
        n_left = 0
        for k in range(lo, hi - 1):
            a_left += a_bin[k]
            b_left += b_bin[k]
            n_left += n_bin[k]
            if n_bin[k] == 0:
                continue
            nxt = k + 1
            while nxt < hi and n_bin[nxt] == 0:
                nxt += 1
            if nxt == hi:
                break
            if n_left < min_leaf or n - n_left < min_leaf:
                continue
            gain = (_quality(a_left, b_left, mode, lam)
                    + _quality(a_tot - a_left, b_tot - b_left, mode, lam) - parent)
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_thr = (bin_values[k] + bin_values[nxt]) / 2.0
    return best_f, best_thr, best_gain


def _quality_vec(a, b, mode, lam):
    if mode == GINI:
        with np.errstate(divide="ignore", invalid="ignore"):
            q = -2.0 * b * (a - b) / a
        return np.where(a > 0.0, q, 0.0)
    return b * b / (a + lam)


def _split_numpy(codes, offsets, bin_values, a, b, idx, feats, min_leaf, mode, lam):
    n_bins = bin_values.shape[0]
    n = idx.shape[0]
    flat = (codes[np.ix_(idx, feats)] + offsets[feats]).ravel()  # sample-major, like the loop kernel
    a_bin = np.bincount(flat, weights=np.repeat(a[idx], feats.shape[0]), minlength=n_bins)
    b_bin = np.bincount(flat, weights=np.repeat(b[idx], feats.shape[0]), minlength=n_bins)
    n_bin = np.bincount(flat, minlength=n_bins)
    best_gain = _MIN_GAIN
    best_f = -1
    best_thr = 0.0
    for f in feats:
        sl = slice(offsets[f], offsets[f + 1])
        present = np.flatnonzero(n_bin[sl])
        if present.shape[0] < 2:
            continue
        a_cum = np.cumsum(a_bin[sl])
        b_cum = np.cumsum(b_bin[sl])
        n_cum = np.cumsum(n_bin[sl])
        a_tot, b_tot = a_cum[-1], b_cum[-1]
        parent = _quality(a_tot, b_tot, mode, lam)
        cut = present[:-1]  # cut after each occupied bin except the last one
        al, bl, nl = a_cum[cut], b_cum[cut], n_cum[cut]
        gain = _quality_vec(al, bl, mode, lam) + _quality_vec(a_tot - al, b_tot - bl, mode, lam) - parent
        ok = (nl >= min_leaf) & (n - nl >= min_leaf) & (gain > best_gain)
        if not ok.any():
            continue
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        best_gain = float(gain[i])
        best_f = int(f)
        vals = bin_values[sl]
        best_thr = (vals[cut[i]] + vals[present[i + 1]]) / 2.0
    return best_f, best_thr, best_gain


@_accel.jitable
def _draw_features(d, k, state):
    # partial Fisher-Yates driven by a MINSTD generator (identical in both backends)
    perm = np.arange(d)
    for i in range(k):
        state = (state * _LCG_MUL) % _LCG_MOD
        j = i + state % (d - i)
        t = perm[i]
        perm[i] = perm[j]
        perm[j] = t
    return perm[:k].copy(), state


@_accel.jitable
def _leaf_value(a_sum, b_sum, mode, lam):
    if mode == GINI:
        return b_sum / a_sum if a_sum > 0.0 else 0.0
    return -b_sum / (a_sum + lam)


def _grow(X, codes, offsets, bin_values, a, b, sample_idx, max_depth, min_leaf, max_features, mode, lam, seed):
    """Depth-first growth; returns (feature, threshold, left, right, value, n_nodes)."""
    n = sample_idx.shape[0]
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    order = sample_idx.copy()
    # explicit stack of (node, start, end, depth)
    stack = np.zeros((cap, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    state = seed % _LCG_MOD
    if state == 0:
        state = 1
    all_feats = np.arange(d)
    k = min(max_features, d)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        s = stack[top, 1]
        e = stack[top, 2]
        depth = stack[top, 3]
        seg = order[s:e]
        a_sum = 0.0
        b_sum = 0.0
        for i in range(seg.shape[0]):
            a_sum += a[seg[i]]
            b_sum += b[seg[i]]
        value[node] = _leaf_value(a_sum, b_sum, mode, lam)
        if depth >= max_depth or e - s < 2 * min_leaf or d == 0:
            continue
        if k < d:
            feats, state = _draw_features(d, k, state)
        else:
            feats = all_feats
        f, thr, gain = _find_split(codes, offsets, bin_values, a, b, seg, feats, min_leaf, mode, lam)
        if f < 0:
            continue
        go_left = X[seg, f] <= thr
        n_left = int(go_left.sum())
        order[s:e] = np.concatenate((seg[go_left], seg[~go_left]))
        feature[node] = f
        threshold[node] = thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # push right first so the left subtree is expanded first
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = s + n_left
        stack[top, 2] = e
        stack[top, 3] = depth + 1
        stack[top + 1, 0] = n_nodes
        stack[top + 1, 1] = s
        stack[top + 1, 2] = s + n_left
        stack[top + 1, 3] = depth + 1
        top += 2
        n_nodes += 2
    return feature, threshold, left, right, value, n_nodes


def _apply_loops(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0], dtype=np.float64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


def _apply_numpy(feature, threshold, left, right, value, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        f = feature[node[active]]
        go_left = X[rows[active], f] <= threshold[node[active]]
        node[active] = np.where(go_left, left[node[active]], right[node[active]])
        active = feature[node] >= 0
    return value[node]


_find_split = _split_numpy  # what the interpreted driver calls

if _accel.NUMBA_AVAILABLE:
    split_loops = _accel.njit(_split_loops)
    apply_loops = _accel.njit(_apply_loops)
    grow_compiled = _accel.njit(_accel.rebind(_grow, _find_split=split_loops))
else:  # pragma: no cover
    split_loops, apply_loops, grow_compiled = _split_loops, _apply_loops, _grow


def backend(use_numba: bool | None = None):
    """(grow, apply) for the requested backend; defaults to the env-selected one."""
    use_numba = _accel.USE_NUMBA if use_numba is None else (use_numba and _accel.NUMBA_AVAILABLE)
    if use_numba:
        return grow_compiled, apply_loops
    return _grow, _apply_numpy


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def apply(self, X: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        _, apply_fn = backend(use_numba)
        return apply_fn(self.feature, self.threshold, self.left, self.right, self.value, X)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int32),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int32),
            np.asarray(d["right"], dtype=np.int32),
            np.asarray(d["value"], dtype=np.float64),
        )

    def max_feature(self) -> int:
        return int(self.feature.max()) if self.n_nodes else -1


@dataclass
class BinnedMatrix:
    """Dense matrix plus, per feature, its sorted distinct values and each row's rank among them."""
    X: np.ndarray
    codes: np.ndarray
    offsets: np.ndarray
    bin_values: np.ndarray

    @property
    def shape(self):
        return self.X.shape


def bin_matrix(X) -> BinnedMatrix:
    if isinstance(X, BinnedMatrix):
        return X
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, d = X.shape
    codes = np.empty((n, d), dtype=np.int64)
    offsets = np.zeros(d + 1, dtype=np.int64)
    values = []
    for f in range(d):
        uniq, inv = np.unique(X[:, f], return_inverse=True)
        codes[:, f] = inv
        offsets[f + 1] = offsets[f] + uniq.shape[0]
        values.append(uniq)
    bin_values = np.concatenate(values) if values else np.zeros(0)
    return BinnedMatrix(X, codes, offsets, bin_values)


def grow_tree(X, a, b, sample_idx=None, *, max_depth=8, min_leaf=1, max_features=None,
              mode=GINI, lam=1.0, seed=1, use_numba: bool | None = None) -> Tree:
    m = bin_matrix(X)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if sample_idx is None:
        sample_idx = np.arange(m.X.shape[0], dtype=np.int64)
    sample_idx = np.ascontiguousarray(sample_idx, dtype=np.int64)
    if max_features is None:
        max_features = m.X.shape[1]
    grow_fn, _ = backend(use_numba)
    feature, threshold, left, right, value, n_nodes = grow_fn(
        m.X, m.codes, m.offsets, m.bin_values, a, b, sample_idx, int(max_depth), int(min_leaf),
        int(max_features), int(mode), float(lam), int(seed),
    )
    n_nodes = int(n_nodes)
    return Tree(feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
                right[:n_nodes].copy(), value[:n_nodes].copy())

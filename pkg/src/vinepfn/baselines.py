"""Binary baselines: exact-greedy gradient-boosted trees and logistic regression.

Both accept per-class weights so the "balanced" arm can reweight instead
of resampling. NaN entries are treated as missing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TIE_RTOL = 1e-12


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def balanced_class_weights(y):
    """Inverse-frequency weights n / (2 * n_k) for labels {0, 1}."""
    y = np.asarray(y)
    n = len(y)
    counts = np.bincount(y.astype(np.int64), minlength=2)
    if np.any(counts == 0):
        raise ValueError("both classes must be present to balance weights")
    return tuple(float(n / (2 * c)) for c in counts)


def _check_binary(y):
    y = np.asarray(y)
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be binary {0, 1}")
    y = y.astype(np.int64)
    if y.min() == y.max():
        raise ValueError("training data contains a single class")
    return y


def _row_weights(y, class_weights):
    if class_weights is None:
        return np.ones(len(y))
    return np.asarray(class_weights, dtype=np.float64)[y]


# ---------------------------------------------------------------------- trees


@dataclass
class Tree:
    """Flat binary tree. Leaves have ``feature == -1``.

    Rows with ``x[feature] < threshold`` go left; missing values follow
    ``default_left``. ``cover`` is the summed (weighted) hessian per node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @classmethod
    def from_nodes(cls, nodes):
        cols = list(zip(*[(n["feature"], n["threshold"], n["left"], n["right"],
                           n["default_left"], n["value"], n["cover"]) for n in nodes]))
        dtypes = (np.int64, np.float64, np.int64, np.int64, bool, np.float64, np.float64)
        return cls(*(np.array(c, dtype=d) for c, d in zip(cols, dtypes)))

    @property
    def n_nodes(self):
        return len(self.feature)

    def is_leaf(self, i):
        return self.feature[i] < 0

    def decision(self, node, x_val):
        """True if a row with value ``x_val`` at this node's feature goes left."""
        if np.isnan(x_val):
            return bool(self.default_left[node])
        return bool(x_val < self.threshold[node])

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return self.value[node]
            r, nd, f = rows[active], node[active], feat[active]
            v = x[r, f]
            go_left = np.where(np.isnan(v), self.default_left[nd], v < self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])

    def split_features(self):
        return sorted(set(self.feature[self.feature >= 0].tolist()))


@dataclass
class GbdtParams:
    n_rounds: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0


@dataclass
class GbdtModel:
    trees: list
    learning_rate: float
    base_score: float
    n_features: int
    params: GbdtParams = field(default_factory=GbdtParams)
    class_weights: tuple | None = None
    train_loss: list = field(default_factory=list)


class _SplitFinder:
    """Exact greedy split search.

    Each node carries its rows sorted per feature, shape (n_features,
    n_node_rows); children inherit the order through a stable partition so
    nothing is re-sorted after the root.
    """

    def __init__(self, x, lam, min_child_weight):
        self.x = x
        self.xt = np.ascontiguousarray(x.T)
        self.f = x.shape[1]
        self.lam = lam
        self.mcw = min_child_weight
        # NaN sorts last; stable sort keeps row order among ties
        self.root_order = np.argsort(self.xt, axis=1, kind="stable")

    def best(self, order, g, h):
        lam = self.lam
        rows = order[0]
        gn, hn = g[rows].sum(), h[rows].sum()
        xs = np.take_along_axis(self.xt, order, axis=1)
        valid = ~np.isnan(xs)
        gl = np.cumsum(np.where(valid, g[order], 0.0), axis=1)
        hl = np.cumsum(np.where(valid, h[order], 0.0), axis=1)
        g_valid, h_valid = gl[:, -1:], hl[:, -1:]
        g_miss, h_miss = gn - g_valid, hn - h_valid
        # missing values sit after the valid prefix, so a candidate needs a valid successor
        cand = np.zeros_like(valid)
        cand[:, :-1] = valid[:, 1:] & (xs[:, 1:] > xs[:, :-1])
        if not cand.any():
            return None
        miss_left = hl >= h_valid - hl
        gl2 = np.where(miss_left, gl + g_miss, gl)
        hl2 = np.where(miss_left, hl + h_miss, hl)
        gr2 = gn - gl2
        hr2 = hn - hl2
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (gl2 ** 2 / (hl2 + lam) + gr2 ** 2 / (hr2 + lam) - gn ** 2 / (hn + lam))
        ok = cand & (hl2 >= self.mcw) & (hr2 >= self.mcw)
        gain = np.where(ok, gain, -np.inf)
        flat = gain.ravel()  # feature-major: lowest feature, then lowest threshold
        top = flat.max()
        if not np.isfinite(top) or top <= 0:
            return None
        # gains that agree to rounding are ties; the first one in feature-major order wins
        k = int(np.argmax(flat >= top - TIE_RTOL * top))
        j, p = divmod(k, order.shape[1])
        thr = 0.5 * (xs[j, p] + xs[j, p + 1])
        return j, float(thr), bool(miss_left[j, p]), float(flat[k])


def _grow_tree(finder, g, h, params: GbdtParams):
    nodes = []
    x = finder.x

    def build(order, depth):
        idx = len(nodes)
        rows = order[0]
        gsum, hsum = g[rows].sum(), h[rows].sum()
        nodes.append({"feature": -1, "threshold": 0.0, "left": -1, "right": -1,
                      "default_left": True, "value": -gsum / (hsum + params.reg_lambda),
                      "cover": hsum})
        if depth >= params.max_depth or hsum < 2 * params.min_child_weight:
            return idx
        split = finder.best(order, g, h)
        if split is None:
            return idx
        j, thr, miss_left, _ = split
        col = x[:, j]
        go_left = np.where(np.isnan(col), miss_left, col < thr)
        node = nodes[idx]
        node.update(feature=j, threshold=thr, default_left=miss_left)
        sel = go_left[order]
        n_left = int(sel[0].sum())
        node["left"] = build(order[sel].reshape(finder.f, n_left), depth + 1)
        node["right"] = build(order[~sel].reshape(finder.f, -1), depth + 1)
        return idx

    build(finder.root_order, 0)
    return Tree.from_nodes(nodes)


def _logloss(y, margin, w):
    p = sigmoid(margin)
    eps = 1e-15
    ll = -(y * np.log(np.clip(p, eps, 1)) + (1 - y) * np.log(np.clip(1 - p, eps, 1)))
    return float((w * ll).sum() / w.sum())


def fit_gbdt(x, y, params: GbdtParams | None = None, class_weights=None) -> GbdtModel:
    """Binary logistic boosting with exact greedy splits."""
    params = params or GbdtParams()
    x = np.asarray(x, dtype=np.float64)
    y = _check_binary(y)
    w = _row_weights(y, class_weights)
    p0 = float((w * y).sum() / w.sum())
    base = float(np.log(p0 / (1 - p0)))
    margin = np.full(len(y), base)
    finder = _SplitFinder(x, params.reg_lambda, params.min_child_weight)
    trees = []
    losses = [_logloss(y, margin, w)]
    for _ in range(params.n_rounds):
        p = sigmoid(margin)
        g = (p - y) * w
        h = p * (1 - p) * w
        tree = _grow_tree(finder, g, h, params)
        trees.append(tree)
        margin = margin + params.learning_rate * tree.predict(x)
        losses.append(_logloss(y, margin, w))
    return GbdtModel(trees, params.learning_rate, base, x.shape[1], params,
                     None if class_weights is None else tuple(class_weights), losses)


def predict_margin(model: GbdtModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {x.shape}")
    out = np.full(len(x), model.base_score)
    for tree in model.trees:
        out += model.learning_rate * tree.predict(x)
    return out


def predict_proba(model: GbdtModel, x):
    return sigmoid(predict_margin(model, x))


# ------------------------------------------------------------------- logistic


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float

    def margin(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, x):
        return sigmoid(self.margin(x))


def logistic_objective(x, y, w_vec, b, l2, row_w):
    p = sigmoid(x @ w_vec + b)
    return _logloss(y, x @ w_vec + b, row_w) + 0.5 * l2 * float(w_vec @ w_vec), p


def fit_logistic(x, y, lr=0.5, epochs=500, l2=1e-3, class_weights=None) -> LogisticModel:
    """Weighted L2 logistic regression by full-batch gradient descent (bias unpenalised)."""
    x = np.asarray(x, dtype=np.float64)
    y = _check_binary(y)
    rw = _row_weights(y, class_weights)
    rw = rw / rw.sum()
    wv = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        r = (sigmoid(x @ wv + b) - y) * rw
        wv = wv - lr * (x.T @ r + l2 * wv)
        b = b - lr * r.sum()
    return LogisticModel(wv, float(b))

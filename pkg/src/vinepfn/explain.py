"""Feature attribution: path-dependent TreeSHAP, permutation importance, top-k."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import GbdtModel, Tree


@dataclass
class Attribution:
    values: np.ndarray  # (n_rows, n_features) or (n_features,)
    base: float


# ------------------------------------------------------------------ TreeSHAP
#
# The unique path keeps, per element, the split feature, the cover fraction
# of rows flowing that way when the feature is unknown (zero fraction,
# row-independent) and whether the explained row flows that way (one
# fraction, one entry per row). Path weights are per row as well.


class _Path:
    __slots__ = ("d", "z", "o", "w")

    def __init__(self, d=(), z=(), o=(), w=()):
        self.d, self.z, self.o, self.w = list(d), list(z), list(o), list(w)

    def copy(self):
        return _Path(self.d, self.z, self.o, self.w)

    def extend(self, pz, po, feature, n_rows):
        depth = len(self.d)
        self.d.append(feature)
        self.z.append(pz)
        self.o.append(po)
        self.w.append(np.ones(n_rows) if depth == 0 else np.zeros(n_rows))
        for i in range(depth - 1, -1, -1):
            self.w[i + 1] = self.w[i + 1] + po * self.w[i] * (i + 1) / (depth + 1)
            self.w[i] = pz * self.w[i] * (depth - i) / (depth + 1)

    def unwind(self, idx):
        depth = len(self.d) - 1
        one, zero = self.o[idx], self.z[idx]
        hot = one != 0
        safe_one = np.where(hot, one, 1.0)
        nxt = self.w[depth]
        for i in range(depth - 1, -1, -1):
            tmp = self.w[i]
            w_hot = nxt * (depth + 1) / ((i + 1) * safe_one)
            w_cold = tmp * (depth + 1) / (zero * (depth - i))
            self.w[i] = np.where(hot, w_hot, w_cold)
            nxt = np.where(hot, tmp - w_hot * zero * (depth - i) / (depth + 1), nxt)
        del self.d[idx], self.z[idx], self.o[idx], self.w[depth]

    def unwound_sum(self, idx):
        depth = len(self.d) - 1
        one, zero = self.o[idx], self.z[idx]
        hot = one != 0
        safe_one = np.where(hot, one, 1.0)
        nxt = self.w[depth]
        total = np.zeros_like(nxt)
        for i in range(depth - 1, -1, -1):
            t_hot = nxt * (depth + 1) / ((i + 1) * safe_one)
            t_cold = (self.w[i] / zero) / ((depth - i) / (depth + 1))
            total = total + np.where(hot, t_hot, t_cold)
            nxt = np.where(hot, self.w[i] - t_hot * zero * (depth - i) / (depth + 1), nxt)
        return total


def _tree_shap(tree: Tree, x, phi):
    n = len(x)

    def recurse(node, path, pz, po, pfeat):
        path = path.copy()
        path.extend(pz, po, pfeat, n)
        if tree.is_leaf(node):
            for i in range(1, len(path.d)):
                w = path.unwound_sum(i)
                phi[:, path.d[i]] += w * (path.o[i] - path.z[i]) * tree.value[node]
            return
        feat = tree.feature[node]
        col = x[:, feat]
        go_left = np.where(np.isnan(col), tree.default_left[node], col < tree.threshold[node])
        inc_z, inc_o = 1.0, np.ones(n)
        if feat in path.d:
            k = path.d.index(feat)
            inc_z, inc_o = path.z[k], path.o[k]
            path.unwind(k)
        cover = tree.cover[node]
        for child, flows in ((tree.left[node], go_left), (tree.right[node], ~go_left)):
            recurse(child, path, inc_z * tree.cover[child] / cover, inc_o * flows, feat)

    recurse(0, _Path(), 1.0, np.ones(n), -1)


def expected_value(tree: Tree, node=0):
    """Cover-weighted mean leaf value below ``node``."""
    if tree.is_leaf(node):
        return float(tree.value[node])
    l, r = tree.left[node], tree.right[node]
    return (tree.cover[l] * expected_value(tree, l) + tree.cover[r] * expected_value(tree, r)) / (
        tree.cover[l] + tree.cover[r])


def tree_shap(model: GbdtModel, rows) -> Attribution:
    """Path-dependent TreeSHAP in margin space.

    ``rows`` may be a single row (1-D) or a matrix; contributions from each
    tree are scaled by the learning rate.
    """
    if not isinstance(model, GbdtModel) or model.trees is None:
        raise ValueError("tree_shap needs a fitted GbdtModel")
    x = np.asarray(rows, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.shape[1]}")
    phi = np.zeros(x.shape)
    base = model.base_score
    for tree in model.trees:
        part = np.zeros(x.shape)
        _tree_shap(tree, x, part)
        phi += model.learning_rate * part
        base += model.learning_rate * expected_value(tree)
    return Attribution(phi[0] if single else phi, float(base))


def mean_abs_shap(model: GbdtModel, rows):
    return np.abs(tree_shap(model, rows).values).mean(axis=0)


# ----------------------------------------------------- permutation importance


def permutation_importance(predict, x, y, metric="auc", n_repeats=5, seed=0):
    """Mean drop in ``metric`` when each column is shuffled.

    ``predict`` maps a feature matrix to positive-class probabilities.
    """
    from .eval.metrics import metrics, roc_auc

    if metric == "auc":
        def score(p):
            return roc_auc(y, p)[0]
    elif metric == "balanced_accuracy":
        def score(p):
            return metrics(y, (p >= 0.5).astype(int))[1]
    else:
        raise ValueError(f"unsupported metric {metric!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    ref = score(predict(x))
    out = np.zeros(x.shape[1])
    for j in range(x.shape[1]):
        drops = []
        for _ in range(n_repeats):
            xp = x.copy()
            xp[:, j] = x[rng.permutation(len(x)), j]
            drops.append(ref - score(predict(xp)))
        out[j] = float(np.mean(drops))
    return out


def select_top_k(scores, k=25):
    """Indices of the k largest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if k > len(scores):
        raise ValueError(f"k={k} exceeds the number of features ({len(scores)})")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:k].tolist()


def importance_report(names, scores):
    """{name: {score, rank}} in rank order, rank 1 = most important."""
    order = select_top_k(scores, len(scores))
    return {names[j]: {"score": float(scores[j]), "rank": r + 1} for r, j in enumerate(order)}

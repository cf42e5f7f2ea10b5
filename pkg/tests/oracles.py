"""Independent reference computations used by several test modules."""
import itertools
import math

import numpy as np

from vinepfn import pfn
from vinepfn.prior import exact_ppd, sample_hypothesis_task


def rel_error(analytic, numeric, floor=1e-7):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference(fn, params, name, idx, h=1e-5):
    """Central difference of scalar ``fn(params)`` in one coordinate."""
    plus = {k: v.copy() for k, v in params.items()}
    minus = {k: v.copy() for k, v in params.items()}
    plus[name][idx] += h
    minus[name][idx] -= h
    return (float(fn(plus)) - float(fn(minus))) / (2 * h)


def max_gradcheck_error(fn, params, grads, h=1e-5):
    worst = 0.0
    for name, p in params.items():
        for idx in np.ndindex(p.shape):
            worst = max(worst, rel_error(grads[name][idx], finite_difference(fn, params, name, idx, h)))
    return worst


def mann_whitney_auc(y, s):
    """All-pairs count: positive above negative scores 1, ties 1/2."""
    pos = [b for a, b in zip(y, s) if a == 1]
    neg = [b for a, b in zip(y, s) if a == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (len(pos) * len(neg))


def brute_best_split(x, g, h, reg_lambda, min_child_weight=1.0):
    """Evaluate the gain formula at every midpoint of every feature in exact rational arithmetic.

    Exact gains make ties real ties, resolved toward the lowest feature and
    then the lowest threshold. Returns ``(gain, feature, threshold)``.
    """
    from fractions import Fraction

    gq = [Fraction(float(v)) for v in g]
    hq = [Fraction(float(v)) for v in h]
    lam, mcw = Fraction(reg_lambda), Fraction(min_child_weight)
    G, H = sum(gq), sum(hq)
    best = None
    for j in range(x.shape[1]):
        vals = np.unique(x[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            left = x[:, j] < thr
            gl = sum(v for v, m in zip(gq, left) if m)
            hl = sum(v for v, m in zip(hq, left) if m)
            gr, hr = G - gl, H - hl
            if hl < mcw or hr < mcw:
                continue
            gain = (gl**2 / (hl + lam) + gr**2 / (hr + lam) - G**2 / (H + lam)) / 2
            if best is None or gain > best[0]:
                best = (gain, j, thr)
    if best is None:
        return None
    return float(best[0]), best[1], best[2]


def tree_cond_expectation(tree, x, subset, node=0):
    """E[f(x) | x_S] under path-dependent (cover-weighted) conditioning."""
    if tree.is_leaf(node):
        return tree.value[node]
    f = tree.feature[node]
    left, right = tree.left[node], tree.right[node]
    if f in subset:
        nxt = left if tree.decision(node, x[f]) else right
        return tree_cond_expectation(tree, x, subset, nxt)
    cl, cr = tree.cover[left], tree.cover[right]
    return (cl * tree_cond_expectation(tree, x, subset, left)
            + cr * tree_cond_expectation(tree, x, subset, right)) / (cl + cr)


def brute_shapley(tree, x):
    """Exact Shapley values over the tree's split features by 2^M subset enumeration."""
    feats = sorted(set(int(f) for f in tree.feature if f >= 0))
    m = len(feats)
    phi = np.zeros(len(x))
    for i in feats:
        others = [f for f in feats if f != i]
        for r in range(m):
            for s in itertools.combinations(others, r):
                w = math.factorial(r) * math.factorial(m - r - 1) / math.factorial(m)
                with_i = tree_cond_expectation(tree, x, set(s) | {i})
                without = tree_cond_expectation(tree, x, set(s))
                phi[i] += w * (with_i - without)
    return phi


def irls_logistic(x, y, l2, row_w, iters=50):
    """Newton solve of the weighted, L2-penalised mean logistic loss (bias unpenalised)."""
    n, f = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    beta = np.zeros(f + 1)
    pen = np.full(f + 1, l2)
    pen[-1] = 0.0
    for _ in range(iters):
        p = 1 / (1 + np.exp(-xa @ beta))
        grad = xa.T @ (row_w * (p - y)) + pen * beta
        hess = (xa * (row_w * p * (1 - p))[:, None]).T @ xa + np.diag(pen)
        beta -= np.linalg.solve(hess, grad)
    return beta[:-1], beta[-1]


def kl_rows(p, q):
    """Row-wise KL(p || q) for strictly positive q."""
    p = np.asarray(p)
    q = np.asarray(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / q), 0.0)
    return terms.sum(axis=1)


def held_out_toy_tasks(prior, n_tasks=200, seed=123):
    rng = np.random.default_rng(seed)
    return [sample_hypothesis_task(rng, prior, (2, 16)) for _ in range(n_tasks)]


def toy_divergences(weights, prior, tasks):
    """Per-task mean KL(exact || pfn) and mean total variation over query rows."""
    kls, tvs = [], []
    for t in tasks:
        exact = exact_ppd(prior, t.x_train, t.y_train, t.x_test)
        q = pfn.infer(weights, t.x_train, t.y_train, t.x_test, n_classes=prior.n_classes).probs
        kls.append(kl_rows(exact, q).mean())
        tvs.append(0.5 * np.abs(exact - q).sum(axis=1).mean())
    return float(np.mean(kls)), float(np.mean(tvs))

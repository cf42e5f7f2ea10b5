"""Repeated-split benchmark protocol."""
from __future__ import annotations

import hashlib
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import baselines, explain, preprocess
from .metrics import metrics, roc_auc

log = logging.getLogger(__name__)

TARGET_MODES = ("imbalance", "balanced")


@dataclass
class TabularDataset:
    names: list
    x: np.ndarray
    labels: np.ndarray  # (n,) integer labels or (n, n_diseases) indicators
    block_id: np.ndarray | None = None
    disease_names: list | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if self.x.ndim != 2 or self.x.shape[1] != len(self.names):
            raise ValueError(f"feature matrix {self.x.shape} does not match {len(self.names)} names")
        if self.x.shape[0] < 2 or len(self.labels) != self.x.shape[0]:
            raise ValueError("need at least 2 rows and one label per row")

    @property
    def n_rows(self):
        return self.x.shape[0]

    def binary_labels(self):
        if self.labels.ndim == 2:
            return binarize_target(self.labels)
        return self.labels.astype(np.int64)

    def select(self, columns):
        columns = list(columns)
        return TabularDataset([self.names[j] for j in columns], self.x[:, columns], self.labels,
                              self.block_id, self.disease_names)


def binarize_target(indicators):
    """1 where any disease indicator is set."""
    ind = np.asarray(indicators)
    return (ind.reshape(len(ind), -1) != 0).any(axis=1).astype(np.int64)


@dataclass
class SplitSpec:
    train_fraction: float = 0.76
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def stratified_split(y, spec: SplitSpec):
    """Train/test row indices with per-class largest-remainder allocation."""
    y = np.asarray(y)
    n = len(y)
    rng = np.random.default_rng(spec.seed)
    n_train = int(math.floor(n * spec.train_fraction + 0.5))
    if not spec.stratified:
        perm = rng.permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < 2):
        raise ValueError(f"class {classes[np.argmin(counts)]!r} has fewer than 2 rows")
    quota = counts * n_train / n
    alloc = np.floor(quota).astype(int)
    rest = n_train - alloc.sum()
    # largest remainder; ties go to the lower class
    for c in np.lexsort((np.arange(len(classes)), -(quota - alloc)))[:rest]:
        alloc[c] += 1
    alloc = np.clip(alloc, 1, counts - 1)
    train, test = [], []
    for c, k in zip(classes, alloc):
        idx = np.nonzero(y == c)[0]
        idx = idx[rng.permutation(len(idx))]
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def balance_training(x, y, seed=0):
    """Oversample the minority class with replacement up to parity (rows appended)."""
    x = np.asarray(x)
    y = np.asarray(y)
    counts = np.bincount(y.astype(np.int64), minlength=2)
    if counts[0] == counts[1] or counts.min() == 0:
        return x, y
    minority = int(np.argmin(counts))
    idx = np.nonzero(y == minority)[0]
    rng = np.random.default_rng(seed)
    extra = rng.choice(idx, size=int(counts.max() - counts.min()), replace=True)
    return np.concatenate([x, x[extra]]), np.concatenate([y, y[extra]])


# ------------------------------------------------------------------- models


@dataclass
class ModelSpec:
    """A benchmark entry: ``fit_predict(x_train, y_train, x_test, mode, seed) -> p(positive)``."""

    name: str
    params: str
    fit_predict: object


def pfn_model(weights, n_members, name=None):
    from ..pfn import ensemble_infer

    def fit_predict(xtr, ytr, xte, mode, seed):
        if mode == "balanced":
            xtr, ytr = balance_training(xtr, ytr, seed)
        ppd = ensemble_infer(weights, xtr, ytr, xte, n_members)
        return ppd.probs[:, list(ppd.class_ids).index(1)]

    params = "default" if n_members == 1 else f"{n_members} ensembles"
    return ModelSpec(name or f"pfn-{n_members}", params, fit_predict)


class _FitCache:
    """Memo of GBDT predictions keyed by inputs; the imbalance arms of the
    weighted and unweighted GBDT are the same fit."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store = {}

    @staticmethod
    def key(params, weights, *arrays):
        h = hashlib.blake2b(repr((params, weights)).encode(), digest_size=16)
        for a in arrays:
            a = np.ascontiguousarray(a)
            h.update(repr(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def get_or_compute(self, key, compute):
        with self._lock:
            if key in self._store:
                return self._store[key]
        value = compute()
        with self._lock:
            self._store[key] = value
        return value


def gbdt_model(params=None, weighted=False, cache=None):
    params = params or baselines.GbdtParams()

    def fit_predict(xtr, ytr, xte, mode, seed):
        weights = None
        if mode == "balanced":
            if weighted:
                weights = baselines.balanced_class_weights(ytr)
            else:
                xtr, ytr = balance_training(xtr, ytr, seed)

        def compute():
            model = baselines.fit_gbdt(xtr, ytr, params, weights)
            return baselines.predict_proba(model, xte)

        if cache is None:
            return compute()
        return cache.get_or_compute(cache.key(params, weights, xtr, ytr, xte), compute)

    desc = f"{params.n_rounds} rounds, depth {params.max_depth}"
    return ModelSpec("gbdt-weighted" if weighted else "gbdt", desc, fit_predict)


def logistic_model(lr=0.5, epochs=500, l2=1e-3):
    def fit_predict(xtr, ytr, xte, mode, seed):
        stats = preprocess.fit(xtr)
        weights = baselines.balanced_class_weights(ytr) if mode == "balanced" else None
        model = baselines.fit_logistic(preprocess.transform(xtr, stats), ytr, lr, epochs, l2, weights)
        return model.predict_proba(preprocess.transform(xte, stats))

    return ModelSpec("logistic", f"l2={l2:g}", fit_predict)


def default_models(weights, gbdt_params=None, ensembles=(1, 32), logistic=None):
    """PFN per ensemble size, GBDT unweighted and weighted, logistic floor."""
    cache = _FitCache()
    models = [pfn_model(weights, m) for m in ensembles]
    models += [gbdt_model(gbdt_params, cache=cache), gbdt_model(gbdt_params, weighted=True, cache=cache),
               logistic_model(**(logistic or {}))]
    return models


def select_features_by_shap(x, y, k=25, seed=0, params=None, mode="imbalance"):
    """Top-k columns by mean |SHAP| of a GBDT fit on the seed's train split.

    ``mode="balanced"`` ranks with the class-weighted GBDT instead.
    """
    if mode not in TARGET_MODES:
        raise ValueError(f"mode must be one of {TARGET_MODES}")
    train, _ = stratified_split(y, SplitSpec(seed=seed))
    weights = baselines.balanced_class_weights(y[train]) if mode == "balanced" else None
    model = baselines.fit_gbdt(x[train], y[train], params, weights)
    scores = explain.mean_abs_shap(model, x[train])
    return explain.select_top_k(scores, k), scores


# ---------------------------------------------------------------- benchmark


class BenchmarkError(RuntimeError):
    def __init__(self, model, seed, cause):
        super().__init__(f"model {model!r} failed on seed {seed}: {cause}")
        self.model = model
        self.seed = seed


def _sig(v):
    return float(f"{v:.6g}")


@dataclass
class MetricsReport:
    rows: list
    roc: dict = field(default_factory=dict)  # (model, mode) -> (auc, (thr, fpr, tpr)) for roc_seed
    roc_seed: int = 0
    n_seeds: int = 0
    features: list | None = None

    def to_dict(self):
        out = {"n_seeds": self.n_seeds, "rows": [{k: (_sig(v) if isinstance(v, float) else v)
                                                  for k, v in r.items()} for r in self.rows]}
        out["roc_auc"] = [{"model": m, "target_mode": t, "seed": self.roc_seed, "auc": _sig(a)}
                          for (m, t), (a, _) in self.roc.items()]
        if self.features is not None:
            out["features"] = list(self.features)
        return out

    def row(self, model, mode):
        for r in self.rows:
            if r["model"] == model and r["target_mode"] == mode:
                return r
        raise KeyError((model, mode))


def _run_seed(models, x, y, seed, modes, spec):
    train, test = stratified_split(y, SplitSpec(spec.train_fraction, spec.stratified, seed))
    out = {}
    for mode in modes:
        for m in models:
            try:
                p = np.asarray(m.fit_predict(x[train], y[train], x[test], mode, seed), dtype=np.float64)
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise BenchmarkError(m.name, seed, exc) from exc
            out[(m.name, mode)] = (metrics(y[test], (p >= 0.5).astype(int)), y[test], p)
    return out


def worker_count():
    env = os.environ.get("PFN_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def run_benchmark(models, x, y, n_seeds=40, modes=TARGET_MODES, spec=None, roc_seed=0,
                  threads=None, progress=None):
    """Evaluate every model on identical splits for seeds 0..n_seeds-1."""
    if not models:
        raise ValueError("run_benchmark needs at least one model")
    spec = spec or SplitSpec()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    threads = threads or worker_count()

    def job(seed):
        res = _run_seed(models, x, y, seed, modes, spec)
        if progress:
            progress(seed)
        return res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(n_seeds)))
    else:
        results = [job(s) for s in range(n_seeds)]

    rows, roc = [], {}
    for m in models:
        for mode in modes:
            vals = np.array([results[s][(m.name, mode)][0] for s in range(n_seeds)])
            mean, std = vals.mean(axis=0), vals.std(axis=0)
            rows.append({
                "model": m.name, "params": m.params, "target_mode": mode,
                "accuracy_mean": float(mean[0]), "accuracy_std": float(std[0]),
                "balanced_accuracy_mean": float(mean[1]), "balanced_accuracy_std": float(std[1]),
                "f1_mean": float(mean[2]), "f1_std": float(std[2]),
                "n_seeds": n_seeds,
            })
            if roc_seed < n_seeds:
                _, yt, p = results[roc_seed][(m.name, mode)]
                roc[(m.name, mode)] = roc_auc(yt, p)
    return MetricsReport(rows, roc, roc_seed, n_seeds)

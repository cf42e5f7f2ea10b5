"""Column preprocessing for PFN inputs and deterministic ensemble variants.

Per column: median imputation, sign-preserving log1p for columns with
outliers, optional Yeo-Johnson power transform, standardisation. All
statistics come from the training rows only.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

OUTLIER_FACTOR = 10.0
LAMBDA_BOUNDS = (-2.0, 2.0)
_GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass
class ColumnStats:
    median: np.ndarray
    iqr: np.ndarray
    outlier: np.ndarray
    constant: np.ndarray
    lmbda: np.ndarray
    # standardisation constants for the plain path and the power-transformed path
    mean: np.ndarray
    std: np.ndarray
    mean_pt: np.ndarray
    std_pt: np.ndarray

    @property
    def fill(self):
        return self.median

    @property
    def n_features(self):
        return len(self.median)


@dataclass
class PreprocessPlan:
    permutation: np.ndarray
    apply_power_transform: bool = False
    label_shift: int = 0

    def __post_init__(self):
        self.permutation = np.asarray(self.permutation, dtype=np.int64)
        if sorted(self.permutation.tolist()) != list(range(len(self.permutation))):
            raise ValueError("permutation must be a bijection on column indices")

    @classmethod
    def identity(cls, n_features):
        return cls(np.arange(n_features))


def signed_log1p(x):
    return np.sign(x) * np.log1p(np.abs(x))


def yeo_johnson(x, lmbda):
    """Yeo-Johnson power transform with parameter ``lmbda``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    if abs(lmbda) < 1e-12:
        out[pos] = np.log1p(x[pos])
    else:
        out[pos] = np.expm1(lmbda * np.log1p(x[pos])) / lmbda
    if abs(lmbda - 2) < 1e-12:
        out[~pos] = -np.log1p(-x[~pos])
    else:
        out[~pos] = -np.expm1((2 - lmbda) * np.log1p(-x[~pos])) / (2 - lmbda)
    return out


def yeo_johnson_llf(lmbda, x):
    """Profile log-likelihood of the Yeo-Johnson parameter under a Gaussian model."""
    y = yeo_johnson(x, lmbda)
    var = y.var()
    if var <= 0 or not np.isfinite(var):
        return -np.inf
    return -0.5 * len(x) * np.log(var) + (lmbda - 1) * np.sum(np.sign(x) * np.log1p(np.abs(x)))


def fit_yeo_johnson(column, tol=1e-4):
    """Maximum-likelihood λ on [-2, 2] by golden-section search."""
    x = np.asarray(column, dtype=np.float64)
    x = x[np.isfinite(x)]
    if len(np.unique(x)) < 3:
        warnings.warn("degenerate column for Yeo-Johnson fit; using identity (lambda=1)",
                      RuntimeWarning, stacklevel=2)
        return 1.0
    a, b = LAMBDA_BOUNDS
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = yeo_johnson_llf(c, x), yeo_johnson_llf(d, x)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = yeo_johnson_llf(c, x)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = yeo_johnson_llf(d, x)
    return float(np.clip((a + b) / 2, *LAMBDA_BOUNDS))


def _quartiles(v):
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="inverted_cdf")
    return q1, float(np.median(v)), q3


def fit(train_rows) -> ColumnStats:
    """Per-column statistics from training rows (NaN marks missing)."""
    x = np.asarray(train_rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("fit needs a 2-D array with at least 2 rows")
    f = x.shape[1]
    keys = ("median", "iqr", "lmbda", "mean", "std", "mean_pt", "std_pt")
    s = {k: np.zeros(f) for k in keys}
    s["lmbda"][:] = 1.0
    outlier = np.zeros(f, dtype=bool)
    constant = np.zeros(f, dtype=bool)
    for j in range(f):
        v = x[:, j]
        v = v[np.isfinite(v)]
        if v.size == 0:
            constant[j] = True
            continue
        q1, med, q3 = _quartiles(v)
        s["median"][j] = med
        s["iqr"][j] = q3 - q1
        outlier[j] = np.max(np.abs(v - med)) > OUTLIER_FACTOR * (q3 - q1 + 1e-9)
        if outlier[j]:
            v = signed_log1p(v)
        s["mean"][j] = v.mean()
        s["std"][j] = v.std()
        constant[j] = s["std"][j] == 0
        if len(np.unique(v)) >= 3:
            s["lmbda"][j] = fit_yeo_johnson(v)
        pt = yeo_johnson(v, s["lmbda"][j])
        s["mean_pt"][j] = pt.mean()
        s["std_pt"][j] = pt.std()
    return ColumnStats(outlier=outlier, constant=constant, **s)


def transform(rows, stats: ColumnStats, plan: PreprocessPlan | None = None):
    x = np.array(rows, dtype=np.float64, ndmin=2)
    if x.shape[1] != stats.n_features:
        raise ValueError(f"column count mismatch: expected {stats.n_features}, got {x.shape[1]}")
    plan = plan or PreprocessPlan.identity(stats.n_features)
    if len(plan.permutation) != stats.n_features:
        raise ValueError("plan permutation does not match column count")
    x = np.where(np.isfinite(x), x, stats.median)
    x = np.where(stats.outlier, signed_log1p(x), x)
    if plan.apply_power_transform:
        x = np.column_stack([yeo_johnson(x[:, j], stats.lmbda[j]) for j in range(x.shape[1])])
        mean, std = stats.mean_pt, stats.std_pt
    else:
        mean, std = stats.mean, stats.std
    safe = np.where(std > 0, std, 1.0)
    x = np.where(std > 0, (x - mean) / safe, 0.0)
    return x[:, plan.permutation]


def build_ensemble_members(n_features, n_classes, n_members):
    """Member i: cyclic column shift floor(i*f/m), power transform iff i odd, label shift i mod K."""
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    plans = []
    for i in range(n_members):
        shift = (i * n_features) // n_members
        perm = (np.arange(n_features) + shift) % n_features
        plans.append(PreprocessPlan(perm, apply_power_transform=bool(i % 2), label_shift=i % max(n_classes, 1)))
    return plans

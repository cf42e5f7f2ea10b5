"""Synthetic task priors for offline PFN training.

Two priors live here. ``PriorConfig`` describes the random-MLP prior used
to train deployable weights; ``DiscreteHypothesisPrior`` is a small,
enumerable prior for which the posterior predictive can be computed
exactly by summing over hypotheses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_RESAMPLES = 16
DISCRETIZE_MODES = ("quantile-uniform", "random-offset")


class DegenerateTaskError(RuntimeError):
    pass


@dataclass
class GeneratorConfig:
    depth_range: tuple[int, int] = (1, 3)
    width_range: tuple[int, int] = (4, 16)
    weight_scale: float = 1.0
    gaussian_prob: float = 0.7  # per-feature chance of gaussian (else uniform) inputs
    noise_std: float = 0.1
    relevant_prob_range: tuple[float, float] = (0.2, 1.0)


@dataclass
class PriorConfig:
    n_samples_range: tuple[int, int] = (64, 512)
    n_features_range: tuple[int, int] = (1, 30)
    n_classes_max: int = 10
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    imbalance: str = "random-offset"
    binary_prob: float = 0.5

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)
        for name in ("n_samples_range", "n_features_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or lo > hi:
                raise ValueError(f"{name} must be a nonempty range, got {(lo, hi)}")
        if self.n_samples_range[0] < 2:
            raise ValueError("n_samples_range must allow at least 2 rows")
        if self.n_classes_max < 2:
            raise ValueError("n_classes_max must be >= 2")
        if self.generator.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        lo, hi = self.generator.depth_range
        if lo < 0 or lo > hi:
            raise ValueError(f"depth_range must be a nonempty range, got {(lo, hi)}")
        if self.imbalance not in DISCRETIZE_MODES:
            raise ValueError(f"unknown imbalance mode {self.imbalance!r}")


@dataclass
class SyntheticTask:
    x: np.ndarray
    y: np.ndarray
    cut: int
    raw_yhat: np.ndarray | None = None
    n_classes: int | None = None

    def __post_init__(self):
        if self.n_classes is None:
            self.n_classes = int(self.y.max()) + 1

    @property
    def x_train(self):
        return self.x[: self.cut]

    @property
    def y_train(self):
        return self.y[: self.cut]

    @property
    def x_test(self):
        return self.x[self.cut:]

    @property
    def y_test(self):
        return self.y[self.cut:]


def remap_first_occurrence(y):
    """Relabel integer classes 0..K-1 in order of first appearance."""
    y = np.asarray(y)
    _, first = np.unique(y, return_index=True)
    order = np.unique(y)[np.argsort(first)]
    lookup = {v: i for i, v in enumerate(order.tolist())}
    return np.array([lookup[v] for v in y.tolist()], dtype=np.int64)


def discretize_labels(yhat, n_classes, mode="quantile-uniform", rng=None):
    """Cut scalar targets into ``n_classes`` intervals.

    ``quantile-uniform`` places boundaries at equal-mass quantiles;
    ``random-offset`` draws the class masses at random (each class keeps at
    least 10%/K of the mass), which produces imbalanced labels.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if not np.all(np.isfinite(yhat)):
        raise ValueError("yhat must be finite")
    if yhat.size == 0 or np.all(yhat == yhat[0]):
        raise ValueError("cannot place class boundaries: all targets identical")
    if mode == "quantile-uniform":
        levels = np.arange(1, n_classes) / n_classes
    elif mode == "random-offset":
        if rng is None:
            raise ValueError("random-offset mode needs an rng")
        mass = 0.9 * rng.dirichlet(np.ones(n_classes)) + 0.1 / n_classes
        levels = np.cumsum(mass)[:-1]
    else:
        raise ValueError(f"unknown discretization mode {mode!r}")
    bounds = np.quantile(yhat, levels, method="midpoint")
    return np.searchsorted(bounds, yhat, side="left").astype(np.int64)


def _sample_inputs(rng, n, f, gen):
    gaussian = rng.random(f) < gen.gaussian_prob
    x = np.where(gaussian, rng.standard_normal((n, f)), rng.uniform(-np.sqrt(3), np.sqrt(3), (n, f)))
    return x


def _random_mlp(rng, x, gen):
    depth = int(rng.integers(gen.depth_range[0], gen.depth_range[1] + 1))
    f = x.shape[1]
    if depth == 0:
        return x.mean(axis=1)
    lo, hi = gen.relevant_prob_range
    keep = rng.random(f) < rng.uniform(lo, hi)
    keep[rng.integers(f)] = True
    h = x * keep
    fan_in = int(keep.sum())
    for _ in range(depth):
        width = int(rng.integers(gen.width_range[0], gen.width_range[1] + 1))
        w = rng.standard_normal((h.shape[1], width)) * gen.weight_scale / np.sqrt(fan_in)
        b = rng.standard_normal(width) * 0.5 * gen.weight_scale
        fan_in = width
        h = np.tanh(h @ w + b) if rng.random() < 0.5 else np.maximum(h @ w + b, 0.0)
    w_out = rng.standard_normal(h.shape[1]) / np.sqrt(h.shape[1])
    out = h @ w_out
    std = out.std()
    return out / std if std > 0 else out


def sample_task(rng: np.random.Generator, config: PriorConfig) -> SyntheticTask:
    """Draw one supervised task from the random-MLP prior."""
    gen = config.generator
    for _ in range(MAX_RESAMPLES + 1):
        n = int(rng.integers(config.n_samples_range[0], config.n_samples_range[1] + 1))
        f = int(rng.integers(config.n_features_range[0], config.n_features_range[1] + 1))
        if config.n_classes_max == 2 or rng.random() < config.binary_prob:
            k = 2
        else:
            k = int(rng.integers(2, config.n_classes_max + 1))
        k = min(k, n)
        x = _sample_inputs(rng, n, f, gen)
        yhat = _random_mlp(rng, x, gen) + gen.noise_std * rng.standard_normal(n)
        cut = int(rng.integers(max(1, int(np.ceil(0.1 * n))), max(2, int(np.floor(0.9 * n))) + 1))
        cut = min(max(cut, 1), n - 1)
        try:
            y = discretize_labels(yhat, k, config.imbalance, rng)
        except ValueError:
            continue
        if len(np.unique(y[:cut])) < 2:
            continue
        y = remap_first_occurrence(y)
        return SyntheticTask(x=x, y=y, cut=cut, raw_yhat=yhat)
    raise DegenerateTaskError(f"no task with >=2 classes after {MAX_RESAMPLES} resamples")


def task_stream(seed, config):
    rng = np.random.default_rng(seed)
    while True:
        yield sample_task(rng, config)


# ----------------------------------------------------------- enumerable prior


@dataclass
class DiscreteHypothesisPrior:
    """Finite hypothesis space over a small input grid.

    ``grid`` holds one feature vector per grid point and ``labels[h, g]`` is
    hypothesis h's class at grid point g.
    """

    grid: np.ndarray
    labels: np.ndarray
    prior_probs: np.ndarray
    n_classes: int = 2
    flip_noise: float = 0.1

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.prior_probs = np.asarray(self.prior_probs, dtype=np.float64)
        if self.labels.shape != (len(self.prior_probs), len(self.grid)):
            raise ValueError("labels must be (n_hypotheses, n_grid_points)")
        if np.any(self.prior_probs < 0) or abs(self.prior_probs.sum() - 1.0) > 1e-12:
            raise ValueError("prior_probs must be nonnegative and sum to 1")
        if not 0.0 <= self.flip_noise < 1.0:
            raise ValueError("flip_noise must be in [0, 1)")

    def grid_index(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        hit = np.all(x[:, None, :] == self.grid[None, :, :], axis=-1)
        if not hit.any(axis=1).all():
            raise ValueError("input row not on the hypothesis grid")
        return hit.argmax(axis=1)


def default_hypothesis_prior(flip_noise=0.1):
    """Eight binary labelings of four one-hot grid points, with unequal prior mass."""
    grid = np.eye(4)
    labels = np.array([
        [0, 0, 0, 0],
        [1, 1, 1, 1],
        [0, 0, 1, 1],
        [1, 1, 0, 0],
        [0, 1, 0, 1],
        [1, 0, 1, 0],
        [0, 1, 1, 0],
        [1, 0, 0, 1],
    ])
    probs = np.array([0.2, 0.2, 0.15, 0.15, 0.1, 0.1, 0.05, 0.05])
    return DiscreteHypothesisPrior(grid, labels, probs, n_classes=2, flip_noise=flip_noise)


def _point_likelihood(prior, pred, y):
    k = prior.n_classes
    eps = prior.flip_noise
    return np.where(pred == y, 1.0 - eps, eps / (k - 1))


def exact_ppd(prior: DiscreteHypothesisPrior, x_train, y_train, x_test):
    """Posterior predictive by full enumeration of the hypothesis space.

    Returns an (n_test, n_classes) array.
    """
    x_test = np.atleast_2d(np.asarray(x_test, dtype=np.float64))
    y_train = np.asarray(y_train, dtype=np.int64).reshape(-1)
    with np.errstate(divide="ignore"):
        logw = np.log(prior.prior_probs)
        if y_train.size:
            gi = prior.grid_index(x_train)
            lik = _point_likelihood(prior, prior.labels[:, gi], y_train[None, :])
            logw = logw + np.log(lik).sum(axis=1)
    if not np.isfinite(logw).any():
        raise ValueError("exact_ppd: zero total evidence for the observed data")
    w = np.exp(logw - logw[np.isfinite(logw)].max())
    w /= w.sum()
    gt = prior.grid_index(x_test)
    out = np.empty((len(gt), prior.n_classes))
    for c in range(prior.n_classes):
        out[:, c] = w @ _point_likelihood(prior, prior.labels[:, gt], c)
    return out / out.sum(axis=1, keepdims=True)


def sample_hypothesis_task(rng, prior: DiscreteHypothesisPrior, n_range=(2, 16)):
    """Draw a task: pick a hypothesis, sample grid points, flip labels with the prior's noise."""
    h = rng.choice(len(prior.prior_probs), p=prior.prior_probs)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    gi = rng.integers(len(prior.grid), size=n)
    y = prior.labels[h, gi].copy()
    flip = rng.random(n) < prior.flip_noise
    if flip.any():
        shift = rng.integers(1, prior.n_classes, size=int(flip.sum()))
        y[flip] = (y[flip] + shift) % prior.n_classes
    cut = int(rng.integers(1, n))
    return SyntheticTask(x=prior.grid[gi].copy(), y=y, cut=cut, n_classes=prior.n_classes)

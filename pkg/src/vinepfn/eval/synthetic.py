"""Synthetic vineyard-like disease dataset.

Rows are block-season observations. Features come in five groups
(spectral, climate, soil, terrain, block) driven by a handful of latent
factors; disease risk is a nonlinear function of those latents, so the
signal is learnable but not linearly separable.
"""
from __future__ import annotations

import numpy as np

DISEASES = (
    "Aspergillus", "Bitter Rot", "Botrytis", "Downy Mildew", "Penicillium",
    "Powdery Mildew", "Ripe Rot", "Sooty Mould", "Sour Rot",
)
# relative frequency of each disease among affected rows (imbalanced)
_DISEASE_WEIGHTS = np.array([0.04, 0.05, 0.30, 0.16, 0.05, 0.20, 0.06, 0.06, 0.08])
_GROUP_SHARES = (("spectral", 0.30), ("climate", 0.35), ("soil", 0.15), ("terrain", 0.10), ("block", 0.10))
# latent factors per group; the first two climate latents and the spectral vigour drive risk
_GROUP_LATENTS = {"spectral": (2, 3), "climate": (0, 1, 4), "soil": (5,), "terrain": (6,), "block": (5, 6)}
POSITIVE_QUANTILE = 0.68
LABEL_NOISE = 0.04
MISSING_RATE = 0.05


def _group_sizes(f):
    sizes = [int(np.floor(share * f)) for _, share in _GROUP_SHARES]
    for i in range(f - sum(sizes)):
        sizes[i % len(sizes)] += 1
    return sizes


def feature_names(f):
    names = []
    for (group, _), size in zip(_GROUP_SHARES, _group_sizes(f)):
        names.extend(f"{group}_{i:03d}" for i in range(size))
    return names


def _latents(rng, n):
    n_blocks = max(1, int(round(n / 2.13)))
    block_of_row = np.sort(rng.integers(0, n_blocks, size=n))
    block_lat = rng.standard_normal((n_blocks, 2))
    z = rng.standard_normal((n, 7))
    z[:, 5:7] = block_lat[block_of_row]
    return z, block_of_row


def disease_risk(z):
    """Planted response: humidity x temperature interaction plus a vigour deficit."""
    return 1.2 * z[:, 0] * z[:, 1] + 0.9 * (z[:, 2] ** 2 - 1.0) + 0.3 * z[:, 5]


def column_recipes(seed, f):
    """Per-column generative recipe, independent of the row count.

    Each recipe is ``(latent or -1, loading, noise_sd, style, scale, offset)``;
    the same recipes drive both tabular rows and demo pixel grids.
    """
    rng = np.random.default_rng([seed, 1])
    recipes = []
    for (group, _), size in zip(_GROUP_SHARES, _group_sizes(f)):
        lat = _GROUP_LATENTS[group]
        for _ in range(size):
            informative = rng.random() >= 0.15
            k = int(lat[rng.integers(len(lat))]) if informative else -1
            load = rng.uniform(0.6, 1.0) * rng.choice((-1.0, 1.0))
            noise_sd = rng.uniform(0.3, 0.8)
            u = rng.random()
            style = "skewed" if u < 0.15 else ("rounded" if u < 0.25 else "plain")
            recipes.append((k, load, noise_sd, style, rng.uniform(0.5, 50.0), rng.uniform(-100.0, 100.0)))
    return recipes


def render_columns(recipes, z, rng):
    """Materialize feature columns from latents ``z`` (rows x 7)."""
    n = len(z)
    cols = []
    for k, load, noise_sd, style, scale, offset in recipes:
        if k < 0:
            col = rng.standard_normal(n)
        else:
            col = load * z[:, k] + noise_sd * rng.standard_normal(n)
        if style == "skewed":
            col = np.exp(1.2 * col)
        elif style == "rounded":
            col = np.round(col * 2.0) / 2.0
        cols.append(col * scale + offset)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def generate_vineyard_like(seed, n=1335, f=450):
    from .protocol import TabularDataset

    if n < 1 or f < 1:
        raise ValueError("n and f must be >= 1")
    rng = np.random.default_rng([seed, 0])
    z, block_of_row = _latents(rng, n)
    x = render_columns(column_recipes(seed, f), z, rng)
    x[rng.random(x.shape) < MISSING_RATE] = np.nan

    risk = disease_risk(z) + 0.35 * rng.standard_normal(n)
    positive = risk > np.quantile(risk, POSITIVE_QUANTILE)
    flip = rng.random(n) < LABEL_NOISE
    positive = positive ^ flip
    indicators = np.zeros((n, len(DISEASES)), dtype=np.int64)
    for i in np.nonzero(positive)[0]:
        k = 1 + rng.binomial(2, 0.25)
        picks = rng.choice(len(DISEASES), size=k, replace=False, p=_DISEASE_WEIGHTS)
        indicators[i, picks] = 1
    block_ids = np.array([f"B{b:04d}" for b in block_of_row])
    return TabularDataset(feature_names(f), x, indicators, block_ids, disease_names=list(DISEASES))

"""Per-pixel disease probability rasters.

A :class:`PixelGrid` holds one float32 plane per feature. Unmasked pixels
are flattened in row-major order into an ordinary feature matrix, so any
tabular predictor can score a field and a grid built from tabular rows
reproduces the tabular predictions exactly.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

LOW_RGB = (0, 128, 0)
HIGH_RGB = (255, 255, 0)


@dataclass
class PixelGrid:
    width: int
    height: int
    names: list
    planes: np.ndarray  # (n_features, height, width) float32
    nodata: np.ndarray  # (height, width) bool, True = no valid data
    block_id: np.ndarray | None = None  # (height, width) int
    geo: tuple = (0.0, 0.0, 1.0, 1.0)  # origin x, origin y, pixel width, pixel height

    def __post_init__(self):
        self.names = list(self.names)
        self.planes = np.asarray(self.planes, dtype=np.float32)
        self.nodata = np.asarray(self.nodata, dtype=bool)
        shape = (self.height, self.width)
        if self.planes.shape != (len(self.names),) + shape:
            raise ValueError(f"planes {self.planes.shape} do not match {len(self.names)} x {shape}")
        if self.nodata.shape != shape:
            raise ValueError(f"nodata mask {self.nodata.shape} does not match {shape}")
        if self.block_id is not None:
            self.block_id = np.asarray(self.block_id, dtype=np.int64).reshape(shape)
        self.geo = tuple(float(g) for g in self.geo)

    @property
    def n_features(self):
        return len(self.names)

    def rows(self):
        """Feature matrix of the unmasked pixels, row-major."""
        valid = ~self.nodata.reshape(-1)
        flat = self.planes.reshape(self.n_features, -1)
        return flat[:, valid].T.astype(np.float64)

    @classmethod
    def from_rows(cls, rows, names, width, height, nodata=None, block_id=None):
        """Inverse of :meth:`rows`: scatter a feature matrix into the unmasked pixels."""
        rows = np.asarray(rows)
        nodata = np.zeros((height, width), bool) if nodata is None else np.asarray(nodata, bool)
        valid = ~nodata.reshape(-1)
        if rows.shape != (int(valid.sum()), len(names)):
            raise ValueError(f"{rows.shape} rows do not fit {int(valid.sum())} unmasked pixels")
        planes = np.zeros((len(names), height * width), dtype=np.float32)
        planes[:, valid] = rows.T
        return cls(width, height, names, planes.reshape(len(names), height, width), nodata, block_id)


@dataclass
class ProbabilityRaster:
    width: int
    height: int
    probs: np.ndarray  # (height, width) float64, NaN where masked
    nodata: np.ndarray

    def __post_init__(self):
        valid = self.probs[~self.nodata]
        if np.any(~np.isfinite(valid)) or np.any((valid < 0) | (valid > 1)):
            raise ValueError("unmasked probabilities must lie in [0, 1]")


class Predictor:
    """Positive-class probability from a fitted model over a fixed feature set."""

    def __init__(self, fn, n_features, names=None):
        self.fn = fn
        self.n_features = n_features
        self.names = names

    def __call__(self, rows):
        return np.asarray(self.fn(rows), dtype=np.float64)


def pfn_predictor(weights, x_train, y_train, n_members=1, names=None):
    """PFN ensemble whose preprocessing is fitted on the training rows only."""
    from .pfn import PfnClassifier

    clf = PfnClassifier(weights, n_members).fit(x_train, y_train)
    pos = list(clf.classes_).index(1)
    return Predictor(lambda rows: clf.predict_proba(rows)[:, pos], np.shape(x_train)[1], names)


def gbdt_predictor(model, names=None):
    from .baselines import predict_proba

    return Predictor(lambda rows: predict_proba(model, rows), model.n_features, names)


def predict_grid(predictor, grid: PixelGrid) -> ProbabilityRaster:
    """Score every unmasked pixel; masked pixels stay NaN."""
    expected = getattr(predictor, "n_features", None)
    if expected is not None and expected != grid.n_features:
        raise ValueError(f"grid has {grid.n_features} features, predictor expects {expected}")
    names = getattr(predictor, "names", None)
    if names is not None and list(names) != grid.names:
        raise ValueError(f"grid features {grid.names[:3]}... do not match predictor features {list(names)[:3]}...")
    probs = np.full(grid.width * grid.height, np.nan)
    valid = ~grid.nodata.reshape(-1)
    if valid.any():
        probs[valid] = predictor(grid.rows())
    return ProbabilityRaster(grid.width, grid.height, probs.reshape(grid.height, grid.width), grid.nodata.copy())


def colorize(raster: ProbabilityRaster) -> np.ndarray:
    """(height, width, 4) uint8 RGBA on the green-to-yellow ramp."""
    p = np.where(raster.nodata, 0.0, raster.probs)
    rgba = np.zeros((raster.height, raster.width, 4), dtype=np.uint8)
    for c, (lo, hi) in enumerate(zip(LOW_RGB, HIGH_RGB)):
        rgba[..., c] = np.floor(lo + (hi - lo) * p + 0.5).astype(np.uint8)
    rgba[..., 3] = np.where(raster.nodata, 0, 255)
    rgba[raster.nodata, :3] = 0
    return rgba


def render_png(raster: ProbabilityRaster) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(colorize(raster), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def aggregate_blocks(raster: ProbabilityRaster, block_id):
    """Mean probability per block over unmasked pixels: ``[(block, mean, n_pixels)]``."""
    if block_id is None:
        raise ValueError("grid carries no block ids")
    block_id = np.asarray(block_id).reshape(-1)
    valid = ~raster.nodata.reshape(-1)
    ids, inverse = np.unique(block_id[valid], return_inverse=True)
    counts = np.bincount(inverse, minlength=len(ids))
    sums = np.bincount(inverse, weights=raster.probs.reshape(-1)[valid], minlength=len(ids))
    return [(int(b), float(s / c), int(c)) for b, s, c in zip(ids, sums, counts)]


def blocks_csv(table) -> str:
    lines = ["block_id,mean_probability,n_pixels"]
    lines += [f"{b},{m:.6g},{c}" for b, m, c in table]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ demo synthesis


def _smooth_field(rng, height, width, n_waves=24, length=20.0):
    """Unit-variance random Fourier field with correlation length ``length`` pixels."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    freq = rng.standard_normal((n_waves, 2)) / length
    phase = rng.uniform(0, 2 * math.pi, n_waves)
    arg = freq[:, 0, None, None] * xx + freq[:, 1, None, None] * yy + phase[:, None, None]
    return math.sqrt(2.0 / n_waves) * np.cos(arg).sum(axis=0)


def synthesize_grid(seed, names, width=96, height=64, blocks=(4, 3), n_total_features=450):
    """Demo field with the generator's column recipes.

    The field is tiled into ``blocks`` rectangular management blocks
    separated by one-pixel headlands; pixels outside an ellipse around the
    field centre and on the headlands are nodata. Per-pixel latents vary
    smoothly in space while block-level latents are constant per block.
    """
    from .eval.synthetic import column_recipes, feature_names, render_columns

    index = {n: j for j, n in enumerate(feature_names(n_total_features))}
    missing = [n for n in names if n not in index]
    if missing:
        raise ValueError(f"unknown feature names for the demo generator: {missing[:5]}")
    recipes = column_recipes(seed, n_total_features)
    rng = np.random.default_rng([seed, 2])
    bx, by = blocks
    col_block = np.minimum(np.arange(width) * bx // width, bx - 1)
    row_block = np.minimum(np.arange(height) * by // height, by - 1)
    block = row_block[:, None] * bx + col_block[None, :]

    z = np.stack([_smooth_field(rng, height, width) for _ in range(5)], axis=-1)
    block_lat = rng.standard_normal((bx * by, 2))
    z = np.concatenate([z, block_lat[block]], axis=-1).reshape(-1, 7)

    yy, xx = np.mgrid[0:height, 0:width]
    outside = ((xx - (width - 1) / 2) / (0.52 * width)) ** 2 + ((yy - (height - 1) / 2) / (0.52 * height)) ** 2 > 1
    headland = np.zeros_like(outside)
    headland[:, 1:] |= col_block[None, 1:] != col_block[None, :-1]
    headland[1:, :] |= (row_block[1:] != row_block[:-1])[:, None]
    nodata = outside | headland

    x = render_columns([recipes[index[n]] for n in names], z, rng)
    planes = x.T.reshape(len(names), height, width)
    return PixelGrid(width, height, names, planes, nodata, block, (0.0, 0.0, 10.0, 10.0))

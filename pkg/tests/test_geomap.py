import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from vinepfn import baselines as bl
from vinepfn import geomap as gm
from vinepfn.eval.synthetic import feature_names


def _raster(p, nodata=None):
    p = np.asarray(p, dtype=np.float64)
    nodata = np.zeros(p.shape, bool) if nodata is None else np.asarray(nodata, bool)
    return gm.ProbabilityRaster(p.shape[1], p.shape[0], np.where(nodata, np.nan, p), nodata)


def _decode(png):
    img = Image.open(io.BytesIO(png))
    assert img.mode == "RGBA"
    return np.asarray(img)


@pytest.mark.parametrize("p, rgba", [(0.0, (0, 128, 0, 255)), (1.0, (255, 255, 0, 255)), (0.5, (128, 192, 0, 255))])
def test_ramp_colors(p, rgba):
    out = _decode(gm.render_png(_raster(np.full((3, 4), p))))
    assert out.shape == (3, 4, 4)
    assert np.all(out == np.array(rgba, dtype=np.uint8))


def test_nodata_is_transparent():
    nodata = np.array([[True, False], [False, True]])
    out = _decode(gm.render_png(_raster(np.full((2, 2), 0.7), nodata)))
    np.testing.assert_array_equal(out[..., 3], [[0, 255], [255, 0]])


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_color_ramp_is_monotone(p1, p2):
    lo, hi = sorted((p1, p2))
    rgba = gm.colorize(_raster([[lo, hi]]))
    assert rgba[0, 0, 0] <= rgba[0, 1, 0] and rgba[0, 0, 1] <= rgba[0, 1, 1]
    assert np.all(rgba[..., 2] == 0)


def test_raster_rejects_out_of_range():
    with pytest.raises(ValueError):
        _raster([[0.2, 1.5]])


def _stump_predictor(n_features=3):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(80, n_features))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    model = bl.fit_gbdt(x, y, bl.GbdtParams(n_rounds=10, max_depth=2))
    return model, gm.gbdt_predictor(model)


def test_fully_masked_grid():
    _, pred = _stump_predictor()
    grid = gm.PixelGrid(4, 2, ["a", "b", "c"], np.zeros((3, 2, 4)), np.ones((2, 4), bool))
    r = gm.predict_grid(pred, grid)
    assert r.nodata.all() and np.isnan(r.probs).all()
    assert np.all(gm.colorize(r)[..., 3] == 0)


def test_one_pixel_grid_equals_tabular_row():
    model, pred = _stump_predictor()
    row = np.array([[0.25, -0.5, 1.0]], dtype=np.float32).astype(np.float64)
    grid = gm.PixelGrid.from_rows(row, ["a", "b", "c"], 1, 1)
    assert gm.predict_grid(pred, grid).probs[0, 0] == bl.predict_proba(model, row)[0]


def test_constant_grid_gives_constant_raster():
    _, pred = _stump_predictor()
    grid = gm.PixelGrid(5, 3, ["a", "b", "c"], np.full((3, 3, 5), 0.4), np.zeros((3, 5), bool))
    probs = gm.predict_grid(pred, grid).probs
    assert np.all(probs == probs[0, 0])


def test_feature_count_mismatch_names_both_counts():
    _, pred = _stump_predictor()
    grid = gm.PixelGrid(2, 2, ["a", "b"], np.zeros((2, 2, 2)), np.zeros((2, 2), bool))
    with pytest.raises(ValueError, match="2 features.*expects 3"):
        gm.predict_grid(pred, grid)


def test_grid_from_tabular_rows_is_bit_identical(tiny_weights):
    rng = np.random.default_rng(1)
    x_train = rng.normal(size=(40, 4)).astype(np.float32).astype(np.float64)
    y_train = (x_train[:, 0] > 0).astype(int)
    x_test = rng.normal(size=(17, 4)).astype(np.float32).astype(np.float64)
    nodata = np.zeros((4, 6), bool)
    nodata[[0, 1, 3, 3, 2, 0, 1], [0, 5, 2, 3, 4, 3, 1]] = True
    grid = gm.PixelGrid.from_rows(x_test, list("wxyz"), 6, 4, nodata)
    np.testing.assert_array_equal(grid.rows(), x_test)
    pred = gm.pfn_predictor(tiny_weights, x_train, y_train, n_members=3)
    raster = gm.predict_grid(pred, grid)
    assert raster.probs[~nodata].tobytes() == pred(x_test).tobytes()
    assert np.isnan(raster.probs[nodata]).all()


def test_aggregate_examples():
    block = np.zeros((2, 4), int)
    assert gm.aggregate_blocks(_raster(np.full((2, 4), 0.3)), block) == [(0, pytest.approx(0.3), 8)]
    block = np.array([[0, 0, 1, 1], [0, 0, 1, 1]])
    p = np.array([[0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0]])
    assert gm.aggregate_blocks(_raster(p), block) == [(0, 0.0, 4), (1, 1.0, 4)]
    checker = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
    assert gm.aggregate_blocks(_raster(checker), np.zeros((4, 4), int)) == [(0, 0.5, 16)]


def test_aggregate_skips_fully_masked_blocks():
    block = np.array([[0, 1], [0, 1]])
    nodata = np.array([[False, True], [False, True]])
    assert gm.aggregate_blocks(_raster(np.full((2, 2), 0.2), nodata), block) == [(0, pytest.approx(0.2), 2)]
    with pytest.raises(ValueError):
        gm.aggregate_blocks(_raster(np.zeros((1, 1))), None)


def test_aggregate_is_permutation_invariant():
    rng = np.random.default_rng(2)
    p = rng.random((6, 7))
    block = rng.integers(0, 4, size=(6, 7))
    nodata = rng.random((6, 7)) < 0.2
    a = gm.aggregate_blocks(_raster(p, nodata), block)
    perm = rng.permutation(42)
    b = gm.aggregate_blocks(_raster(p.reshape(-1)[perm].reshape(6, 7), nodata.reshape(-1)[perm].reshape(6, 7)),
                            block.reshape(-1)[perm].reshape(6, 7))
    assert [(i, n) for i, _, n in a] == [(i, n) for i, _, n in b]
    np.testing.assert_allclose([m for _, m, _ in a], [m for _, m, _ in b], atol=1e-12)


def test_blocks_csv_layout():
    assert gm.blocks_csv([(0, 0.25, 4), (3, 1 / 3, 9)]) == "block_id,mean_probability,n_pixels\n0,0.25,4\n3,0.333333,9\n"


def test_synthesized_grid_shape_and_mask():
    names = feature_names(450)[::40]
    grid = gm.synthesize_grid(0, names, width=48, height=32)
    assert grid.planes.shape == (len(names), 32, 48) and grid.planes.dtype == np.float32
    assert 0.1 < grid.nodata.mean() < 0.5
    assert set(np.unique(grid.block_id).tolist()) == set(range(12))
    again = gm.synthesize_grid(0, names, width=48, height=32)
    assert np.array_equal(grid.planes, again.planes, equal_nan=True)
    with pytest.raises(ValueError, match="unknown feature"):
        gm.synthesize_grid(0, ["not_a_feature"])

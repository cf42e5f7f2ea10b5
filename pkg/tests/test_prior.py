import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vinepfn.prior import (
    DegenerateTaskError,
    DiscreteHypothesisPrior,
    GeneratorConfig,
    PriorConfig,
    default_hypothesis_prior,
    discretize_labels,
    exact_ppd,
    remap_first_occurrence,
    sample_hypothesis_task,
    sample_task,
    task_stream,
)


def test_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(n_classes_max=1)
    with pytest.raises(ValueError):
        PriorConfig(n_samples_range=(10, 5))
    with pytest.raises(ValueError):
        PriorConfig(generator=GeneratorConfig(noise_std=-1.0))
    with pytest.raises(ValueError):
        PriorConfig(imbalance="sideways")


def test_same_seed_gives_identical_task():
    cfg = PriorConfig(n_samples_range=(20, 80))
    a = sample_task(np.random.default_rng(5), cfg)
    b = sample_task(np.random.default_rng(5), cfg)
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes() and a.cut == b.cut


def test_task_invariants():
    cfg = PriorConfig(n_samples_range=(10, 60), n_classes_max=6)
    rng = np.random.default_rng(0)
    for _ in range(200):
        t = sample_task(rng, cfg)
        n = len(t.y)
        assert 0 < t.cut < n
        assert 0.1 * n - 1 <= t.cut <= 0.9 * n + 1
        np.testing.assert_array_equal(t.y, remap_first_occurrence(t.y))
        assert t.y.max() < cfg.n_classes_max
        assert len(np.unique(t.y_train)) >= 2


def test_identity_generator_thresholds_inputs():
    cfg = PriorConfig(n_samples_range=(40, 40), n_features_range=(1, 1),
                      generator=GeneratorConfig(depth_range=(0, 0), noise_std=0.0))
    for seed in range(10):
        t = sample_task(np.random.default_rng(seed), cfg)
        order = np.argsort(t.x[:, 0], kind="stable")
        labels = t.y[order]
        # each label occupies one contiguous run of the sorted inputs
        runs = labels[np.r_[True, labels[1:] != labels[:-1]]]
        assert len(runs) == len(set(runs.tolist()))
        np.testing.assert_allclose(t.raw_yhat, t.x[:, 0])


def test_class_count_histogram_spans_full_range():
    cfg = PriorConfig(n_samples_range=(30, 60), n_features_range=(1, 4), n_classes_max=6)
    rng = np.random.default_rng(1)
    counts = {int(sample_task(rng, cfg).y.max()) + 1 for _ in range(10_000)}
    assert counts == set(range(2, 7))


def test_stream_reproducible():
    cfg = PriorConfig(n_samples_range=(10, 30))
    a, b = task_stream(3, cfg), task_stream(3, cfg)
    for _ in range(5):
        ta, tb = next(a), next(b)
        assert ta.x.tobytes() == tb.x.tobytes() and ta.y.tobytes() == tb.y.tobytes()


def test_degenerate_prior_exhausts_retries():
    # two-row tasks have a single train row, so the train part never holds two classes
    cfg = PriorConfig(n_samples_range=(2, 2), n_features_range=(1, 1))
    rng = np.random.default_rng(0)
    with pytest.raises(DegenerateTaskError):
        sample_task(rng, cfg)


def test_discretize_median_split():
    np.testing.assert_array_equal(discretize_labels([1, 2, 3, 4], 2), [0, 0, 1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=40, unique=True), st.integers(2, 5))
def test_discretize_rank_invariant(values, k):
    y = np.array(values, dtype=np.float64)
    a = discretize_labels(y, k)
    b = discretize_labels(y**3 + 2 * y - 7, k)  # strictly increasing, exact on these integers
    np.testing.assert_array_equal(a, b)


def test_discretize_rejects_constant_targets():
    with pytest.raises(ValueError, match="identical"):
        discretize_labels(np.ones(5), 2)


def test_random_offset_minority_fraction_covers_range():
    rng = np.random.default_rng(0)
    yhat = rng.standard_normal(1000)
    fracs = []
    for _ in range(10_000):
        y = discretize_labels(yhat, 2, "random-offset", rng)
        fracs.append(min(y.mean(), 1 - y.mean()))
    fracs = np.array(fracs)
    assert fracs.min() >= 0.049 and fracs.min() < 0.07
    assert fracs.max() > 0.48


def test_hypothesis_prior_validates_probs():
    with pytest.raises(ValueError):
        DiscreteHypothesisPrior(np.eye(2), [[0, 1]], [0.9])


def test_exact_ppd_without_data_is_prior_marginal():
    prior = default_hypothesis_prior()
    out = exact_ppd(prior, np.zeros((0, 4)), [], np.eye(4))
    eps = prior.flip_noise
    for g in range(4):
        p1 = sum(w * ((1 - eps) if lab[g] == 1 else eps) for w, lab in zip(prior.prior_probs, prior.labels))
        assert out[g, 1] == pytest.approx(p1, abs=1e-15)


def test_exact_ppd_single_hypothesis_ignores_data():
    prior = DiscreteHypothesisPrior(np.eye(3), [[0, 1, 1]], [1.0], flip_noise=0.2)
    out = exact_ppd(prior, np.eye(3)[[0, 0]], [1, 1], np.eye(3))
    np.testing.assert_allclose(out, [[0.8, 0.2], [0.2, 0.8], [0.2, 0.8]], atol=1e-15)


def test_exact_ppd_two_observations_by_hand():
    prior = default_hypothesis_prior(0.1)
    x_train = np.eye(4)[[0, 2]]
    y_train = [1, 0]
    post = []
    for w, lab in zip(prior.prior_probs, prior.labels):
        like = 1.0
        for g, y in zip([0, 2], y_train):
            like *= 0.9 if lab[g] == y else 0.1
        post.append(w * like)
    post = np.array(post) / sum(post)
    out = exact_ppd(prior, x_train, y_train, np.eye(4))
    for g in range(4):
        p1 = sum(p * (0.9 if lab[g] == 1 else 0.1) for p, lab in zip(post, prior.labels))
        assert out[g, 1] == pytest.approx(p1, abs=1e-12)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_exact_ppd_monotone_in_consistent_hypothesis_mass():
    base = default_hypothesis_prior()
    x_train, y_train = np.eye(4)[[0, 1, 2]], [1, 1, 0]
    consistent = 3  # labels [1, 1, 0, 0]
    probs = base.prior_probs.copy()
    probs[consistent] *= 2
    boosted = DiscreteHypothesisPrior(base.grid, base.labels, probs / probs.sum())
    before = exact_ppd(base, x_train, y_train, np.eye(4))
    after = exact_ppd(boosted, x_train, y_train, np.eye(4))
    for g in range(4):
        c = base.labels[consistent, g]
        assert after[g, c] >= before[g, c] - 1e-15


def test_exact_ppd_noise_free_limit_is_one_hot():
    base = default_hypothesis_prior()
    prior = DiscreteHypothesisPrior(base.grid, base.labels, base.prior_probs, flip_noise=1e-12)
    # observing all four points pins down exactly one hypothesis
    out = exact_ppd(prior, np.eye(4), [0, 1, 0, 1], np.eye(4))
    np.testing.assert_allclose(out, np.eye(2)[[0, 1, 0, 1]], atol=1e-9)


def test_exact_ppd_zero_evidence_errors():
    prior = DiscreteHypothesisPrior(np.eye(2), [[0, 0]], [1.0], flip_noise=0.0)
    with pytest.raises(ValueError, match="evidence"):
        exact_ppd(prior, np.eye(2)[[0]], [1], np.eye(2))


def test_hypothesis_tasks_live_on_grid():
    prior = default_hypothesis_prior()
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = sample_hypothesis_task(rng, prior, (2, 10))
        prior.grid_index(t.x)
        assert 1 <= t.cut < len(t.y)

import numpy as np
import pytest

from vinepfn import pfn, preprocess
from vinepfn.prior import PriorConfig

from oracles import held_out_toy_tasks, max_gradcheck_error, toy_divergences


def _task(rng, n_train=30, n_test=7, f=5, k=3):
    x_train = rng.normal(size=(n_train, f))
    y_train = np.arange(n_train) % k
    return x_train, rng.permutation(y_train), rng.normal(size=(n_test, f))


def test_config_validation():
    with pytest.raises(ValueError):
        pfn.PfnConfig(emb_dim=30, n_heads=4)
    with pytest.raises(ValueError):
        pfn.PfnConfig(max_classes=1)


def test_weights_reject_wrong_shapes(tiny_weights):
    params = dict(tiny_weights.params)
    params["feat_b"] = np.zeros(3)
    with pytest.raises(ValueError, match="feat_b"):
        pfn.PfnWeights(tiny_weights.config, params)


def test_label_table_has_query_row():
    cfg = pfn.PfnConfig()
    assert pfn.param_shapes(cfg)["label_emb"] == (cfg.max_classes + 1, cfg.emb_dim)


def test_mask_example():
    expected = np.array([[1, 1, 0], [1, 1, 0], [1, 1, 1]], dtype=bool)
    np.testing.assert_array_equal(pfn.build_mask(2, 1), expected)


def test_padding_is_idempotent_after_scaling():
    x = np.random.default_rng(0).normal(size=(6, 3))
    once = pfn.pad_features(x, 10)
    np.testing.assert_array_equal(once[:, 3:], 0.0)
    np.testing.assert_allclose(once[:, :3], x * 10 / 3)
    np.testing.assert_array_equal(pfn.pad_features(once, 10), once)


def test_encode_padded_task_matches(tiny_weights):
    cfg = tiny_weights.config
    rng = np.random.default_rng(1)
    x_train, y_train, x_test = _task(rng, f=3)
    a, mask_a = pfn.encode(tiny_weights.params, x_train, y_train, x_test, cfg)
    padded = [pfn.pad_features(v, cfg.max_features) for v in (x_train, x_test)]
    b, mask_b = pfn.encode(tiny_weights.params, padded[0], y_train, padded[1], cfg)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(mask_a, mask_b)


def test_capacity_errors(tiny_weights):
    rng = np.random.default_rng(2)
    with pytest.raises(pfn.CapacityError):
        pfn.infer(tiny_weights, rng.normal(size=(5, 9)), [0, 1, 0, 1, 0], rng.normal(size=(2, 9)))
    with pytest.raises(pfn.CapacityError):
        pfn.infer(tiny_weights, rng.normal(size=(6, 2)), np.arange(6), rng.normal(size=(2, 2)))


def test_empty_context_rejected(tiny_weights):
    with pytest.raises(ValueError, match="nonempty"):
        pfn.infer(tiny_weights, np.zeros((0, 2)), [], np.zeros((1, 2)))


def test_cached_inference_matches_masked_forward(tiny_weights):
    cfg = tiny_weights.config
    x_train, y_train, x_test = _task(np.random.default_rng(3))
    xp, tokens, mask = pfn.encode_inputs(x_train, y_train, x_test, cfg)
    logits = pfn.forward(tiny_weights.params, xp, tokens, mask, cfg, np.arange(len(x_train), len(xp)))
    z = logits[:, :3] - logits[:, :3].max(axis=1, keepdims=True)
    expected = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    got = pfn.infer(tiny_weights, x_train, y_train, x_test).probs
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_infer_is_pure_and_deterministic(tiny_weights):
    x_train, y_train, x_test = _task(np.random.default_rng(4))
    before = {k: v.copy() for k, v in tiny_weights.params.items()}
    a = pfn.infer(tiny_weights, x_train, y_train, x_test)
    b = pfn.infer(tiny_weights, x_train, y_train, x_test)
    assert a.probs.tobytes() == b.probs.tobytes()
    for k, v in before.items():
        assert tiny_weights.params[k].tobytes() == v.tobytes()


def test_train_row_permutation_invariance(tiny_weights):
    rng = np.random.default_rng(5)
    x_train, y_train, x_test = _task(rng)
    perm = rng.permutation(len(y_train))
    a = pfn.infer(tiny_weights, x_train, y_train, x_test).probs
    b = pfn.infer(tiny_weights, x_train[perm], y_train[perm], x_test).probs
    assert np.abs(a - b).max() <= 1e-10


def test_query_permutation_and_independence(tiny_weights):
    rng = np.random.default_rng(6)
    x_train, y_train, x_test = _task(rng)
    full = pfn.infer(tiny_weights, x_train, y_train, x_test).probs
    perm = rng.permutation(len(x_test))
    np.testing.assert_allclose(pfn.infer(tiny_weights, x_train, y_train, x_test[perm]).probs, full[perm],
                               atol=1e-12)
    alone = pfn.infer(tiny_weights, x_train, y_train, x_test[2:3]).probs
    np.testing.assert_allclose(alone[0], full[2], atol=1e-12)


def test_chunking_does_not_change_output(tiny_weights):
    x_train, y_train, x_test = _task(np.random.default_rng(7), n_test=11)
    a = pfn.infer(tiny_weights, x_train, y_train, x_test).probs
    b = pfn.infer(tiny_weights, x_train, y_train, x_test, chunk=4).probs
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_single_class_context_gets_all_mass(tiny_weights):
    rng = np.random.default_rng(8)
    ppd = pfn.infer(tiny_weights, rng.normal(size=(5, 2)), [7] * 5, rng.normal(size=(3, 2)))
    np.testing.assert_array_equal(ppd.probs, np.ones((3, 1)))
    np.testing.assert_array_equal(ppd.predict(), [7, 7, 7])


def test_class_ids_follow_labels(tiny_weights):
    rng = np.random.default_rng(9)
    ppd = pfn.infer(tiny_weights, rng.normal(size=(6, 2)), ["b", "a", "c", "a", "b", "c"], rng.normal(size=(2, 2)))
    assert list(ppd.class_ids) == ["a", "b", "c"]
    np.testing.assert_allclose(ppd.probs.sum(axis=1), 1.0, atol=1e-12)


def test_single_member_ensemble_is_canonical_infer(tiny_weights):
    x_train, y_train, x_test = _task(np.random.default_rng(10))
    stats = preprocess.fit(x_train)
    plain = pfn.infer(tiny_weights, preprocess.transform(x_train, stats), y_train,
                      preprocess.transform(x_test, stats)).probs
    ens = pfn.ensemble_infer(tiny_weights, x_train, y_train, x_test, n_members=1).probs
    np.testing.assert_array_equal(ens, plain)


def test_ensemble_rows_sum_to_one(tiny_weights):
    x_train, y_train, x_test = _task(np.random.default_rng(11))
    ppd = pfn.ensemble_infer(tiny_weights, x_train, y_train, x_test, n_members=6)
    np.testing.assert_allclose(ppd.probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((ppd.probs >= 0) & (ppd.probs <= 1))


def test_label_rotation_is_undone(tiny_weights):
    # a member with label shift s must report class c in column c
    x_train, y_train, x_test = _task(np.random.default_rng(12))
    clf = pfn.PfnClassifier(tiny_weights, n_members=2).fit(x_train, y_train)
    plan = clf.plans_[1]
    k = 3
    xtr = preprocess.transform(x_train, clf.stats_, plan)
    xte = preprocess.transform(x_test, clf.stats_, plan)
    rotated = pfn.infer(tiny_weights, xtr, (y_train + plan.label_shift) % k, xte, n_classes=k).probs
    member0 = pfn.ensemble_infer(tiny_weights, x_train, y_train, x_test, 1).probs
    expected = (member0 + rotated[:, (np.arange(k) + plan.label_shift) % k]) / 2
    np.testing.assert_allclose(clf.predict_proba(x_test), expected, atol=1e-12)


def test_full_block_gradients_match_finite_differences():
    cfg = pfn.PfnConfig(n_layers=1, emb_dim=8, n_heads=2, ff_dim=12, max_features=5, max_classes=3)
    rng = np.random.default_rng(0)
    params = pfn.init_params(cfg, rng)
    xs, labels = pfn.sample_batch(rng, PriorConfig(n_samples_range=(6, 6), n_features_range=(2, 5),
                                                   n_classes_max=3), 2, cfg)
    _, grads = pfn.loss_and_grads(params, xs, labels, cfg)
    assert max_gradcheck_error(lambda p: pfn.batch_loss(p, xs, labels, cfg), params, grads) < 1e-4


def test_train_offline_contracts():
    cfg = pfn.PfnConfig(n_layers=1, emb_dim=8, n_heads=2, ff_dim=8, max_features=6, max_classes=3)
    prior = PriorConfig(n_samples_range=(10, 20), n_features_range=(1, 6), n_classes_max=3)
    with pytest.raises(ValueError):
        pfn.train_offline(prior, cfg, steps=0)
    a = pfn.train_offline(prior, cfg, steps=4, batch=2, seed=3)
    b = pfn.train_offline(prior, cfg, steps=4, batch=2, seed=3)
    assert len(a.loss_trace) == 4 and np.all(np.isfinite(a.loss_trace))
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_divergence_reports_step(monkeypatch):
    cfg = pfn.PfnConfig(n_layers=1, emb_dim=8, n_heads=2, ff_dim=8, max_features=4, max_classes=2)
    real = pfn.loss_and_grads
    calls = {"n": 0}

    def poisoned(*args, **kw):
        loss, grads = real(*args, **kw)
        calls["n"] += 1
        return (float("nan") if calls["n"] == 3 else loss), grads

    monkeypatch.setattr(pfn, "loss_and_grads", poisoned)
    with pytest.raises(pfn.DivergenceError) as info:
        pfn.train_offline(PriorConfig(n_samples_range=(8, 8), n_features_range=(1, 4), n_classes_max=2),
                          cfg, steps=5, batch=2)
    assert info.value.step == 2


def test_toy_prior_total_variation(toy_run):
    tasks = held_out_toy_tasks(toy_run["prior"])
    _, tv = toy_divergences(toy_run["weights"], toy_run["prior"], tasks)
    assert tv < 0.1


def test_toy_prior_kl_decreases_over_checkpoints(toy_run):
    tasks = held_out_toy_tasks(toy_run["prior"], n_tasks=100, seed=7)
    steps = sorted(toy_run["checkpoints"])
    kls = [toy_divergences(toy_run["checkpoints"][s], toy_run["prior"], tasks)[0] for s in steps]
    assert len(kls) >= 3
    assert all(a > b for a, b in zip(kls, kls[1:])), dict(zip(steps, kls))


def test_ensemble_size_stability_on_benchmark_data(default_weights):
    from vinepfn.eval.metrics import metrics
    from vinepfn.eval.protocol import SplitSpec, select_features_by_shap, stratified_split
    from vinepfn.eval.synthetic import generate_vineyard_like

    ds = generate_vineyard_like(0, n=600, f=60)
    y = ds.binary_labels()
    top, _ = select_features_by_shap(ds.x, y, 25, 0)
    x = ds.x[:, top]
    accs = {8: [], 32: []}
    for seed in range(3):
        tr, te = stratified_split(y, SplitSpec(seed=seed))
        for m in accs:
            p = pfn.ensemble_infer(default_weights, x[tr], y[tr], x[te], m).probs[:, 1]
            accs[m].append(metrics(y[te], (p >= 0.5).astype(int))[0])
    assert abs(np.mean(accs[32]) - np.mean(accs[8])) <= 0.02

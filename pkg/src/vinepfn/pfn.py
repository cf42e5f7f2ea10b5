"""Prior-fitted transformer: offline training and single-pass inference.

Each row of a task becomes one token (projected features plus a label
embedding; query rows carry the reserved "query" label). Training rows
attend to all training rows, query rows attend to the training rows and to
themselves only, so a query's prediction never depends on other queries.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .prior import DiscreteHypothesisPrior, PriorConfig, sample_hypothesis_task, sample_task

log = logging.getLogger(__name__)


class CapacityError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step


@dataclass
class PfnConfig:
    n_layers: int = 3
    emb_dim: int = 128
    n_heads: int = 4
    ff_dim: int = 256
    max_features: int = 100
    max_classes: int = 10
    dropout: float = 0.0

    def __post_init__(self):
        if self.emb_dim % self.n_heads:
            raise ValueError("emb_dim must be divisible by n_heads")
        if self.max_classes < 2:
            raise ValueError("max_classes must be >= 2")
        if self.n_layers < 1 or self.max_features < 1:
            raise ValueError("n_layers and max_features must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class PfnWeights:
    config: PfnConfig
    params: dict[str, np.ndarray]
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ValueError(f"weights do not match config (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            arr = self.params[name]
            if arr.shape != shape:
                raise ValueError(f"param {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"param {name} has non-finite entries")


@dataclass
class Ppd:
    probs: np.ndarray
    class_ids: np.ndarray

    def predict(self):
        return self.class_ids[np.argmax(self.probs, axis=1)]


def param_shapes(cfg: PfnConfig) -> dict[str, tuple]:
    e, f = cfg.emb_dim, cfg.ff_dim
    shapes = {
        "feat_w": (cfg.max_features, e),
        "feat_b": (e,),
        "label_emb": (cfg.max_classes + 1, e),
    }
    for i in range(cfg.n_layers):
        p = f"l{i}."
        shapes.update({
            p + "ln1_g": (e,), p + "ln1_b": (e,),
            p + "wq": (e, e), p + "wk": (e, e), p + "wv": (e, e), p + "wo": (e, e),
            p + "ln2_g": (e,), p + "ln2_b": (e,),
            p + "w1": (e, f), p + "b1": (f,), p + "w2": (f, e), p + "b2": (e,),
        })
    shapes.update({
        "lnf_g": (e,), "lnf_b": (e,),
        "head_w": (e, cfg.max_classes), "head_b": (cfg.max_classes,),
    })
    return shapes


def init_params(cfg: PfnConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    resid_scale = 1.0 / math.sqrt(2 * cfg.n_layers)
    for name, shape in param_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name == "label_emb":
            params[name] = rng.standard_normal(shape)
        else:
            std = 1.0 / math.sqrt(shape[0])
            if leaf in ("wo", "w2"):
                std *= resid_scale
            if name == "feat_w":
                std = 1.0 / math.sqrt(cfg.max_features)
            params[name] = rng.standard_normal(shape) * std
    return params


# ------------------------------------------------------------------ encoding


def build_mask(n_train: int, n_test: int) -> np.ndarray:
    n = n_train + n_test
    mask = np.zeros((n, n), dtype=bool)
    mask[:, :n_train] = True
    idx = np.arange(n_train, n)
    mask[idx, idx] = True
    return mask


def pad_features(x, max_features):
    """Zero-pad columns to ``max_features`` and rescale by max_features / f."""
    x = np.asarray(x, dtype=np.float64)
    f = x.shape[-1]
    if f > max_features:
        raise CapacityError(f"{f} features exceed model capacity of {max_features}")
    out = np.zeros(x.shape[:-1] + (max_features,))
    out[..., :f] = x * (max_features / f)
    return out


def encode_inputs(x_train, y_train, x_test, cfg: PfnConfig):
    """Padded feature block, token label ids and attention mask for one task."""
    y_train = np.asarray(y_train, dtype=np.int64)
    if y_train.size and (y_train.min() < 0 or y_train.max() >= cfg.max_classes):
        raise CapacityError(f"labels must lie in [0, {cfg.max_classes})")
    x = np.concatenate([np.asarray(x_train, float), np.asarray(x_test, float)], axis=-2)
    tokens = np.concatenate([y_train, np.full(len(x_test), cfg.max_classes)])
    return pad_features(x, cfg.max_features), tokens, build_mask(len(x_train), len(x_test))


def encode(params, x_train, y_train, x_test, cfg: PfnConfig):
    """Token tensor (n_rows, emb_dim) and attention mask."""
    xp, tokens, mask = encode_inputs(x_train, y_train, x_test, cfg)
    emb = xp @ params["feat_w"] + params["feat_b"] + params["label_emb"][tokens]
    return emb, mask


def forward(params, xp, tokens, mask, cfg: PfnConfig, query_idx, rng=None):
    """Transformer pass; ``params`` may be arrays or graph nodes. Returns query logits."""
    h = nx.add(nx.add(nx.matmul(xp, params["feat_w"]), params["feat_b"]),
               nx.embed(params["label_emb"], tokens))
    for i in range(cfg.n_layers):
        p = f"l{i}."
        a = nx.layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"])
        att = nx.attention(nx.matmul(a, params[p + "wq"]), nx.matmul(a, params[p + "wk"]),
                           nx.matmul(a, params[p + "wv"]), mask, n_heads=cfg.n_heads)
        att = nx.matmul(att, params[p + "wo"])
        if rng is not None and cfg.dropout > 0:
            att = nx.mul(att, _dropout_mask(rng, nx.value_of(att).shape, cfg.dropout))
        h = nx.add(h, att)
        a = nx.layer_norm(h, params[p + "ln2_g"], params[p + "ln2_b"])
        ff = nx.gelu(nx.add(nx.matmul(a, params[p + "w1"]), params[p + "b1"]))
        ff = nx.add(nx.matmul(ff, params[p + "w2"]), params[p + "b2"])
        if rng is not None and cfg.dropout > 0:
            ff = nx.mul(ff, _dropout_mask(rng, nx.value_of(ff).shape, cfg.dropout))
        h = nx.add(h, ff)
    h = nx.gather(h, query_idx, axis=-2)
    h = nx.layer_norm(h, params["lnf_g"], params["lnf_b"])
    return nx.add(nx.matmul(h, params["head_w"]), params["head_b"])


def _dropout_mask(rng, shape, rate):
    return (rng.random(shape) >= rate) / (1.0 - rate)


# ------------------------------------------------------------------ training


def _standardize_context(x, cut):
    mu = x[..., :cut, :].mean(axis=-2, keepdims=True)
    sd = x[..., :cut, :].std(axis=-2, keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    return np.clip((x - mu) / sd, -10.0, 10.0)


def sample_batch(rng, prior, batch, cfg: PfnConfig, n_range=None):
    """Stack ``batch`` tasks sharing one (n_rows, cut) so they run as one tensor."""
    if isinstance(prior, DiscreteHypothesisPrior):
        lo, hi = n_range or (2, 16)
        n = int(rng.integers(lo, hi + 1))
        tasks = [sample_hypothesis_task(rng, prior, (n, n)) for _ in range(batch)]
        cut = tasks[0].cut
        tasks = [_recut(t, cut) for t in tasks]
        xs = np.stack([t.x for t in tasks])
    else:
        lo, hi = n_range or prior.n_samples_range
        n = int(rng.integers(lo, hi + 1))
        cfg_n = PriorConfig(
            n_samples_range=(n, n),
            n_features_range=(prior.n_features_range[0], min(prior.n_features_range[1], cfg.max_features)),
            n_classes_max=min(prior.n_classes_max, cfg.max_classes),
            generator=prior.generator, imbalance=prior.imbalance, binary_prob=prior.binary_prob,
        )
        tasks = [sample_task(rng, cfg_n) for _ in range(batch)]
        cut = int(np.median([t.cut for t in tasks]))
        tasks = [_recut(t, cut) for t in tasks]
        xs = np.stack([pad_features(_standardize_context(t.x, cut), cfg.max_features) for t in tasks])
        return xs, _batch_labels(tasks, cut, cfg)
    return np.stack([pad_features(x, cfg.max_features) for x in xs]), _batch_labels(tasks, cut, cfg)


def _recut(task, cut):
    task.cut = cut
    return task


def _batch_labels(tasks, cut, cfg):
    ys = np.stack([t.y for t in tasks])
    n = ys.shape[1]
    tokens = ys.copy()
    tokens[:, cut:] = cfg.max_classes
    k = np.array([t.n_classes for t in tasks])
    class_mask = np.arange(cfg.max_classes)[None, None, :] < k[:, None, None]
    return {"tokens": tokens, "targets": ys[:, cut:], "cut": cut, "n": n, "class_mask": class_mask}


def batch_loss(params, xs, labels, cfg: PfnConfig, rng=None):
    """Mean query cross-entropy; records on a fresh graph when ``params`` are nodes."""
    cut, n = labels["cut"], labels["n"]
    mask = build_mask(cut, n - cut)
    logits = forward(params, xs, labels["tokens"], mask, cfg, np.arange(cut, n), rng)
    return nx.cross_entropy(logits, labels["targets"], labels["class_mask"])


def loss_and_grads(params, xs, labels, cfg, rng=None):
    g = nx.Graph()
    nodes = {k: g.param(k, v) for k, v in params.items()}
    loss = batch_loss(nodes, xs, labels, cfg, rng)
    grads = nx.backward(loss)
    g.release()
    return float(loss.value), grads


def _lr_at(step, steps, lr, warmup):
    if step < warmup:
        return lr * (step + 1) / warmup
    frac = (step - warmup) / max(1, steps - warmup)
    return lr * (0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * frac)))


def train_offline(prior, config: PfnConfig, steps: int, batch: int = 8, lr: float = 1e-3,
                  seed: int = 0, n_range=None, clip_norm: float = 1.0, warmup: int | None = None,
                  checkpoint_every: int = 0, on_checkpoint=None, log_every: int = 100):
    """Fit PFN weights to tasks drawn from ``prior`` (random-MLP or enumerable).

    Returns :class:`PfnWeights` with the per-step loss trace attached.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    state = nx.AdamState(lr=lr)
    warmup = max(1, steps // 20) if warmup is None else warmup
    trace = []
    for step in range(steps):
        xs, labels = sample_batch(rng, prior, batch, config, n_range)
        loss, grads = loss_and_grads(params, xs, labels, config, rng)
        if not math.isfinite(loss):
            raise DivergenceError(step, loss)
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if not math.isfinite(norm):
            raise DivergenceError(step, loss)
        if clip_norm and norm > clip_norm:
            grads = {k: g * (clip_norm / norm) for k, g in grads.items()}
        params = nx.adam_step(params, grads, state, lr=_lr_at(step, steps, lr, warmup))
        trace.append(loss)
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.4f", step + 1, float(np.mean(trace[-log_every:])))
        if checkpoint_every and on_checkpoint is not None and (step + 1) % checkpoint_every == 0:
            on_checkpoint(step + 1, PfnWeights(config, dict(params), list(trace)))
    return PfnWeights(config, params, trace)


# ----------------------------------------------------------------- inference
#
# Training tokens only attend to each other, so their per-layer keys and
# values are computed once; query rows then attend to that context plus
# themselves. This is the same computation as the masked pass used in
# training, split so that queries can be streamed in fixed-size chunks.

QUERY_CHUNK = 1024


def _heads(a, n_heads):
    n, d = a.shape
    return a.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _ffn(params, p, h):
    a = nx.layer_norm(h, params[p + "ln2_g"], params[p + "ln2_b"])
    ff = nx.gelu(a @ params[p + "w1"] + params[p + "b1"])
    return h + (ff @ params[p + "w2"] + params[p + "b2"])


def _full_attention(q, k, v, n_heads):
    """Unmasked multi-head attention with in-place softmax (inference only)."""
    n, d = q.shape
    qh = _heads(q * (1.0 / math.sqrt(d // n_heads)), n_heads)
    s = qh @ _heads(k, n_heads).transpose(0, 2, 1)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    out = (s @ _heads(v, n_heads)) / s.sum(axis=-1, keepdims=True)
    return out.transpose(1, 0, 2).reshape(n, d)


def context_states(weights: PfnWeights, x_train, y_idx):
    """Per-layer (keys, values) of the training tokens."""
    params, cfg = weights.params, weights.config
    h = pad_features(x_train, cfg.max_features) @ params["feat_w"] + params["feat_b"]
    h = h + params["label_emb"][y_idx]
    kv = []
    for i in range(cfg.n_layers):
        p = f"l{i}."
        a = nx.layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"])
        k, v = a @ params[p + "wk"], a @ params[p + "wv"]
        kv.append((_heads(k, cfg.n_heads), _heads(v, cfg.n_heads)))
        h = h + _full_attention(a @ params[p + "wq"], k, v, cfg.n_heads) @ params[p + "wo"]
        h = _ffn(params, p, h)
    return kv


def query_logits(weights: PfnWeights, kv, x_query):
    params, cfg = weights.params, weights.config
    h = pad_features(x_query, cfg.max_features) @ params["feat_w"] + params["feat_b"]
    h = h + params["label_emb"][cfg.max_classes]
    for i, (kt, vt) in enumerate(kv):
        p = f"l{i}."
        a = nx.layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"])
        q, k, v = (_heads(a @ params[p + w], cfg.n_heads) for w in ("wq", "wk", "wv"))
        q = q * (1.0 / math.sqrt(q.shape[-1]))
        s_ctx = q @ kt.transpose(0, 2, 1)
        s_self = (q * k).sum(-1)
        top = np.maximum(s_ctx.max(-1), s_self)
        s_ctx -= top[..., None]
        np.exp(s_ctx, out=s_ctx)
        e_self = np.exp(s_self - top)
        denom = s_ctx.sum(-1) + e_self
        out = (s_ctx @ vt + e_self[..., None] * v) / denom[..., None]
        out = out.transpose(1, 0, 2).reshape(len(h), cfg.emb_dim)
        h = h + out @ params[p + "wo"]
        h = _ffn(params, p, h)
    h = nx.layer_norm(h, params["lnf_g"], params["lnf_b"])
    return h @ params["head_w"] + params["head_b"]


def _probs(logits, k):
    z = logits[:, :k]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_context(weights, x_train, y_train, x_test):
    x_train = np.asarray(x_train, dtype=np.float64)
    x_test = np.atleast_2d(np.asarray(x_test, dtype=np.float64))
    y_train = np.asarray(y_train)
    if len(y_train) == 0:
        raise ValueError("infer needs a nonempty training context")
    if x_train.ndim != 2 or x_train.shape[1] != x_test.shape[1] or len(x_train) != len(y_train):
        raise ValueError(f"shape mismatch: train {x_train.shape}, labels {y_train.shape}, test {x_test.shape}")
    if x_train.shape[1] > weights.config.max_features:
        raise CapacityError(f"{x_train.shape[1]} features exceed model capacity of {weights.config.max_features}")
    return x_train, y_train, x_test


def _predict(weights, x_train, y_idx, k, x_test, chunk):
    if k > weights.config.max_classes:
        raise CapacityError(f"{k} classes exceed model capacity of {weights.config.max_classes}")
    kv = context_states(weights, x_train, y_idx)
    parts = [_probs(query_logits(weights, kv, x_test[s:s + chunk]), k)
             for s in range(0, len(x_test), chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, k))


def infer(weights: PfnWeights, x_train, y_train, x_test, n_classes: int | None = None,
          chunk: int = QUERY_CHUNK) -> Ppd:
    """Posterior predictive for ``x_test`` given the context, in one forward pass.

    Labels are mapped to column indices in sorted order and the output is
    renormalised over classes present in ``y_train``. Passing ``n_classes``
    instead keeps every class in ``range(n_classes)`` (labels must then
    already be 0-based integers).
    """
    x_train, y_train, x_test = _check_context(weights, x_train, y_train, x_test)
    if n_classes is None:
        class_ids, y_idx = np.unique(y_train, return_inverse=True)
    else:
        class_ids, y_idx = np.arange(n_classes), y_train.astype(np.int64)
    return Ppd(_predict(weights, x_train, y_idx, len(class_ids), x_test, chunk), class_ids)


class PfnClassifier:
    """Fitted-context wrapper: preprocessing statistics plus ensemble member plans.

    ``fit`` only stores the context; every ``predict_proba`` call is a
    forward pass per member, with members averaged.
    """

    def __init__(self, weights: PfnWeights, n_members: int = 1, chunk: int = QUERY_CHUNK):
        if n_members < 1:
            raise ValueError("n_members must be >= 1")
        self.weights = weights
        self.n_members = n_members
        self.chunk = chunk

    def fit(self, x, y):
        from .preprocess import build_ensemble_members, fit

        x = np.asarray(x, dtype=np.float64)
        self.classes_, self.y_idx_ = np.unique(np.asarray(y), return_inverse=True)
        if len(self.classes_) == 0:
            raise ValueError("infer needs a nonempty training context")
        self.x_train_ = x
        self.stats_ = fit(x)
        self.plans_ = build_ensemble_members(x.shape[1], len(self.classes_), self.n_members)
        return self

    def predict_proba(self, x):
        from .preprocess import transform

        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = len(self.classes_)
        total = np.zeros((len(x), k))
        for plan in self.plans_:
            xtr = transform(self.x_train_, self.stats_, plan)
            xte = transform(x, self.stats_, plan)
            _check_context(self.weights, xtr, self.y_idx_, xte)
            rotated = (self.y_idx_ + plan.label_shift) % k
            probs = _predict(self.weights, xtr, rotated, k, xte, self.chunk)
            # column j of probs is rotated id j, i.e. original class (j - shift) mod k
            total += np.roll(probs, -plan.label_shift, axis=1)
        return total / len(self.plans_)


def ensemble_infer(weights: PfnWeights, x_train, y_train, x_test, n_members: int = 1) -> Ppd:
    """Average member PPDs over deterministic preprocessing variants."""
    clf = PfnClassifier(weights, n_members).fit(x_train, y_train)
    return Ppd(clf.predict_proba(x_test), clf.classes_)

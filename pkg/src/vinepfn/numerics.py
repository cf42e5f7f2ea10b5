"""Dense tensor math with a tape-based reverse-mode engine and Adam.

Tensors are plain ``numpy.ndarray`` values. Operations accept either arrays
(pure evaluation, nothing recorded) or :class:`Node` handles belonging to a
:class:`Graph`; in the latter case the result is appended to the graph
together with its backward rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("graph", "id", "value", "op", "parents", "backward_fn", "name")

    def __init__(self, graph, value, op, parents=(), backward_fn=None, name=None):
        self.graph = graph
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name
        self.id = len(graph.nodes)
        graph.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"


class Graph:
    """Append-only record of primitive ops; insertion order is topological."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def param(self, name: str, value) -> Node:
        node = Node(self, np.asarray(value, dtype=np.float64), "param", name=name)
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return Node(self, np.asarray(value), "const")

    def __len__(self):
        return len(self.nodes)

    def release(self):
        """Drop recorded nodes so their buffers are freed without waiting for the cycle collector."""
        for node in self.nodes:
            node.parents = ()
            node.backward_fn = None
        self.nodes.clear()
        self.params.clear()


def value_of(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    return None


def _record(graph, value, op, inputs, backward_fn):
    if graph is None:
        return value
    parents = []
    for x in inputs:
        if not isinstance(x, Node):
            x = graph.const(x)
        parents.append(x)
    return Node(graph, value, op, parents, backward_fn)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- primitives


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {av.shape} and {bv.shape}")
    out = av @ bv

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record(_graph_of(a, b), out, "matmul", (a, b), backward)


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv

    def backward(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _record(_graph_of(a, b), out, "add", (a, b), backward)


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv

    def backward(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record(_graph_of(a, b), out, "mul", (a, b), backward)


def total(x):
    """Sum of all entries, as a 0-d tensor."""
    xv = value_of(x)
    out = np.asarray(xv.sum())

    def backward(g):
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _record(_graph_of(x), out, "sum", (x,), backward)


def mean(x):
    xv = value_of(x)
    n = xv.size
    out = np.asarray(xv.mean())

    def backward(g):
        return (np.full(xv.shape, float(g) / n),)

    return _record(_graph_of(x), out, "mean", (x,), backward)


def reshape(x, shape):
    xv = value_of(x)
    out = xv.reshape(shape)

    def backward(g):
        return (g.reshape(xv.shape),)

    return _record(_graph_of(x), out, "reshape", (x,), backward)


def _softmax(xv, axis):
    shifted = xv - np.max(xv, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1):
    xv = value_of(x)
    if not -xv.ndim <= axis < xv.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {xv.shape}")
    out = _softmax(xv, axis)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(_graph_of(x), out, "softmax", (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    xv, gv, bv = value_of(x), value_of(gain), value_of(bias)
    if gv.shape != xv.shape[-1:] or bv.shape != xv.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain {gv.shape} / bias {bv.shape} do not match last dim of {xv.shape}"
        )
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gv + bv

    def backward(g):
        d = xv.shape[-1]
        gxhat = g * gv
        gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(_graph_of(x, gain, bias), out, "layer_norm", (x, gain, bias), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """GELU, tanh approximation."""
    xv = value_of(x)
    x2 = xv * xv
    t = np.tanh(_GELU_C * xv * (1.0 + 0.044715 * x2))
    out = 0.5 * xv * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du),)

    return _record(_graph_of(x), out, "gelu", (x,), backward)


def _split_heads(a, n_heads):
    *lead, n, d = a.shape
    return np.swapaxes(a.reshape(*lead, n, n_heads, d // n_heads), -2, -3)


def _merge_heads(a):
    a = np.swapaxes(a, -2, -3)
    *lead, n, h, dh = a.shape
    return a.reshape(*lead, n, h * dh)


def attention(q, k, v, mask=None, n_heads=1):
    """Masked scaled dot-product attention over the last two axes.

    ``mask[i, j]`` False forbids position i from attending to j. With
    ``n_heads > 1`` the last dimension is split into equal head slices and
    the outputs are concatenated back.
    """
    qv, kv, vv = value_of(q), value_of(k), value_of(v)
    if qv.shape[-1] != kv.shape[-1] or kv.shape[-2] != vv.shape[-2]:
        raise ShapeError(f"attention: incompatible q {qv.shape}, k {kv.shape}, v {vv.shape}")
    if qv.shape[-1] % n_heads or vv.shape[-1] % n_heads:
        raise ShapeError(f"attention: width not divisible by {n_heads} heads")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ValueError("attention: mask has a fully masked row")
    qh, kh, vh = (_split_heads(a, n_heads) for a in (qv, kv, vv))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    scores = (qh @ np.swapaxes(kh, -1, -2)) * scale
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    p = _softmax(scores, -1)
    out = _merge_heads(p @ vh)

    def backward(g):
        gh = _split_heads(g, n_heads)
        gv = np.swapaxes(p, -1, -2) @ gh
        gp = gh @ np.swapaxes(vh, -1, -2)
        gs = p * (gp - (gp * p).sum(-1, keepdims=True)) * scale
        gq = gs @ kh
        gk = np.swapaxes(gs, -1, -2) @ qh
        return (_unbroadcast(_merge_heads(gq), qv.shape),
                _unbroadcast(_merge_heads(gk), kv.shape),
                _unbroadcast(_merge_heads(gv), vv.shape))

    return _record(_graph_of(q, k, v), out, "attention", (q, k, v), backward)


def embed(table, index):
    """Row lookup ``table[index]``; gradient scatters back into the table."""
    tv = value_of(table)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= tv.shape[0]):
        raise IndexError(f"embed: index out of range for table with {tv.shape[0]} rows")
    out = tv[index]

    def backward(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, index.reshape(-1), g.reshape(-1, tv.shape[-1]))
        return (gt,)

    return _record(_graph_of(table), out, "embed", (table,), backward)


def gather(x, index, axis=-2):
    """Select entries of ``x`` along ``axis`` (e.g. query rows of a token tensor)."""
    xv = value_of(x)
    index = np.asarray(index, dtype=np.int64)
    out = np.take(xv, index, axis=axis)

    def backward(g):
        gx = np.zeros_like(xv)
        sl = [slice(None)] * xv.ndim
        sl[axis] = index
        np.add.at(gx, tuple(sl), g)
        return (gx,)

    return _record(_graph_of(x), out, "gather", (x,), backward)


def cross_entropy(logits, targets, class_mask=None):
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits).

    ``class_mask`` (broadcastable to logits, bool) removes classes from the
    normaliser; a masked target is an error.
    """
    lv = value_of(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if lv.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {lv.shape} vs targets {targets.shape}")
    z = lv if class_mask is None else np.where(class_mask, lv, -np.inf)
    p = _softmax(z, -1)
    picked = np.take_along_axis(p, targets[..., None], -1)[..., 0]
    if np.any(picked <= 0):
        raise ValueError("cross_entropy: target class has zero probability")
    logp = np.take_along_axis(z - np.max(z, -1, keepdims=True), targets[..., None], -1)[..., 0]
    logp = logp - np.log(np.exp(z - np.max(z, -1, keepdims=True)).sum(-1))
    n = targets.size
    out = np.asarray(-logp.mean())

    def backward(g):
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, -1)
        return ((p - onehot) * (float(g) / n),)

    return _record(_graph_of(logits), out, "cross_entropy", (logits,), backward)


# ------------------------------------------------------------------ backward


def backward(loss: Node) -> dict[str, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``; returns gradients by param name."""
    if not isinstance(loss, Node):
        raise TypeError("backward: loss was not recorded on a graph")
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    graph = loss.graph
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value, dtype=np.float64)}
    for node in reversed(graph.nodes[: loss.id + 1]):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.op == "param":
            grads[node.id] = g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if parent.op == "const":
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return {
        name: grads.get(node.id, np.zeros_like(node.value))
        for name, node in graph.params.items()
    }


# ---------------------------------------------------------------------- adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None):
    """One bias-corrected Adam update. Returns new params; ``state`` is advanced in place."""
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad for {name} has shape {g.shape}, param {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - state.beta1) * g if m is None else state.beta1 * m + (1 - state.beta1) * g
        v = (1 - state.beta2) * g * g if v is None else state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        new[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new

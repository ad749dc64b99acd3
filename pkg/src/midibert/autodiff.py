"""Reverse-mode automatic differentiation over numpy arrays.

Minimal machinery for a transformer encoder: each op returns a Tensor that
remembers its parents and a backward rule; `backward` walks the recorded
graph once in reverse topological order, accumulates gradients into
`.grad`, and then tears the graph down (so a second backward without a new
forward is an error, and activations are freed as soon as possible).

Training runs in float32. `set_default_dtype(np.float64)` flips newly
created tensors to double precision for finite-difference verification;
`gradcheck` compares analytic gradients against central differences on a
random subset of coordinates.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_default_dtype = np.float32


def set_default_dtype(dtype) -> None:
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be np.float32 or np.float64")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_spent")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(_default_dtype)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=_default_dtype), requires_grad=requires_grad)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=requires,
        _parents=tuple(p for p in parents if p.requires_grad) if requires else (),
        _backward=backward if requires else None,
    )


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate .grad for every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._spent:
        raise RuntimeError("backward already ran for this graph; run a new forward")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any requires_grad tensor")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:  # iterative DFS; graphs are deep enough to bother
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        node._spent = True
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            if node is not loss:
                node.grad = None  # free activation gradients eagerly


# --- arithmetic -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), rule)


def add_const(a: Tensor, c) -> Tensor:
    def rule(g):
        _accumulate(a, g)

    return _result(a.data + c, (a,), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def rule(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), rule)


def scale(a: Tensor, s: float) -> Tensor:
    def rule(g):
        _accumulate(a, g * s)

    return _result(a.data * s, (a,), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = np.matmul(a.data, b.data)

    def rule(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _result(out_data, (a, b), rule)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def rule(g):
        _accumulate(a, g.reshape(old))

    return _result(a.data.reshape(shape), (a,), rule)


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def rule(g):
        _accumulate(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        for t, start, stop in zip(tensors, offsets, offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                _accumulate(t, g[tuple(index)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, rule)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def rule(g):
        _accumulate(a, np.full_like(a.data, float(g) / n))

    return _result(np.mean(a.data), (a,), rule)


# --- nonlinearities ----------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    keep = a.data > 0

    def rule(g):
        _accumulate(a, g * keep)

    return _result(a.data * keep, (a,), rule)


_GELU_C = float(np.sqrt(2.0 / np.pi))  # builtin float: numpy 2 scalars upcast float32


def gelu(a: Tensor) -> Tensor:
    # tanh form: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def rule(g):
        sech2 = 1.0 - t * t
        local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        _accumulate(a, g * local)

    return _result(0.5 * x * (1.0 + t), (a,), rule)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def rule(g):
        _accumulate(a, g * (1.0 - t * t))

    return _result(t, (a,), rule)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _result(y, (a,), rule)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv

    def rule(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, x.shape[-1]).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, inv * (gx - m1 - xhat * m2))

    return _result(gamma.data * xhat + beta.data, (a, gamma, beta), rule)


def dropout(a: Tensor, p: float, seed: int, training: bool) -> Tensor:
    """Inverted dropout; a fixed seed gives a fixed mask."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1): {p}")
    if not training or p == 0.0:
        return a
    rng = np.random.default_rng([seed])
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)

    def rule(g):
        _accumulate(a, g * keep)

    return _result(a.data * keep, (a,), rule)


# --- lookups -----------------------------------------------------------------

def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; gradients scatter-add back into the table."""
    ids = np.asarray(ids)

    def rule(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        _accumulate(table, gt)

    return _result(table.data[ids], (table,), rule)


# --- losses -------------------------------------------------------------------

def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted-mean cross entropy: sum(w_i * ce_i) / sum(w_i).

    Rows with zero weight are ignored entirely (their target may be any
    value, including an ignore marker)."""
    if logits.data.ndim != 2:
        raise ValueError(f"logits must be (N, C), got {logits.data.shape}")
    weights = np.asarray(weights, dtype=logits.data.dtype)
    total = weights.sum()
    if not total > 0:
        raise ValueError("cross_entropy needs at least one positive weight")
    targets = np.asarray(targets)
    safe = np.where(weights > 0, targets, 0).astype(np.int64)

    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    log_z = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_probs = z - log_z
    rows = np.arange(x.shape[0])
    ce = -log_probs[rows, safe]
    value = (weights * ce).sum() / total

    def rule(g):
        probs = np.exp(log_probs)
        probs[rows, safe] -= 1.0
        _accumulate(logits, probs * (float(g) * weights / total)[:, None])

    return _result(np.asarray(value), (logits,), rule)


# --- attention helper ----------------------------------------------------------

def attention_scores(
    q: Tensor,
    k: Tensor,
    rel_table: Tensor,
    rel_index: np.ndarray,
    key_bias: np.ndarray,
    scaling: float,
) -> Tensor:
    """(q·k + q·r_{j-i}) * scaling + key_bias, in one op.

    q, k are (B, H, T, D); rel_table is (2c+1, D) gathered by rel_index
    (T, T); key_bias broadcasts over (B, H, T, T) and takes no gradient.
    """
    rel = rel_table.data[rel_index]  # (T, T, D)
    b_, h_, t_, d_ = q.data.shape
    # all contractions below are laid out as batched matmuls so they hit BLAS
    q_by_step = np.ascontiguousarray(q.data.transpose(2, 0, 1, 3)).reshape(t_, b_ * h_, d_)
    content = np.matmul(q.data, np.swapaxes(k.data, -1, -2))
    relative = (
        np.matmul(q_by_step, rel.transpose(0, 2, 1))  # (T, BH, T)
        .reshape(t_, b_, h_, t_)
        .transpose(1, 2, 0, 3)
    )
    out_data = (content + relative) * scaling + key_bias

    def rule(g):
        gs = g * scaling
        gs_by_step = np.ascontiguousarray(gs.transpose(2, 0, 1, 3)).reshape(t_, b_ * h_, t_)
        if q.requires_grad:
            gq_rel = (
                np.matmul(gs_by_step, rel)  # (T, BH, D)
                .reshape(t_, b_, h_, d_)
                .transpose(1, 2, 0, 3)
            )
            _accumulate(q, np.matmul(gs, k.data) + gq_rel)
        if k.requires_grad:
            _accumulate(k, np.matmul(np.swapaxes(gs, -1, -2), q.data))
        if rel_table.requires_grad:
            g_rel = np.matmul(gs_by_step.transpose(0, 2, 1), q_by_step)  # (T, T, D)
            gt = np.zeros_like(rel_table.data)
            np.add.at(gt, rel_index.reshape(-1), g_rel.reshape(-1, d_))
            _accumulate(rel_table, gt)

    return _result(out_data, (q, k, rel_table), rule)


# --- verification ----------------------------------------------------------------

def gradcheck(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    *,
    eps: float = 1e-5,
    sample: int = 200,
    seed: int = 0,
    min_grad: float = 0.0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must rebuild its graph on every call from the given parameter tensors.
    Samples at least `sample` coordinates across all parameters; the
    relative error denominator is max(|analytic|, |numeric|, 1e-8).

    min_grad restricts sampling to coordinates whose analytic gradient
    magnitude is at least that large. Large graphs have coordinates whose
    gradients nearly cancel (softmax rows are mean-zero); below roughly
    |loss|·1e-12/eps those are buried in difference-rounding noise and read
    as false disagreements, while a wrong backward rule still shows up as an
    O(1) error on the well-scaled coordinates that remain.
    """
    for p in params:
        if not p.requires_grad:
            raise ValueError("gradcheck parameters must require gradients")
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.array(p.grad, copy=True) for p in params]

    rng = np.random.default_rng([seed])
    sizes = np.array([p.data.size for p in params])
    magnitudes = np.concatenate([np.abs(a).ravel() for a in analytic])
    eligible = np.flatnonzero(magnitudes >= min_grad)
    if eligible.size == 0:
        raise ValueError(f"no coordinate has gradient magnitude >= {min_grad}")
    draws = max(sample, 1)
    chosen = (
        eligible if draws >= eligible.size else rng.choice(eligible, size=draws, replace=False)
    )
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat_index in chosen:
        which = int(np.searchsorted(bounds, flat_index, side="right"))
        local = int(flat_index - (bounds[which] - sizes[which]))
        p = params[which]
        view = p.data.reshape(-1)
        original = view[local]
        view[local] = original + eps
        up = float(f().data)
        view[local] = original - eps
        down = float(f().data)
        view[local] = original
        numeric = (up - down) / (2 * eps)
        exact = float(analytic[which].reshape(-1)[local])
        err = abs(numeric - exact) / max(abs(numeric), abs(exact), 1e-8)
        worst = max(worst, err)
    return worst

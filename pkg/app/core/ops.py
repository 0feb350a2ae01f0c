"""
Differentiable primitives over Tensor.

Shapes are explicit: elementwise ops require identical shapes and the only
broadcast is tensor-by-python-scalar (`scale`). Every op returns a new Tensor and,
when a tape is active, records a backward rule that maps the output gradient to
one gradient per input.
"""
import math
from typing import Optional, Sequence

import numpy as np

from app.core.tensor import Tensor, as_tensor, make_result
from app.exceptions import (
    DegenerateInputError,
    DimensionError,
    DomainError,
    TargetIndexError,
)

_GELU_C = math.sqrt(2.0 / math.pi)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(
            f"{op}: shape mismatch {a.shape} vs {b.shape}", left=a.shape, right=b.shape
        )


def _require_ndim(op: str, x: Tensor, ndim: int):
    if x.ndim != ndim:
        raise DimensionError(f"{op}: expected a rank-{ndim} tensor, got shape {x.shape}", shape=x.shape)


# ============== Elementwise ==============

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return make_result("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return make_result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    a_data, b_data = a.data, b.data
    return make_result("mul", a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return make_result("scale", a.data * factor, (a,), lambda g: (g * factor,))


def gelu(x) -> Tensor:
    """tanh-approximated GELU."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(_GELU_C * (xd + 0.044715 * xd ** 3))
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dt = (1.0 - t ** 2) * _GELU_C * (1.0 + 3.0 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return make_result("gelu", out, (x,), backward)


# ============== Linear algebra ==============

def matmul(a, b) -> Tensor:
    """[m×k] · [k×n] → [m×n]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply {a.shape} by {b.shape}", left=a.shape, right=b.shape
        )
    a_data, b_data = a.data, b.data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return make_result("matmul", a_data @ b_data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    _require_ndim("transpose", a, 2)
    return make_result("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}", shape=a.shape, target=shape)
    original = a.shape
    return make_result("reshape", a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(original),))


def weighted_sum(weights, rows) -> Tensor:
    """Σ_t weights[t] · rows[t]  for weights [T], rows [T×d] → [d]."""
    weights, rows = as_tensor(weights), as_tensor(rows)
    _require_ndim("weighted_sum", weights, 1)
    _require_ndim("weighted_sum", rows, 2)
    if weights.shape[0] != rows.shape[0]:
        raise DimensionError(
            f"weighted_sum: {weights.shape} weights for {rows.shape} rows",
            left=weights.shape, right=rows.shape,
        )
    w, r = weights.data, rows.data

    def backward(g):
        return r @ g, np.outer(w, g)

    return make_result("weighted_sum", w @ r, (weights, rows), backward)


# ============== Reductions / normalization ==============

def softmax(x, tau: float = 1.0) -> Tensor:
    """Temperature-scaled softmax along the last axis (vectors or matrix rows)."""
    if not tau > 0:
        raise DomainError(f"softmax: temperature must be > 0, got {tau}", tau=tau)
    x = as_tensor(x)
    z = x.data / tau
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        return ((y * (g - np.sum(g * y, axis=-1, keepdims=True))) / tau,)

    return make_result("softmax", y, (x,), backward)


def mean(x, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        count = x.size

        def backward(g):
            return (np.full(shape, float(g) / count),)

        return make_result("mean", np.mean(x.data), (x,), backward)

    axis = axis % x.ndim
    count = shape[axis]

    def backward_axis(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / count,)

    return make_result("mean", np.mean(x.data, axis=axis), (x,), backward_axis)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return make_result("sum", np.sum(x.data), (x,), lambda g: (np.full(shape, float(g)),))


def l2_normalize(x) -> Tensor:
    """Scale vectors (or matrix rows) to unit Euclidean norm."""
    x = as_tensor(x)
    norm = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    if np.any(norm == 0.0):
        raise DegenerateInputError("l2_normalize: zero-norm input", shape=x.shape)
    y = x.data / norm

    def backward(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return make_result("l2_normalize", y, (x,), backward)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance along the last axis (no affine part)."""
    x = as_tensor(x)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        g_mean = np.mean(g, axis=-1, keepdims=True)
        gx_mean = np.mean(g * xhat, axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - xhat * gx_mean),)

    return make_result("layer_norm", xhat, (x,), backward)


def cosine(a, b) -> Tensor:
    """a·b / (‖a‖‖b‖) for two vectors; returns a scalar tensor."""
    a, b = as_tensor(a), as_tensor(b)
    _require_ndim("cosine", a, 1)
    _same_shape("cosine", a, b)
    na = float(np.sqrt(np.dot(a.data, a.data)))
    nb = float(np.sqrt(np.dot(b.data, b.data)))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine: zero-norm input", left_norm=na, right_norm=nb)
    a_data, b_data = a.data, b.data
    value = float(np.dot(a_data, b_data)) / (na * nb)

    def backward(g):
        g = float(g)
        ga = g * (b_data / (na * nb) - value * a_data / (na * na))
        gb = g * (a_data / (na * nb) - value * b_data / (nb * nb))
        return ga, gb

    return make_result("cosine", np.array(value), (a, b), backward)


def row_dots(a, b) -> Tensor:
    """
    Pairwise row dot products [m×d], [n×d] → [m×n].

    Each entry is reduced on its own, so row i of the result is bit-identical
    whether `a` holds one row or many.
    """
    a, b = as_tensor(a), as_tensor(b)
    _require_ndim("row_dots", a, 2)
    _require_ndim("row_dots", b, 2)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"row_dots: row widths differ {a.shape} vs {b.shape}", left=a.shape, right=b.shape
        )
    a_data, b_data = a.data, b.data

    def backward(g):
        return g @ b_data, g.T @ a_data

    return make_result("row_dots", np.sum(a_data[:, None, :] * b_data[None, :, :], axis=-1), (a, b), backward)


def cosine_matrix(a, b) -> Tensor:
    """Pairwise row cosines: [m×d], [n×d] → [m×n]."""
    a, b = as_tensor(a), as_tensor(b)
    _require_ndim("cosine_matrix", a, 2)
    _require_ndim("cosine_matrix", b, 2)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"cosine_matrix: row widths differ {a.shape} vs {b.shape}", left=a.shape, right=b.shape
        )
    return row_dots(l2_normalize(a), l2_normalize(b))


# ============== Indexing / assembly ==============

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DegenerateInputError("concat: nothing to concatenate")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != axis]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis]
        if t.ndim != ndim or other != first:
            raise DimensionError(
                f"concat: incompatible shapes {tensors[0].shape} and {t.shape} along axis {axis}",
                left=tensors[0].shape, right=t.shape,
            )
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack_rows(vectors: Sequence) -> Tensor:
    """Stack equal-length vectors into a matrix, one vector per row."""
    vectors = [as_tensor(v) for v in vectors]
    if not vectors:
        raise DegenerateInputError("stack_rows: nothing to stack")
    for v in vectors:
        _require_ndim("stack_rows", v, 1)
        if v.shape != vectors[0].shape:
            raise DimensionError(
                f"stack_rows: vector shapes differ {vectors[0].shape} vs {v.shape}",
                left=vectors[0].shape, right=v.shape,
            )

    def backward(g):
        return tuple(g[i] for i in range(g.shape[0]))

    return make_result("stack_rows", np.stack([v.data for v in vectors]), vectors, backward)


def gather_row(x, index: int) -> Tensor:
    """Row `index` of a matrix as a vector."""
    x = as_tensor(x)
    _require_ndim("gather_row", x, 2)
    index = int(index)
    if not 0 <= index < x.shape[0]:
        raise TargetIndexError(f"gather_row: row {index} out of range for {x.shape}", index=index)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return make_result("gather_row", x.data[index].copy(), (x,), backward)


def gather(x, indices: Sequence[int]) -> Tensor:
    """Elements of a vector, or rows of a matrix, in the given order."""
    x = as_tensor(x)
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise TargetIndexError(f"gather: indices out of range for {x.shape}", shape=x.shape)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return make_result("gather", x.data[idx].copy(), (x,), backward)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    _require_ndim("slice_cols", x, 2)
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: [{start}:{stop}] outside {x.shape}", shape=x.shape)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return make_result("slice_cols", x.data[:, start:stop].copy(), (x,), backward)


# ============== Objective ==============

def cross_entropy_contrastive(sim, targets: Sequence[int], tau: float) -> Tensor:
    """
    Mean over rows of −log softmax(sim_i / tau)[targets_i], via log-sum-exp.

    sim is [B×K]; each target must lie in [0, K).
    """
    if not tau > 0:
        raise DomainError(f"cross_entropy_contrastive: temperature must be > 0, got {tau}", tau=tau)
    sim = as_tensor(sim)
    _require_ndim("cross_entropy_contrastive", sim, 2)
    batch, classes = sim.shape
    targets = [int(t) for t in targets]
    if len(targets) != batch:
        raise DimensionError(
            f"cross_entropy_contrastive: {len(targets)} targets for {batch} rows",
            targets=len(targets), rows=batch,
        )
    for t in targets:
        if not 0 <= t < classes:
            raise TargetIndexError(f"target {t} outside [0, {classes})", target=t, classes=classes)

    rows = np.arange(batch)
    logits = sim.data / tau
    peak = np.max(logits, axis=1, keepdims=True)
    shifted = logits - peak
    lse = peak[:, 0] + np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(lse - logits[rows, targets]))

    def backward(g):
        probs = np.exp(shifted)
        probs /= np.sum(probs, axis=1, keepdims=True)
        probs[rows, targets] -= 1.0
        return (float(g) * probs / (batch * tau),)

    return make_result("cross_entropy", np.array(loss), (sim,), backward)


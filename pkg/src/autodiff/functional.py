"""
Composite differentiable primitives: softmax family, layer norm, embedding lookup,
strided 1-D convolution and its transpose.

Convolutions use the [batch][channel][time] layout. ``padding`` and ``crop`` are
(left, right) sample counts so encoder and decoder stacks can map lengths exactly.
"""

import math
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autodiff.tensor import ArrayLike, Tensor, add, as_tensor, concat, mul, tanh
from src.models.base import ShapeError

Pad = Union[int, Tuple[int, int]]


def _pair(p: Pad) -> Tuple[int, int]:
    return (p, p) if isinstance(p, int) else (int(p[0]), int(p[1]))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return Tensor._make(out, (x,), backward, 'softmax')


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return Tensor._make(out, (x,), backward, 'log_softmax')


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean token-level cross-entropy of ``logits`` [..., K] against integer ``targets`` [...].

    ``mask`` (same shape as targets, 0/1) excludes positions from the mean.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError('cross_entropy', logits.shape, targets.shape)
    k = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ShapeError('cross_entropy', logits.shape, targets.shape, detail=f"targets outside [0, {k})")
    weights = np.ones(targets.shape, dtype=logits.data.dtype) if mask is None \
        else np.asarray(mask, dtype=logits.data.dtype)
    count = max(float(weights.sum()), 1.0)

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    loss = np.asarray(((lse - picked) * weights).sum() / count, dtype=logits.data.dtype)

    def backward(g):
        probs = np.exp(shifted - lse[..., None])
        np.put_along_axis(probs, targets[..., None],
                          np.take_along_axis(probs, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (g * probs * (weights / count)[..., None],)
    return Tensor._make(loss, (logits,), backward, 'cross_entropy')


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError('layer_norm', x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx = g * gamma.data
        dx = inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)
    return Tensor._make(out, (x, gamma, beta), backward, 'layer_norm')


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of ``table`` [V, D] selected by integer ``indices``; output [..., D]."""
    indices = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError('embedding', table.shape, indices.shape)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError('embedding', table.shape, indices.shape,
                         detail=f"index outside [0, {table.shape[0]})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)
    return Tensor._make(table.data[indices], (table,), backward, 'embedding')


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU composed from primitives."""
    inner = mul(add(x, mul(x * x * x, 0.044715)), math.sqrt(2.0 / math.pi))
    return mul(mul(x, 0.5), add(tanh(inner), 1.0))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


def pad_replicate(x: Tensor, left: int, right: int) -> Tensor:
    """Extend the last axis by repeating its edge samples (differentiable)."""
    parts = []
    if left:
        parts.append(mul(x[..., :1], np.ones(left, dtype=x.data.dtype)))
    parts.append(x)
    if right:
        parts.append(mul(x[..., -1:], np.ones(right, dtype=x.data.dtype)))
    return concat(parts, axis=-1) if len(parts) > 1 else x


def conv1d_output_length(length: int, kernel: int, stride: int, padding: Pad = 0) -> int:
    left, right = _pair(padding)
    return (length + left + right - kernel) // stride + 1


def conv_transpose1d_output_length(length: int, kernel: int, stride: int, crop: Pad = 0) -> int:
    left, right = _pair(crop)
    return (length - 1) * stride + kernel - left - right


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: Pad = 0) -> Tensor:
    """
    Strided 1-D convolution (cross-correlation).

    Shapes: x [B, Cin, L], weight [Cout, Cin, K], bias [Cout] -> [B, Cout, Lout]
    with ``Lout = floor((L + pad - K) / stride) + 1``.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError('conv1d', x.shape, weight.shape)
    left, right = _pair(padding)
    cout, cin, k = weight.shape
    batch, _, length = x.shape
    lout = conv1d_output_length(length, k, stride, (left, right))
    if lout < 1:
        raise ShapeError('conv1d', x.shape, weight.shape, detail="input shorter than kernel")

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :lout]   # [B, Cin, Lout, K]
    cols = windows.transpose(0, 2, 1, 3).reshape(batch, lout, cin * k)
    w2 = weight.data.reshape(cout, cin * k)
    out = np.matmul(cols, w2.T).transpose(0, 2, 1)
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        gt = g.transpose(0, 2, 1)                                                 # [B, Lout, Cout]
        gw = np.matmul(gt.reshape(-1, cout).T, cols.reshape(-1, cin * k)).reshape(weight.shape) \
            if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(gt, w2).reshape(batch, lout, cin, k)
            gxp = np.zeros_like(xp)
            span = stride * (lout - 1) + 1
            for j in range(k):
                gxp[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, left:left + length]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)
    return Tensor._make(np.ascontiguousarray(out), tuple(parents), backward, 'conv1d')


def conv_transpose1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
                     crop: Pad = 0) -> Tensor:
    """
    Transposed 1-D convolution.

    Shapes: x [B, Cin, L], weight [Cin, Cout, K], bias [Cout] -> [B, Cout, Lout]
    with ``Lout = (L - 1) * stride + K - crop``.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[0]:
        raise ShapeError('conv_transpose1d', x.shape, weight.shape)
    left, right = _pair(crop)
    cin, cout, k = weight.shape
    batch, _, length = x.shape
    full_len = (length - 1) * stride + k
    lout = full_len - left - right
    if lout < 1:
        raise ShapeError('conv_transpose1d', x.shape, weight.shape, detail="crop removes everything")

    xt = x.data.transpose(0, 2, 1)                                                # [B, L, Cin]
    w2 = weight.data.reshape(cin, cout * k)
    cols = np.matmul(xt, w2).reshape(batch, length, cout, k)
    full = np.zeros((batch, cout, full_len), dtype=cols.dtype)
    span = stride * (length - 1) + 1
    for j in range(k):
        full[:, :, j:j + span:stride] += cols[:, :, :, j].transpose(0, 2, 1)
    out = full[:, :, left:left + lout]
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def backward(g):
        gfull = np.zeros((batch, cout, full_len), dtype=g.dtype)
        gfull[:, :, left:left + lout] = g
        gwin = sliding_window_view(gfull, k, axis=2)[:, :, ::stride][:, :, :length]  # [B, Cout, L, K]
        gcols = gwin.transpose(0, 2, 1, 3).reshape(batch, length, cout * k)
        gx = np.matmul(gcols, w2.T).transpose(0, 2, 1) if x.requires_grad else None
        gw = np.matmul(xt.reshape(-1, cin).T, gcols.reshape(-1, cout * k)).reshape(weight.shape) \
            if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)
    return Tensor._make(np.ascontiguousarray(out), tuple(parents), backward, 'conv_transpose1d')


def straight_through(x: Tensor, quantized: ArrayLike) -> Tensor:
    """``x + stopgrad(q - x)``: forward value ``q``, identity gradient w.r.t. ``x``."""
    q = as_tensor(quantized)
    return add(x, (q - x).detach())

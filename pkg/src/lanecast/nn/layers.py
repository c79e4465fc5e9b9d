"""Fused layer primitives with hand-written backward passes."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import BadLabel, BatchTooSmall, ShapeMismatch
from .autograd import Tensor, _node, as_tensor, reshape

LAYER_NORM_EPS = 1e-5
BATCH_NORM_EPS = 1e-5
BATCH_NORM_MOMENTUM = 0.1


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), back, "softmax")


softmax_rows = softmax


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _node(out, (x,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),), "log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1] or not np.issubdtype(labels.dtype, np.integer):
        raise BadLabel(f"labels must be integers shaped {logits.shape[:-1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise BadLabel(f"labels outside [0, {n_cls})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    count = labels.size
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)
    loss = -picked.sum() / count

    def back(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0, -1)
        return (grad * (g / count),)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), back, "cross_entropy")


def _normalize_backward(g_hat, xhat, inv_std, axes):
    m = g_hat.mean(axis=axes, keepdims=True)
    mx = (g_hat * xhat).mean(axis=axes, keepdims=True)
    return inv_std * (g_hat - m - xhat * mx)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def back(g):
        gx = _normalize_backward(g * gain.data, xhat, inv_std, -1)
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gain, bias), back, "layer_norm")


class BatchNormState:
    """Running statistics for one batch-norm layer (not trained)."""

    def __init__(self, channels: int, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batch_norm_time(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    state: BatchNormState,
    train: bool,
    momentum: float = BATCH_NORM_MOMENTUM,
    eps: float = BATCH_NORM_EPS,
) -> Tensor:
    """Per-channel normalisation of ``x`` shaped (batch, ch, t, w).

    Train mode uses batch statistics over (batch, t, w) and updates the
    running estimates; eval mode uses the running estimates.
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"batch_norm_time expects (batch, ch, t, w), got {x.shape}")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if train:
        if x.shape[0] < 2:
            raise BatchTooSmall("train-mode batch norm needs at least two samples")
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        state.running_mean[:] = (1 - momentum) * state.running_mean + momentum * mu.reshape(-1)
        state.running_var[:] = (1 - momentum) * state.running_var + momentum * var.reshape(-1)
    else:
        mu = state.running_mean.reshape(shape)
        var = state.running_var.reshape(shape)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = (xhat * gain.data.reshape(shape) + bias.data.reshape(shape)).astype(x.dtype)

    def back(g):
        g_hat = g * gain.data.reshape(shape)
        if train:
            gx = _normalize_backward(g_hat, xhat, inv_std, axes)
        else:
            gx = g_hat * inv_std
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(out, (x, gain, bias), back, "batch_norm")


def conv_time(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation along the time axis with zero same-padding.

    ``x`` is (batch, ch_in, t, w) or (ch_in, t, w); ``kernels`` is
    (ch_out, ch_in, k, 1). The feature axis ``w`` is never mixed.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if kernels.ndim != 4 or kernels.shape[3] != 1:
        raise ShapeMismatch(f"kernels must be (out, in, k, 1), got {kernels.shape}")
    B, ci, T, W = x.shape
    co, ci_k, k, _ = kernels.shape
    if ci != ci_k:
        raise ShapeMismatch(f"input has {ci} channels, kernels expect {ci_k}")
    left = (k - 1) // 2
    right = k - 1 - left
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right), (0, 0)))
    win = sliding_window_view(xp, k, axis=2)  # (B, ci, T, W, k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4)).reshape(B * T * W, ci * k)
    kmat = kernels.data.reshape(co, ci * k)
    out = (cols @ kmat.T).reshape(B, T, W, co).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * T * W, co)
        gk = (gm.T @ cols).reshape(kernels.shape)
        dcols = (gm @ kmat).reshape(B, T, W, ci, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j : j + T, :] += dcols[..., j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, left : left + T, :]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    y = _node(out, parents, back, "conv_time")
    if squeeze:
        y = reshape(y, y.shape[1:])
    return y


def max_pool_time(x: Tensor, p: int) -> Tensor:
    """Non-overlapping max over windows of ``p`` frames along axis -2.

    Works on (..., t, w); trailing frames that do not fill a window are
    dropped. Ties send the gradient to the first maximum.
    """
    if p < 1:
        raise ValueError("pool size must be >= 1")
    T, W = x.shape[-2], x.shape[-1]
    tp = T // p
    lead = x.shape[:-2]
    xr = x.data[..., : tp * p, :].reshape(lead + (tp, p, W))
    idx = xr.argmax(axis=-2)
    out = np.take_along_axis(xr, idx[..., None, :], axis=-2)[..., 0, :]

    def back(g):
        gr = np.zeros_like(xr)
        np.put_along_axis(gr, idx[..., None, :], g[..., None, :], axis=-2)
        gx = np.zeros_like(x.data)
        gx[..., : tp * p, :] = gr.reshape(lead + (tp * p, W))
        return (gx,)

    return _node(out, (x,), back, "max_pool_time")


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity in eval mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: (g * keep,), "dropout")

"""Differentiable tensor operations used by the segmentation networks.

All spatial tensors are NCHW. Convolution is im2col + GEMM with the patch
rearrangement delegated to the kernel backend (compiled extension or NumPy
fallback).
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DataError
from .autodiff import Tensor, make_node


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise DataError(f"conv2d: input has {c} channels, weight expects {cw}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, pad)  # (n, oh*ow, c*kh*kw)
    w_mat = w.data.reshape(f, -1).T  # (c*kh*kw, f)
    out = cols @ w_mat  # (n, oh*ow, f)
    if b is not None:
        out += b.data
    out = out.transpose(0, 2, 1).reshape(n, f, oh, ow)

    def backward_fn(grad):
        g_mat = grad.reshape(n, f, oh * ow).transpose(0, 2, 1)  # (n, oh*ow, f)
        dw = (
            cols.reshape(-1, cols.shape[2]).T @ g_mat.reshape(-1, f)
        ).T.reshape(w.data.shape)
        dcols = g_mat @ w_mat.T
        dx = kernels.col2im(dcols, h, wd, kh, kw, stride, pad)
        db = g_mat.sum(axis=(0, 1)) if b is not None else None
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_node(out, parents, backward_fn)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization; updates running stats in place when
    training."""
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * (m / max(m - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward_fn(grad):
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        gs = gamma.data.reshape(shape) * inv_std.reshape(shape)
        if training:
            m = grad.shape[0] * grad.shape[2] * grad.shape[3]
            dx = gs * (
                grad
                - dbeta.reshape(shape) / m
                - xhat * dgamma.reshape(shape) / m
            )
        else:
            dx = gs * grad
        return dx, dgamma, dbeta

    return make_node(out, (x, gamma, beta), backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0)

    def backward_fn(grad):
        return (grad * mask,)

    return make_node(out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign to stay overflow-free on large magnitudes.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ed = np.exp(d[~pos])
    out[~pos] = ed / (1.0 + ed)

    def backward_fn(grad):
        return (grad * out * (1.0 - out),)

    return make_node(out, (x,), backward_fn)


def maxpool2(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DataError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    out, arg = kernels.maxpool2x2(x.data)

    def backward_fn(grad):
        return (kernels.maxpool2x2_backward(grad, arg, h, w),)

    return make_node(out, (x,), backward_fn)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward_fn(grad):
        n, c, h, w = grad.shape
        dx = grad.reshape(n, c, h // factor, factor, w // factor, factor).sum(
            axis=(3, 5)
        )
        return (dx,)

    return make_node(out, (x,), backward_fn)


def concat_channels(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(grad):
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, splits, axis=1))

    return make_node(out, tuple(parts), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward_fn(grad):
        return grad, grad

    return make_node(out, (a, b), backward_fn)


def mul_gate(x: Tensor, alpha: Tensor) -> Tensor:
    """Multiply (N,C,H,W) features by a single-channel (N,1,H,W) gate."""
    out = x.data * alpha.data

    def backward_fn(grad):
        dx = grad * alpha.data
        dalpha = (grad * x.data).sum(axis=1, keepdims=True)
        return dx, dalpha

    return make_node(out, (x, alpha), backward_fn)


def weighted_bce_loss(
    probs: Tensor,
    target: np.ndarray,
    w_pos: float,
    w_neg: float,
    eps: float = 1e-7,
) -> Tensor:
    """Mean class-weighted binary cross-entropy over every element.

    Probabilities are clamped to [eps, 1-eps] inside the logs; the clamp
    zeroes the gradient where it is active.
    """
    p = probs.data
    y = target
    if p.shape != y.shape:
        raise DataError(f"prediction shape {p.shape} != target shape {y.shape}")
    inside = (p > eps) & (p < 1.0 - eps)
    pc = np.clip(p, eps, 1.0 - eps)
    n = p.size
    loss = -(w_pos * y * np.log(pc) + w_neg * (1.0 - y) * np.log1p(-pc)).sum() / n

    def backward_fn(grad):
        dp = (-w_pos * y / pc + w_neg * (1.0 - y) / (1.0 - pc)) / n
        return (grad * dp * inside,)

    return make_node(np.asarray(loss), (probs,), backward_fn)

"""Differentiable layer operations with hand-written backward passes."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from icare.errors import ConfigurationError, DimensionError, UsageError
from icare.numcore.tensor import Tensor, _stable_sigmoid

BCE_CLAMP = 1e-7


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y[b, o] = sum_i weight[o, i] * x[b, i] + bias[o]."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"dense input {x.shape} does not match weight {weight.shape} (expected [batch x {weight.shape[1]}])"
        )
    xd, w = x.data, weight.data

    def backward(g):
        return g @ w, g.T @ xd, g.sum(axis=0)

    return Tensor.from_op(xd @ w.T + bias.data, (x, weight, bias), backward)


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(xp, kh, kw, stride, ho, wo):
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    n, c = xp.shape[:2]
    # (N, C, Ho, Wo, kh, kw) -> (N*Ho*Wo, C*kh*kw)
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) with symmetric zero padding."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects [batch x ch x H x W], got {x.shape}")
    n, c, h, w = x.shape
    o, c_w, kh, kw = weight.shape
    if c != c_w:
        raise DimensionError(f"conv2d input channels {c} do not match kernel {weight.shape}")
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid stride={stride} / padding={padding}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"conv2d output extent {ho}x{wo} is not positive for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T + bias.data).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (gm.T @ cols).reshape(weight.shape)
        db = gm.sum(axis=0)
        dx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        return dx, dw, db

    return Tensor.from_op(np.ascontiguousarray(out), (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def _channel_view(x):
    """Axes to reduce over and the broadcast shape for per-channel vectors."""
    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    return axes, tuple(shape)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode ``running_mean``/``running_var`` are updated in place:
    ``running = momentum * running + (1 - momentum) * batch_stat``.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise DimensionError(f"batch_norm channel extent of {x.shape} does not match {gamma.shape[0]} parameters")
    axes, bshape = _channel_view(x)
    xd = x.data
    g_b = gamma.data.reshape(bshape)
    if training:
        m = xd.size // xd.shape[1]
        if xd.shape[0] < 2:
            raise UsageError("batch_norm in training mode needs a batch of at least 2")
        mu = xd.mean(axis=axes, keepdims=True)
        centered = xd - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu.reshape(-1)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.reshape(-1) * (m / max(m - 1, 1))

        def backward(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * g_b
            dx = inv_std / m * (
                m * dxhat - dxhat.sum(axis=axes, keepdims=True) - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return dx, dgamma, dbeta

    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).reshape(bshape)
        xhat = (xd - running_mean.reshape(bshape)) * inv_std

        def backward(g):
            return g * g_b * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * g_b + beta.data.reshape(bshape)
    return Tensor.from_op(out, (x, gamma, beta), backward)


def dropout(x: Tensor, keep_prob: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/keep_prob."""
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigurationError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs a random generator")
    scale = (rng.random(x.shape) < keep_prob) / keep_prob
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,))


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    n = diff.size

    def backward(g):
        return (g * 2.0 / n * diff,)

    return Tensor.from_op(np.asarray(np.mean(diff * diff)), (pred,), backward)


def weighted_bce_loss(
    p: Tensor, y, weight_important: float = 2.0, weight_not_important: float = 1.0, clamp: float = BCE_CLAMP
) -> Tensor:
    """Mean of -w1*y*ln(p) - w0*(1-y)*ln(1-p) over the batch, p clamped to [clamp, 1-clamp]."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=p.data.dtype).reshape(p.shape)
    pc = np.clip(p.data, clamp, 1.0 - clamp)
    inside = (p.data >= clamp) & (p.data <= 1.0 - clamp)
    per = -weight_important * y * np.log(pc) - weight_not_important * (1.0 - y) * np.log1p(-pc)
    n = per.size

    def backward(g):
        dp = (-weight_important * y / pc + weight_not_important * (1.0 - y) / (1.0 - pc)) * inside
        return (g * dp / n,)

    return Tensor.from_op(np.asarray(per.mean()), (p,), backward)


def bce_with_logits(logits: Tensor, y, weight_positive: float = 1.0, weight_negative: float = 1.0) -> Tensor:
    """Numerically stable mean BCE on raw logits (used by the proposal head)."""
    y = np.asarray(y, dtype=logits.data.dtype).reshape(logits.shape)
    z = logits.data
    log_p = -np.logaddexp(0.0, -z)
    log_1mp = -np.logaddexp(0.0, z)
    per = -weight_positive * y * log_p - weight_negative * (1.0 - y) * log_1mp
    n = per.size
    p = _stable_sigmoid(z)

    def backward(g):
        dz = weight_positive * y * (p - 1.0) + weight_negative * (1.0 - y) * p
        return (g * dz / n,)

    return Tensor.from_op(np.asarray(per.mean()), (logits,), backward)


def smooth_l1_loss(pred: Tensor, target, beta: float = 1.0, normalizer: float | None = None) -> Tensor:
    """Huber-style loss summed over elements and divided by ``normalizer`` (default: element count)."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"smooth_l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    d = pred.data - target
    ad = np.abs(d)
    small = ad < beta
    per = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta)
    norm = float(normalizer if normalizer is not None else max(d.size, 1))

    def backward(g):
        return (g * np.where(small, d / beta, np.sign(d)) / norm,)

    return Tensor.from_op(np.asarray(per.sum() / norm), (pred,), backward)

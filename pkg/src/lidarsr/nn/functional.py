"""Forward and backward kernels for the layers of the upscaling network.

Tensors are (batch, channels, rows, cols). Every kernel keeps the dtype of its
input so the same code serves float32 training and float64 gradient checks.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def tconv_out_size(n: int, k: int, s: int, p: int) -> int:
    return (n - 1) * s - 2 * p + k


def _im2col(xp, kh, kw, sh, sw, ho, wo):
    """(N, C*kh*kw, ho*wo) patch matrix of an already padded input."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols, shape, kh, kw, sh, sw, ho, wo):
    """Scatter-add a patch matrix back onto a zero (N, C, H, W) canvas."""
    n, c = shape[:2]
    out = np.zeros(shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += cols[:, :, i, j]
    return out


def _flat(t):
    """(N, C, H, W) -> (N, C, H*W) view."""
    return t.reshape(t.shape[0], t.shape[1], -1)


def _batch_outer(a, b):
    """sum_n a[n] @ b[n].T for (N, P, M) and (N, Q, M)."""
    acc = a[0] @ b[0].T
    for k in range(1, len(a)):
        acc += a[k] @ b[k].T
    return acc


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation. ``w`` is (out_ch, in_ch, kh, kw)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {c2} (x {x.shape}, w {w.shape})")
    ho, wo = conv_out_size(h, kh, sh, ph), conv_out_size(wd, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    out = np.matmul(w.reshape(o, -1), _im2col(xp, kh, kw, sh, sw, ho, wo)).reshape(n, o, ho, wo)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def conv2d_backward_input(dy, w, x_shape, stride=1, pad=0):
    """Gradient of a convolution w.r.t. its input."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, c, h, wd = x_shape
    o, _, kh, kw = w.shape
    ho, wo = dy.shape[2:]
    cols = np.matmul(w.reshape(o, -1).T, _flat(dy))
    dxp = _col2im(cols, (n, c, h + 2 * ph, wd + 2 * pw), kh, kw, sh, sw, ho, wo)
    return np.ascontiguousarray(dxp[:, :, ph : ph + h, pw : pw + wd])


def conv2d_backward(dy, x, w, stride=1, pad=0):
    """Returns (dx, dw, db)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    o, c, kh, kw = w.shape
    ho, wo = dy.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    dw = _batch_outer(_flat(dy), _im2col(xp, kh, kw, sh, sw, ho, wo)).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    dx = conv2d_backward_input(dy, w, x.shape, stride, pad)
    return dx, dw, db


def tconv2d_forward(x, w, b, stride=1, pad=0):
    """Transposed convolution. ``w`` is (in_ch, out_ch, kh, kw).

    Output size is (n - 1) * stride - 2 * pad + k per axis. Without bias this
    equals ``conv2d_backward_input`` applied to ``x`` with the same kernel.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, c, h, wd = x.shape
    c2, o, kh, kw = w.shape
    if c != c2:
        raise ShapeError(f"tconv2d: input has {c} channels, kernel expects {c2} (x {x.shape}, w {w.shape})")
    ho, wo = tconv_out_size(h, kh, sh, ph), tconv_out_size(wd, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ShapeError(f"tconv2d: output would be empty for input {x.shape}, kernel {w.shape}")
    cols = np.matmul(w.reshape(c, -1).T, _flat(x))
    full = _col2im(cols, (n, o, (h - 1) * sh + kh, (wd - 1) * sw + kw), kh, kw, sh, sw, h, wd)
    out = full[:, :, ph : ph + ho, pw : pw + wo]
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out)


def tconv2d_backward(dy, x, w, stride=1, pad=0):
    """Returns (dx, dw, db)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    fh, fw = (h - 1) * sh + kh, (wd - 1) * sw + kw
    full = np.zeros((n, o, fh, fw), dtype=dy.dtype)
    full[:, :, ph : ph + dy.shape[2], pw : pw + dy.shape[3]] = dy
    cols = _im2col(full, kh, kw, sh, sw, h, wd)
    dx = np.matmul(w.reshape(c, -1), cols).reshape(x.shape)
    dw = _batch_outer(_flat(x), cols).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, momentum, eps, train):
    """Per-channel normalization. In train mode the running statistics are
    updated in place; returns (y, cache)."""
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean.astype(running_mean.dtype)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    y = xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)
    return y.astype(x.dtype, copy=False), (xhat, inv, gamma, train)


def batchnorm_backward(dy, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv, gamma, train = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma.reshape(1, -1, 1, 1)
    if not train:
        return dxhat * inv.reshape(1, -1, 1, 1), dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dx = (
        dxhat
        - dxhat.sum(axis=(0, 2, 3), keepdims=True) / m
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / m
    ) * inv.reshape(1, -1, 1, 1)
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def avgpool_forward(x, k: int = 2):
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avgpool: spatial dims {(h, w)} not divisible by {k}")
    return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))


def avgpool_backward(dy, k: int = 2):
    g = dy / (k * k)
    return np.repeat(np.repeat(g, k, axis=2), k, axis=3)


def dropout_mask(shape, rate: float, rng, dtype):
    """Inverted-dropout mask: kept units scaled by 1/(1 - rate).

    ``rng`` is a Generator, or a sequence of Generators with one entry per
    batch item so each item draws from its own stream.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    scale = dtype.type(1.0 / (1.0 - rate))
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ValueError(f"{len(rng)} rng streams for a batch of {shape[0]}")
        u = np.stack([g.random(shape[1:], dtype=np.float32) for g in rng])
    else:
        u = rng.random(shape, dtype=np.float32)
    return (u >= rate).astype(dtype) * scale


def l1_loss(pred, target):
    """Mean absolute error and its gradient w.r.t. ``pred`` (0 at equality)."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.abs(diff).mean(dtype=np.float64))
    grad = np.sign(diff) / diff.size
    return loss, grad.astype(pred.dtype, copy=False)

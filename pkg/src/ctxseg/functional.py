"""Differentiable neural-net primitives over the Tensor engine.

Hot inner loops (patch gather/scatter, bilinear sampling) go through the
selected kernel backend; reductions ride on BLAS via tensordot/matmul.
"""

import numpy as np

from . import _kernels as K
from .autodiff import Tensor


class ShapeError(ValueError):
    """Raised when an operation's input dimensions do not agree."""


def _np(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """2-d convolution (cross-correlation) with zero padding and dilation."""
    xd, wd = x.data, weight.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-d [N,C,H,W], got {xd.shape}")
    if wd.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-d [C_out,C_in,kh,kw], got {wd.shape}")
    n, c_in, h, w = xd.shape
    c_out, wc_in, kh, kw = wd.shape
    if wc_in != c_in:
        raise ShapeError(f"conv2d: input channels {c_in} != weight in-channels {wc_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if kh < 1 or kw < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d: stride/dilation must be >=1, kernel >=1, padding >=0")
    ext_h = (kh - 1) * dilation + 1
    ext_w = (kw - 1) * dilation + 1
    if ext_h > h + 2 * padding:
        raise ShapeError(f"conv2d: effective kernel height {ext_h} exceeds padded "
                         f"input height {h + 2 * padding}")
    if ext_w > w + 2 * padding:
        raise ShapeError(f"conv2d: effective kernel width {ext_w} exceeds padded "
                         f"input width {w + 2 * padding}")
    out_h = (h + 2 * padding - ext_h) // stride + 1
    out_w = (w + 2 * padding - ext_w) // stride + 1

    if padding:
        xp = np.zeros((n, c_in, h + 2 * padding, w + 2 * padding), dtype=xd.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = xd
    else:
        xp = xd
    col = K.im2col(xp, kh, kw, stride, dilation, out_h, out_w)
    col_mat = col.reshape(n * out_h * out_w, c_in * kh * kw)
    w_mat = wd.reshape(c_out, c_in * kh * kw)
    out_data = np.ascontiguousarray(
        (col_mat @ w_mat.T).reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2))
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    prev = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        gp = np.ascontiguousarray(g.transpose(0, 2, 3, 1)) \
            .reshape(n * out_h * out_w, c_out)
        if weight.requires_grad:
            weight._accum((gp.T @ col_mat).reshape(wd.shape))
        if x.requires_grad:
            dcol = (gp @ w_mat).reshape(col.shape)
            dxp = K.col2im(dcol, h + 2 * padding, w + 2 * padding, stride, dilation)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            x._accum(dxp)
        if bias is not None and bias.requires_grad:
            bias._accum(gp.sum(axis=0))

    return Tensor._result(out_data, prev, bwd)


# ---------------------------------------------------------------------------
# linear


def linear(x, weight, bias=None):
    """out[n,j] = sum_i x[n,i] * weight[j,i] + bias[j]"""
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or wd.ndim != 2:
        raise ShapeError(f"linear: expected 2-d input and weight, got {xd.shape}, {wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"linear: input features {xd.shape[1]} != weight "
                         f"in-features {wd.shape[1]}")
    if bias is not None and bias.shape != (wd.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({wd.shape[0]},)")
    out_data = xd @ wd.T
    if bias is not None:
        out_data = out_data + bias.data[None, :]
    prev = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        if x.requires_grad:
            x._accum(g @ wd)
        if weight.requires_grad:
            weight._accum(g.T @ xd)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=0))

    return Tensor._result(out_data, prev, bwd)


# ---------------------------------------------------------------------------
# batch normalization


class RunningStats:
    """Per-channel EMA of mean/variance used by eval-mode batchnorm."""

    def __init__(self, channels, momentum=0.1, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum

    def update(self, mean, var):
        m = self.momentum
        self.mean = (1 - m) * self.mean + m * mean
        self.var = (1 - m) * self.var + m * var

    def state(self):
        return {"mean": self.mean, "var": self.var}


def _bn_axes(ndim):
    # channel axis is 1; normalize over every other axis
    return (0,) + tuple(range(2, ndim))


def batchnorm(x, gamma, beta, running, eps=1e-5, training=True):
    """Channel batchnorm over all non-channel axes; input [N,C] or [N,C,H,W]."""
    xd = x.data
    if xd.ndim < 2:
        raise ShapeError(f"batchnorm: input must have a channel axis, got {xd.shape}")
    c = xd.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},)")
    axes = _bn_axes(xd.ndim)
    count = int(np.prod([xd.shape[a] for a in axes]))
    bshape = (1, c) + (1,) * (xd.ndim - 2)

    if training:
        if count <= 1:
            raise ValueError("batchnorm: population of size 1 has undefined variance "
                             "in train mode")
        mu = xd.mean(axis=axes)
        var = ((xd - mu.reshape(bshape)) ** 2).mean(axis=axes)
        if running is not None:
            running.update(mu.astype(running.mean.dtype), var.astype(running.var.dtype))
    else:
        mu = running.mean.astype(xd.dtype)
        var = running.var.astype(xd.dtype)

    std = np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) / std.reshape(bshape)
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def bwd(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            scale = (gamma.data / std).reshape(bshape)
            if training:
                mean_g = g.mean(axis=axes).reshape(bshape)
                mean_gx = (g * xhat).mean(axis=axes).reshape(bshape)
                x._accum(scale * (g - mean_g - xhat * mean_gx))
            else:
                x._accum(scale * g)

    return Tensor._result(out_data, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# activations


def relu(x):
    mask = x.data > 0
    def bwd(g):
        x._accum(g * mask)
    return Tensor._result(np.where(mask, x.data, 0), (x,), bwd)


def _sigmoid_np(z):
    # branch by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    s = _sigmoid_np(x.data)
    def bwd(g):
        x._accum(g * s * (1 - s))
    return Tensor._result(s, (x,), bwd)


def softmax(x, axis):
    xd = x.data
    if not -xd.ndim <= axis < xd.ndim:
        raise ValueError(f"softmax: axis {axis} invalid for shape {xd.shape}")
    z = xd - xd.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    s = ez / ez.sum(axis=axis, keepdims=True)
    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        x._accum(s * (g - dot))
    return Tensor._result(s, (x,), bwd)


# ---------------------------------------------------------------------------
# resize


def bilinear_resize(x, out_h, out_w):
    """Align-corners bilinear interpolation on [N,C,H,W]."""
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize: output size must be >= 1")
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError(f"bilinear_resize: input must be 4-d, got {xd.shape}")
    n, c, h, w = xd.shape
    if (out_h, out_w) == (h, w):
        out_data = xd.copy()
        def bwd_id(g):
            x._accum(g)
        return Tensor._result(out_data, (x,), bwd_id)
    out_data = K.bilinear_forward(xd, out_h, out_w)
    def bwd(g):
        x._accum(K.bilinear_backward(g, h, w))
    return Tensor._result(out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# losses

_LOG_EPS = 1e-12


def cross_entropy_2d(logits, target, ignore_label=-1):
    """Mean per-pixel cross entropy over non-ignored pixels.

    logits: Tensor[N,Cls,H,W]; target: int array [N,H,W].
    """
    ld = logits.data
    tgt = np.asarray(target)
    if ld.ndim != 4:
        raise ShapeError(f"cross_entropy_2d: logits must be 4-d, got {ld.shape}")
    if tgt.shape != (ld.shape[0],) + ld.shape[2:]:
        raise ShapeError(f"cross_entropy_2d: target shape {tgt.shape} does not match "
                         f"logits {ld.shape}")
    ncls = ld.shape[1]
    valid = tgt != ignore_label
    if not valid.any():
        raise ValueError("cross_entropy_2d: every pixel carries the ignore label; "
                         "mean loss is undefined")
    bad = valid & ((tgt < 0) | (tgt >= ncls))
    if bad.any():
        idx = tuple(int(v[0]) for v in np.nonzero(bad))
        raise ValueError(f"cross_entropy_2d: label {int(tgt[idx])} at pixel {idx} "
                         f"outside [0,{ncls})")
    n_valid = int(valid.sum())
    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse  # N,Cls,H,W
    tclip = np.where(valid, tgt, 0)
    picked = np.take_along_axis(logp, tclip[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / n_valid

    def bwd(g):
        if not logits.requires_grad:
            return
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, tclip[:, None], 1.0, axis=1)
        d = (p - onehot) * (valid[:, None] / n_valid)
        logits._accum(d * g)

    return Tensor._result(np.asarray(loss, dtype=ld.dtype), (logits,), bwd)


def binary_cross_entropy(probs, target):
    """Mean BCE over all entries; probs clamped to [eps, 1-eps]."""
    pd = probs.data
    tgt = _np(target)
    if pd.shape != tgt.shape:
        raise ShapeError(f"binary_cross_entropy: probs {pd.shape} vs target {tgt.shape}")
    # the clamp must survive rounding in the working precision: in float32,
    # 1 - 1e-12 rounds back to exactly 1.0 and log(1-p) would yield -inf
    eps = max(_LOG_EPS, float(np.finfo(pd.dtype).eps))
    p = np.clip(pd, eps, 1 - eps)
    n = p.size
    loss = -(tgt * np.log(p) + (1 - tgt) * np.log(1 - p)).mean()
    unclamped = (pd > eps) & (pd < 1 - eps)

    def bwd(g):
        if not probs.requires_grad:
            return
        d = (-(tgt / p) + (1 - tgt) / (1 - p)) / n
        probs._accum(np.where(unclamped, d, 0.0) * g)

    return Tensor._result(np.asarray(loss, dtype=pd.dtype), (probs,), bwd)


# ---------------------------------------------------------------------------
# channel-wise scaling (attention gate)


def channel_scale(x, gamma):
    """Y[n,c,h,w] = X[n,c,h,w] * gamma[n,c]"""
    xd, gd = x.data, gamma.data
    if xd.ndim != 4 or gd.ndim != 2 or xd.shape[:2] != gd.shape:
        raise ShapeError(f"channel_scale: got featuremap {xd.shape} and factors {gd.shape}")
    out_data = xd * gd[:, :, None, None]

    def bwd(g):
        if x.requires_grad:
            x._accum(g * gd[:, :, None, None])
        if gamma.requires_grad:
            gamma._accum((g * xd).sum(axis=(2, 3)))

    return Tensor._result(out_data, (x, gamma), bwd)

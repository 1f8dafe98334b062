"""Pure-numpy implementations of the hot kernels.

These are the reference path: every numba kernel computes the same
quantity as the function of the same name here (gather kernels match
bit-for-bit; scatter kernels may differ by accumulation-order rounding).
"""

import numpy as np


def im2col(xp, kh, kw, stride, dilation, out_h, out_w):
    """Gather conv patches from a padded input into [N,out_h,out_w,C,kh,kw].

    The layout is chosen so reshaping to [N*out_h*out_w, C*kh*kw] yields a
    contiguous matrix and the convolution becomes a single matmul.
    """
    n, c = xp.shape[:2]
    col = np.empty((n, out_h, out_w, c, kh, kw), dtype=xp.dtype)
    for i in range(kh):
        i0 = i * dilation
        for j in range(kw):
            j0 = j * dilation
            col[:, :, :, :, i, j] = xp[:, :, i0:i0 + stride * out_h:stride,
                                       j0:j0 + stride * out_w:stride] \
                .transpose(0, 2, 3, 1)
    return col


def col2im(dcol, hp, wp, stride, dilation):
    """Scatter-add patch gradients back onto the padded input grid."""
    n, out_h, out_w, c, kh, kw = dcol.shape
    dxp = np.zeros((n, c, hp, wp), dtype=dcol.dtype)
    for i in range(kh):
        i0 = i * dilation
        for j in range(kw):
            j0 = j * dilation
            dxp[:, :, i0:i0 + stride * out_h:stride,
                j0:j0 + stride * out_w:stride] += \
                dcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp


def _corner_grid(in_size, out_size, dtype):
    # align-corners source coordinates
    if out_size == 1:
        src = np.zeros(1, dtype=dtype)
    else:
        scale = np.asarray((in_size - 1) / (out_size - 1), dtype=dtype)
        src = np.arange(out_size, dtype=dtype) * scale
    lo = np.floor(src).astype(np.int64)
    lo = np.minimum(lo, in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo.astype(dtype)
    return lo, hi, frac


def bilinear_forward(x, out_h, out_w):
    n, c, h, w = x.shape
    y0, y1, fy = _corner_grid(h, out_h, x.dtype)
    x0, x1, fx = _corner_grid(w, out_w, x.dtype)
    fy = fy[:, None]
    fx = fx[None, :]
    tl = x[:, :, y0[:, None], x0[None, :]]
    tr = x[:, :, y0[:, None], x1[None, :]]
    bl = x[:, :, y1[:, None], x0[None, :]]
    br = x[:, :, y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return top + (bot - top) * fy


def bilinear_backward(g, in_h, in_w):
    n, c, out_h, out_w = g.shape
    y0, y1, fy = _corner_grid(in_h, out_h, g.dtype)
    x0, x1, fx = _corner_grid(in_w, out_w, g.dtype)
    fy = fy[:, None]
    fx = fx[None, :]
    dx = np.zeros((n, c, in_h, in_w), dtype=g.dtype)
    sl = (slice(None), slice(None))
    np.add.at(dx, sl + (y0[:, None], x0[None, :]), g * (1 - fy) * (1 - fx))
    np.add.at(dx, sl + (y0[:, None], x1[None, :]), g * (1 - fy) * fx)
    np.add.at(dx, sl + (y1[:, None], x0[None, :]), g * fy * (1 - fx))
    np.add.at(dx, sl + (y1[:, None], x1[None, :]), g * fy * fx)
    return dx

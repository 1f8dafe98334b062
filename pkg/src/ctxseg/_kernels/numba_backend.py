"""Numba-jitted hot kernels.

The interpolation grids are precomputed with the numpy helpers so both
backends perform identical floating-point arithmetic in the same order.
"""

import numpy as np
from numba import njit

from .numpy_backend import _corner_grid


@njit(cache=True)
def _im2col_jit(xp, kh, kw, stride, dilation, out_h, out_w, col):
    n, c = xp.shape[0], xp.shape[1]
    for b in range(n):
        for oy in range(out_h):
            for ox in range(out_w):
                for ch in range(c):
                    for i in range(kh):
                        iy = i * dilation + oy * stride
                        for j in range(kw):
                            col[b, oy, ox, ch, i, j] = \
                                xp[b, ch, iy, j * dilation + ox * stride]


def im2col(xp, kh, kw, stride, dilation, out_h, out_w):
    n, c = xp.shape[:2]
    col = np.empty((n, out_h, out_w, c, kh, kw), dtype=xp.dtype)
    _im2col_jit(xp, kh, kw, stride, dilation, out_h, out_w, col)
    return col


@njit(cache=True)
def _col2im_jit(dcol, stride, dilation, dxp):
    n, out_h, out_w, c, kh, kw = dcol.shape
    for b in range(n):
        for oy in range(out_h):
            for ox in range(out_w):
                for ch in range(c):
                    for i in range(kh):
                        iy = i * dilation + oy * stride
                        for j in range(kw):
                            dxp[b, ch, iy, j * dilation + ox * stride] += \
                                dcol[b, oy, ox, ch, i, j]


def col2im(dcol, hp, wp, stride, dilation):
    n, c = dcol.shape[0], dcol.shape[3]
    dxp = np.zeros((n, c, hp, wp), dtype=dcol.dtype)
    _col2im_jit(dcol, stride, dilation, dxp)
    return dxp


@njit(cache=True)
def _bilinear_fwd_jit(x, y0, y1, fy, x0, x1, fx, out):
    n, c, out_h, out_w = out.shape
    for b in range(n):
        for ch in range(c):
            for oy in range(out_h):
                r0 = y0[oy]
                r1 = y1[oy]
                wy = fy[oy]
                for ox in range(out_w):
                    c0 = x0[ox]
                    c1 = x1[ox]
                    wx = fx[ox]
                    tl = x[b, ch, r0, c0]
                    tr = x[b, ch, r0, c1]
                    bl = x[b, ch, r1, c0]
                    br = x[b, ch, r1, c1]
                    top = tl + (tr - tl) * wx
                    bot = bl + (br - bl) * wx
                    out[b, ch, oy, ox] = top + (bot - top) * wy


def bilinear_forward(x, out_h, out_w):
    n, c, h, w = x.shape
    y0, y1, fy = _corner_grid(h, out_h, x.dtype)
    x0, x1, fx = _corner_grid(w, out_w, x.dtype)
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    _bilinear_fwd_jit(x, y0, y1, fy, x0, x1, fx, out)
    return out


@njit(cache=True)
def _bilinear_bwd_jit(g, y0, y1, fy, x0, x1, fx, dx):
    n, c, out_h, out_w = g.shape
    for b in range(n):
        for ch in range(c):
            for oy in range(out_h):
                r0 = y0[oy]
                r1 = y1[oy]
                wy = fy[oy]
                for ox in range(out_w):
                    c0 = x0[ox]
                    c1 = x1[ox]
                    wx = fx[ox]
                    up = g[b, ch, oy, ox]
                    dx[b, ch, r0, c0] += up * (1 - wy) * (1 - wx)
                    dx[b, ch, r0, c1] += up * (1 - wy) * wx
                    dx[b, ch, r1, c0] += up * wy * (1 - wx)
                    dx[b, ch, r1, c1] += up * wy * wx


def bilinear_backward(g, in_h, in_w):
    n, c, out_h, out_w = g.shape
    y0, y1, fy = _corner_grid(in_h, out_h, g.dtype)
    x0, x1, fx = _corner_grid(in_w, out_w, g.dtype)
    dx = np.zeros((n, c, in_h, in_w), dtype=g.dtype)
    _bilinear_bwd_jit(g, y0, y1, fy, x0, x1, fx, dx)
    return dx

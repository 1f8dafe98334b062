"""Soft-assignment residual encoding over a learned codebook.

Features are soft-assigned to K learned codewords with per-codeword
sharpness factors; residuals are aggregated per codeword into an orderless
global descriptor. Two output variants: summed BN+ReLU aggregation
(segmentation head) and concatenation with L2 normalization (classification
blocks). Distances use the expanded quadratic form so the cost is one
matmul; negative round-off is clamped at zero.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .functional import ShapeError, relu, softmax
from .layers import BatchNorm
from .module import Module


def softplus(x):
    z = x.data
    out_data = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0)
    sig = 1.0 / (1.0 + np.exp(-np.abs(z)))
    sig = np.where(z >= 0, sig, 1.0 - sig)
    def bwd(g):
        x._accum(g * sig)
    return Tensor._result(out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# fused building blocks (batched over leading axis)


def _pairwise_sqdist(x, d):
    """||x_i - d_k||^2 for x [B,N,C], d [K,C] -> [B,N,K]."""
    xd, dd = x.data, d.data
    sq_x = (xd * xd).sum(axis=2, keepdims=True)          # B,N,1
    sq_d = (dd * dd).sum(axis=1)                          # K
    cross = np.matmul(xd, dd.T)                           # B,N,K
    out_data = np.maximum(sq_x - 2 * cross + sq_d, 0.0)

    def bwd(g):
        if x.requires_grad:
            x._accum(2 * (xd * g.sum(axis=2, keepdims=True) - np.matmul(g, dd)))
        if d.requires_grad:
            gsum = g.sum(axis=(0, 1))                     # K
            d._accum(2 * (dd * gsum[:, None] - np.einsum("bnk,bnc->kc", g, xd)))

    return Tensor._result(out_data, (x, d), bwd)


def _neg_scale(dist, s):
    """logits[b,i,k] = -s[k] * dist[b,i,k]"""
    dd, sd = dist.data, s.data
    out_data = -dd * sd[None, None, :]

    def bwd(g):
        if dist.requires_grad:
            dist._accum(-g * sd[None, None, :])
        if s.requires_grad:
            s._accum(-(g * dd).sum(axis=(0, 1)))

    return Tensor._result(out_data, (dist, s), bwd)


def _assemble(weights, x, d):
    """e[b,k] = sum_i w[b,i,k] * (x[b,i] - d[k]) -> [B,K,C]"""
    wd, xd, dd = weights.data, x.data, d.data
    colsum = wd.sum(axis=1)                               # B,K
    out_data = np.matmul(wd.transpose(0, 2, 1), xd) - colsum[:, :, None] * dd

    def bwd(g):
        if weights.requires_grad:
            weights._accum(np.matmul(xd, g.transpose(0, 2, 1))
                           - (g * dd).sum(axis=2)[:, None, :])
        if x.requires_grad:
            x._accum(np.matmul(wd, g))
        if d.requires_grad:
            d._accum(-np.einsum("bk,bkc->kc", colsum, g))

    return Tensor._result(out_data, (weights, x, d), bwd)


def _with_batch(features):
    if features.ndim == 2:
        return features.reshape(1, *features.shape), True
    if features.ndim == 3:
        return features, False
    raise ShapeError(f"expected features [N,C] or [B,N,C], got {features.shape}")


# ---------------------------------------------------------------------------
# public operations


@dataclass
class EncodingOutput:
    assignment_weights: Tensor   # [..., N, K], rows sum to 1
    encoders: Tensor             # [..., K, C]


def soft_assign(features, codebook, smoothing_values):
    """Row-stochastic assignment of each feature to the codewords."""
    x, squeeze = _with_batch(features)
    if x.shape[2] != codebook.shape[1]:
        raise ShapeError(f"feature dim {x.shape[2]} != codeword dim {codebook.shape[1]}")
    logits = _neg_scale(_pairwise_sqdist(x, codebook), smoothing_values)
    w = softmax(logits, axis=2)
    return w.reshape(w.shape[1:]) if squeeze else w


def encode(features, codebook, smoothing_values):
    """Residual encoders e_k = sum_i w_ik (x_i - d_k)."""
    x, squeeze = _with_batch(features)
    w = soft_assign(x, codebook, smoothing_values)
    e = _assemble(w, x, codebook)
    if squeeze:
        return EncodingOutput(w.reshape(w.shape[1:]), e.reshape(e.shape[1:]))
    return EncodingOutput(w, e)


def aggregate(encoders, bn, training=None):
    """e = sum_k relu(bn(e_k)); the (batch x codeword) population shares one
    C-channel normalization statistic."""
    enc, squeeze = _with_batch(encoders)
    b, k, c = enc.shape
    if training is not None:
        bn.train(training)
    phi = relu(bn(enc.reshape(b * k, c)))
    out = phi.reshape(b, k, c).sum(axis=1)
    return out.reshape(c) if squeeze else out


def concat_normalize(encoders, return_flags=False):
    """Flatten codeword-major and L2-normalize per sample.

    All-zero rows are returned as zeros (flagged) instead of dividing by zero.
    """
    enc, squeeze = _with_batch(encoders)
    b = enc.shape[0]
    flat = enc.reshape(b, enc.shape[1] * enc.shape[2])
    fd = flat.data
    norms = np.sqrt((fd * fd).sum(axis=1))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    out_data = fd / safe[:, None]

    def bwd(g):
        if flat.requires_grad:
            ydot = (g * out_data).sum(axis=1, keepdims=True)
            d = (g - out_data * ydot) / safe[:, None]
            flat._accum(np.where(zero[:, None], 0.0, d))

    out = Tensor._result(out_data, (flat,), bwd)
    if squeeze:
        out = out.reshape(out.shape[1])
    if return_flags:
        return out, zero if not squeeze else bool(zero[0])
    return out


class SmoothingFactors(Module):
    """Per-codeword sharpness factors, kept positive through softplus.

    In stochastic mode each training forward replaces the factors by a fresh
    uniform(0,1) draw (recorded for replay); evaluation uses the constant 0.5.
    """

    def __init__(self, k, dtype=np.float64, stochastic=False):
        super().__init__()
        # softplus(raw) ~= 1 at init
        self.raw = Tensor(np.full(k, np.log(np.e - 1.0), dtype=dtype),
                          requires_grad=True)
        self.stochastic = stochastic
        self.last_draw = None

    def effective(self, training, rng=None):
        if self.stochastic:
            if not training:
                return Tensor(np.full(self.raw.shape, 0.5, dtype=self.raw.dtype))
            if rng is None:
                raise ValueError("stochastic smoothing draw requires an rng")
            self.last_draw = rng.uniform(0.0, 1.0, self.raw.shape).astype(self.raw.dtype)
            return Tensor(self.last_draw)
        return softplus(self.raw)


def stochastic_smoothing_draw(smoothing, training, rng=None):
    """Effective factor values for one forward pass (see SmoothingFactors)."""
    return smoothing.effective(training, rng)


class EncodingLayer(Module):
    """Learned codebook + smoothing factors with a configurable output variant.

    variant='aggregate' -> [B,C] summed BN+ReLU descriptor;
    variant='concat'    -> [B,K*C] L2-normalized concatenation.
    K=0 bypasses the codebook and emits the mean feature vector (global
    average pooling).
    """

    def __init__(self, k, channels, rng, variant="aggregate", stochastic=False,
                 dtype=np.float64):
        super().__init__()
        if variant not in ("aggregate", "concat"):
            raise ValueError(f"unknown variant {variant!r}")
        if k < 0:
            raise ValueError("codeword count must be >= 0")
        self.k = k
        self.channels = channels
        self.variant = variant
        self._rng = rng
        if k > 0:
            bound = 1.0 / np.sqrt(k)
            self.codebook = Tensor(rng.uniform(-bound, bound, (k, channels)).astype(dtype),
                                   requires_grad=True)
            self.smoothing = SmoothingFactors(k, dtype=dtype, stochastic=stochastic)
            if variant == "aggregate":
                self.bn = BatchNorm(channels, dtype=dtype)

    @property
    def out_features(self):
        if self.k == 0:
            return self.channels
        if self.variant == "aggregate":
            return self.channels
        return self.k * self.channels

    def __call__(self, features):
        """features: Tensor[B,N,C] -> descriptor [B,out_features]."""
        if self.k == 0:
            return features.mean(axis=1)
        s = self.smoothing.effective(self.training, self._rng)
        out = encode(features, self.codebook, s)
        if self.variant == "aggregate":
            self.bn.train(self.training)
            return aggregate(out.encoders, self.bn)
        return concat_normalize(out.encoders)

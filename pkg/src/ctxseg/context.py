"""Channel attention and class-presence prediction driven by encoded semantics.

One module encodes a featuremap into a per-sample descriptor, predicts a
sigmoid gate over channels from it (applied as channel-wise multiplication)
and, from the same descriptor, per-class presence probabilities trained
with binary cross entropy.
"""

import numpy as np

from . import functional as F
from .encoding import EncodingLayer
from .functional import ShapeError
from .layers import Linear
from .module import Module


def presence_targets(mask, num_classes, ignore_label):
    """Binary per-class indicator of which labels occur in a ground-truth mask."""
    m = np.asarray(mask)
    labels = np.unique(m)
    labels = labels[labels != ignore_label]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        pos = tuple(int(v[0]) for v in np.nonzero(m == bad))
        raise ValueError(f"label {int(bad)} at pixel {pos} outside [0,{num_classes})")
    target = np.zeros(num_classes)
    target[labels] = 1.0
    return target


def presence_targets_batch(masks, num_classes, ignore_label):
    return np.stack([presence_targets(m, num_classes, ignore_label) for m in masks])


def attention_scale(x, e, weight, bias):
    """gamma = sigmoid(W e + b); Y = X (x) gamma, channel-wise."""
    gamma = F.sigmoid(F.linear(e, weight, bias))
    if gamma.shape[1] != x.shape[1]:
        raise ShapeError(f"attention produces {gamma.shape[1]} factors for "
                         f"{x.shape[1]} channels")
    return F.channel_scale(x, gamma), gamma


def se_head(e, weight, bias):
    """Per-class presence probabilities from the encoded semantics."""
    return F.sigmoid(F.linear(e, weight, bias))


class ContextModule(Module):
    """Encoding layer + attention gate + presence head over one featuremap.

    with_attention=False builds the auxiliary variant that only emits
    presence probabilities (no gating of the featuremap).
    """

    def __init__(self, channels, num_classes, k, rng, with_attention=True,
                 dtype=np.float64):
        super().__init__()
        self.channels = channels
        self.encoder = EncodingLayer(k, channels, rng, variant="aggregate",
                                     dtype=dtype)
        e_dim = self.encoder.out_features
        self.with_attention = with_attention
        if with_attention:
            self.attention = Linear(e_dim, channels, rng, dtype=dtype)
        self.presence = Linear(e_dim, num_classes, rng, dtype=dtype)

    def encode_featuremap(self, x):
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"featuremap has {c} channels, module built for "
                             f"{self.channels}")
        feats = x.reshape(n, c, h * w).transpose((0, 2, 1))  # N, HW, C
        return self.encoder(feats)

    def __call__(self, x):
        """-> (Y scaled featuremap or None, presence probs [N,Cls], e [N,C_e])"""
        e = self.encode_featuremap(x)
        probs = se_head(e, self.presence.weight, self.presence.bias)
        if not self.with_attention:
            return None, probs, e
        y, _ = attention_scale(x, e, self.attention.weight, self.attention.bias)
        return y, probs, e

"""Finite-difference verification suite over every differentiable operator.

Shared by the command line (`gradcheck`) and the test suite. Each entry
builds a small double-precision problem, runs central-difference checking
against the recorded backward pass, and reports the max relative error.
"""

import numpy as np

from . import context as C
from . import encoding as E
from . import functional as F
from .autodiff import Tensor
from .gradcheck import grad_check
from .layers import BatchNorm
from .syncbn import syncbn_op


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


def _check_conv(dilation):
    rng = np.random.default_rng(100 + dilation)
    x = _t(rng, 1, 2, 9, 9)
    w = _t(rng, 3, 2, 3, 3, scale=0.5)
    b = _t(rng, 3)
    return grad_check(lambda a, wv, bv: F.conv2d(a, wv, bv, padding=dilation,
                                                 dilation=dilation),
                      [x, w, b], names=["input", "weight", "bias"])


def _check_encoding():
    rng = np.random.default_rng(200)
    x = _t(rng, 1, 6, 3)
    d = _t(rng, 4, 3)
    raw = _t(rng, 4, scale=0.3)
    return grad_check(lambda xv, dv, rv: E.encode(xv, dv, E.softplus(rv)).encoders,
                      [x, d, raw], names=["features", "codewords", "smoothing"])


def _check_attention():
    rng = np.random.default_rng(300)
    x = _t(rng, 2, 3, 2, 2)
    e = _t(rng, 2, 4)
    w = _t(rng, 3, 4, scale=0.5)
    b = _t(rng, 3, scale=0.1)
    return grad_check(lambda xv, ev, wv, bv: C.attention_scale(xv, ev, wv, bv)[0],
                      [x, e, w, b], names=["featuremap", "semantics", "weight",
                                           "bias"])


def _check_presence_bce():
    rng = np.random.default_rng(400)
    e = _t(rng, 2, 4)
    w = _t(rng, 3, 4, scale=0.5)
    b = _t(rng, 3, scale=0.1)
    target = rng.integers(0, 2, (2, 3)).astype(np.float64)
    return grad_check(lambda ev, wv, bv: F.binary_cross_entropy(
        C.se_head(ev, wv, bv), target), [e, w, b],
        names=["semantics", "weight", "bias"])


def _check_aggregate():
    rng = np.random.default_rng(500)
    bn = BatchNorm(3)
    enc = _t(rng, 2, 4, 3)
    return grad_check(lambda e: E.aggregate(e, bn), [enc], names=["encoders"])


def _check_concat_normalize():
    rng = np.random.default_rng(600)
    enc = _t(rng, 2, 3, 4)
    return grad_check(E.concat_normalize, [enc], names=["encoders"])


def _check_syncbn():
    rng = np.random.default_rng(700)
    x = _t(rng, 5, 3, 2, 2)
    gamma = Tensor(rng.uniform(0.5, 1.5, 3))
    beta = _t(rng, 3)
    return grad_check(lambda a, g, b: syncbn_op(a, g, b, sizes=[2, 3]),
                      [x, gamma, beta], names=["input", "gamma", "beta"])


def _check_batchnorm():
    rng = np.random.default_rng(800)
    x = _t(rng, 6, 3)
    gamma = Tensor(rng.uniform(0.5, 1.5, 3))
    beta = _t(rng, 3)
    return grad_check(lambda a, g, b: F.batchnorm(a, g, b, None), [x, gamma, beta],
                      names=["input", "gamma", "beta"])


SUITE = [
    ("conv2d_dilation1", lambda: _check_conv(1)),
    ("conv2d_dilation2", lambda: _check_conv(2)),
    ("conv2d_dilation4", lambda: _check_conv(4)),
    ("batchnorm", _check_batchnorm),
    ("encoding_layer", _check_encoding),
    ("attention_scale", _check_attention),
    ("presence_head_bce", _check_presence_bce),
    ("aggregate", _check_aggregate),
    ("concat_normalize", _check_concat_normalize),
    ("syncbn_forward", _check_syncbn),
]


def run_gradcheck_suite(tolerance=1e-4):
    """-> (all_passed, [(name, max_rel_error, passed)])"""
    results = []
    ok = True
    for name, fn in SUITE:
        report = fn()
        err = report.max_rel_error
        passed = err < tolerance
        ok = ok and passed
        results.append((name, err, passed))
    return ok, results


def verify_syncbn(max_devices=4, dtype=np.float64):
    """Shard-invariance sweep: forward/backward divergence vs single-device
    normalization for every device count up to max_devices (including an
    uneven split), plus the one-synchronization property.
    -> (max divergence, [(label, divergence)])"""
    from .syncbn import (SyncCounter, split_into_shards, syncbn_backward,
                         syncbn_forward)
    rng = np.random.default_rng(900)
    x = rng.standard_normal((12, 3, 4, 4)).astype(dtype)
    gamma = rng.uniform(0.5, 1.5, 3).astype(dtype)
    beta = rng.standard_normal(3).astype(dtype)
    g = rng.standard_normal(x.shape).astype(dtype)

    ref_x = Tensor(x.astype(np.float64), requires_grad=True)
    ref_g = Tensor(gamma.astype(np.float64), requires_grad=True)
    ref_b = Tensor(beta.astype(np.float64), requires_grad=True)
    ref_out = F.batchnorm(ref_x, ref_g, ref_b, None)
    ref_out.backward(g.astype(np.float64))

    results = []
    for devices in range(1, max_devices + 1):
        for label, sizes in ((f"{devices}dev_even", None),
                             (f"{devices}dev_uneven",
                              [1] * (devices - 1) + [12 - (devices - 1)])):
            if sizes is None:
                shards = split_into_shards(x, devices)
                sizes = [s.local_input.shape[0] for s in shards]
            else:
                shards = split_into_shards(x, sizes=sizes)
            counter = SyncCounter()
            outs, ctx = syncbn_forward(shards, gamma, beta, counter=counter)
            gs = np.split(g, np.cumsum(sizes)[:-1], axis=0)
            dx, dgamma, dbeta = syncbn_backward(gs, ctx, counter=counter)
            div = max(
                np.abs(np.concatenate(outs) - ref_out.numpy()).max(),
                np.abs(np.concatenate(dx) - ref_x.grad).max(),
                np.abs(dgamma - ref_g.grad).max(),
                np.abs(dbeta - ref_b.grad).max(),
            )
            if counter.forward_syncs != 1 or counter.backward_syncs != 1:
                raise AssertionError(
                    f"{label}: expected one synchronization per direction, got "
                    f"{counter.forward_syncs}/{counter.backward_syncs}")
            results.append((label, float(div)))
    return max(d for _, d in results), results

"""Cross-device batch normalization with a single synchronization per pass.

Devices are simulated as independent computation contexts in one process.
Each device reduces its shard to per-channel (sum x, sum x^2); one tree
all-reduce yields the global sums, from which mean and variance follow via
var = E[x^2] - E[x]^2 (negative round-off clamped at zero). The backward
pass likewise synchronizes exactly once, on the per-device reductions of
the upstream gradient. A counter records synchronization events so tests
can assert the one-sync property.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .module import Module


@dataclass
class DeviceShard:
    device_id: int
    local_input: np.ndarray  # [n,C] or [n,C,H,W]


@dataclass
class SyncStats:
    sum_x: np.ndarray
    sum_x2: np.ndarray
    count: int


@dataclass
class SyncCounter:
    forward_syncs: int = 0
    backward_syncs: int = 0

    def reset(self):
        self.forward_syncs = 0
        self.backward_syncs = 0


def _reduce_axes(ndim):
    return (0,) + tuple(range(2, ndim))


def local_sums(shard):
    """Per-channel sum and sum of squares over the shard's samples and pixels."""
    x = shard.local_input
    if x.shape[0] == 0:
        raise ValueError(f"device {shard.device_id}: empty shard")
    axes = _reduce_axes(x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return SyncStats(x.sum(axis=axes), (x * x).sum(axis=axes), count)


def all_reduce(stats, counter=None):
    """Combine per-device stats along a fixed binary tree (by list order)."""
    stats = list(stats)
    if not stats:
        raise ValueError("all_reduce needs at least one shard")
    channels = stats[0].sum_x.shape
    for s in stats[1:]:
        if s.sum_x.shape != channels:
            raise ValueError(f"channel count mismatch across shards: "
                             f"{s.sum_x.shape} vs {channels}")
    if counter is not None:
        counter.forward_syncs += 1
    while len(stats) > 1:
        nxt = []
        for i in range(0, len(stats) - 1, 2):
            a, b = stats[i], stats[i + 1]
            nxt.append(SyncStats(a.sum_x + b.sum_x, a.sum_x2 + b.sum_x2,
                                 a.count + b.count))
        if len(stats) % 2:
            nxt.append(stats[-1])
        stats = nxt
    return stats[0]


@dataclass
class _SavedContext:
    shards: list
    xhat: list            # per-shard normalized inputs
    std: np.ndarray       # per-channel sqrt(var + eps)
    mean: np.ndarray
    count: int
    gamma: np.ndarray
    training: bool


def _map_shards(fn, items, parallel):
    if parallel:
        with ThreadPoolExecutor(max_workers=len(items)) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def syncbn_forward(shards, gamma, beta, eps=1e-5, running=None, training=True,
                   counter=None, parallel=False):
    """Normalize every shard with the global batch statistics.

    Returns (outputs per shard, saved context for backward).
    """
    shards = sorted(shards, key=lambda s: s.device_id)
    if training:
        stats = _map_shards(local_sums, shards, parallel)
        total = all_reduce(stats, counter)
        if total.count <= 1:
            raise ValueError("syncbn: global population of one element has "
                             "undefined variance")
        mean = total.sum_x / total.count
        var = np.maximum(total.sum_x2 / total.count - mean * mean, 0.0)
        if running is not None:
            # root shard updates the EMA, then (conceptually) broadcasts
            running.update(mean.astype(running.mean.dtype),
                           var.astype(running.var.dtype))
        count = total.count
    else:
        mean = running.mean.astype(shards[0].local_input.dtype)
        var = running.var.astype(shards[0].local_input.dtype)
        count = 0
    std = np.sqrt(var + eps)
    bshape = (1, -1) + (1,) * (shards[0].local_input.ndim - 2)

    def normalize(shard):
        xhat = (shard.local_input - mean.reshape(bshape)) / std.reshape(bshape)
        return xhat, gamma.reshape(bshape) * xhat + beta.reshape(bshape)

    results = _map_shards(normalize, shards, parallel)
    xhats = [r[0] for r in results]
    outputs = [r[1] for r in results]
    ctx = _SavedContext(shards, xhats, std, mean, count, np.asarray(gamma), training)
    return outputs, ctx


def syncbn_backward(upstream, ctx, counter=None, parallel=False):
    """Gradients w.r.t. each shard's input plus (dgamma, dbeta), one sync."""
    if ctx is None:
        raise ValueError("syncbn_backward: missing saved forward context")
    bshape = (1, -1) + (1,) * (ctx.shards[0].local_input.ndim - 2)
    axes = _reduce_axes(ctx.shards[0].local_input.ndim)

    def local_grad_sums(pair):
        g, xhat = pair
        return SyncStats(g.sum(axis=axes), (g * xhat).sum(axis=axes), 0)

    partial = _map_shards(local_grad_sums, list(zip(upstream, ctx.xhat)), parallel)
    total = all_reduce(partial)
    if counter is not None:
        counter.backward_syncs += 1
    dbeta = total.sum_x
    dgamma = total.sum_x2
    scale = (ctx.gamma / ctx.std).reshape(bshape)

    if ctx.training:
        n = ctx.count
        mean_g = (total.sum_x / n).reshape(bshape)
        mean_gx = (total.sum_x2 / n).reshape(bshape)

        def input_grad(pair):
            g, xhat = pair
            return scale * (g - mean_g - xhat * mean_gx)
    else:
        def input_grad(pair):
            g, _ = pair
            return scale * g

    dx = _map_shards(input_grad, list(zip(upstream, ctx.xhat)), parallel)
    return dx, dgamma, dbeta


def split_into_shards(x, device_count=None, sizes=None):
    """Partition a batch along axis 0 into device shards."""
    x = np.asarray(x)
    if sizes is None:
        if device_count is None or device_count < 1:
            raise ValueError("need device_count >= 1 or explicit sizes")
        base = x.shape[0] // device_count
        rem = x.shape[0] % device_count
        sizes = [base + (1 if d < rem else 0) for d in range(device_count)]
    if sum(sizes) != x.shape[0] or any(s < 1 for s in sizes):
        raise ValueError(f"shard sizes {sizes} do not partition batch {x.shape[0]}")
    shards = []
    start = 0
    for d, s in enumerate(sizes):
        shards.append(DeviceShard(d, x[start:start + s]))
        start += s
    return shards


def syncbn_op(x, gamma, beta, sizes, eps=1e-5, running=None, training=True,
              counter=None):
    """Differentiable Tensor wrapper: shard, sync-normalize, reassemble."""
    shards = split_into_shards(x.data, sizes=sizes)
    outs, ctx = syncbn_forward(shards, gamma.data, beta.data, eps, running,
                               training, counter)
    out_data = np.concatenate(outs, axis=0)

    def bwd(g):
        gs = []
        start = 0
        for s in sizes:
            gs.append(g[start:start + s])
            start += s
        dx, dgamma, dbeta = syncbn_backward(gs, ctx, counter)
        if x.requires_grad:
            x._accum(np.concatenate(dx, axis=0))
        if gamma.requires_grad:
            gamma._accum(dgamma)
        if beta.requires_grad:
            beta._accum(dbeta)

    return Tensor._result(out_data, (x, gamma, beta), bwd)


class SyncBatchNorm(Module):
    """Drop-in batchnorm layer that normalizes with statistics synchronized
    across a simulated device group (see syncbn_op). Takes over an existing
    BatchNorm's parameters and running statistics."""

    def __init__(self, bn, devices, counter):
        super().__init__()
        self.gamma = bn.gamma
        self.beta = bn.beta
        self.running = bn.running
        self.eps = bn.eps
        self.devices = devices
        self.counter = counter

    def __call__(self, x):
        n = x.shape[0]
        devices = min(self.devices, n)
        base, rem = divmod(n, devices)
        sizes = [base + (1 if d < rem else 0) for d in range(devices)]
        return syncbn_op(x, self.gamma, self.beta, sizes, self.eps,
                         self.running, self.training, self.counter)


def convert_to_syncbn(model, devices, counter=None):
    """Replace every BatchNorm in the model tree with a SyncBatchNorm sharing
    its parameters. Returns the counter tracking synchronization events."""
    from .layers import BatchNorm
    if counter is None:
        counter = SyncCounter()

    def convert(module):
        for name, value in list(vars(module).items()):
            if isinstance(value, BatchNorm):
                setattr(module, name, SyncBatchNorm(value, devices, counter))
            elif isinstance(value, Module):
                convert(value)
            elif isinstance(value, (list, tuple)):
                items = list(value)
                for i, item in enumerate(items):
                    if isinstance(item, BatchNorm):
                        items[i] = SyncBatchNorm(item, devices, counter)
                    elif isinstance(item, Module):
                        convert(item)
                setattr(module, name, type(value)(items) if isinstance(value, tuple)
                        else items)
    convert(model)
    return counter

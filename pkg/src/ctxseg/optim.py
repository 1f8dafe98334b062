"""SGD with momentum and decoupled-from-nothing classic weight decay, plus
the polynomial and cosine learning-rate schedules and the joint loss."""

import numpy as np

from . import functional as F


class SGD:
    """v <- m*v + (g + wd*p); p <- p - lr*v"""

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_arrays(self, names):
        return {f"optim.{n}.velocity": v for n, v in zip(names, self.velocity)}

    def load_state_arrays(self, names, state):
        for n, v in zip(names, self.velocity):
            key = f"optim.{n}.velocity"
            if key in state:
                v[...] = state[key]


def poly_lr(base_lr, iteration, total_iters, power=0.9):
    """base * (1 - iter/total)^power, decaying per iteration."""
    if iteration > total_iters:
        raise ValueError(f"iteration {iteration} past schedule end {total_iters}")
    return base_lr * (1.0 - iteration / total_iters) ** power


def cosine_lr(base_lr, epoch, total_epochs):
    """base * (1 + cos(pi * epoch/total)) / 2, decaying per epoch."""
    if epoch > total_epochs:
        raise ValueError(f"epoch {epoch} past schedule end {total_epochs}")
    return base_lr * (1.0 + np.cos(np.pi * epoch / total_epochs)) / 2.0


def total_loss(seg_logits, mask, presence_probs_list, presence_target,
               se_weight, ignore_label=-1):
    """Pixel cross entropy plus weighted presence losses.

    Returns (total, seg_loss, summed presence loss); absent presence heads
    (None entries) are skipped.
    """
    seg = F.cross_entropy_2d(seg_logits, mask, ignore_label)
    se = None
    for probs in presence_probs_list:
        if probs is None:
            continue
        term = F.binary_cross_entropy(probs, presence_target)
        se = term if se is None else se + term
    if se is None:
        return seg, seg, None
    return seg + se * se_weight, seg, se

"""Stateful layers wrapping the functional primitives."""

import numpy as np

from . import functional as F
from .functional import RunningStats
from .module import Module, he_normal, ones_param, small_uniform, zeros_param


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, dilation=1,
                 bias=True, dtype=np.float64):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        fan_in = in_ch * kernel * kernel
        self.weight = he_normal(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype)
        self.bias = zeros_param((out_ch,), dtype) if bias else None

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding,
                        self.dilation)


class Linear(Module):
    def __init__(self, in_f, out_f, rng, dtype=np.float64, zero_init=False):
        super().__init__()
        if zero_init:
            self.weight = zeros_param((out_f, in_f), dtype)
        else:
            self.weight = small_uniform(rng, (out_f, in_f), in_f, dtype)
        self.bias = zeros_param((out_f,), dtype)

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Channel batchnorm for [N,C] or [N,C,H,W] inputs."""

    def __init__(self, channels, dtype=np.float64, eps=1e-5, momentum=0.1):
        super().__init__()
        self.gamma = ones_param((channels,), dtype)
        self.beta = zeros_param((channels,), dtype)
        self.running = RunningStats(channels, momentum=momentum, dtype=dtype)
        self.eps = eps

    def __call__(self, x):
        return F.batchnorm(x, self.gamma, self.beta, self.running, self.eps,
                           training=self.training)

"""Tiny module system: parameter registry, train/eval mode, state export."""

import numpy as np

from .autodiff import Tensor
from .functional import RunningStats


class Module:
    def __init__(self):
        self.training = True

    # attribute scan in insertion order keeps parameter order deterministic
    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, RunningStats):
                yield prefix + name + ".mean", value.mean
                yield prefix + name + ".var", value.var
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def state_arrays(self):
        """name -> ndarray for every parameter and buffer (checkpoint payload)."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_arrays(self, state):
        own = {name: p.data for name, p in self.named_parameters()}
        buffers = dict(self.named_buffers())
        for name, arr in own.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name}")
            if state[name].shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint "
                                 f"{state[name].shape} vs model {arr.shape}")
            arr[...] = state[name]
        for name, arr in buffers.items():
            if name in state:
                arr[...] = state[name]

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


def he_normal(rng, shape, fan_in, dtype):
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype),
                  requires_grad=True)


def small_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype),
                  requires_grad=True)


def zeros_param(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones_param(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

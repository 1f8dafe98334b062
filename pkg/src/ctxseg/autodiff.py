"""Reverse-mode autodiff over flat numpy storage.

A Tensor wraps a float32/float64 ndarray. Differentiable ops record a
backward closure and their parents; Tensor.backward() replays the recorded
graph in reverse construction order, which fixes the gradient accumulation
order and makes runs bit-reproducible for a given seed.
"""

from contextlib import contextmanager

import numpy as np

_ALLOWED_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (eval-time speed)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _result(data, prev, backward):
        """Wrap an op result; records the graph only when needed."""
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in prev):
            out.requires_grad = True
            out._prev = tuple(prev)
            out._backward = backward
        return out

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, gradient=None):
        if gradient is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient requires a scalar")
            gradient = np.ones_like(self.data)
        self._accum(np.asarray(gradient, dtype=self.data.dtype))
        # iterative post-order topo sort; order fixed by construction order
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in reversed(node._prev):
                if id(p) not in visited:
                    stack.append((p, False))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # -- conveniences ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- primitive arithmetic ---------------------------------------------
    # No implicit broadcasting: operands must match in shape, or one side
    # is a python scalar.

    def __add__(self, other):
        if isinstance(other, (int, float)):
            out = Tensor._result(self.data + other, (self,),
                                 lambda g, a=self: a._accum(g))
            return out
        _check_same_shape(self, other, "add")
        def bwd(g, a=self, b=other):
            a._accum(g)
            b._accum(g)
        return Tensor._result(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,),
                              lambda g, a=self: a._accum(-g))

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Tensor._result(self.data * other, (self,),
                                  lambda g, a=self, s=other: a._accum(g * s))
        _check_same_shape(self, other, "mul")
        def bwd(g, a=self, b=other):
            a._accum(g * b.data)
            b._accum(g * a.data)
        return Tensor._result(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        raise TypeError("tensor/tensor division is not a primitive; use explicit ops")

    def __matmul__(self, other):
        a, b = self, other
        if a.ndim not in (2, 3) or a.ndim != b.ndim:
            raise ValueError(f"matmul expects both operands 2-d or both 3-d, "
                             f"got {a.shape} @ {b.shape}")
        out_data = np.matmul(a.data, b.data)
        def bwd(g):
            a._accum(np.matmul(g, np.swapaxes(b.data, -1, -2)))
            b._accum(np.matmul(np.swapaxes(a.data, -1, -2), g))
        return Tensor._result(out_data, (a, b), bwd)

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        def bwd(g, a=self, ax=axis, kd=keepdims):
            if ax is not None and not kd:
                g = np.expand_dims(g, ax)
            a._accum(np.broadcast_to(g, a.shape))
        return Tensor._result(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else _axis_count(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        def bwd(g, a=self):
            a._accum(g.reshape(a.shape))
        return Tensor._result(out_data, (self,), bwd)

    def transpose(self, axes):
        inv = np.argsort(axes)
        def bwd(g, a=self, inv=tuple(inv)):
            a._accum(np.transpose(g, inv))
        return Tensor._result(np.transpose(self.data, axes), (self,), bwd)


def _axis_count(shape, axis):
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for a in axis:
        n *= shape[a]
    return n


def _check_same_shape(a, b, opname):
    if a.shape != b.shape:
        raise ValueError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def parameter(data, dtype=np.float64):
    """A leaf tensor that accumulates gradients."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)

"""Minimal dense-array reverse-mode autodiff engine.

Values are numpy arrays (float32 for training, float64 for gradient
checking).  The operator set is closed and deliberately small: every
operation asserts exact shapes (no general broadcasting) and records an
explicit vector-Jacobian product.  Execution is deterministic: the tape is
a plain topological order and gradients accumulate by ordinary addition.

Graph recording is skipped entirely when no input requires gradients, so
inference reuses the same functions at no bookkeeping cost.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError


class Tensor:
    """A node in the computation graph: array value plus optional backward."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # convenience operator sugar over the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _result(data, parents, vjp) -> Tensor:
    """Wrap an op result, recording the backward rule only when needed."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise DataError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c: float) -> Tensor:
    return _result(a.data + c, (a,), lambda g: (g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x); derivative at 0 is exactly 0.5."""
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig
    return _result(out, (a,), lambda g: (g * (sig * (1.0 + a.data * (1.0 - sig))),))


def tsum(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),))


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    return _result(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype, copy=True),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DataError(f"reshape: cannot view {a.data.shape} as {shape}")
    old = a.data.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DataError(f"transpose2d expects a matrix, got shape {a.data.shape}")
    return _result(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DataError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), vjp)


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise DataError("concat: rank mismatch")
    split = a.data.shape[axis]

    def vjp(g):
        ga = np.take(g, range(split), axis=axis)
        gb = np.take(g, range(split, g.shape[axis]), axis=axis)
        return ga, gb

    return _result(np.concatenate([a.data, b.data], axis=axis), (a, b), vjp)


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Visits every reachable node exactly once in reverse topological order;
    fan-in gradients accumulate additively.  Leaf gradients land in `.grad`.
    """
    if loss.data.size != 1:
        raise DataError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.data.dtype, copy=True)
            else:
                parent.grad += g


def zero_grads(params) -> None:
    """Clear gradients on a dict or iterable of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for t in values:
        t.grad = None

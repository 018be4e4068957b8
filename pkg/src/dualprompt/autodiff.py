"""Minimal reverse-mode autodiff over numpy float64 arrays.

Tensors are immutable once produced by an op; backward() walks the graph
and accumulates into .grad buffers of requires_grad tensors. Graphs are
built eagerly per forward pass and discarded afterwards.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class Tensor:
    """A float64 array node in a dynamically built computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- graph bookkeeping -------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad tensor in the graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if not self._parents and self._backward is None:
            raise ValueError("backward called on a tensor with no computation graph")

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
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        # seed and intermediate grads live in a side table so only
        # requires_grad tensors keep a .grad buffer afterwards
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if parent.requires_grad or parent._parents or parent._backward:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # -- convenience arithmetic ---------------------------------------------

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(other))

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self):
        return float(self.data.reshape(-1)[0])


def _needs_graph(*tensors):
    return any(t.requires_grad or t._parents or t._backward is not None for t in tensors)


def _node(data, parents, backward, op):
    out = Tensor(data, _parents=tuple(parents), _op=op)
    if _needs_graph(*parents):
        out._backward = backward
    else:
        out._parents = ()
    return out


# -- primitive ops -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a row vector broadcast over a's rows."""
    if a.shape != b.shape:
        if not (a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]):
            raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        gb = g
        if b.shape != a.shape:
            gb = g.sum(axis=0)
        return ((a, g), (b, gb))

    return _node(a.data + b.data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return ((a, g * b.data), (b, g * a.data))

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return ((a, g * c),)

    return _node(a.data * c, (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")

    def backward(g):
        return ((a, g.T),)

    return _node(a.data.T, (a,), backward, "transpose")


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            slicer[axis] = slice(lo, hi)
            out.append((t, g[tuple(slicer)]))
        return out

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return ((a, ga),)

    return _node(a.data[start:stop], (a,), backward, "slice_rows")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return ((a, ga),)

    return _node(a.data[:, start:stop], (a,), backward, "slice_cols")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return ((a, g * mask),)

    return _node(a.data * mask, (a,), backward, "relu")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return ((a, g * out_data),)

    return _node(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")

    def backward(g):
        return ((a, g / a.data),)

    return _node(np.log(a.data), (a,), backward, "log")


def power(a: Tensor, p: float) -> Tensor:
    """a ** p with constant exponent; a must be nonnegative for fractional p."""
    p = float(p)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            base = p * np.power(a.data, p - 1.0)
        # subgradient 0 where the true derivative is undefined (e.g. 0^(p-1), p<1)
        base = np.where(np.isfinite(base), base, 0.0)
        return ((a, g * base),)

    return _node(np.power(a.data, p), (a,), backward, "power")


def tsum(a: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            return ((a, np.full_like(a.data, float(g))),)
        return ((a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()),)

    return _node(a.data.sum(axis=axis), (a,), backward, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((a, out_data * (g - dot)),)

    return _node(out_data, (a,), backward, "softmax")


def layer_norm(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def backward(g):
        n = a.shape[-1]
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return ((a, inv * (g - gm - xhat * gxm)),)

    return _node(xhat, (a,), backward, "layer_norm")


def l2_normalize(a: Tensor, axis=-1) -> Tensor:
    norms = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True))
    if np.any(norms == 0):
        raise DomainError("l2_normalize of an all-zero vector")
    out_data = a.data / norms

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((a, (g - out_data * dot) / norms),)

    return _node(out_data, (a,), backward, "l2_normalize")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of two 1-D vectors, or of each row of a matrix a against vector b."""
    if b.data.ndim != 1:
        raise ShapeError(f"cosine_similarity: second argument must be a vector, got {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cosine_similarity: incompatible shapes {a.shape} and {b.shape}")
    an = l2_normalize(a, axis=-1)
    bn = l2_normalize(b, axis=-1)
    if a.data.ndim == 1:
        return tsum(mul(an, bn))
    return tsum(mul(an, _broadcast_row(bn, a.shape[0])), axis=1)


def _broadcast_row(v: Tensor, rows: int) -> Tensor:
    def backward(g):
        return ((v, g.sum(axis=0)),)

    return _node(np.broadcast_to(v.data, (rows, v.shape[0])).copy(), (v,), backward, "broadcast_row")


def stack_rows(tensors) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    tensors = list(tensors)

    def backward(g):
        return [(t, g[i]) for i, t in enumerate(tensors)]

    return _node(np.stack([t.data for t in tensors]), tensors, backward, "stack_rows")


# -- gradient checking --------------------------------------------------------


def finite_difference_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between backward() gradients of f and central differences.

    f takes no arguments and must recompute the scalar loss from the current
    values of `params` (a list of requires_grad Tensors) each time it is called.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise ValueError("non-finite loss")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ValueError("non-finite loss during finite differencing")
            num = (hi - lo) / (2.0 * eps)
            denom = max(1e-12, abs(an_flat[i]) + abs(num))
            worst = max(worst, abs(an_flat[i] - num) / denom)
    return worst

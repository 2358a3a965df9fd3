"""A small dynamic reverse-mode differentiation tape over dense numpy arrays.

Every operation returns a :class:`Tensor` holding its primal value and a
closure mapping the output adjoint to the adjoints of its inputs.
:meth:`Tensor.backward` replays the recorded graph in reverse topological
order, visiting each node once.  Only the handful of operations the
tokenizer needs are provided.
"""
from __future__ import annotations

import numpy as np

from ._segment import segment_sum as _segsum
from .kernels import KernelSpec, kernel_eval, kernel_grad
from .resample import bilinear_matrix


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None) -> int:
        """Accumulate adjoints into every reachable leaf.  Returns nodes visited."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, gp in zip(node._parents, node._backward(g)):
                if gp is None or not p.requires_grad:
                    continue
                k = id(p)
                grads[k] = gp if k not in grads else grads[k] + gp
        return len(order)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _node(val, parents, backward):
    parents = tuple(parents)
    req = any(p.requires_grad for p in parents)
    return Tensor(val, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the adjoint passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


# --------------------------------------------------------------------------
# reductions and shape


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def index(a, idx) -> Tensor:
    """Basic (slice) indexing."""
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.value)
        out[idx] = g
        return (out,)

    return _node(a.value[idx], (a,), back)


def stack(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return _node(
        np.stack([t.value for t in ts], axis=axis),
        ts,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))),
    )


def gather_rows(a, idx) -> Tensor:
    """``a[idx]`` along axis 0 with integer ``idx``; adjoint scatters back."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    n = a.shape[0]
    return _node(a.value[idx], (a,), lambda g: (_segsum(g.reshape((-1,) + a.shape[1:]), idx.ravel(), n),))


def segment_sum(a, ids, n: int) -> Tensor:
    """Row sums of ``a`` into ``n`` buckets."""
    a = as_tensor(a)
    ids = np.asarray(ids)
    return _node(_segsum(a.value, ids, n), (a,), lambda g: (g[ids],))


# --------------------------------------------------------------------------
# linear algebra / vision ops


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; ``weight`` is ``(out, in)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    parents = [x, weight]
    out = x.value @ weight.value.T
    if bias is not None:
        bias = as_tensor(bias)
        parents.append(bias)
        out = out + bias.value

    def back(g):
        gx = g @ weight.value
        gw = g.reshape(-1, g.shape[-1]).T @ x.value.reshape(-1, x.shape[-1])
        res = [gx, gw]
        if bias is not None:
            res.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return res

    return _node(out, parents, back)


def pad_edge(x, pad: int) -> Tensor:
    """Replicate-pad the two spatial axes of an ``(h, w, c)`` tensor."""
    x = as_tensor(x)
    if pad == 0:
        return x
    h, w = x.shape[:2]
    rows = np.clip(np.arange(-pad, h + pad), 0, h - 1)
    cols = np.clip(np.arange(-pad, w + pad), 0, w - 1)

    def back(g):
        gr = _segsum(g, rows, h)  # (h, W', c)
        gr = np.moveaxis(gr, 1, 0)
        gc = _segsum(gr, cols, w)
        return (np.moveaxis(gc, 0, 1),)

    return _node(x.value[rows][:, cols], (x,), back)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Valid cross-correlation of ``(h, w, cin)`` with ``(cout, cin, k, k)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    cout, cin, k, _ = weight.shape
    h, w = x.shape[:2]
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.value, (k, k), axis=(0, 1))
    win = win[: (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]  # (ho, wo, cin, k, k)
    out = np.einsum("hwcij,ocij->hwo", win, weight.value, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        parents.append(bias)
        out = out + bias.value

    def back(g):
        gw = np.einsum("hwcij,hwo->ocij", win, g, optimize=True)
        gwin = np.einsum("hwo,ocij->hwcij", g, weight.value, optimize=True)
        gx = np.zeros_like(x.value)
        for i in range(k):
            for j in range(k):
                gx[i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += gwin[..., i, j]
        res = [gx, gw]
        if bias is not None:
            res.append(g.sum(axis=(0, 1)))
        return res

    return _node(out, parents, back)


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of an ``(h, w, c)`` tensor (half-pixel centres)."""
    x = as_tensor(x)
    r = bilinear_matrix(x.shape[0], out_h)
    c = bilinear_matrix(x.shape[1], out_w)
    out = np.einsum("ai,ijk,bj->abk", r, x.value, c)
    return _node(out, (x,), lambda g: (np.einsum("ai,abk,bj->ijk", r, g, c),))


def kernel(spec: KernelSpec, a, b, sigma=None) -> Tensor:
    """Row-wise kernel scores; ``sigma`` may itself be a tensor (Gaussian only)."""
    a, b = as_tensor(a), as_tensor(b)
    parents = [a, b]
    s = None
    if sigma is not None:
        sigma = as_tensor(sigma)
        parents.append(sigma)
        s = float(sigma.value)
    out = kernel_eval(spec, a.value, b.value, sigma=s)

    def back(g):
        ga, gb, gs = kernel_grad(spec, a.value, b.value, sigma=s)
        res = [g[..., None] * ga, g[..., None] * gb]
        if sigma is not None:
            res.append(np.sum(g * gs).reshape(sigma.shape))
        return res

    return _node(out, parents, back)

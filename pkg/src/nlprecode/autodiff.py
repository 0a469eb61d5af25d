"""Tape-based reverse-mode differentiation over dense real numpy arrays.

A :class:`Graph` is an append-only tape. Leaves are registered with
:meth:`Graph.leaf`; every operation on graph-connected tensors appends one
node holding a closure that maps the output cotangent to the parents'
cotangents. Tensors built only from constants are detached and record
nothing. Graphs are independent objects, so separate training loops can run
on separate threads without sharing state.

Complex quantities are carried as separate real and imaginary tensors.
"""

import math

import numpy as np

from . import kernels
from .errors import ConfigurationError, ContractError, DimensionError

_LN2 = math.log(2.0)
# im2col buffers up to this size are kept for the backward pass
_KEEP_COLS_BYTES = 256 * 2**20


class _Node:
    __slots__ = ("tag", "parents", "vjp")

    def __init__(self, tag, parents, vjp):
        self.tag = tag
        self.parents = parents
        self.vjp = vjp


class Graph:
    """Append-only tape of differentiable operations."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes = []

    def leaf(self, data):
        """Register ``data`` as a differentiable input and return its tensor."""
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        return Tensor(data, self, self._append("leaf", (), None))

    def _append(self, tag, parents, vjp):
        self.nodes.append(_Node(tag, parents, vjp))
        return len(self.nodes) - 1

    def backward(self, root):
        """Reverse sweep from a scalar ``root``.

        Returns a dict mapping node id to gradient array, with an entry for
        exactly the nodes reachable from ``root``.
        """
        if root.graph is not self or root.node is None:
            raise ContractError("backward root is not on this graph")
        if root.data.size != 1:
            raise ContractError(f"backward root must be scalar, got shape {root.shape}")
        grads = {root.node: np.ones_like(root.data)}
        for nid in range(root.node, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.vjp is None:
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return grads


class Tensor:
    """A real array, optionally attached to a :class:`Graph` node."""

    __slots__ = ("data", "graph", "node")
    __array_ufunc__ = None

    def __init__(self, data, graph=None, node=None):
        self.data = np.asarray(data)
        self.graph = graph
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        return Tensor(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        where = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{where})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _lift(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _lift_pair(a, b):
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    if not isinstance(b, Tensor):
        b = _lift(b, a)
    return a, b


def _record(tag, data, inputs, vjp):
    graph = None
    for t in inputs:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ContractError("operands belong to different graphs")
            graph = t.graph
    if graph is None:
        return Tensor(data)
    parents = tuple(t.node if t.graph is graph else None for t in inputs)
    return Tensor(data, graph, graph._append(tag, parents, vjp))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise -----------------------------------------------------------------


def add(a, b):
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _record(
        "add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b):
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _record(
        "sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b):
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)
    x, y = a.data, b.data
    return _record(
        "mul",
        x * y,
        (a, b),
        lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
    )


def div(a, b):
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)
    x, y = a.data, b.data
    out = x / y

    def vjp(g):
        gx = g / y
        return _unbroadcast(gx, x.shape), _unbroadcast(-gx * out, y.shape)

    return _record("div", out, (a, b), vjp)


def neg(a):
    a = _lift(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def square(a):
    a = _lift(a)
    x = a.data
    return _record("square", x * x, (a,), lambda g: (2.0 * g * x,))


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def log2(a):
    a = _lift(a)
    x = a.data
    return _record("log2", np.log2(x), (a,), lambda g: (g / (x * _LN2),))


def leaky_relu(a, slope=0.01):
    a = _lift(a)
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope).astype(a.dtype)
    return _record("leaky_relu", a.data * scale, (a,), lambda g: (g * scale,))


# reductions and shape ops ----------------------------------------------------


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = _lift(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape):
    a = _lift(a)
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1, ax2):
    a = _lift(a)
    return _record(
        "swapaxes", np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),)
    )


def getitem(a, index):
    a = _lift(a)
    shape, dtype = a.shape, a.dtype

    items = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in items)

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        return (full,)

    return _record("getitem", a.data[index], (a,), vjp)


def matmul(a, b):
    """Matrix product with numpy batch semantics on leading dimensions."""
    a, b = _lift_pair(a, b)
    x, y = a.data, b.data
    if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {x.shape} @ {y.shape}")

    def vjp(g):
        gx = g @ np.swapaxes(y, -1, -2)
        gy = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

    return _record("matmul", x @ y, (a, b), vjp)


# network layers --------------------------------------------------------------


def conv2d_circular(x, kernels_, bias):
    """Cyclic cross-correlation over both spatial axes, plus bias.

    Activations are channels-last: ``x`` is (B, M, K, Cin) and the result
    is (B, M, K, Cout). ``kernels_`` is (Cout, Cin, kh, kw) with odd kh, kw
    and ``bias`` is (Cout,).
    """
    x, kernels_, bias = _lift(x), _lift(kernels_), _lift(bias)
    if x.ndim != 4 or kernels_.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernels, got {x.shape}, {kernels_.shape}")
    cout, cin, kh, kw = kernels_.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {kh}x{kw}")
    B, M, K, c_in = x.shape
    if c_in != cin or bias.shape != (cout,):
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape}, kernels {kernels_.shape}, bias {bias.shape}"
        )
    xd = np.ascontiguousarray(x.data)
    # rows of wmat follow the (kh, kw, Cin) patch layout of im2col
    wmat = np.ascontiguousarray(kernels_.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout))
    cols = kernels.im2col(xd, kh, kw).reshape(B * M * K, -1)
    out = cols @ wmat
    out += bias.data
    out = out.reshape(B, M, K, cout)
    keep = cols if cols.nbytes <= _KEEP_COLS_BYTES else None
    del cols

    def vjp(g):
        gy = np.ascontiguousarray(g).reshape(-1, cout)
        patches = keep if keep is not None else kernels.im2col(xd, kh, kw).reshape(B * M * K, -1)
        gw = (patches.T @ gy).reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1)
        gb = gy.sum(axis=0)
        gcols = (gy @ wmat.T).reshape(B, M, K, kh, kw, cin)
        return kernels.col2im(gcols), np.ascontiguousarray(gw), gb

    return _record("conv2d_circular", out, (x, kernels_, bias), vjp)


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels, dtype=np.float64, momentum=0.1, eps=1e-5):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma, beta, state, train):
    """Per-channel normalization of a channels-last (B, M, K, C) tensor.

    In train mode the batch statistics over (B, M, K) are used and the
    running statistics in ``state`` are updated in place; in eval mode the
    running statistics are used.
    """
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[3],) or beta.shape != (x.shape[3],):
        raise DimensionError(f"batchnorm shape mismatch: {x.shape}, {gamma.shape}, {beta.shape}")
    xd = x.data
    gd = gamma.data
    axes = (0, 1, 2)
    if train:
        if xd.shape[0] < 2:
            raise ConfigurationError("batchnorm in train mode needs batch size >= 2")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var).astype(state.running_var.dtype)
    else:
        mu, var = state.running_mean, state.running_var
    invstd = (1.0 / np.sqrt(var + state.eps)).astype(xd.dtype)
    xhat = (xd - mu.astype(xd.dtype)) * invstd
    out = gd * xhat + beta.data
    n = xd.shape[0] * xd.shape[1] * xd.shape[2]

    def vjp(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        dxhat = g * gd
        if not train:
            return dxhat * invstd, ggamma, gbeta
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
        gx = (invstd / n) * (n * dxhat - s1 - xhat * s2)
        return gx, ggamma, gbeta

    return _record("batchnorm", out, (x, gamma, beta), vjp)

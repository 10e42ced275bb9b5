"""Reverse-mode automatic differentiation over dense numpy tensors.

Define-by-run tape: every operation on a `Tensor` that (transitively) touches
a ``requires_grad`` leaf records a graph node holding the inputs and a
backward closure.  ``backward``/``gradients`` then walk the recorded graph
once, in reverse topological order, accumulating gradients.

float64 is the reference precision (all oracle tests run in it); float32 is
supported for training.  Binary ops require matching dtypes so a float32
model never silently upcasts.
"""

import contextlib

import numpy as np

from . import _kernels


class GradMode:
    """Process-wide switch; `no_grad()` disables graph recording."""

    enabled = True


@contextlib.contextmanager
def no_grad():
    prev = GradMode.enabled
    GradMode.enabled = False
    try:
        yield
    finally:
        GradMode.enabled = prev


class Node:
    """One recorded operation: its input tensors and the backward closure."""

    __slots__ = ("inputs", "backward_fn", "name")

    def __init__(self, inputs, backward_fn, name):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name


class Tensor:
    """Dense n-d array with optional gradient recording."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def moveaxis(self, src, dst):
        return moveaxis(self, src, dst)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float64, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_dtypes(a, b):
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")


def _make(out_data, inputs, backward_fn, name):
    requires = GradMode.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out.node = Node(inputs, backward_fn, name)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic -------------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _as_tensor(b, a)
    _check_dtypes(a, b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bwd, "add")


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = _as_tensor(b, a)
    _check_dtypes(a, b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(out, (a, b), bwd, "mul")


def power(a, p):
    p = float(p)
    ad = a.data
    out = ad**p

    def bwd(g):
        return (g * p * ad ** (p - 1.0),)

    return _make(out, (a,), bwd, "power")


def matmul(a, b):
    _check_dtypes(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul requires rank >= 2 on both sides")
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), bwd, "matmul")


# -- shape ------------------------------------------------------------------


def reshape(a, shape):
    old = a.data.shape
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return _make(out, (a,), bwd, "reshape")


def moveaxis(a, src, dst):
    out = np.moveaxis(a.data, src, dst)

    def bwd(g):
        return (np.moveaxis(g, dst, src),)

    return _make(out, (a,), bwd, "moveaxis")


def getitem(a, idx):
    out = a.data[idx]
    shape = a.data.shape
    dtype = a.data.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bwd, "getitem")


def concat(tensors, axis=0):
    tensors = list(tensors)
    for t in tensors[1:]:
        _check_dtypes(tensors[0], t)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd, "concat")


# -- reductions ---------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def reduce_sum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g):
        return (_expand_reduced(g, shape, axis, keepdims),)

    return _make(out, (a,), bwd, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    n = a.data.size / out.size

    def bwd(g):
        return (_expand_reduced(g, shape, axis, keepdims) / n,)

    return _make(out, (a,), bwd, "mean")


# -- elementwise nonlinear ----------------------------------------------------


def exp(a):
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _make(out, (a,), bwd, "exp")


def log(a):
    ad = a.data
    out = np.log(ad)

    def bwd(g):
        return (g / ad,)

    return _make(out, (a,), bwd, "log")


def sqrt(a):
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), bwd, "sqrt")


def tanh(a):
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bwd, "tanh")


def sigmoid(a):
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ex = np.exp(ad[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), bwd, "sigmoid")


def relu(a):
    # subgradient 0 at the kink
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0).astype(a.data.dtype)

    def bwd(g):
        return (g * mask,)

    return _make(out, (a,), bwd, "relu")


def logsumexp(a):
    """log(sum(exp(a))) over all elements, max-subtracted for stability."""
    m = float(np.max(a.data))
    shifted = exp(add(a, -m))
    return add(log(reduce_sum(shifted)), m)


# -- fused kernel ops ---------------------------------------------------------


def _to_rows(data, axis):
    """Move `axis` last and flatten to 2-d contiguous rows."""
    moved = np.moveaxis(data, axis, -1)
    return np.ascontiguousarray(moved.reshape(-1, moved.shape[-1])), moved.shape


def _from_rows(rows, moved_shape, axis):
    return np.moveaxis(rows.reshape(moved_shape), -1, axis)


def softmax(a, axis=-1):
    rows, moved_shape = _to_rows(a.data, axis)
    y_rows = _kernels.softmax_forward(rows)
    out = _from_rows(y_rows, moved_shape, axis)

    def bwd(g):
        g_rows, _ = _to_rows(g, axis)
        dx_rows = _kernels.softmax_backward(y_rows, np.ascontiguousarray(g_rows))
        return (_from_rows(dx_rows, moved_shape, axis),)

    return _make(out, (a,), bwd, "softmax")


def layer_norm(a, gamma, beta, axis=-1, eps=1e-5):
    """Per-slice normalization along `axis`, then elementwise affine."""
    if gamma.data.shape != (a.data.shape[axis],) or beta.data.shape != (a.data.shape[axis],):
        raise ValueError("layer_norm affine parameters must match the normalized extent")
    rows, moved_shape = _to_rows(a.data, axis)
    y_rows, mean, rstd = _kernels.layernorm_forward(rows, gamma.data, beta.data, eps)
    out = _from_rows(y_rows, moved_shape, axis)

    def bwd(g):
        g_rows, _ = _to_rows(g, axis)
        dx_rows, dgamma, dbeta = _kernels.layernorm_backward(
            rows, gamma.data, mean, rstd, np.ascontiguousarray(g_rows)
        )
        return _from_rows(dx_rows, moved_shape, axis), dgamma, dbeta

    return _make(out, (a, gamma, beta), bwd, "layer_norm")


def lstm(x, wx, wh, b):
    """Gated recurrent sequence over x [T, B, I]; returns hidden states [T, B, H].

    Gate layout (input, forget, cell, output); zero initial state; hidden
    state at step t depends only on inputs at steps <= t.
    """
    if x.data.ndim != 3:
        raise ValueError("lstm input must be [T, B, I]")
    if x.data.shape[0] == 0:
        raise ValueError("lstm needs time extent >= 1")
    xd = np.ascontiguousarray(x.data)
    h, c, gates = _kernels.lstm_forward(xd, wx.data, wh.data, b.data)

    def bwd(g):
        dx, dwx, dwh, db = _kernels.lstm_backward(
            xd, wx.data, wh.data, h, c, gates, np.ascontiguousarray(g)
        )
        return dx, dwx, dwh, db

    return _make(h, (x, wx, wh, b), bwd, "lstm")


# -- the tape walk ------------------------------------------------------------


def _topo_order(root):
    """Iterative post-order over the recorded graph; each node exactly once."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for parent in t.node.inputs:
            if parent.node is not None and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate `.grad` on every requires_grad leaf reachable from `loss`.

    `loss` must be scalar (size 1).
    """
    if loss.size != 1:
        raise ValueError("backward expects a scalar loss")
    grads = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        input_grads = t.node.backward_fn(g)
        for parent, pg in zip(t.node.inputs, input_grads):
            if not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
                tensors[pid] = parent
    for pid, g in grads.items():
        t = tensors[pid]
        t.grad = g if t.grad is None else t.grad + g


def gradients(loss, params):
    """Gradients of a scalar `loss` w.r.t. a name->Tensor mapping.

    Parameters not connected to the loss get zero gradients and are listed in
    the returned `disconnected` set.
    """
    saved = {name: p.grad for name, p in params.items()}
    for p in params.values():
        p.grad = None
    backward(loss)
    out = {}
    disconnected = set()
    for name, p in params.items():
        if p.grad is None:
            out[name] = np.zeros_like(p.data)
            disconnected.add(name)
        else:
            out[name] = p.grad
        p.grad = saved[name]
    return out, disconnected


def grad_check(f, x, eps=1e-5):
    """Max relative error between the tape gradient of `f` at `x` and central
    finite differences.

    `f` maps a Tensor to a scalar Tensor.  The error is
    |g_tape - g_fd| / max(1e-8, |g_tape| + |g_fd|), maximized over coordinates.
    """
    leaf = Tensor(np.array(x.data, dtype=np.float64), requires_grad=True)
    out = f(leaf)
    backward(out)
    g_tape = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    g_fd = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(leaf).data)
            flat[i] = orig - eps
            lo = float(f(leaf).data)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(1e-8, np.abs(g_tape) + np.abs(g_fd))
    return float(np.max(np.abs(g_tape - g_fd) / denom))

"""A small reverse-mode autodiff engine over numpy arrays.

Only what the network needs is here.  Binary elementwise ops require equal
shapes (a Python scalar is the one exception); a few private helpers do
broadcasting internally where a block needs it (bias add, per-head scale,
frequency masks).
"""

import threading
from contextlib import contextmanager

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ContractError(ValueError):
    """Raised when an op's shape or argument contract is violated."""


_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- autodiff ---------------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                g = np.asarray(g, dtype=node.dtype)
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a Python scalar")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_node(data, parents, backward, op):
    """Wrap ``data`` as the output of an op, recording the graph when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.op = op
    out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (the reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_same(a, b, op):
    if a.shape != b.shape:
        for axis, (m, n) in enumerate(zip(a.shape, b.shape)):
            if m != n:
                raise ContractError(f"{op}: shape mismatch on axis {axis} ({a.shape} vs {b.shape})")
        raise ContractError(f"{op}: rank mismatch ({a.shape} vs {b.shape})")


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer))


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    if _is_scalar(b):
        return make_node(a.data + a.dtype.type(b), (a,), lambda g: (g,), "add_scalar")
    _check_same(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if _is_scalar(b):
        return make_node(a.data - a.dtype.type(b), (a,), lambda g: (g,), "sub_scalar")
    _check_same(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a):
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    if _is_scalar(b):
        return scale(a, b)
    _check_same(a, b, "mul")
    return make_node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, s):
    s = a.dtype.type(s)
    return make_node(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(a):
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """tanh approximation of GELU."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    inner = c * (x + k * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def backward(g):
        dinner = c * (1 + 3 * k * x**2)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return make_node(out, (a,), backward, "gelu")


def sigmoid(a):
    with np.errstate(over="ignore"):
        out = (1.0 / (1.0 + np.exp(-a.data))).astype(a.dtype)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def sqrt(a):
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def reciprocal(a):
    out = 1.0 / a.data
    return make_node(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def square(a):
    return make_node(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def hypot(a, b):
    """Complex modulus sqrt(a^2 + b^2); subgradient 0 where both vanish."""
    _check_same(a, b, "hypot")
    out = np.hypot(a.data, b.data)

    def backward(g):
        safe = np.where(out > 0, out, 1)
        w = np.where(out > 0, g / safe, 0)
        return w * a.data, w * b.data

    return make_node(out, (a, b), backward, "hypot")


def bmul(a, b):
    """Broadcasting multiply; internal use only (masks, gates, scales)."""
    out = a.data * b.data

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "bmul")


def badd(a, b):
    """Broadcasting add; internal use only (bias terms)."""
    out = a.data + b.data
    return make_node(
        out, (a, b), lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "badd"
    )


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return make_node(np.asarray(out, dtype=a.dtype), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    shape = tuple(shape)
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=()):
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def index(a, idx):
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        if _needs_add_at(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_node(np.array(out, copy=True), (a,), backward, "index")


def _needs_add_at(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def split(a, sections, axis=1):
    """Split into consecutive chunks of the given sizes along ``axis``."""
    bounds = np.cumsum([0] + list(sections))
    if bounds[-1] != a.shape[axis]:
        raise ContractError(f"split sizes {sections} do not cover axis {axis} of extent {a.shape[axis]}")
    outs = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(int(lo), int(hi))
        outs.append(index(a, tuple(sl)))
    return outs


def concat(tensors, axis=1):
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise ContractError(f"concat: rank mismatch ({ref} vs {t.shape})")
        for i, (m, n) in enumerate(zip(ref, t.shape)):
            if i != ax and m != n:
                raise ContractError(f"concat: shape mismatch on axis {i} ({ref} vs {t.shape})")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(int(lo), int(hi))
            grads.append(g[tuple(sl)])
        return grads

    return make_node(out, tensors, backward, "concat")


# ---------------------------------------------------------------------------
# linear algebra and normalisation
# ---------------------------------------------------------------------------


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(
            f"matmul: inner extent mismatch ({a.shape[-1]} vs {b.shape[-2]})"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ContractError(f"matmul: batch extents not compatible ({a.shape} vs {b.shape})") from exc

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "matmul")


def softmax(a, axis=-1):
    if not -a.ndim <= axis < a.ndim:
        raise ContractError(f"softmax: axis {axis} out of range for rank {a.ndim}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), backward, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the channel axis of an (N, C, H, W) tensor."""
    if eps < 0:
        raise ContractError("layer_norm: eps must be non-negative")
    if x.ndim != 4:
        raise ContractError(f"layer_norm expects (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ContractError(
            f"layer_norm: channel axis 1 has {c} channels but gamma/beta are {gamma.shape}/{beta.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    gm = gamma.data[None, :, None, None]
    out = xhat * gm + beta.data[None, :, None, None]

    def backward(g):
        gx = ggamma = gbeta = None
        if x.requires_grad:
            gh = g * gm
            gx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        if gamma.requires_grad:
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3))
        return gx, ggamma, gbeta

    return make_node(out.astype(x.dtype), (x, gamma, beta), backward, "layer_norm")


def l2_normalize(a, axis=-1, eps=1e-12):
    """x / max(||x||, eps) along ``axis``."""
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    clipped = norm < eps
    denom = np.where(clipped, a.dtype.type(eps), norm)
    out = a.data / denom

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(clipped, g / denom, (g - out * proj) / denom),)

    return make_node(out, (a,), backward, "l2_normalize")

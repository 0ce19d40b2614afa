"""Dense float64 kernels with reverse-mode differentiation.

:class:`Tensor` wraps a numpy array and records the operations applied to it
so that :func:`grad` can push derivatives back to the leaves held in a
:class:`ParamStore`. Recording is skipped inside :func:`no_grad` and for
values that do not depend on a trainable leaf, so the same code paths serve
training and inference.
"""

import contextlib
import math

import numpy as np

from .errors import DimensionError, NumericError, StateError, UsageError
from .rng import truncated_normal

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    """Array node in a recorded computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    # -- graph plumbing ---------------------------------------------------

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=np.float64)}
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
                gp = _unbroadcast(gp, p.data.shape)
                key = id(p)
                grads[key] = gp if key not in grads else grads[key] + gp

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        return _node(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        return _node(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return _node(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return _node(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        a = self.data
        return _node(a**p, (self,), lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        shape = self.data.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return _node(self.data[idx], (self,), back)

    # -- reductions and shape ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return _node(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.data.shape
        return _node(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a1, a2):
        return _node(self.data.swapaxes(a1, a2), (self,), lambda g: (g.swapaxes(a1, a2),))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def expand(self, axis):
        return _node(np.expand_dims(self.data, axis), (self,), lambda g: (g.squeeze(axis),))

    def flip(self, axis):
        return _node(np.flip(self.data, axis), (self,), lambda g: (np.flip(g, axis),))

    # -- unary functions --------------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _node(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.data
        return _node(np.log(a), (self,), lambda g: (g / a,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return _node(out, (self,), lambda g: (g * 0.5 / out,))

    def gelu(self):
        # tanh approximation; smooth, so finite-difference checks stay tight
        x = self.data
        c = math.sqrt(2.0 / math.pi)
        inner = c * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def back(g):
            dinner = c * (1.0 + 3 * 0.044715 * x**2)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

        return _node(out, (self,), back)

    def logsumexp(self, axis=-1, keepdims=False):
        x = self.data
        m = x.max(axis=axis, keepdims=True)
        s = np.exp(x - m)
        tot = s.sum(axis=axis, keepdims=True)
        out = m + np.log(tot)
        w = s / tot
        res = out if keepdims else out.squeeze(axis)

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (g * w,)

        return _node(res, (self,), back)

    def softmax(self, axis=-1):
        x = self.data
        e = np.exp(x - x.max(axis=axis, keepdims=True))
        p = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

        return _node(p, (self,), back)

    def log_softmax(self, axis=-1):
        return self - self.logsumexp(axis=axis, keepdims=True)


def _node(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(data, tuple(tensors), back)


def symmetric_mean(x, axis):
    """Mean along ``axis`` whose value does not depend on the order of the entries.

    Entries are summed in sorted order, so any permutation along ``axis``
    gives a bitwise identical result; the gradient is that of the mean.
    """
    x = as_tensor(x)
    n = x.shape[axis]
    out = np.sort(x.data, axis=axis).sum(axis=axis) / n
    shape = x.shape

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape),)

    return _node(out, (x,), back)


def _check_finite(t, what):
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"{what} produced non-finite values")
    return t


# -- exported kernels ---------------------------------------------------------


def matmul(A, B):
    """Matrix product with numpy broadcasting over leading axes."""
    A, B = as_tensor(A), as_tensor(B)
    if A.ndim < 2 or B.ndim < 2 or A.shape[-1] != B.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {A.shape} @ {B.shape}")
    a, b = A.data, B.data

    def back(g):
        return (g @ b.swapaxes(-1, -2), a.swapaxes(-1, -2) @ g)

    return _node(a @ b, (A, B), back)


def softmax(x, temperature=1.0, axis=-1):
    """Stable softmax of ``x / temperature`` along ``axis``."""
    if not temperature > 0:
        raise UsageError("temperature must be positive")
    x = as_tensor(x)
    if x.data.size == 0 or x.shape[axis] == 0:
        raise DimensionError("softmax of an empty input")
    return _check_finite((x * (1.0 / temperature)).softmax(axis=axis), "softmax")


def attention(query, keys, values):
    """Single-head scaled dot-product attention, one output row per query row."""
    q, k, v = as_tensor(query), as_tensor(keys), as_tensor(values)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    scores = matmul(q, k.T) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(scores.softmax(axis=-1), v)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise each row to zero mean and unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError("layer_norm gain/bias must match the row width")
    if not eps > 0:
        raise UsageError("eps must be positive")
    xc = x - x.mean(axis=-1, keepdims=True)
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gain + bias


def transformer_block(x, params, prefix, eps=1e-5):
    """Pre-norm encoder block over the token axis (-2): attention, then MLP.

    Weights are read from ``params`` under ``prefix``: ``ln1.g``, ``ln1.b``,
    ``attn.q``, ``attn.k``, ``attn.v``, ``attn.o``, ``ln2.g``, ``ln2.b``,
    ``mlp.w1``, ``mlp.b1``, ``mlp.w2``, ``mlp.b2``.
    """
    p = params.prefixed(prefix)
    h = layer_norm(x, p["ln1.g"], p["ln1.b"], eps)
    a = attention(matmul(h, p["attn.q"]), matmul(h, p["attn.k"]), matmul(h, p["attn.v"]))
    x = x + matmul(a, p["attn.o"])
    h = layer_norm(x, p["ln2.g"], p["ln2.b"], eps)
    h = (matmul(h, p["mlp.w1"]) + p["mlp.b1"]).gelu()
    return x + matmul(h, p["mlp.w2"]) + p["mlp.b2"]


BLOCK_PARAM_NAMES = (
    "ln1.g", "ln1.b", "attn.q", "attn.k", "attn.v", "attn.o",
    "ln2.g", "ln2.b", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
)


def init_block(store, prefix, width, rng, std=0.02, hidden=None, trainable=True):
    """Add the weights of one :func:`transformer_block` to ``store``."""
    hidden = hidden or 2 * width
    shapes = {
        "attn.q": (width, width), "attn.k": (width, width),
        "attn.v": (width, width), "attn.o": (width, width),
        "mlp.w1": (width, hidden), "mlp.w2": (hidden, width),
    }
    for name in BLOCK_PARAM_NAMES:
        full = f"{prefix}.{name}"
        if name in shapes:
            value = truncated_normal(rng, shapes[name], std)
        elif name.endswith(".g"):
            value = np.ones(width)
        elif name == "mlp.b1":
            value = np.zeros(hidden)
        else:
            value = np.zeros(width)
        store.add(full, value, trainable=trainable)


class ParamStore:
    """Named float64 parameters, each trainable or frozen.

    Trainable parameters are leaves of the autodiff graph and carry a
    gradient slot of their own shape; frozen ones are plain constants, so no
    gradient can reach them and :meth:`sgd_step` never touches them.
    """

    def __init__(self):
        self._params = {}
        self._trainable = {}

    def add(self, name, value, trainable=True):
        if name in self._params:
            raise UsageError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"parameter {name!r} is not finite")
        self._params[name] = Tensor(value, requires_grad=trainable)
        self._trainable[name] = trainable
        return self._params[name]

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def prefixed(self, prefix):
        return _PrefixView(self._params, prefix)

    def is_trainable(self, name):
        return self._trainable[name]

    def names(self, trainable=None):
        return [n for n in self._params if trainable is None or self._trainable[n] == trainable]

    def groups(self):
        """Trainable parameter names grouped by their first dotted component."""
        out = {}
        for n in self.names(trainable=True):
            out.setdefault(n.split(".")[0], []).append(n)
        return out

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def sgd_step(self, lr):
        for name, t in self._params.items():
            if self._trainable[name] and t.grad is not None:
                t.data = t.data - lr * t.grad

    def arrays(self):
        return {n: t.data.copy() for n, t in self._params.items()}

    def set_array(self, name, value):
        t = self._params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != t.data.shape:
            raise DimensionError(f"{name}: shape {value.shape} != {t.data.shape}")
        t.data = value.copy()

    def copy(self):
        other = ParamStore()
        for n, t in self._params.items():
            other.add(n, t.data, trainable=self._trainable[n])
        return other


class _PrefixView:
    __slots__ = ("_params", "_prefix")

    def __init__(self, params, prefix):
        self._params = params
        self._prefix = prefix

    def __getitem__(self, key):
        full = f"{self._prefix}.{key}"
        if full not in self._params:
            raise StateError(f"parameter {full!r} is not initialised")
        return self._params[full]


def grad(loss, store):
    """Backpropagate scalar ``loss`` and leave d(loss)/d(p) in ``store[p].grad``.

    Every trainable parameter ends up with a gradient array (zeros when the
    loss does not depend on it). Returns ``{name: gradient}``.
    """
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise DimensionError("grad needs a scalar loss")
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    store.zero_grad()
    if loss.requires_grad:
        loss.backward()
    out = {}
    for name in store.names(trainable=True):
        t = store[name]
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        out[name] = t.grad
    return out

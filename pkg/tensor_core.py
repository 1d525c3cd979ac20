"""Dense float64 array kernel with tape-based reverse-mode differentiation and AdamW.

Every differentiable operation is a registered primitive: a forward function over
numpy arrays plus a vector-Jacobian product. Calling a primitive on plain arrays
just evaluates it; calling it with at least one ``Tensor`` records a node so that
``value_and_grad`` can walk the tape backwards.
"""
import logging
import math
import zlib
from collections import OrderedDict
from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from errors import ConfigurationError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

PRIMITIVES = {}

ADAMW_DEFAULTS = {"lr": 1e-4, "weight_decay": 0.01, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8}


class Tensor:
    """A traced array: the value plus the primitive call that produced it."""

    # numpy must hand mixed ndarray/Tensor arithmetic over to the Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None, op=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"


def value_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def is_traced(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def register_primitive(name, forward, vjp):
    if name in PRIMITIVES:
        raise ConfigurationError(f"primitive '{name}' registered twice")
    PRIMITIVES[name] = (forward, vjp)


def apply(name, *inputs, **params):
    forward, vjp = PRIMITIVES[name]
    values = [value_of(x) for x in inputs]
    out = np.asarray(forward(*values, **params), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(name)
    if not is_traced(*inputs):
        return out

    def backward(g):
        return vjp(g, out, *values, **params)

    return Tensor(out, parents=inputs, backward=backward, op=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _gelu(x):
    return 0.5 * x * (1.0 + special.erf(x / math.sqrt(2.0)))


def _gelu_vjp(g, out, x):
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return (g * (cdf + x * pdf),)


def _softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _softmax_vjp(g, out, x, axis=-1):
    return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)


def _transform(x, matrix, axis):
    # y[.., k, ..] = sum_l matrix[k, l] * x[.., l, ..]
    moved = np.moveaxis(x, axis, -1)
    return np.moveaxis(moved @ matrix.T, -1, axis)


def _sum(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims)


def _sum_vjp(g, out, x, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _mean(x, axis=None, keepdims=False):
    return np.mean(x, axis=axis, keepdims=keepdims)


def _mean_vjp(g, out, x, axis=None, keepdims=False):
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    (full,) = _sum_vjp(g, out, x, axis=axis, keepdims=keepdims)
    return (full / count,)


register_primitive("add", lambda a, b: a + b,
                   lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
register_primitive("sub", lambda a, b: a - b,
                   lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
register_primitive("mul", lambda a, b: a * b,
                   lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))
register_primitive("div", lambda a, b: a / b,
                   lambda g, out, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)))
register_primitive("neg", lambda a: -a, lambda g, out, a: (-g,))
register_primitive("square", lambda a: a * a, lambda g, out, a: (2.0 * a * g,))
register_primitive("log", np.log, lambda g, out, a: (g / a,))
register_primitive("matmul", np.matmul,
                   lambda g, out, a, b: (_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape),
                                         _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)))
register_primitive("gelu", _gelu, _gelu_vjp)
register_primitive("relu", lambda a: np.maximum(a, 0.0), lambda g, out, a: (g * (a > 0.0),))
register_primitive("sigmoid", special.expit, lambda g, out, a: (g * out * (1.0 - out),))
register_primitive("softmax", _softmax, _softmax_vjp)
register_primitive("transform", _transform,
                   lambda g, out, x, matrix, axis: (_transform(g, matrix.T, axis),))
register_primitive("sum", _sum, _sum_vjp)
register_primitive("mean", _mean, _mean_vjp)
register_primitive("reshape", lambda a, shape: np.reshape(a, shape),
                   lambda g, out, a, shape: (np.reshape(g, a.shape),))
register_primitive("transpose", lambda a, axes: np.transpose(a, axes),
                   lambda g, out, a, axes: (np.transpose(g, np.argsort(axes)),))
register_primitive("clip", lambda a, lo, hi: np.clip(a, lo, hi),
                   lambda g, out, a, lo, hi: (g * ((a >= lo) & (a <= hi)),))


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def div(a, b):
    return apply("div", a, b)


def neg(a):
    return apply("neg", a)


def square(a):
    return apply("square", a)


def log(a):
    return apply("log", a)


def matmul(a, b):
    return apply("matmul", a, b)


def gelu(a):
    return apply("gelu", a)


def relu(a):
    return apply("relu", a)


def sigmoid(a):
    return apply("sigmoid", a)


def softmax(a, axis=-1):
    return apply("softmax", a, axis=axis)


def transform(x, matrix, axis):
    """Apply a constant square matrix along one axis (DCT/IDCT carrier)."""
    return apply("transform", x, matrix=np.asarray(matrix, dtype=np.float64), axis=axis)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    return apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return apply("mean", a, axis=axis, keepdims=keepdims)


def reshape(a, shape):
    return apply("reshape", a, shape=tuple(shape))


def transpose(a, axes):
    return apply("transpose", a, axes=tuple(axes))


def clip(a, lo, hi):
    return apply("clip", a, lo=lo, hi=hi)


class ParameterSet(Mapping):
    """Ordered name -> array map. Values are ndarrays, or Tensors while tracing."""

    def __init__(self, items=()):
        pairs = list(items.items()) if isinstance(items, Mapping) else list(items)
        self._items = OrderedDict(pairs)
        if len(self._items) != len(pairs):
            raise ConfigurationError("parameter names must be unique")

    def __getitem__(self, name):
        return self._items[name]

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def shapes(self):
        return OrderedDict((name, tuple(value_of(v).shape)) for name, v in self._items.items())

    def count(self):
        return int(np.sum([value_of(v).size for v in self._items.values()]))

    def __repr__(self):
        return f"ParameterSet({len(self)} tensors, {self.count()} scalars)"


def _toposort(root):
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
        for parent in node.parents:
            if isinstance(parent, Tensor) and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _scalar(x):
    value = value_of(x)
    if value.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {value.shape}")
    return float(value.reshape(()))


def value_and_grad(loss_fn, params):
    leaves = OrderedDict((name, Tensor(np.array(value_of(v), copy=True))) for name, v in params.items())
    loss = loss_fn(ParameterSet(leaves))
    value = _scalar(loss)
    grads = {}
    if isinstance(loss, Tensor):
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_toposort(loss)):
            g = grads.get(id(node))
            if g is None or node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if not isinstance(parent, Tensor) or pg is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
    result = OrderedDict()
    for name, leaf in leaves.items():
        result[name] = np.array(grads.get(id(leaf), np.zeros_like(leaf.data)), dtype=np.float64)
    return value, result


def grad(loss_fn, params):
    return value_and_grad(loss_fn, params)[1]


def finite_diff_grad(loss_fn, params, h=1e-5, entries=None):
    """Central differences per scalar; ``entries`` limits the check to {name: flat indices}."""
    if h <= 0:
        raise ConfigurationError(f"finite difference step must be positive, got {h}")
    work = OrderedDict((name, np.array(value_of(v), dtype=np.float64, copy=True)) for name, v in params.items())
    result = OrderedDict()
    for name, value in work.items():
        if entries is not None and name not in entries:
            continue
        flat = value.reshape(-1)
        g = np.zeros(flat.size)
        indices = range(flat.size) if entries is None else entries[name]
        for i in indices:
            original = flat[i]
            flat[i] = original + h
            plus = _scalar(loss_fn(ParameterSet(work)))
            flat[i] = original - h
            minus = _scalar(loss_fn(ParameterSet(work)))
            flat[i] = original
            g[i] = (plus - minus) / (2.0 * h)
        result[name] = g.reshape(value.shape)
    return result


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    lr: float = ADAMW_DEFAULTS["lr"]
    weight_decay: float = ADAMW_DEFAULTS["weight_decay"]
    beta1: float = ADAMW_DEFAULTS["beta1"]
    beta2: float = ADAMW_DEFAULTS["beta2"]
    eps: float = ADAMW_DEFAULTS["eps"]
    extra: dict = field(default_factory=dict)


def init_optimizer(params, **hyper):
    unknown = set(hyper) - set(ADAMW_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown AdamW hyperparameters: {sorted(unknown)}")
    zeros = OrderedDict((name, np.zeros_like(value_of(v))) for name, v in params.items())
    return OptimizerState(m=zeros, v=OrderedDict((n, z.copy()) for n, z in zeros.items()), **hyper)


def adamw_step(params, grads, state, lr=None):
    """One decoupled-weight-decay Adam update. Returns new (params, state); inputs untouched."""
    lr = state.lr if lr is None else lr
    step = state.step + 1
    c1 = 1.0 - state.beta1 ** step
    c2 = 1.0 - state.beta2 ** step
    new_params, new_m, new_v = OrderedDict(), OrderedDict(), OrderedDict()
    for name, p in params.items():
        p = value_of(p)
        if name not in grads:
            raise ShapeError(f"no gradient for parameter '{name}'")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        decayed = p - lr * state.weight_decay * p
        new_params[name] = decayed - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name], new_v[name] = m, v
    return ParameterSet(new_params), replace(state, m=new_m, v=new_v, step=step)


def cosine_lr(step, total, base_lr, warmup=100):
    if total <= warmup:
        raise ConfigurationError(f"total steps ({total}) must exceed warm-up steps ({warmup})")
    if not 0 <= step <= total:
        raise ConfigurationError(f"step {step} outside [0, {total}]")
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / (total - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def substream(master_seed, name, *extra):
    """Independent deterministic Generator for a named consumer of randomness."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(key, *extra)))

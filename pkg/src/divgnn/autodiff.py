"""A small reverse-mode autodiff engine over dense numpy arrays.

Each :class:`Tensor` records the op that produced it and a closure mapping
the upstream gradient to one gradient per parent. :meth:`Tensor.backward`
walks the graph once in reverse topological order.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InputError, StateError

# Test hook: ops listed here get their parent gradients scaled by 1.5.
_CORRUPTED_OPS: set[str] = set()


@contextmanager
def corrupted_backward(*ops: str):
    """Deliberately break the backward pass of ``ops`` (negative-control tests)."""
    _CORRUPTED_OPS.update(ops)
    try:
        yield
    finally:
        _CORRUPTED_OPS.difference_update(ops)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_op", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 _op: str = "leaf", _parents: tuple = (), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._op = _op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self._op})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.value.size != 1:
                raise InputError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.value)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            if node._op in _CORRUPTED_OPS:
                parent_grads = [None if pg is None else 1.5 * pg for pg in parent_grads]
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

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

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, op, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, _op=op,
                  _parents=parents if needs else (), _backward=backward if needs else None)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value * b.value, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InputError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return _make(a.value @ b.value, "matmul", (a, b),
                 lambda g: (g @ b.value.T, a.value.T @ g))


def spmm(s, x) -> Tensor:
    """Product of a constant (dense or scipy sparse) matrix with a tensor."""
    x = as_tensor(x)
    if s.shape[1] != x.shape[0]:
        raise InputError(f"cannot multiply shapes {s.shape} and {x.shape}")
    st = s.T
    out = s @ x.value
    return _make(np.asarray(out), "spmm", (x,), lambda g: (np.asarray(st @ g),))


def linear(x, w, b=None) -> Tensor:
    """``x @ w`` plus an optional bias broadcast over rows."""
    out = matmul(x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise InputError(f"bias shape {b.shape} does not match output width {w.shape[1]}")
        out = add(out, b)
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), "relu", (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _make(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def identity(x) -> Tensor:
    return as_tensor(x)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {"relu": relu, "sigmoid": sigmoid, "identity": identity}


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, "sum", (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.value.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.value.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.value for x in xs], axis=axis), "concat", tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def segment_max(x, offsets: np.ndarray) -> Tensor:
    """Column-wise max over consecutive row segments starting at ``offsets``.

    Every segment must be non-empty; the gradient goes to the first maximiser.
    """
    x = as_tensor(x)
    offsets = np.asarray(offsets, dtype=np.int64)
    if len(offsets) and (np.any(np.diff(offsets) <= 0) or offsets[-1] >= x.shape[0]):
        raise InputError("segment_max needs non-empty segments")
    out = np.maximum.reduceat(x.value, offsets, axis=0)
    seg = np.repeat(np.arange(len(offsets)), np.diff(np.append(offsets, x.shape[0])))
    hit = x.value == out[seg]
    # keep only the first maximiser per (segment, column)
    first = np.zeros_like(hit)
    cols = np.arange(x.shape[1])
    for s, lo in enumerate(offsets):
        hi = offsets[s + 1] if s + 1 < len(offsets) else x.shape[0]
        rows = lo + np.argmax(hit[lo:hi], axis=0)
        first[rows, cols] = True

    def backward(g):
        return (np.where(first, g[seg], 0.0),)

    return _make(out, "segment_max", (x,), backward)


def standardize(x, eps: float = 1e-5) -> Tensor:
    """Row-wise ``(x - mean) / (std + eps)`` using the population std."""
    x = as_tensor(x)
    v = x.value
    n = v.shape[-1]
    c = v - v.mean(axis=-1, keepdims=True)
    s = np.sqrt((c * c).mean(axis=-1, keepdims=True))
    denom = s + eps
    y = c / denom

    def backward(g):
        gc = g / denom
        safe_s = np.where(s > 0, s, 1.0)
        coeff = np.where(s > 0, (g * c).sum(axis=-1, keepdims=True) / (denom ** 2 * n * safe_s), 0.0)
        gc = gc - coeff * c
        return (gc - gc.mean(axis=-1, keepdims=True),)

    return _make(y, "standardize", (x,), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of a ``(batch, classes)`` logit matrix."""
    logits = as_tensor(logits)
    z = logits.value
    if z.ndim == 1:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != z.shape[0]:
        raise InputError("one label is needed per logit row")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise InputError(f"class index out of range for {z.shape[1]} classes")
    if not np.all(np.isfinite(z)):
        raise InputError("logits must be finite")
    shift = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shift).sum(axis=1, keepdims=True))
    logp = shift - log_norm
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return ((g * d / z.shape[0]).reshape(logits.shape),)

    return _make(loss, "cross_entropy", (logits,), backward)


def l1_loss(pred, target) -> Tensor:
    """Mean absolute error."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.value - target
    return _make(np.abs(diff).mean(), "l1", (pred,), lambda g: (g * np.sign(diff) / diff.size,))


class ParamStore:
    """Named trainable tensors together with their Adam moment buffers."""

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise InputError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def num_scalars(self) -> int:
        return sum(t.value.size for t in self.params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self.params.items()}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def add_mlp(store: ParamStore, prefix: str, widths: Sequence[int], rng: np.random.Generator) -> list[tuple[Tensor, Tensor]]:
    """Register a bias-carrying MLP with layer widths ``widths[0] -> ... -> widths[-1]``."""
    layers = []
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        w = store.add(f"{prefix}.{i}.weight", glorot_uniform(rng, fi, fo))
        b = store.add(f"{prefix}.{i}.bias", np.zeros(fo))
        layers.append((w, b))
    return layers


def mlp_forward(x, layers: Sequence[tuple[Tensor, Tensor | None]], activation: str | Callable = "relu") -> Tensor:
    """Linear layers with ``activation`` between them; the last layer stays linear."""
    act = ACTIVATIONS[activation] if isinstance(activation, str) else activation
    x = as_tensor(x)
    for i, (w, b) in enumerate(layers):
        x = linear(x, w, b)
        if i < len(layers) - 1:
            x = act(x)
    return x


def adam_step(params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    missing = [n for n, t in params if t.grad is None]
    if missing:
        raise StateError(f"no gradient for parameters {missing[:3]}; run backward() first")
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params:
        g = p.grad
        m = params.m[name] = beta1 * params.m[name] + (1.0 - beta1) * g
        v = params.v[name] = beta2 * params.v[name] + (1.0 - beta2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def step_lr(initial_lr: float, epoch: int, halve_every: int) -> float:
    return initial_lr * 0.5 ** (epoch // halve_every)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    initial_lr: float = 0.0007
    lr_halve_every_epochs: int = 50
    epochs: int = 200
    seed: int = 0
    hidden_dim: int = 64
    conv_layers: int = 2

    def __post_init__(self):
        for name in ("batch_size", "lr_halve_every_epochs", "epochs", "hidden_dim", "conv_layers"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")
        if not self.initial_lr > 0:
            raise InputError("initial_lr must be positive")


def gradcheck_by_param(f: Callable[[], Tensor], params: ParamStore | Iterable[tuple[str, Tensor]],
                       eps: float = 1e-5, abs_floor: float = 1e-7) -> dict[str, float]:
    """Compare backward-pass gradients with central differences.

    Returns the max relative error per parameter. Coordinates whose absolute
    discrepancy is at most ``abs_floor`` count as exact.
    """
    items = list(params)
    for _, t in items:
        t.grad = None
    f().backward()
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value)) for n, t in items}
    for _, t in items:
        t.grad = None

    errors = {}
    for name, t in items:
        numeric = np.zeros_like(t.value)
        flat = t.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().value.item()
            flat[i] = orig - eps
            down = f().value.item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * eps)
        a = analytic[name]
        diff = np.abs(a - numeric)
        scale = np.maximum(np.abs(a), np.abs(numeric))
        rel = np.where(diff <= abs_floor, 0.0, diff / np.where(scale > 0, scale, 1.0))
        errors[name] = float(rel.max(initial=0.0))
    return errors


def finite_diff_gradcheck(f: Callable[[], Tensor], params, eps: float = 1e-5, abs_floor: float = 1e-7) -> float:
    errors = gradcheck_by_param(f, params, eps, abs_floor)
    return max(errors.values(), default=0.0)

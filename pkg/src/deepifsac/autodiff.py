"""Dense float64 tensors with dynamic, tape-based reverse-mode differentiation.

The engine is deliberately small: every op is a plain function that computes
its output with numpy and attaches a closure mapping the upstream gradient to
one gradient per parent. ``backward`` walks the recorded graph in reverse
topological order.

Elementwise ops follow numpy broadcasting; gradients are summed back to each
operand's shape. ``matmul`` accepts a batched left operand with either a 2-D
right operand (shared weight) or a right operand with the same batch shape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Adam",
    "Module",
    "Parameter",
    "ShapeError",
    "Tensor",
    "add",
    "backward",
    "concat",
    "div",
    "dropout",
    "exp",
    "layer_norm",
    "l2_normalize",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "numerical_grad",
    "permute",
    "relu",
    "reshape",
    "softmax",
    "sqrt",
    "square",
    "sub",
    "sum",
    "transpose",
]

_builtin_sum = sum


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested op."""


class Tensor:
    __array_ufunc__ = None  # make numpy defer to the reflected operators below

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf tensor with a path-like name, set when registered."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: tuple, fn: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, fn, op)
    return Tensor(data, False, (), None, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("add", a, b)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _node(a.data + b.data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("sub", a, b)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _node(a.data - b.data, (a, b), fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("mul", a, b)

    def fn(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _node(a.data * b.data, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("div", a, b)

    def fn(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None)

    return _node(a.data / b.data, (a, b), fn, "div")


def square(x) -> Tensor:
    x = _t(x)
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x) -> Tensor:
    x = _t(x)
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g / (2.0 * out),), "sqrt")


def exp(x) -> Tensor:
    x = _t(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = _t(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def relu(x) -> Tensor:
    x = _t(x)
    keep = x.data > 0
    return _node(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,), "relu")


def dropout(x, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity when ``rate == 0`` or ``train`` is false."""
    x = _t(x)
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


# ------------------------------------------------------------------ reductions

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _t(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return _node(out, (x,), lambda g: (_expand(g, x.shape, axis, keepdims),), "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size / max(out.size, 1) if x.size else 1.0

    def fn(g):
        return (_expand(g / count, x.shape, axis, keepdims),)

    return _node(out, (x,), fn, "mean")


# ------------------------------------------------------------------ structure

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    ok = a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]
    if ok and b.ndim > 2:
        ok = a.shape[:-2] == b.shape[:-2]
    if not ok:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(a.data @ b.data, (a, b), fn, "matmul")


def reshape(x, shape) -> Tensor:
    x = _t(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}") from None
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = _t(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 axes, got shape {x.shape}")
    return _node(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def permute(x, axes: Sequence[int]) -> Tensor:
    x = _t(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "permute")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_t(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no operands")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), fn, "concat")


# ----------------------------------------------------------- normalisations

def softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), fn, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _t(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), fn, "log_softmax")


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (no affine part; compose with mul/add)."""
    x = _t(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv

    def fn(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    return _node(xhat, (x,), fn, "layer_norm")


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    x = _t(x)
    norm = np.maximum(np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True)), eps)
    out = x.data / norm

    def fn(g):
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm,)

    return _node(out, (x,), fn, "l2_normalize")


# ------------------------------------------------------------------ backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dleaf into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=np.float64)
            else:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# -------------------------------------------------------------------- modules

class Module:
    """Container that discovers Parameters held in attributes, lists and submodules."""

    def _walk(self, prefix: str) -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            yield from _walk_value(f"{prefix}{key}", value)

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out, seen, names = [], set(), set()
        for name, p in self._walk(""):
            if id(p) in seen:
                raise ValueError(f"parameter registered twice (second path {name!r})")
            if name in names:
                raise ValueError(f"duplicate parameter name {name!r}")
            seen.add(id(p))
            names.add(name)
            p.name = name
            out.append((name, p))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            else:
                p.grad.fill(0.0)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


def _walk_value(path: str, value) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value._walk(path + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_value(f"{path}.{i}", item)


class Adam:
    """Bias-corrected Adam with decoupled weight decay.

    Decay is applied straight to the weights as ``w -= lr * weight_decay * w``
    before the moment update. Gradients are zeroed after every step.
    """

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"adam: parameter {p.name or p!r} has no gradient buffer")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data -= (self.lr * self.weight_decay) * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            g.fill(0.0)


def numerical_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f()`` with respect to array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return grad

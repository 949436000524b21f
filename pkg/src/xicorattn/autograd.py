"""Minimal float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad=True`` records a
:class:`Node` holding its inputs and a backward rule. :func:`backward` orders
the recorded nodes topologically into a :class:`GradTape`, walks it once in
reverse and accumulates gradients into the leaves.

Broadcasting is deliberately narrow: in a binary elementwise op one operand
must already have the full result shape. The other may be a scalar or any
shape numpy can stretch to it (row/column vectors, ``(..., 1)`` reductions).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@dataclass(eq=False)
class Node:
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str = ""


@dataclass
class GradTape:
    """Tensors produced by recorded nodes, in topological order."""

    tensors: list["Tensor"] = field(default_factory=list)

    @property
    def nodes(self) -> list[Node]:
        return [t._node for t in self.tensors]


class Tensor:
    """Dense float64 array that may participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        extra = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=5)}{extra})"

    def __len__(self) -> int:
        return self.data.shape[0]

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: Iterable[Tensor], backward, name: str = "") -> Tensor:
    inputs = tuple(inputs)
    out = Tensor(out_data)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(inputs, backward, name)
    return out


def custom_grad(forward_value, inputs: Sequence[Tensor], backward_fn, name: str = "custom") -> Tensor:
    """Return ``forward_value`` as a tape node whose backward rule is ``backward_fn``.

    ``backward_fn`` receives the upstream gradient (shaped like the forward
    value) and returns one gradient per input, or ``None`` for inputs that get
    nothing. Returned shapes are checked against the inputs.
    """
    inputs = tuple(inputs)
    value = forward_value.data if isinstance(forward_value, Tensor) else np.asarray(forward_value, dtype=np.float64)

    def checked(g):
        grads = backward_fn(g)
        if isinstance(grads, np.ndarray) or grads is None:
            grads = (grads,)
        grads = tuple(grads)
        if len(grads) != len(inputs):
            raise DimensionError(f"{name}: backward returned {len(grads)} gradients for {len(inputs)} inputs")
        for gi, t in zip(grads, inputs):
            if gi is not None and np.shape(gi) != t.shape:
                raise DimensionError(
                    f"{name}: backward produced gradient of shape {np.shape(gi)} for input of shape {t.shape}"
                )
        return grads

    return _record(value, inputs, checked, name)


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(as_tensor(x).data)


def straight_through(hard_value, soft: Tensor) -> Tensor:
    """Forward ``hard_value`` while routing the gradient to ``soft`` unchanged.

    Equivalent to ``soft + sg(hard - soft)``.
    """
    hard = hard_value.data if isinstance(hard_value, Tensor) else np.asarray(hard_value, dtype=np.float64)
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through: hard shape {hard.shape} != soft shape {soft.shape}")
    return custom_grad(hard, (soft,), lambda g: (g,), name="straight_through")


# ----------------------------------------------------------------------------
# backward pass


def build_tape(loss: Tensor) -> GradTape:
    """Topologically order every recorded tensor reachable from ``loss``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen or t._node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for inp in t._node.inputs:
            if inp._node is not None and id(inp) not in seen:
                stack.append((inp, False))
    return GradTape(order)


def backward(loss: Tensor, grad=None, retain_graph: bool = False) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns a map from each leaf that received a gradient to that gradient.
    The tape is released afterwards unless ``retain_graph`` is set.
    """
    if loss.size != 1 and grad is None:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the gradient tape")
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=np.float64)
    if seed.shape != loss.shape:
        raise DimensionError(f"seed gradient shape {seed.shape} != loss shape {loss.shape}")

    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): seed}
    leaves: dict[int, Tensor] = {}
    if loss._node is None:
        leaves[id(loss)] = loss

    for t in reversed(tape.tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        in_grads = t._node.backward(g)
        for inp, gi in zip(t._node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64)
            if inp._node is None:
                leaves[key] = inp

    out: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        out[leaf] = g
    if not retain_graph:
        for t in tape.tensors:
            t._node = None
    return out


# ----------------------------------------------------------------------------
# elementwise ops


def _binary_shape(a: np.ndarray, b: np.ndarray, op: str) -> tuple[int, ...]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible") from None
    if shape != a.shape and shape != b.shape:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} need mutual broadcasting; reshape explicitly"
        )
    return shape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _record(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _record(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    return _record(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _record(out, (a,), bw, "gelu")


def tabs(a) -> Tensor:
    """|a| with the subgradient sign(0) = 0 at the kink."""
    a = as_tensor(a)
    sgn = np.sign(a.data)
    return _record(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


# ----------------------------------------------------------------------------
# reductions and shape ops


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} into {tuple(shape)}") from None
    return _record(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data[index]

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    def bw_basic(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    basic = _is_basic_index(index)
    return _record(np.array(out, copy=True), (a,), bw_basic if basic else bw, "getitem")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return _record(out, tensors, bw, "concat")


# ----------------------------------------------------------------------------
# linear algebra and softmax


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) axes must agree, or one operand must be a plain matrix
    shared across the other's batch.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ba, bb = a.shape[:-2], b.shape[:-2]
    if ba != bb and a.ndim != 2 and b.ndim != 2:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
            if ga.shape != ad.shape:
                ga = ga.reshape(-1, *ad.shape).sum(axis=0)
        if b.requires_grad:
            if ad.ndim == 2 and g.ndim > 2:
                gb = ad.T @ g
            elif bd.ndim == 2 and g.ndim > 2:
                # shared right operand: fold the batch into the row axis
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(ad @ bd, (a, b), bw, "matmul")


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilised by subtracting the max."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericError("softmax received NaN or infinite entries")
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), bw, "softmax")


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"row_softmax expects a matrix, got shape {a.shape}")
    return softmax(a, axis=-1)

"""Dense float64 tensors with tape-based reverse-mode differentiation.

The op vocabulary is closed: every op has a forward rule and a hand-written
backward rule, and each is tested against central finite differences.
Binary ops follow numpy broadcasting; matmul broadcasts leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidShapeError, OracleInvalidError

Array = np.ndarray


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "index", "name")

    def __init__(self, value, tape: "Tape | None" = None, requires_grad: bool = False,
                 name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.requires_grad = requires_grad
        self.index = -1
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other, self), -1.0))

    def __rsub__(self, other):
        return add(_lift(other, self), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Node:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[Array], Sequence[Array | None]]


@dataclass
class Tape:
    """Ordered record of executed ops plus a named parameter registry."""

    nodes: list[_Node] = field(default_factory=list)
    parameters: dict[str, Tensor] = field(default_factory=dict)

    def parameter(self, name: str, value) -> Tensor:
        if name in self.parameters:
            return self.parameters[name]
        t = Tensor(np.array(value, dtype=np.float64), self, requires_grad=True, name=name)
        self.parameters[name] = t
        return t

    def constant(self, value) -> Tensor:
        return Tensor(value, self, requires_grad=False)

    def record(self, kind: str, inputs: Sequence[Tensor], value: Array,
               backward: Callable[[Array], Sequence[Array | None]]) -> Tensor:
        out = Tensor(value, self, requires_grad=any(t.requires_grad for t in inputs))
        if out.requires_grad:
            out.index = len(self.nodes)
            self.nodes.append(_Node(kind, tuple(inputs), out, backward))
        return out

    def backward(self, loss: Tensor) -> dict[str, Array]:
        """Gradient of scalar ``loss`` for every registered parameter.

        Parameters the loss does not reach get an all-zero gradient.
        """
        if loss.value.size != 1:
            raise InvalidShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: dict[int, Array] = {}
        if loss.requires_grad:
            grads[id(loss)] = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = {}
        for name, p in self.parameters.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
        return out


def backward(loss: Tensor) -> dict[str, Array]:
    if loss.tape is None:
        raise InvalidShapeError("backward: loss was not produced on a tape")
    return loss.tape.backward(loss)


# --------------------------------------------------------------------------
# helpers

def _tape_of(*ts) -> Tape:
    for t in ts:
        if isinstance(t, Tensor) and t.tape is not None:
            return t.tape
    return Tape()


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, like.tape)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _check_axis(kind: str, a: Tensor, axis: int) -> int:
    if a.ndim == 0 or not -a.ndim <= axis < a.ndim:
        raise InvalidShapeError(f"{kind}: axis {axis} invalid for shape {a.shape}")
    return axis % a.ndim


# --------------------------------------------------------------------------
# op vocabulary

def matmul(a: Tensor, b: Tensor) -> Tensor:
    b = _lift(b, a)
    a = _lift(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InvalidShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise InvalidShapeError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None
    av, bv = a.value, b.value

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return _tape_of(a, b).record("matmul", (a, b), av @ bv, bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _tape_of(a, b).record(
        "add", (a, b), a.value + b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value

    def bw(g):
        return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

    return _tape_of(a, b).record("mul", (a, b), av * bv, bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _tape_of(a).record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    """Natural log; inputs must be strictly positive."""
    av = a.value
    return _tape_of(a).record("log", (a,), np.log(av), lambda g: (g / av,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _tape_of(a).record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _lse(x: Array, axis: int) -> Array:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` (rows by default), computed as exp(x - logsumexp(x))."""
    axis = _check_axis("softmax", a, axis)
    out = np.exp(a.value - _lse(a.value, axis))

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _tape_of(a).record("softmax", (a,), out, bw)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = True) -> Tensor:
    axis = _check_axis("logsumexp", a, axis)
    lse = _lse(a.value, axis)
    av = a.value

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(av - lse),)

    out = lse if keepdims else np.squeeze(lse, axis=axis)
    return _tape_of(a).record("logsumexp", (a,), out, bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise InvalidShapeError("concat: no inputs")
    nd = tensors[0].ndim
    axis = _check_axis("concat", tensors[0], axis)
    for t in tensors:
        if t.ndim != nd or t.shape[:axis] + t.shape[axis + 1:] != tensors[0].shape[:axis] + tensors[0].shape[axis + 1:]:
            raise InvalidShapeError(f"concat: shapes {[x.shape for x in tensors]} disagree off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _tape_of(*tensors).record(
        "concat", tuple(tensors), np.concatenate([t.value for t in tensors], axis=axis), bw)


def select_rows(a: Tensor, index, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` (rows by default) by integer index.

    A scalar index drops the axis; an index array of shape s replaces it by s.
    """
    axis = _check_axis("select_rows", a, axis)
    idx = np.asarray(index, dtype=np.int64)
    n = a.shape[axis]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise InvalidShapeError(f"select_rows: index out of range for axis {axis} of shape {a.shape}")
    shape = a.shape
    out = np.take(a.value, idx, axis=axis)

    def bw(g):
        full = np.zeros(shape)
        if axis == 0:
            np.add.at(full, idx, g)
        elif idx.ndim == 0:
            np.moveaxis(full, axis, 0)[idx] += np.asarray(g)
        else:
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, tuple(range(axis, axis + idx.ndim)),
                                              tuple(range(idx.ndim))))
        return (full,)

    return _tape_of(a).record("select_rows", (a,), out, bw)


def mean_rows(a: Tensor) -> Tensor:
    if a.ndim < 1 or a.shape[0] == 0:
        raise InvalidShapeError(f"mean_rows: shape {a.shape} has no rows")
    n = a.shape[0]
    shape = a.shape
    return _tape_of(a).record(
        "mean_rows", (a,), a.value.mean(axis=0, keepdims=True),
        lambda g: (np.broadcast_to(g / n, shape).copy(),))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _tape_of(a).record("scale", (a,), a.value * c, lambda g: (g * c,))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in axes:
            _check_axis("sum", a, ax)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, tuple(ax % len(shape) for ax in axes))
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * len(shape))
        return (np.broadcast_to(g, shape).copy(),)

    return _tape_of(a).record("sum", (a,), out, bw)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise InvalidShapeError(f"transpose: need at least 2 axes, got {a.shape}")
    return _tape_of(a).record("transpose", (a,), np.swapaxes(a.value, -1, -2),
                              lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise InvalidShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _tape_of(a).record("reshape", (a,), out, lambda g: (g.reshape(old),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; the gradient is zero where clamping is active."""
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _tape_of(a).record("clip", (a,), np.clip(av, lo, hi), lambda g: (g * inside,))


OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "softmax": softmax,
    "logsumexp": logsumexp,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "select_rows": select_rows,
    "mean_rows": mean_rows,
    "scale": scale,
    "sum": sum,
    "transpose": transpose,
    "reshape": reshape,
    "clip": clip,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    try:
        op = OPS[kind]
    except KeyError:
        raise InvalidShapeError(f"unknown op kind {kind!r}") from None
    return op(*inputs, **kwargs)


# --------------------------------------------------------------------------
# parameter initialisation

def init_weight(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int | None = None) -> Array:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; fan_in defaults to the last axis."""
    fan_in = fan_in if fan_in is not None else shape[-1]
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float
    step: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def failing(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} (tol={self.tolerance:g}, step={self.step:g})"]
        for k, e in self.errors.items():
            lines.append(f"  {k:<24} {e:.3e}{'  <-- FAIL' if not e < self.tolerance else ''}")
        return "\n".join(lines)


def grad_check(fn: Callable[[Tape, Mapping[str, Array]], Tensor], params: Mapping[str, Array],
               step: float = 1e-5, tolerance: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients with central differences for every parameter entry.

    ``fn(tape, params)`` must register each parameter via ``tape.parameter`` and
    return a scalar. The per-entry relative error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def value(p) -> float:
        return float(fn(Tape(), p).value.reshape(-1)[0])

    v0, v1 = value(params), value(params)
    if v0 != v1 and not (np.isnan(v0) and np.isnan(v1)):
        raise OracleInvalidError(f"function is not deterministic: {v0!r} != {v1!r}")
    tape = Tape()
    analytic = tape.backward(fn(tape, params))

    errors = {}
    for name, arr in params.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = value(params)
            flat[i] = orig - step
            fm = value(params)
            flat[i] = orig
            num.reshape(-1)[i] = (fp - fm) / (2 * step)
        a = analytic.get(name, np.zeros_like(arr))
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        errors[name] = float(np.max(np.abs(a - num) / denom)) if arr.size else 0.0
    return GradCheckReport(errors, tolerance, step)

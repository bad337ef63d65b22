"""Dense tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever one
of their inputs requires a gradient; outside a tape they are plain numpy
computations.  Dropout never draws random numbers itself: callers pass the
mask, so a forward pass can be replayed bit for bit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
_ids = itertools.count()
_tapes: list["Tape"] = []


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "id", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Record:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    saved: dict = field(default_factory=dict)


class Tape:
    """Ordered record of differentiable operations.

    Records are appended in execution order, which is a topological order of
    the computation: every input is produced before its consumers.
    """

    def __init__(self):
        self.records: list[Record] = []
        self.produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tapes.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.records)

    def record(self, rec: Record) -> None:
        self.records.append(rec)
        self.produced.add(rec.output.id)


def active_tape() -> Tape | None:
    return _tapes[-1] if _tapes else None


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _emit(kind: str, inputs: tuple[Tensor, ...], data: np.ndarray, vjp, **saved) -> Tensor:
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(Record(kind, inputs, out, vjp, saved))
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape("mul", a, b)
    return _emit(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,), factor=c)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit("tanh", (a,), y, lambda g: (g * (1 - y * y),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _emit("relu", (a,), a.data * pos, lambda g: (g * pos,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _emit("sqrt", (a,), y, lambda g: (g / (2 * y),))


def log(a: Tensor) -> Tensor:
    return _emit("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _emit("exp", (a,), y, lambda g: (g * y,))


# ------------------------------------------------------------------ reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", (a,), np.asarray(y), vjp, axis=axis)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / float(n))


# -------------------------------------------------------------------- algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _emit("matmul", (a, b), y, vjp)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _emit("reshape", (a,), y, lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _emit("transpose", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inverse),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    try:
        y = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: {a.shape} cannot broadcast to {tuple(shape)}") from None
    return _emit("broadcast_to", (a,), y, lambda g: (unbroadcast(g, a.shape),))


def getitem(a: Tensor, key) -> Tensor:
    y = a.data[key]

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _emit("getitem", (a,), np.array(y), vjp, key=key)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} do not conform on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", tensors, y, lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not add up to {a.shape[axis]} on axis {axis} of {a.shape}")
    out = []
    start = 0
    for n in sizes:
        key = [slice(None)] * a.ndim
        key[axis] = slice(start, start + n)
        out.append(getitem(a, tuple(key)))
        start += n
    return out


def embedding_gather(table: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding_gather: index out of range for table with {table.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("embedding_gather", (table,), table.data[idx], vjp)


# ------------------------------------------------------------- normalization


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    with np.errstate(over="ignore", under="ignore"):
        e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", (a,), y, lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _emit("log_softmax", (a,), y, lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: gain {gamma.shape} / bias {beta.shape} do not match features of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def vjp(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", (x, gamma, beta), y, vjp, n=n)


def normalized(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Layer-norm core without the affine part, for checks."""
    xc = x - x.mean(axis=-1, keepdims=True)
    return xc / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)


# --------------------------------------------------------------------- misc


def euclidean_distance(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    _broadcast_shape("euclidean_distance", a, b)
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=axis))

    def vjp(g):
        dk = np.expand_dims(d, axis)
        safe = np.where(dk > 0, dk, 1)
        u = np.where(dk > 0, diff / safe, 0) * np.expand_dims(g, axis)
        return unbroadcast(u, a.shape), unbroadcast(-u, b.shape)

    return _emit("euclidean_distance", (a, b), d, vjp)


def dropout(x: Tensor, mask: np.ndarray | None, rate: float) -> Tensor:
    """Inverted dropout with an explicit keep-mask; ``mask=None`` or rate 0 is identity."""
    if mask is None or rate == 0.0:
        return x
    if mask.shape != x.shape:
        raise ShapeError(f"dropout: mask {mask.shape} does not match input {x.shape}")
    factor = (mask / (1.0 - rate)).astype(x.dtype)
    return _emit("dropout", (x,), x.data * factor, lambda g: (g * factor,), rate=rate)


def masked_fill(x: Tensor, mask: np.ndarray, value: float | None = None) -> Tensor:
    """Replace entries where ``mask`` is true; default value is the most negative finite float."""
    mask = np.broadcast_to(mask, x.shape)
    fill = np.finfo(x.dtype).min if value is None else value
    y = np.where(mask, x.dtype.type(fill), x.data)
    return _emit("masked_fill", (x,), y, lambda g: (np.where(mask, 0, g),))


# ------------------------------------------------------------------ backward


def backward(tape: Tape, loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(.) through ``tape``.

    Sets ``.grad`` on every tensor that requires a gradient and is read by the
    tape.  With ``params`` the result maps each name to its gradient, zeros for
    parameters the loss does not touch.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if loss.id not in tape.produced:
        raise ValueError("backward: loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.id, None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.id in grads:
                grads[inp.id] = grads[inp.id] + gi
            else:
                grads[inp.id] = np.asarray(gi, dtype=inp.dtype)
            if inp.id not in tape.produced:
                leaves[inp.id] = inp
    for rec in tape.records:
        for inp in rec.inputs:
            if inp.requires_grad and inp.id not in tape.produced:
                leaves.setdefault(inp.id, inp)
    for tid, t in leaves.items():
        t.grad = grads.get(tid, np.zeros_like(t.data))
    if params is None:
        return {t.name or str(t.id): t.grad for t in leaves.values()}
    out = {}
    for name, p in params.items():
        out[name] = grads[p.id] if p.id in grads else np.zeros_like(p.data)
        p.grad = out[name]
    return out

"""Dense tensors with a reverse-mode gradient tape.

Operations record themselves on the innermost active :class:`Tape`.  Outside a
tape they run as plain numpy computations, which is what decoding uses.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    """A forward value or gradient became NaN/Inf."""


class Tensor:
    __slots__ = ("data", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, data, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or (data.dtype if isinstance(data, np.ndarray)
                                               and data.dtype.kind == "f" else DEFAULT_DTYPE))
        self.data = arr
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, {self.data!r})"

    def __len__(self):
        return len(self.data)

    # arithmetic sugar
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

    def __truediv__(self, other):
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed ops.

    Use as a context manager; every differentiable op executed inside appends
    one node.  Nested tapes shadow outer ones.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Propagate from ``loss`` to every recorded tensor; grads keyed by ``id``."""
        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data) if seed is None else seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not isinstance(inp, Tensor):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording (the stack is restored on exit)."""
    saved = _TAPES[:]
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES[:] = saved


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _emit(op: str, out: np.ndarray, inputs: Sequence, backward: Callable) -> Tensor:
    if not np.isfinite(out).all():
        raise NumericError(f"non-finite value produced by {op}")
    t = Tensor(out)
    tape = active_tape()
    if tape is not None and any(isinstance(i, Tensor) for i in inputs):
        t._tape = tape
        tape.nodes.append(_Node(op, tuple(inputs), t, backward))
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    out = da + db
    return _emit("add", out, (a, b), lambda g: (_unbroadcast(g, da.shape), _unbroadcast(g, db.shape)))


def sub(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    out = da - db
    return _emit("sub", out, (a, b), lambda g: (_unbroadcast(g, da.shape), _unbroadcast(-g, db.shape)))


def mul(a, b) -> Tensor:
    da, db = _data(a), _data(b)
    out = da * db
    return _emit("mul", out, (a, b),
                 lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    s = _stable_sigmoid(_data(x))
    return _emit("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    t = np.tanh(_data(x))
    return _emit("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x) -> Tensor:
    e = np.exp(_data(x))
    return _emit("exp", e, (x,), lambda g: (g * e,))


def log(x) -> Tensor:
    d = _data(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(d)
    return _emit("log", out, (x,), lambda g: (g / d,))


def relu(x) -> Tensor:
    d = _data(x)
    on = d > 0
    return _emit("relu", np.where(on, d, 0.0), (x,), lambda g: (g * on,))


# ------------------------------------------------------------------ structure

def matmul(a, b) -> Tensor:
    """``a @ b`` with ``b`` a matrix; ``a`` may carry leading batch axes."""
    da, db = _data(a), _data(b)
    if db.ndim != 2 or da.ndim < 1 or da.shape[-1] != db.shape[0]:
        raise DimensionError(f"matmul shape mismatch {da.shape} x {db.shape}")
    out = da @ db

    def backward(g):
        ga = g @ db.T
        a2 = da.reshape(-1, da.shape[-1])
        gb = a2.T @ g.reshape(-1, db.shape[1])
        return ga, gb

    return _emit("matmul", out, (a, b), backward)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    arrs = [_data(x) for x in xs]
    out = np.concatenate(arrs, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrs])[:-1]
    return _emit("concat", out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    out = np.stack([_data(x) for x in xs], axis=axis)
    n = len(xs)
    return _emit("stack", out, tuple(xs),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def index(x, key) -> Tensor:
    """Basic or advanced indexing (row/column select, gather).

    Gradients scatter-add back, so repeated indices accumulate.
    """
    d = _data(x)
    out = np.array(d[key], copy=True)

    def backward(g):
        gx = np.zeros_like(d)
        np.add.at(gx, key, g)
        return (gx,)

    return _emit("index", out, (x,), backward)


def embed(table, ids) -> Tensor:
    """Rows of ``table`` for integer ``ids`` (any shape)."""
    d = _data(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= d.shape[0]):
        raise IndexError(f"token id out of range [0, {d.shape[0]})")
    out = d[ids]

    def backward(g):
        gx = np.zeros_like(d)
        np.add.at(gx, ids, g)
        return (gx,)

    return _emit("embed", out, (table,), backward)


def reshape(x, shape) -> Tensor:
    d = _data(x)
    return _emit("reshape", d.reshape(shape), (x,), lambda g: (g.reshape(d.shape),))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    d = _data(x)
    out = d.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, d.shape).copy(),)

    return _emit("sum", np.asarray(out), (x,), backward)


def mean(x, axis=None) -> Tensor:
    d = _data(x)
    n = d.size if axis is None else d.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def max(x, axis: int = 0) -> Tensor:  # noqa: A001
    """Max over ``axis``; the gradient goes to the first argmax element."""
    d = _data(x)
    idx = np.expand_dims(np.argmax(d, axis=axis), axis)
    out = np.take_along_axis(d, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(d)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _emit("max", out, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    d = _data(x)
    if d.ndim == 0 or d.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    z = np.exp(d - d.max(axis=axis, keepdims=True))
    p = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", p, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    d = _data(x)
    if d.ndim == 0 or d.shape[axis] == 0:
        raise DimensionError("log_softmax over an empty axis")
    shifted = d - d.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return _emit("log_softmax", out, (x,),
                 lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def stable_softmax(x) -> Tensor:
    """Softmax of a 1-d tensor (max-subtracted)."""
    x = as_tensor(x)
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionError("stable_softmax expects a non-empty vector")
    return softmax(x, axis=0)


# ------------------------------------------------------------------ gradients

def gradient_of(loss: Tensor, params: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Reverse-mode gradients of a scalar ``loss``.

    Parameters not reachable from the loss get zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"gradient_of needs a scalar loss, got shape {loss.shape}")
    params = list(params)
    tape = loss._tape
    grads = tape.backward(loss) if tape is not None else {id(loss): np.ones_like(loss.data)}
    out = {}
    for p in params:
        g = grads.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {p.name or 'parameter'}")
        out[p] = g
    return out


def value_and_grad(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]):
    with Tape():
        loss = loss_fn()
    return loss, gradient_of(loss, params)


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-5, max_elements: int | None = None,
                      rng: np.random.Generator | None = None, order: int = 2) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` closes over ``params`` and is re-evaluated with each element
    nudged in place.  ``order=2`` is (f(x+e) - f(x-e)) / 2e; ``order=4`` is the
    five-point stencil, whose smaller truncation error allows a larger ``eps``
    and hence less cancellation on tiny gradient entries.  ``max_elements``
    subsamples large parameters.  The error denominator is
    max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    offsets = (1, -1) if order == 2 else (1, -1, 2, -2)
    params = list(params)
    _, analytic = value_and_grad(loss_fn, params)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError("finite_diff_check needs contiguous parameters")
        grad = analytic[p].reshape(-1)
        positions = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            positions = (rng or np.random.default_rng(0)).choice(flat.size, max_elements, replace=False)
        for i in positions:
            orig = flat[i]
            f = {}
            try:
                with no_tape():
                    for k in offsets:
                        flat[i] = orig + k * eps
                        f[k] = float(loss_fn().data)
            except NumericError as exc:
                raise NumericError(f"non-finite loss perturbing {p.name or 'param'}[{i}]") from exc
            finally:
                flat[i] = orig
            if order == 2:
                numeric = (f[1] - f[-1]) / (2 * eps)
            else:
                numeric = (8 * (f[1] - f[-1]) - (f[2] - f[-2])) / (12 * eps)
            denom = np.max([abs(grad[i]), abs(numeric), 1e-8])
            worst = np.max([worst, abs(grad[i] - numeric) / denom])
    return float(worst)

"""A small reverse-mode autodiff core on top of numpy.

Every operation on :class:`Tensor` objects that require gradients records its
parents and a pullback. :func:`backward` orders the recorded graph
topologically (the tape) and runs the pullbacks once, accumulating into
``grad`` in a fixed order so results are bitwise reproducible.

Everything is float64.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GRAD_ENABLED = True


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (evaluation only)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class KinkWatch:
    """Smallest distance to a non-differentiable point seen while active."""

    def __init__(self):
        self.margin = float("inf")


_WATCHES: list[KinkWatch] = []


@contextlib.contextmanager
def kink_watch():
    """Track how close ``relu``, ``absolute`` and ``max_over_set`` come to their kinks.

    Central differences are only meaningful where the function is smooth
    across the stencil; gradient checks use this to reject points that sit
    within a step of a kink.
    """
    watch = KinkWatch()
    _WATCHES.append(watch)
    try:
        yield watch
    finally:
        _WATCHES.remove(watch)


def _note_kink(distance: np.ndarray) -> None:
    if _WATCHES and distance.size:
        d = float(np.min(distance))
        for w in _WATCHES:
            w.margin = min(w.margin, d)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_pullback", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) or data.dtype != np.float64 else data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._pullback = None
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], pullback: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._pullback = pullback
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Hadamard product (with broadcasting of scalars and bias-like shapes)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


hadamard = mul


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    _note_kink(np.abs(a.data))
    return _record(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    _note_kink(np.abs(a.data))
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # split by sign to avoid overflow in exp
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def identity(a) -> Tensor:
    return as_tensor(a)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def pullback(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (a,), pullback)


# ---------------------------------------------------------------- reductions

def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    y = a.data.sum(axis=axis)

    def pullback(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(np.asarray(y, dtype=np.float64), (a,), pullback)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis), 1.0 / float(count))


def max_over_set(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise maximum across equally shaped tensors.

    The subgradient goes to the first member attaining the maximum.
    """
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("max_over_set needs at least one tensor")
    stacked = np.stack([t.data for t in tensors])
    winner = np.argmax(stacked, axis=0)  # argmax returns the first index on ties
    y = np.take_along_axis(stacked, winner[None], axis=0)[0]
    if _WATCHES and len(tensors) > 1:
        top2 = np.sort(stacked, axis=0)[-2:]
        _note_kink(top2[1] - top2[0])

    def pullback(g):
        return tuple(np.where(winner == k, g, 0.0) for k in range(len(tensors)))

    return _record(y, tensors, pullback)


# ---------------------------------------------------------------- linear algebra & shape

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def pullback(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(y, (a, b), pullback)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2)
    inverse = np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _record(y, (a,), lambda g: (g.reshape(a.shape),))


def take(a, idx) -> Tensor:
    """Basic slicing/indexing (``a[idx]``)."""
    a = as_tensor(a)
    y = a.data[idx]

    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def pullback(g):
        out = np.zeros(a.shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _record(np.array(y, dtype=np.float64), (a,), pullback)


slice_ = take


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(y, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None
    return _record(y, tensors, lambda g: tuple(np.moveaxis(g, axis, 0)))


def conv1d(x, w, b=None) -> Tensor:
    """Valid 1-D convolution (cross-correlation), stride 1.

    ``x``: ``(batch, length, c_in)``, ``w``: ``(kernel, c_in, c_out)``,
    ``b``: ``(c_out,)``. Returns ``(batch, length - kernel + 1, c_out)``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeMismatch(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    batch, length, c_in = x.shape
    k, _, c_out = w.shape
    l_out = length - k + 1
    if l_out < 1:
        raise ShapeMismatch(f"conv1d: series length {length} shorter than kernel {k}")
    # (batch, l_out, c_in, k) -> (batch * l_out, k * c_in); one 2-D GEMM
    cols = sliding_window_view(x.data, k, axis=1).transpose(0, 1, 3, 2).reshape(batch * l_out, k * c_in)
    wmat = w.data.reshape(k * c_in, c_out)
    y = (cols @ wmat).reshape(batch, l_out, c_out)

    def pullback(g):
        g2 = g.reshape(batch * l_out, c_out)
        gw = (cols.T @ g2).reshape(w.shape)
        # input gradient = full correlation of g with the flipped kernel
        padded = np.zeros((batch, l_out + 2 * (k - 1), c_out))
        padded[:, k - 1:k - 1 + l_out] = g
        gcols = sliding_window_view(padded, k, axis=1).transpose(0, 1, 3, 2).reshape(batch * length, k * c_out)
        wflip = w.data[::-1].transpose(0, 2, 1).reshape(k * c_out, c_in)
        return (gcols @ wflip).reshape(x.shape), gw

    out = _record(y, (x, w), pullback)
    return out if b is None else add(out, b)


# ---------------------------------------------------------------- backward

def topological_order(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root``, parents before children."""
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor that ``loss`` depends on."""
    if loss.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = topological_order(loss)
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._pullback is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._pullback(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        # release the graph behind this node; one backward per recording
        node._parents, node._pullback = (), None


def finite_difference_check(f: Callable[[], Tensor], x, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest elementwise relative gap between backward() and central differences.

    ``f`` is re-evaluated from scratch for each perturbation and must read
    the current contents of ``x`` (a tensor or list of tensors). The
    relative error of one element is ``|a - n| / max(|a|, |n|, s)`` with
    ``s = floor * max(1, |f(x)|)``: the difference quotient of a loss of
    size ``L`` carries roundoff of a few ``L * eps / h`` (about ``5e-11 * L``
    at ``h = 1e-5``), so gradients below ``s`` are compared in absolute terms.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    loss = f()
    scale = floor * max(1.0, abs(float(loss.data)))
    backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in xs]
    worst = 0.0
    with no_grad():
        for t, a in zip(xs, analytic):
            flat = t.data.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                up = float(f().data)
                flat[idx] = orig - h
                down = float(f().data)
                flat[idx] = orig
                numeric = (up - down) / (2.0 * h)
                ai = a.reshape(-1)[idx]
                err = abs(ai - numeric) / max(abs(ai), abs(numeric), scale)
                worst = max(worst, err)
    return worst

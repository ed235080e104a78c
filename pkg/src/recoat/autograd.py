"""Array-level reverse-mode automatic differentiation on top of numpy.

Every op builds a ``Tensor`` holding its value, its parents and a closure that
maps the output gradient to one gradient per parent.  ``backward`` walks the
graph in reverse topological order.  All values are float64 and are checked for
finiteness after every op.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or infinity."""


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class DetachTape:
    """Values seen by ``detach`` in call order, so a perturbed re-evaluation can reuse them."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.position = 0


_TAPE: DetachTape | None = None


@contextlib.contextmanager
def replay_detached(tape: DetachTape):
    """Inside the block the k-th ``detach`` call returns the k-th value recorded on ``tape``.

    The first pass through a computation records; later passes replay.  This
    turns stop-gradient outputs into constants of the base point, which is
    what a finite-difference check needs to agree with the backward pass.
    """
    global _TAPE
    prev = _TAPE
    _TAPE, tape.position = tape, 0
    try:
        yield tape
    finally:
        _TAPE = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def backward(self) -> None:
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced ({backward_fn.__qualname__.split('.')[0]})")
    need = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=need)
    if need:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), bw)


def power(x: Tensor, exponent: float) -> Tensor:
    """x ** exponent for a constant scalar exponent."""
    if isinstance(exponent, Tensor):
        raise TypeError("tensor exponents are not supported")
    e = float(exponent)
    return _result(x.data ** e, (x,), lambda g: (g * e * x.data ** (e - 1.0),))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / b.data**2, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data / b.data, (a, b), bw)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _result(y, (x,), lambda g: (0.5 * g / y,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def elu(x: Tensor) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise."""
    neg = x.data <= 0
    y = x.data.copy()
    y[neg] = np.expm1(y[neg])

    def bw(g):
        gx = g.copy()
        gx[neg] *= y[neg] + 1.0
        return (gx,)

    return _result(y, (x,), bw)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    keep = x.data >= floor
    return _result(np.where(keep, x.data, floor), (x,), lambda g: (g * keep,))


def detach(x: Tensor) -> Tensor:
    tape = _TAPE
    if tape is None:
        return Tensor(x.data)
    if tape.position == len(tape.values):
        tape.values.append(x.data.copy())
    value = tape.values[tape.position]
    if value.shape != x.shape:
        raise ValueError("replayed detach value has a different shape; the computation is not repeatable")
    tape.position += 1
    return Tensor(value)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """numpy matmul semantics, including 1-d operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError(f"matmul needs operands of rank >= 1, got {a.shape} and {b.shape}")
    if a.ndim == 1 or b.ndim == 1:
        a2 = reshape(a, (1,) + a.shape) if a.ndim == 1 else a
        b2 = reshape(b, b.shape + (1,)) if b.ndim == 1 else b
        out = matmul(a2, b2)
        if b.ndim == 1:
            out = reshape(out, out.shape[:-1])
        if a.ndim == 1:
            out = reshape(out, out.shape[:-2] + out.shape[-1:] if b.ndim > 1 else out.shape[:-1])
        return out
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def bw(g):
        z = np.zeros_like(x.data)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _result(x.data[idx], (x,), bw)


def scatter_rows(x: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Place the rows of ``x`` at positions ``rows`` of a zero array with ``n_rows`` rows."""
    rows = np.asarray(rows, dtype=np.int64)
    out = np.zeros((n_rows,) + x.shape[1:])
    out[rows] = x.data
    return _result(out, (x,), lambda g: (g[rows],))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in xs], axis=axis), xs, bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in xs], axis=axis), xs, bw)


# ---------------------------------------------------------------- reductions

def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    src = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def tmax(x: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    arg = np.argmax(x.data, axis=axis)
    y = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis)

    def bw(g):
        z = np.zeros_like(x.data)
        np.put_along_axis(z, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (z,)

    return _result(np.squeeze(y, axis=axis), (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), bw)


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; subgradient 0 where the norm is 0."""
    n = np.sqrt((x.data * x.data).sum(axis=axis))

    def bw(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (x.data * np.expand_dims(scale, axis),)

    return _result(n, (x,), bw)


# ---------------------------------------------------------------- stochastic

def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- convolutions

def _bias_or_zero(b: Tensor | None, n: int) -> Tensor:
    if b is None:
        return Tensor(np.zeros(n))
    if b.shape != (n,):
        raise ValueError(f"bias shape {b.shape} does not match {n} output channels")
    return b


def _same_pad(k: int) -> tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: str = "same") -> Tensor:
    """1-D convolution over time.

    x: (..., T, C_in); w: (k, C_in, C_out); b: (C_out,).
    """
    if x.ndim < 2 or w.ndim != 3 or x.shape[-1] != w.shape[1]:
        raise ValueError(f"conv1d shape mismatch: input {x.shape}, kernels {w.shape}")
    k = w.shape[0]
    if padding == "same":
        left, right = _same_pad(k)
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    t_out = xp.shape[-2] - k + 1
    if t_out <= 0:
        raise ValueError(f"sequence of length {x.shape[-2]} too short for kernel {k}")
    out = sum(xp[..., j:j + t_out, :] @ w.data[j] for j in range(k))
    if b is not None:
        out += b.data

    def bw(g):
        gx = gw = None
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if b is not None and b.requires_grad else None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + t_out, :] += g @ w.data[j].T
            gx = gxp[..., left:left + x.shape[-2], :]
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack([xp[..., j:j + t_out, :].reshape(-1, xp.shape[-1]).T @ g2 for j in range(k)])
        return gx, gw, gb

    return _result(out, (x, w, _bias_or_zero(b, w.shape[-1])), bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 2-D convolution, channels last.

    x: (B, H, W, C_in); w: (kh, kw, C_in, C_out).
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[-1] != w.shape[2]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernels {w.shape}")
    bsz, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"image {h}x{wd} too small for kernel {kh}x{kw}")

    if kh == kw == stride:
        # non-overlapping windows: im2col is a pure reshape
        crop = x.data[:, :ho * kh, :wo * kw, :]
        cols = crop.reshape(bsz, ho, kh, wo, kw, cin).transpose(0, 1, 3, 2, 4, 5)
        cols = cols.reshape(bsz * ho * wo, kh * kw * cin)
        out = (cols @ w.data.reshape(-1, cout)).reshape(bsz, ho, wo, cout)
        if b is not None:
            out += b.data

        def bw(g):
            g2 = g.reshape(-1, cout)
            gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
            gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
            gx = None
            if x.requires_grad:
                gc = (g2 @ w.data.reshape(-1, cout).T).reshape(bsz, ho, wo, kh, kw, cin)
                gx = np.zeros_like(x.data)
                gx[:, :ho * kh, :wo * kw, :] = gc.transpose(0, 1, 3, 2, 4, 5).reshape(
                    bsz, ho * kh, wo * kw, cin)
            return gx, gw, gb
    else:
        def window(i, j):
            return x.data[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]

        out = sum(window(i, j) @ w.data[i, j] for i in range(kh) for j in range(kw))
        if b is not None:
            out += b.data

        def bw(g):
            gw = gx = None
            gb = g.reshape(-1, cout).sum(axis=0) if b is not None and b.requires_grad else None
            if w.requires_grad:
                g2 = g.reshape(-1, cout)
                gw = np.empty_like(w.data)
                for i in range(kh):
                    for j in range(kw):
                        gw[i, j] = window(i, j).reshape(-1, cin).T @ g2
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                for i in range(kh):
                    for j in range(kw):
                        gx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += (
                            g @ w.data[i, j].T)
            return gx, gw, gb

    return _result(out, (x, w, _bias_or_zero(b, cout)), bw)

"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op builds its output eagerly and, when any input requires a gradient,
records a closure that pushes the output gradient back into the inputs.
``Tensor.backward`` replays those closures in reverse topological order, so a
tensor consumed twice receives the sum of both contributions.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True
_kink_log: list | None = None


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    old, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = old


@contextlib.contextmanager
def record_kinks():
    """Collect the branch masks of piecewise ops (relu, abs, clamp) evaluated inside."""
    global _kink_log
    old, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = old


def _log_kink(mask: np.ndarray) -> None:
    if _kink_log is not None:
        _kink_log.append(np.packbits(mask.ravel()))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo(self)
        self.grad = np.array(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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

    def __getitem__(self, idx):
        return slice_(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_kink(mask)
    return _make(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: _accum(x, g * mask))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), "tanh", lambda g: _accum(x, g * (1.0 - y * y)))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), "sigmoid", lambda g: _accum(x, g * y * (1.0 - y)))


def abs_(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    _log_kink(sign > 0)
    _log_kink(sign < 0)
    return _make(np.abs(x.data), (x,), "abs", lambda g: _accum(x, g * sign))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), "square", lambda g: _accum(x, 2.0 * g * x.data))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise ValueError("sqrt: negative input")
    y = np.sqrt(x.data)

    def bw(g):
        safe = np.where(y > 0, y, 1.0)
        _accum(x, np.where(y > 0, g / (2.0 * safe), 0.0))

    return _make(y, (x,), "sqrt", bw)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: non-positive input")
    return _make(np.log(x.data), (x,), "log", lambda g: _accum(x, g / x.data))


def clamp_min(x: Tensor, lo: float) -> Tensor:
    """``max(x, lo)``; the gradient is zero where the clamp is active."""
    mask = x.data > lo
    _log_kink(mask)
    return _make(np.where(mask, x.data, lo), (x,), "clamp_min", lambda g: _accum(x, g * mask))


# ---------------------------------------------------------------- reductions / shape

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum", bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: _accum(x, g.reshape(x.shape)))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), "transpose",
                 lambda g: _accum(x, np.transpose(g, inv)))


def slice_(x: Tensor, idx) -> Tensor:
    def bw(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros(x.shape)
        x.grad[idx] += g

    return _make(x.data[idx], (x,), "slice", bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, "concat", bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis)


# ---------------------------------------------------------------- linear algebra / layers

def matmul(a: Tensor, w: Tensor) -> Tensor:
    """``a @ w`` with ``a`` of shape (..., k) and ``w`` of shape (k, m)."""
    a, w = _lift(a), _lift(w)
    if w.ndim != 2 or a.ndim < 1 or a.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {w.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ w.data.T)
        if w.requires_grad:
            k, m = w.shape
            _accum(w, a.data.reshape(-1, k).T @ g.reshape(-1, m))

    return _make(a.data @ w.data, (a, w), "matmul", bw)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B, C, L) with ``w`` (O, C, K), plus bias (O,)."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    B, C, L = x.shape
    O, _, K = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    Lp = L + 2 * pad
    if Lp < K:
        raise ShapeError(f"conv1d: padded length {Lp} shorter than kernel {K}")
    cols = sliding_window_view(xp, K, axis=2)[:, :, ::stride, :]  # (B, C, Lout, K)
    Lout = cols.shape[2]
    cols2 = cols.transpose(0, 2, 1, 3).reshape(B * Lout, C * K)
    wmat = w.data.reshape(O, C * K)
    y = (cols2 @ wmat.T).reshape(B, Lout, O).transpose(0, 2, 1)
    if b is not None:
        if b.shape != (O,):
            raise ShapeError(f"conv1d: bias shape {b.shape} does not match {O} output channels")
        y = y + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.transpose(0, 2, 1).reshape(B * Lout, O)
        if w.requires_grad:
            _accum(w, (g2.T @ cols2).reshape(O, C, K))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Lout, C, K)
            dxp = np.zeros((B, C, Lp))
            span = stride * (Lout - 1) + 1
            for k in range(K):
                dxp[:, :, k:k + span:stride] += dcols[:, :, :, k].transpose(0, 2, 1)
            _accum(x, dxp[:, :, pad:pad + L])

    return _make(y, parents, "conv1d", bw)


def avgpool1d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping average pooling over the last axis; its length must be a multiple of ``k``."""
    L = x.shape[-1]
    if L % k:
        raise ShapeError(f"avgpool1d: length {L} not divisible by kernel {k}")
    y = x.data.reshape(x.shape[:-1] + (L // k, k)).mean(axis=-1)
    return _make(y, (x,), "avgpool1d", lambda g: _accum(x, np.repeat(g, k, axis=-1) / k))


@dataclass
class BatchNormState:
    """Running statistics of a non-affine batch-norm layer."""

    num_features: int
    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.num_features)
        if self.running_var is None:
            self.running_var = np.ones(self.num_features)


def batchnorm1d(x: Tensor, state: BatchNormState, train: bool) -> Tensor:
    """Normalise each feature of ``x`` (B, F) without a learned affine transform.

    Train mode uses the (biased) batch variance and updates the running
    statistics with the unbiased one; eval mode uses the running statistics.
    """
    if x.ndim != 2 or x.shape[1] != state.num_features:
        raise ShapeError(f"batchnorm1d: expected (B, {state.num_features}), got {x.shape}")
    if not train:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        y = (x.data - state.running_mean) * inv
        return _make(y, (x,), "batchnorm1d", lambda g: _accum(x, g * inv))
    B = x.shape[0]
    if B < 2:
        raise ShapeError("batchnorm1d: train mode needs a batch of at least 2")
    mu = x.data.mean(axis=0)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = xc * inv
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * var * B / (B - 1)

    def bw(g):
        gm = g.mean(axis=0)
        gx = (g * xhat).mean(axis=0)
        _accum(x, inv * (g - gm - xhat * gx))

    return _make(xhat, (x,), "batchnorm1d", bw)


# ---------------------------------------------------------------- gradient checking

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4,
               indices=None, skip_kinks: bool = True, atol: float = 0.0,
               stats: dict | None = None) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``f`` maps ``x`` to a scalar tensor; ``x.data`` is perturbed in place and
    restored. ``indices`` restricts the check to some flat entries. With
    ``skip_kinks`` an entry whose perturbation flips any relu/abs/clamp
    branch is excluded (counted in ``stats['skipped']``). Entries whose
    absolute disagreement is within ``atol`` count as exact agreement; this
    covers gradients that vanish identically (e.g. a bias feeding a batch
    norm) where the difference quotient is pure roundoff.
    """
    x.requires_grad = True
    x.zero_grad()
    with record_kinks() as base_log:
        out = f(x)
    out.backward()
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    worst, checked, skipped = 0.0, 0, 0
    for i in idx:
        orig = flat[i]
        with no_grad():
            flat[i] = orig + h
            with record_kinks() as log_p:
                fp = f(x).item()
            flat[i] = orig - h
            with record_kinks() as log_m:
                fm = f(x).item()
        flat[i] = orig
        if skip_kinks and not (_same_masks(base_log, log_p) and _same_masks(base_log, log_m)):
            skipped += 1
            continue
        num = (fp - fm) / (2 * h)
        a = analytic.reshape(-1)[i]
        err = 0.0 if abs(a - num) <= atol else abs(a - num) / max(1e-8, abs(a) + abs(num))
        worst = max(worst, err)
        checked += 1
    if stats is not None:
        stats.update(checked=checked, skipped=skipped)
    return worst


def _same_masks(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))

"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When any operand requires a gradient
the result remembers its parents and a closure mapping the upstream gradient
to per-parent gradients. :func:`backward` walks the recorded graph in reverse
topological order, accumulates into leaf ``.grad`` arrays, and then releases
the graph: a second ``backward`` over the same nodes raises
:class:`StaleGraphError`.

Set ``DYNKT_DEBUG=1`` to check every forward result for NaN/Inf.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import NumericError, ShapeError, StaleGraphError

DEBUG = os.environ.get("DYNKT_DEBUG", "") not in ("", "0")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = ""
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise NumericError(f"{op}: non-finite output from finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {list(a.shape)} and {list(b.shape)}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    # derivative at exactly 0 is 0; NaN passes through so divergence stays visible
    mask = a.data > 0
    return _make(np.where(a.data <= 0, 0.0, a.data), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.data)
    return _make(r, (a,), lambda g: (g * 0.5 / r,), "sqrt")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D ``b`` and ``a`` of rank >= 1 (leading axes are batch)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {list(a.shape)} and {list(b.shape)}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.outer(ad, g)
            else:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {list(src)} as {list(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


class _IndexedGrad:
    """Gradient nonzero only at ``index``; added in place by :func:`backward`."""

    __slots__ = ("index", "value", "shape")

    def __init__(self, index, value, shape):
        self.index, self.value, self.shape = index, value, shape

    def dense(self) -> np.ndarray:
        full = np.zeros(self.shape)
        full[self.index] = self.value
        return full


def getitem(a, index) -> Tensor:
    """Basic (slice/int) indexing."""
    a = as_tensor(a)
    shape = a.shape
    return _make(a.data[index], (a,), lambda g: (_IndexedGrad(index, g, shape),), "slice")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no tensors")
    nd = ts[0].ndim
    ax = axis % nd if nd else 0
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {list(ts[0].shape)} and {list(t.shape)}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=ax))

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        a, b = sorted(shapes)[:2]
        raise ShapeError(f"stack: incompatible shapes {list(a)} and {list(b)}")
    nd = ts[0].ndim + 1
    ax = axis % nd

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _make(np.stack([t.data for t in ts], axis=ax), ts, backward, "stack")


def take_rows(table, ids, ignore_index: int | None = None) -> Tensor:
    """Gather ``table[ids]``; the gradient scatter-adds back into the looked-up rows.

    Rows equal to ``ignore_index`` receive no gradient.
    """
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got {list(table.shape)}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range [0, {table.shape[0]})")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        flat_ids = ids.reshape(-1)
        flat_g = g.reshape(-1, shape[1])
        if ignore_index is not None:
            keep = flat_ids != ignore_index
            flat_ids, flat_g = flat_ids[keep], flat_g[keep]
        np.add.at(full, flat_ids, flat_g)
        return (full,)

    return _make(table.data[ids], (table,), backward, "take_rows")


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([shape[i] for i in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), backward, "mean")


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, seed: np.ndarray | float = 1.0) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad."""
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {list(loss.shape)}")
    if loss._consumed:
        raise StaleGraphError("backward: graph already consumed; re-run the forward pass")
    if not loss.requires_grad:
        raise StaleGraphError("backward: loss was not recorded on a graph (no input requires grad)")
    order = _topological(loss)
    if any(n._consumed for n in order):
        raise StaleGraphError("backward: graph reuses nodes from an already-consumed pass")
    # id -> [array, owned]; owned arrays may be updated in place
    grads: dict[int, list] = {id(loss): [np.asarray(seed, dtype=np.float64), False]}
    for node in reversed(order):
        entry = grads.pop(id(node), None)
        if node._backward is None:
            if entry is not None:
                g = entry[0]
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if entry is None:
            continue
        for p, pg in zip(node._parents, node._backward(entry[0])):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            slot = grads.get(k)
            if isinstance(pg, _IndexedGrad):
                if slot is None:
                    grads[k] = [pg.dense(), True]
                else:
                    if not slot[1]:
                        slot[0], slot[1] = slot[0].copy(), True
                    slot[0][pg.index] += pg.value
            elif slot is None:
                grads[k] = [pg, False]
            elif slot[1]:
                slot[0] += pg
            else:
                slot[0], slot[1] = slot[0] + pg, True
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckResult:
    max_error: float
    errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    kinks: list[tuple[int, ...]] = field(default_factory=list)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def _scalar(value: Tensor) -> float:
    if not isinstance(value, Tensor) or value.shape != ():
        shape = getattr(value, "shape", None)
        raise ShapeError(f"grad_check: f must return a scalar Tensor, got shape {shape}")
    return float(value.data)


def _kink(f0: float, fp: float, fm: float, h: float) -> bool:
    left = (f0 - fm) / h
    right = (fp - f0) / h
    return abs(right - left) > 1e-2 * max(1.0, abs(left), abs(right))


def _check_array(evaluate: Callable[[], float], arr: np.ndarray, analytic: np.ndarray, h: float,
                 detect_kinks: bool) -> GradCheckResult:
    f0 = evaluate() if detect_kinks else 0.0
    numeric = np.zeros_like(arr)
    kinks = []
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + h
        fp = evaluate()
        arr[idx] = orig - h
        fm = evaluate()
        arr[idx] = orig
        numeric[idx] = (fp - fm) / (2.0 * h)
        if detect_kinks and _kink(f0, fp, fm, h):
            kinks.append(idx)
    errors = _relative_error(analytic, numeric)
    masked = errors.copy()
    for idx in kinks:
        masked[idx] = 0.0
    return GradCheckResult(float(masked.max()) if masked.size else 0.0, errors, analytic, numeric, kinks)


def grad_check_detailed(f: Callable[[Tensor], Tensor], x, h: float = 1e-5,
                        detect_kinks: bool = True) -> GradCheckResult:
    """Compare backward gradients of scalar ``f`` at ``x`` with central differences.

    Components where the one-sided slopes disagree are treated as
    nondifferentiable points: reported in ``kinks`` and excluded from
    ``max_error``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"grad_check: step h={h} outside [1e-7, 1e-3]")
    base = np.array(as_tensor(x).data, dtype=np.float64, copy=True)
    leaf = Tensor(base.copy(), requires_grad=True)
    out = f(leaf)
    _scalar(out)
    backward(out)
    analytic = np.zeros_like(base) if leaf.grad is None else leaf.grad

    work = base.copy()

    def evaluate():
        return _scalar(f(Tensor(work)))

    return _check_array(evaluate, work, analytic, h, detect_kinks)


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error ``|a - n| / max(1, |a|, |n|)`` over differentiable components."""
    return grad_check_detailed(f, x, h).max_error


def param_grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-5,
                     names: Iterable[str] | None = None,
                     detect_kinks: bool = True) -> dict[str, GradCheckResult]:
    """Gradient-check ``loss_fn()`` with respect to named parameters, perturbed in place."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"grad_check: step h={h} outside [1e-7, 1e-3]")
    names = list(params) if names is None else list(names)
    saved = {n: params[n].requires_grad for n in params}
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    try:
        out = loss_fn()
        _scalar(out)
        backward(out)
        analytic = {n: (np.zeros_like(params[n].data) if params[n].grad is None else params[n].grad.copy())
                    for n in names}
        for p in params.values():
            p.requires_grad = False
            p.grad = None
        results = {}
        for n in names:
            arr = params[n].data
            results[n] = _check_array(lambda: _scalar(loss_fn()), arr, analytic[n], h, detect_kinks)
        return results
    finally:
        for n, rg in saved.items():
            params[n].requires_grad = rg
            params[n].grad = None

"""Dense arrays with reverse-mode automatic differentiation.

Every array operation used by the models goes through :class:`GradTensor`.
The implementation is a thin layer over numpy: each differentiable result
keeps references to its inputs plus a closure computing input cotangents
from the output cotangent.  :func:`backward` records the reachable
subgraph in topological order (a :class:`Tape`), sweeps it in reverse and
then releases the closures, so a graph can be differentiated only once.
"""
from __future__ import annotations

import contextlib
import io
import itertools
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DomainError,
    InvalidAxis,
    InvalidStride,
    NonDeterministicFunction,
    NotScalar,
    ShapeMismatch,
    TapeConsumed,
)

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for tensors built from non-float data."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(default_dtype())


class GradTensor:
    """A numpy array that can participate in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, GradTensor):
            data = data.data
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[GradTensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self._consumed = False

    # -- construction helpers -------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["GradTensor"], backward_fn, op: str) -> "GradTensor":
        out = GradTensor(data)
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
            out.op = op
        return out

    # -- array-ish protocol ----------------------------------------------
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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "GradTensor":
        return GradTensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"GradTensor({self.data!r}{flag})"

    # -- operators --------------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce("max", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> GradTensor:
    return GradTensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x) -> GradTensor:
    return x if isinstance(x, GradTensor) else GradTensor(np.asarray(x))


def _lift_pair(a, b) -> tuple[GradTensor, GradTensor]:
    # python scalars adopt the dtype of the tensor operand
    if not isinstance(a, GradTensor):
        a = GradTensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, GradTensor):
        b = GradTensor(np.asarray(b, dtype=a.dtype))
    return a, b


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: GradTensor, b: GradTensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> GradTensor:
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return GradTensor._make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> GradTensor:
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return GradTensor._make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> GradTensor:
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return GradTensor._make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> GradTensor:
    a, b = _lift_pair(a, b)
    _broadcast_shape(a, b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def bw(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return GradTensor._make(out, (a, b), bw, "div")


def neg(a) -> GradTensor:
    a = _lift(a)
    return GradTensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> GradTensor:
    a = _lift(a)
    p = float(exponent)
    out = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return GradTensor._make(out, (a,), bw, "pow")


def exp(a) -> GradTensor:
    a = _lift(a)
    out = np.exp(a.data)
    return GradTensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> GradTensor:
    a = _lift(a)
    if np.any(a.data <= 0):
        raise DomainError("log of nonpositive value")
    return GradTensor._make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign to stay finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> GradTensor:
    a = _lift(a)
    out = _sigmoid_np(a.data)
    return GradTensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> GradTensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return GradTensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> GradTensor:
    a = _lift(a)
    mask = a.data > 0
    return GradTensor._make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softplus(a) -> GradTensor:
    a = _lift(a)
    out = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)
    s = _sigmoid_np(a.data)
    return GradTensor._make(out, (a,), lambda g: (g * s,), "softplus")


def log_sigmoid(a) -> GradTensor:
    """log(sigmoid(a)) evaluated without overflow."""
    a = _lift(a)
    out = -np.logaddexp(0.0, -a.data).astype(a.dtype, copy=False)
    s = _sigmoid_np(-a.data)
    return GradTensor._make(out, (a,), lambda g: (g * s,), "log_sigmoid")


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "mul": mul, "sub": sub, "div": div}


def elementwise(op: str, a, b=None) -> GradTensor:
    """Dispatch a named elementwise operation."""
    if op in _BINARY:
        if b is None:
            raise ShapeMismatch(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> GradTensor:
    a, b = _lift_pair(a, b)
    if a.ndim == 1 and b.ndim == 2:
        return reshape(matmul(reshape(a, (1, -1)), b), (b.shape[1],))
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"inner extents differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return GradTensor._make(out, (a, b), bw, "matmul")


def conv(x, w, dims: int | None = None, stride: int = 1, pad: int = 0) -> GradTensor:
    """N-d cross-correlation (no kernel flip), layout [B, C, *spatial].

    ``w`` has layout [C_out, C_in, *kernel].
    """
    x, w = _lift(x), _lift(w)
    nd = dims if dims is not None else w.ndim - 2
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ShapeMismatch(f"conv{nd}d expects rank {nd + 2} input and kernel")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"channel mismatch: input {x.shape[1]}, kernel {w.shape[1]}")
    k = w.shape[2:]
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(pad, pad)] * nd) if pad else x.data
    if any(kk > n for kk, n in zip(k, xp.shape[2:])):
        raise ShapeMismatch(f"kernel {k} larger than padded input {xp.shape[2:]}")
    B, C = xp.shape[:2]
    O = w.shape[0]
    out_sp = tuple((n - kk) // stride + 1 for n, kk in zip(xp.shape[2:], k))
    offsets = list(itertools.product(*[range(kk) for kk in k]))

    def tap(off):
        return (slice(None),) + tuple(slice(o, o + (m - 1) * stride + 1, stride) for o, m in zip(off, out_sp))

    # channels-last im2col, [B * prod(out), taps * C], then a single GEMM
    xcl = np.ascontiguousarray(np.moveaxis(xp, 1, -1))
    cols = np.empty((B,) + out_sp + (len(offsets), C), dtype=xp.dtype)
    for j, off in enumerate(offsets):
        cols[..., j, :] = xcl[tap(off)]
    cols = cols.reshape(-1, len(offsets) * C)
    # kernel reordered to [O, taps, C] to match the column layout
    wmat = np.moveaxis(w.data.reshape(O, C, -1), 1, 2).reshape(O, -1)
    out = np.ascontiguousarray(np.moveaxis((cols @ wmat.T).reshape((B,) + out_sp + (O,)), -1, 1))

    def bw(g):
        gflat = np.moveaxis(g, 1, -1).reshape(-1, O)
        gw = np.moveaxis((gflat.T @ cols).reshape(O, len(offsets), C), 2, 1).reshape(w.shape)
        gcols = (gflat @ wmat).reshape((B,) + out_sp + (len(offsets), C))
        gcl = np.zeros(xcl.shape, dtype=g.dtype)
        for j, off in enumerate(offsets):
            gcl[tap(off)] += gcols[..., j, :]
        gxp = np.moveaxis(gcl, -1, 1)
        if pad:
            gxp = gxp[(slice(None), slice(None)) + tuple(slice(pad, pad + n) for n in x.shape[2:])]
        return np.ascontiguousarray(gxp), gw

    return GradTensor._make(out, (x, w), bw, f"conv{nd}d")


# -- reductions ----------------------------------------------------------------

def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise InvalidAxis(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise InvalidAxis(f"repeated axis in {axes}")
    return tuple(sorted(out))


def reduce(op: str, x, axes=None, keepdims: bool = False) -> GradTensor:
    """Sum, mean or max over ``axes`` (all axes when None)."""
    x = _lift(x)
    ax = _norm_axes(axes, x.ndim)
    kept_shape = tuple(1 if i in ax else n for i, n in enumerate(x.shape))
    if op == "sum":
        out = x.data.sum(axis=ax, keepdims=keepdims)

        def bw(g):
            return (np.broadcast_to(g.reshape(kept_shape), x.shape).copy(),)
    elif op == "mean":
        count = int(np.prod([x.shape[i] for i in ax])) if ax else 1
        out = x.data.mean(axis=ax, keepdims=keepdims)

        def bw(g):
            return (np.broadcast_to(g.reshape(kept_shape) / count, x.shape).copy(),)
    elif op == "max":
        rest = [i for i in range(x.ndim) if i not in ax]
        moved = np.transpose(x.data, rest + list(ax))
        flat = moved.reshape(moved.shape[: len(rest)] + (-1,))
        # argmax returns the first maximal entry in row-major order
        idx = np.argmax(flat, axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        if keepdims:
            out = out.reshape(kept_shape)

        def bw(g):
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, idx[..., None], g.reshape(idx.shape)[..., None], axis=-1)
            gm = gflat.reshape(moved.shape)
            return (np.transpose(gm, np.argsort(rest + list(ax))),)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return GradTensor._make(np.asarray(out, dtype=x.dtype), (x,), bw, op)


def logsumexp(x, axis: int) -> GradTensor:
    x = _lift(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)

    def bw(g):
        return (np.expand_dims(g, axis) * e / s,)

    return GradTensor._make(out, (x,), bw, "logsumexp")


# -- shape manipulation --------------------------------------------------------

def reshape(x, shape) -> GradTensor:
    x = _lift(x)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return GradTensor._make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> GradTensor:
    x = _lift(x)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    out = np.transpose(x.data, axes)
    inv = np.argsort(axes)
    return GradTensor._make(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(x, shape) -> GradTensor:
    x = _lift(x)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    return GradTensor._make(out, (x,), lambda g: (unbroadcast(g, x.shape),), "broadcast")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x, idx) -> GradTensor:
    x = _lift(x)
    if isinstance(idx, GradTensor):
        idx = idx.data.astype(np.int64)
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] += g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return GradTensor._make(np.array(out, copy=True), (x,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> GradTensor:
    ts = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return GradTensor._make(out, ts, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> GradTensor:
    ts = [_lift(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return GradTensor._make(out, ts, bw, "stack")


def zeros(shape, dtype=None) -> GradTensor:
    return GradTensor(np.zeros(shape, dtype=dtype or default_dtype()))


# -- differentiation -----------------------------------------------------------

@dataclass
class Tape:
    """Operations reachable from a root, in topological order."""

    ops: list[GradTensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: GradTensor) -> "Tape":
        order: list[GradTensor] = []
        seen: set[int] = set()
        stack_: list[tuple[GradTensor, bool]] = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))
        return cls(order)


def backward(loss: GradTensor, grad=None) -> Tape:
    """Populate ``.grad`` on every requires-grad ancestor of ``loss``.

    ``grad`` seeds the sweep for non-scalar roots (vector-Jacobian product).
    """
    if grad is None and loss.size != 1:
        raise NotScalar(f"backward needs a scalar root, got shape {loss.shape}")
    if loss._consumed:
        raise TapeConsumed("graph already differentiated; rebuild it before calling backward again")
    if not loss.requires_grad:
        return Tape([])
    tape = Tape.record(loss)
    for node in tape.ops:
        if node._consumed:
            raise TapeConsumed(f"graph shares a consumed {node.op} node")
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(tape.ops):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            prev = pending.get(id(parent))
            pending[id(parent)] = pg if prev is None else prev + pg
    for node in tape.ops:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
    return tape


def grad_check(f: Callable[[GradTensor], GradTensor], x: GradTensor, eps: float = 1e-6,
               max_coords: int | None = None, seed: int = 0) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|)."""
    base = np.array(x.data, dtype=np.float64)
    with no_grad():
        f0 = np.array(f(GradTensor(base.copy())).data)
        f1 = np.array(f(GradTensor(base.copy())).data)
    if not np.array_equal(f0, f1):
        raise NonDeterministicFunction("two evaluations at the same point disagree")
    xc = GradTensor(base.copy(), requires_grad=True)
    out = f(xc)
    backward(out)
    analytic = xc.grad if xc.grad is not None else np.zeros_like(base)
    coords = _pick_coords(base.size, max_coords, seed)
    worst = 0.0
    flat = base.reshape(-1)
    for i in coords:
        xp, xm = flat.copy(), flat.copy()
        xp[i] += eps
        xm[i] -= eps
        with no_grad():
            fp = float(f(GradTensor(xp.reshape(base.shape))).data)
            fm = float(f(GradTensor(xm.reshape(base.shape))).data)
        num = (fp - fm) / (2 * eps)
        err = abs(analytic.reshape(-1)[i] - num) / max(1.0, abs(num))
        worst = max(worst, err)
    return worst


def grad_check_params(f: Callable[[], GradTensor], params: Iterable[GradTensor], eps: float = 1e-6,
                      max_coords: int | None = None, seed: int = 0) -> float:
    """Finite-difference check of a closure over many parameters (perturbed in place)."""
    params = list(params)
    for p in params:
        p.grad = None
    with no_grad():
        if not np.array_equal(f().data, f().data):
            raise NonDeterministicFunction("two evaluations at the same point disagree")
    backward(f())
    worst = 0.0
    for j, p in enumerate(params):
        analytic = p.grad.reshape(-1) if p.grad is not None else np.zeros(p.size)
        flat = p.data.reshape(-1)
        for i in _pick_coords(p.size, max_coords, seed + j):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = float(f().data)
            flat[i] = orig - eps
            with no_grad():
                fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(analytic[i] - num) / max(1.0, abs(num)))
    return worst


def _pick_coords(n: int, max_coords: int | None, seed: int) -> np.ndarray:
    if max_coords is None or n <= max_coords:
        return np.arange(n)
    return np.random.default_rng(seed).choice(n, size=max_coords, replace=False)


# -- VGT1 snapshots ------------------------------------------------------------

_MAGIC = b"VGT1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def tensor_to_bytes(arr) -> bytes:
    arr = np.asarray(arr.data if isinstance(arr, GradTensor) else arr)
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    head = _MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    head += struct.pack("<B", _DTYPE_CODES[arr.dtype])
    return head + np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    from .errors import CheckpointCorrupt

    f = io.BytesIO(buf)
    if f.read(4) != _MAGIC:
        raise CheckpointCorrupt("bad VGT1 magic")
    try:
        (rank,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
        (code,) = struct.unpack("<B", f.read(1))
    except struct.error as exc:
        raise CheckpointCorrupt("truncated VGT1 header") from exc
    if code not in _CODE_DTYPES:
        raise CheckpointCorrupt(f"unknown dtype code {code}")
    dtype = _CODE_DTYPES[code]
    payload = f.read()
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise CheckpointCorrupt(f"payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)


def save_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())

"""Reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable value is a :class:`Tensor`.  Operations record the
inputs they were computed from together with a closure that maps the output
gradient to input gradients.  :func:`backward` walks the recorded graph in
reverse creation order, which is a valid reverse topological order because a
tensor is always created after its inputs.  That fixed order makes gradient
accumulation bit-reproducible.

Gradient hooks (:func:`register_grad_hook`) transform the fully accumulated
gradient of a tensor before it flows any further back.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "GradHook",
    "HookHandle",
    "ShapeError",
    "apply_primitive",
    "backward",
    "grad",
    "register_grad_hook",
    "finite_difference_grad",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
]

_creation = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when an operation receives inputs of incompatible shapes."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_seq", "_hooks")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._seq = next(_creation)
        self._hooks: dict[int, Callable[[np.ndarray], np.ndarray]] | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._hooks = None
        out._seq = next(_creation)
        out._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False, dtype=dtype)


# ---------------------------------------------------------------------------
# hooks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradHook:
    """A shape-preserving transform applied to ``target``'s gradient."""

    target: Tensor
    transform: Callable[[np.ndarray], np.ndarray]


class HookHandle:
    _ids = itertools.count()

    def __init__(self, tensor: Tensor):
        self._tensor = tensor
        self.id = next(HookHandle._ids)

    def remove(self) -> None:
        hooks = self._tensor._hooks
        if hooks is not None:
            hooks.pop(self.id, None)


def register_grad_hook(t: Tensor, hook) -> HookHandle:
    """Attach ``hook`` (a :class:`GradHook` or plain callable) to ``t``.

    The transform runs once per backward pass on the complete gradient of
    ``t``, before that gradient reaches ``t``'s inputs.
    """
    transform = hook.transform if isinstance(hook, GradHook) else hook
    if isinstance(hook, GradHook) and hook.target is not t:
        raise ValueError("GradHook.target does not match the tensor it is registered on")
    if not t.requires_grad:
        raise ValueError("cannot register a gradient hook on a tensor outside the graph")
    if t._hooks is None:
        t._hooks = {}
    handle = HookHandle(t)
    t._hooks[handle.id] = transform
    return handle


def _run_hooks(t: Tensor, g: np.ndarray) -> np.ndarray:
    for transform in t._hooks.values():
        new = np.asarray(transform(g))
        if new.shape != g.shape:
            raise ShapeError("grad_hook", f"hook changed gradient shape {g.shape} -> {new.shape}")
        g = new
    return g


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        order.append(t)
        stack.extend(t._parents)
    order.sort(key=lambda t: t._seq)
    return order


def _run_backward(root: Tensor, wanted: set[int] | None) -> dict[int, np.ndarray]:
    if root.data.size != 1:
        raise ShapeError("backward", f"root must be a scalar, got shape {root.shape}")
    nodes = _collect(root)
    if not nodes:
        return {}
    # nodes on a path to something we want a gradient for
    if wanted is None:
        live = {id(t) for t in nodes}
    else:
        live = set()
        for t in nodes:
            if id(t) in wanted or any(id(p) in live for p in t._parents):
                live.add(id(t))
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    done: dict[int, np.ndarray] = {}
    for t in reversed(nodes):
        key = id(t)
        if key not in live or key not in grads:
            continue
        g = grads.pop(key)
        if t._hooks:
            g = _run_hooks(t, g)
        done[key] = g
        if not t._parents:
            continue
        needs = tuple(p.requires_grad and id(p) in live for p in t._parents)
        if not any(needs):
            continue
        in_grads = t._backward(g, needs)
        for p, need, pg in zip(t._parents, needs, in_grads):
            if not need or pg is None:
                continue
            pk = id(p)
            if pk in grads:
                grads[pk] = grads[pk] + pg
            else:
                grads[pk] = pg
    return done


def backward(root: Tensor) -> None:
    """Populate ``.grad`` on every grad-requiring tensor reachable from ``root``."""
    nodes = {id(t): t for t in _collect(root)}
    for key, g in _run_backward(root, None).items():
        t = nodes[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def grad(root: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Return d(root)/d(t) for each ``t`` in ``wrt`` without touching ``.grad``.

    Only the part of the graph that leads to ``wrt`` is differentiated.
    Tensors that do not influence ``root`` get a zero gradient.
    """
    wanted = {id(t) for t in wrt}
    done = _run_backward(root, wanted)
    return [done[id(t)] if id(t) in done else np.zeros_like(t.data) for t in wrt]


def finite_difference_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central-difference estimate of df/dx, same shape as ``x``."""
    base = np.array(x.data, dtype=np.float64)
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    out_flat = out.reshape(-1)

    def evaluate(arr):
        with no_grad():
            v = f(Tensor(arr))
        return v.item() if isinstance(v, Tensor) else float(v)

    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = evaluate(base)
        flat[i] = old - eps
        fm = evaluate(base)
        flat[i] = old
        out_flat[i] = (fp - fm) / (2.0 * eps)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)

    def bw(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return Tensor._from_op(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)

    def bw(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)

    return Tensor._from_op(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)

    def bw(g, needs):
        return (_unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None)

    return Tensor._from_op(a.data * b.data, (a, b), bw, "mul")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"cannot multiply {a.shape} by {b.shape}")

    def bw(g, needs):
        return (g @ b.data.T if needs[0] else None,
                a.data.T @ g if needs[1] else None)

    return Tensor._from_op(a.data @ b.data, (a, b), bw, "matmul")


def _as_pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) view into the padded input
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]


def _conv2d_forward(x: np.ndarray, w: np.ndarray, stride, padding) -> np.ndarray:
    (sh, sw), (ph, pw) = stride, padding
    _, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = _windows(xp, kh, kw, sh, sw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv2d_input_grad(gy: np.ndarray, w: np.ndarray, in_hw: tuple[int, int], stride, padding) -> np.ndarray:
    """Adjoint of the conv2d forward map with respect to its input."""
    (sh, sw), (ph, pw) = stride, padding
    n, _, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    h, wd = in_hw
    cols = np.tensordot(gy, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # N, C, kh, kw, Ho, Wo
    hp = max(h + 2 * ph, (ho - 1) * sh + kh)
    wp = max(wd + 2 * pw, (wo - 1) * sw + kw)
    dxp = np.zeros((n, c, hp, wp), dtype=np.result_type(gy, w))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += cols[:, :, i, j]
    return dxp[:, :, ph:ph + h, pw:pw + wd]


def _conv2d_weight_grad(x: np.ndarray, gy: np.ndarray, kernel: tuple[int, int], stride, padding) -> np.ndarray:
    (sh, sw), (ph, pw) = stride, padding
    kh, kw = kernel
    ho, wo = gy.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    win = _windows(xp, kh, kw, sh, sw)[:, :, :ho, :wo]
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, kh, kw


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of NCHW input ``x`` with OIHW weights ``w``."""
    stride, padding = _as_pair(stride), _as_pair(padding)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d", f"expected 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", f"input has {x.shape[1]} channels but weight expects {w.shape[1]}")
    kh, kw = w.shape[2:]
    h, wd = x.shape[2:]
    ho, wo = _conv_out(h, kh, stride[0], padding[0]), _conv_out(wd, kw, stride[1], padding[1])
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", f"kernel {kh}x{kw} does not fit input {h}x{wd} with padding {padding}")
    out = _conv2d_forward(x.data, w.data, stride, padding)
    parents = (x, w) if b is None else (x, w, b)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ShapeError("conv2d", f"bias shape {b.shape} does not match {w.shape[0]} output channels")
        out = out + b.data.reshape(1, -1, 1, 1)

    def bw(g, needs):
        gx = _conv2d_input_grad(g, w.data, (h, wd), stride, padding) if needs[0] else None
        gw = _conv2d_weight_grad(x.data, g, (kh, kw), stride, padding) if needs[1] else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if needs[2] else None)

    return Tensor._from_op(out, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0, output_padding=0) -> Tensor:
    """Transposed convolution; ``w`` has layout (C_in, C_out, kh, kw).

    Implemented as the exact adjoint of :func:`conv2d` with the same weight.
    """
    stride, padding, output_padding = _as_pair(stride), _as_pair(padding), _as_pair(output_padding)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv_transpose2d", f"expected 4-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose2d", f"input has {x.shape[1]} channels but weight expects {w.shape[0]}")
    if output_padding[0] >= stride[0] or output_padding[1] >= stride[1]:
        raise ShapeError("conv_transpose2d", f"output_padding {output_padding} must be smaller than stride {stride}")
    kh, kw = w.shape[2:]
    h, wd = x.shape[2:]
    ho = (h - 1) * stride[0] - 2 * padding[0] + kh + output_padding[0]
    wo = (wd - 1) * stride[1] - 2 * padding[1] + kw + output_padding[1]
    if ho < 1 or wo < 1:
        raise ShapeError("conv_transpose2d", f"non-positive output size {ho}x{wo}")
    out = _conv2d_input_grad(x.data, w.data, (ho, wo), stride, padding)
    out = np.ascontiguousarray(out)
    parents = (x, w) if b is None else (x, w, b)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError("conv_transpose2d", f"bias shape {b.shape} does not match {w.shape[1]} output channels")
        out = out + b.data.reshape(1, -1, 1, 1)

    def bw(g, needs):
        gx = _conv2d_forward(g, w.data, stride, padding)[:, :, :h, :wd] if needs[0] else None
        gw = _conv2d_weight_grad(g, x.data, (kh, kw), stride, padding) if needs[1] else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if needs[2] else None)

    return Tensor._from_op(out, parents, bw, "conv_transpose2d")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat", "nothing to concatenate")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError("concat", f"shapes {ref} and {t.shape} differ outside axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(idx)])
        return tuple(out)

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    try:
        out = x.data[index]
    except IndexError as exc:
        raise ShapeError("slice", f"{exc} for shape {x.shape}") from None
    if not isinstance(index, tuple):
        index = (index,)
    if any(isinstance(i, (list, np.ndarray, Tensor)) for i in index):
        raise ShapeError("slice", "only basic slicing is supported")

    def bw(g, needs):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return Tensor._from_op(np.array(out, copy=True), (x,), bw, "slice")


def pad(x: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` as for ``numpy.pad``."""
    widths = np.broadcast_to(np.asarray(pad_width, dtype=int), (x.ndim, 2))
    if (widths < 0).any():
        raise ShapeError("pad", f"negative pad widths {widths.tolist()}")
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))

    def bw(g, needs):
        return (g[index],)

    return Tensor._from_op(np.pad(x.data, widths), (x,), bw, "pad")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, x.data * slope)

    def bw(g, needs):
        return (np.where(pos, g, g * slope),)

    return Tensor._from_op(out, (x,), bw, "leaky_relu")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, np.zeros_like(x.data))

    def bw(g, needs):
        return (np.where(pos, g, np.zeros_like(g)),)

    return Tensor._from_op(out, (x,), bw, "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bw(g, needs):
        return (g * (1 - out * out),)

    return Tensor._from_op(out, (x,), bw, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g, needs):
        return (g * out * (1 - out),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x,), bw, "sigmoid")


def absolute(x: Tensor) -> Tensor:
    def bw(g, needs):
        return (g * np.sign(x.data),)

    return Tensor._from_op(np.abs(x.data), (x,), bw, "abs")


def power(x: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise TypeError("pow only supports a constant exponent")
    p = float(exponent)

    def bw(g, needs):
        return (g * p * np.power(x.data, p - 1),)

    return Tensor._from_op(np.power(x.data, p), (x,), bw, "pow")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g, needs):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g, needs):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (x,), bw, "mean")


def mse(x: Tensor, target) -> Tensor:
    """Mean squared error against a tensor or constant target."""
    x, t = _pair(x, target)
    _check_broadcast("mse", x, t)
    diff = x.data - t.data
    n = np.broadcast_shapes(x.shape, t.shape)
    count = int(np.prod(n)) if n else 1
    out = np.asarray(np.mean(diff * diff) if diff.shape == n else np.mean(np.broadcast_to(diff, n) ** 2))

    def bw(g, needs):
        d = np.broadcast_to(diff, n) * (2.0 * g / count)
        return (_unbroadcast(d, x.shape) if needs[0] else None,
                _unbroadcast(-d, t.shape) if needs[1] else None)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, t), bw, "mse")


def l1(x: Tensor, target) -> Tensor:
    """Mean absolute error against a tensor or constant target."""
    x, t = _pair(x, target)
    _check_broadcast("l1", x, t)
    diff = x.data - t.data
    n = np.broadcast_shapes(x.shape, t.shape)
    count = int(np.prod(n)) if n else 1
    out = np.asarray(np.mean(np.abs(np.broadcast_to(diff, n))))

    def bw(g, needs):
        d = np.sign(np.broadcast_to(diff, n)) * (g / count)
        return (_unbroadcast(d, x.shape) if needs[0] else None,
                _unbroadcast(-d, t.shape) if needs[1] else None)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, t), bw, "l1")


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes (no affine)."""
    if x.ndim != 4:
        raise ShapeError("instance_norm", f"expected NCHW input, got shape {x.shape}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g, needs):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return ((g - gm - xhat * gxm) * inv,)

    return Tensor._from_op(xhat.astype(x.dtype, copy=False), (x,), bw, "instance_norm")


_PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "conv_transpose2d": conv_transpose2d,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "slice": lambda x, index: slice_(x, index),
    "pad": pad,
    "leaky_relu": leaky_relu,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "abs": absolute,
    "pow": power,
    "mean": mean,
    "sum": sum_,
    "mse": mse,
    "l1": l1,
    "instance_norm": instance_norm,
}

PRIMITIVES = tuple(_PRIMITIVES)


def apply_primitive(kind: str, inputs: Iterable[Tensor], **attrs) -> Tensor:
    """Dispatch a primitive by name, e.g. ``apply_primitive("conv2d", [x, w], stride=2)``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **attrs)

"""Dense tensors with reverse-mode gradients, backed by numpy.

A `Tensor` wraps an ndarray and, when produced by a differentiable op,
remembers its parents and a closure mapping the output gradient to parent
gradients. `Tensor.backward` walks the graph in reverse topological order.

The graph is consumed by a backward pass unless ``retain_graph=True`` is
passed; a second backward through a consumed graph raises.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


class TensorError(Exception):
    """Base class for tensor-core failures."""


class ShapeError(TensorError, ValueError):
    def __init__(self, op: str, *shapes: tuple, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(TensorError, ValueError):
    pass


class GraphError(TensorError, RuntimeError):
    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block."""
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
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(dtype or DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""
        self._consumed = False

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

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
        return self._backward is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        extra = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{extra}, op={self._op or 'leaf'})"

    # -- backward -------------------------------------------------------------
    def backward(self, retain_graph: bool = False) -> None:
        if self._consumed:
            raise GraphError(
                "graph already consumed by a previous backward pass; "
                "re-run forward or pass retain_graph=True"
            )
        if not self.requires_grad:
            raise GraphError("backward on a tensor that does not require grad (detached graph)")
        if self.data.size != 1 or self.ndim > 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise GraphError(f"{node._op}: gradient shape {pg.shape} != input shape {p.shape}")
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

        if not retain_graph:
            for node in order:
                if node._backward is not None:
                    node._backward = None
                    node._parents = ()
                    node._consumed = True

    # -- operators ------------------------------------------------------------
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
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by its reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self) -> "Tensor":
        return scalar_mean(self)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise ----------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.data, b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.data, b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; either side may be a constant array or scalar."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.data, b.data)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def relu(t: Tensor) -> Tensor:
    t = as_tensor(t)
    mask = t.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, t.data, 0.0).astype(t.dtype), (t,), backward, "relu")


def exp(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = np.exp(t.data)

    def backward(g):
        return (g * out,)

    return Tensor._from_op(out, (t,), backward, "exp")


# -- reductions / reshaping ---------------------------------------------------------
def tsum(t: Tensor, axis=None) -> Tensor:
    t = as_tensor(t)
    out = t.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (t,), backward, "sum")


def scalar_mean(t: Tensor) -> Tensor:
    t = as_tensor(t)
    n = t.data.size

    def backward(g):
        return (np.full(t.shape, g / n, dtype=t.dtype),)

    return Tensor._from_op(np.asarray(t.data.mean()), (t,), backward, "mean")


def transpose(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError("transpose", t.shape, detail="expected a 2-D tensor")

    def backward(g):
        return (g.T,)

    return Tensor._from_op(t.data.T, (t,), backward, "transpose")


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    t = as_tensor(t)
    try:
        out = t.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", t.shape, tuple(shape)) from None

    def backward(g):
        return (g.reshape(t.shape),)

    return Tensor._from_op(out, (t,), backward, "reshape")


def take_rows(t: Tensor, index) -> Tensor:
    """Gather rows ``t[index]``; repeated indices accumulate in backward."""
    t = as_tensor(t)
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(t.data)
        np.add.at(out, index, g)
        return (out,)

    return Tensor._from_op(t.data[index], (t,), backward, "take_rows")


# -- linear algebra ------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def dense(t, weight, bias=None) -> Tensor:
    """Affine map ``t @ weight + bias`` with weight stored as (in, out)."""
    t, weight = as_tensor(t), as_tensor(weight)
    if t.ndim != 2 or weight.ndim != 2 or t.shape[1] != weight.shape[0]:
        raise ShapeError("dense", t.shape, weight.shape)
    if bias is None:
        return matmul(t, weight)
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[1],):
        raise ShapeError("dense", weight.shape, bias.shape, detail="bias must match output width")
    x, w, b = t.data, weight.data, bias.data

    def backward(g):
        gx = g @ w.T if t.requires_grad else None
        gw = x.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return Tensor._from_op(x @ w + b, (t, weight, bias), backward, "dense")


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(input, kernel, stride: int = 1, padding: int = 0, bias=None) -> Tensor:
    """2-D cross-correlation. input (N, C, H, W), kernel (O, C, kh, kw)."""
    x, k = as_tensor(input), as_tensor(kernel)
    if x.ndim != 4 or k.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ShapeError("conv2d", x.shape, k.shape)
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError("conv2d", x.shape, k.shape, detail="kernel larger than padded input")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _conv_windows(xp, kh, kw, stride).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = k.data.reshape(o, -1)
    out = cols @ kmat.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError("conv2d", k.shape, bias.shape, detail="bias must have one entry per output channel")
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gk = (gm.T @ cols).reshape(k.shape) if k.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gm @ kmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is None:
            return gx, gk
        gb = gm.sum(axis=0) if bias.requires_grad else None
        return gx, gk, gb

    parents = (x, k) if bias is None else (x, k, bias)
    return Tensor._from_op(np.ascontiguousarray(out), parents, backward, "conv2d")


def global_average_pool(t) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    t = as_tensor(t)
    if t.ndim != 4:
        raise ShapeError("global_average_pool", t.shape, detail="expected (N, C, H, W)")
    n, c, h, w = t.shape

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), t.shape).copy(),)

    return Tensor._from_op(t.data.mean(axis=(2, 3)), (t,), backward, "global_average_pool")


# -- row-wise ops used by projection and losses -------------------------------------------
def l2_normalize_rows(t, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit L2 norm, dividing by max(norm, eps).

    With ``eps=0`` a zero row raises `DomainError` instead of being guarded.
    """
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError("l2_normalize_rows", t.shape, detail="expected a 2-D tensor")
    x = t.data
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if eps <= 0 and np.any(norms == 0):
        rows = np.flatnonzero(norms[:, 0] == 0).tolist()
        raise DomainError(f"l2_normalize_rows: zero-norm rows {rows} with no epsilon guard")
    denom = np.maximum(norms, eps) if eps > 0 else norms
    out = x / denom
    clamped = norms < eps

    def backward(g):
        # d(x/n)/dx = (g - y * <g, y>) / n on unclamped rows, g / eps on clamped rows
        proj = (g * out).sum(axis=1, keepdims=True)
        gx = np.where(clamped, g / denom, (g - out * proj) / denom)
        return (gx,)

    return Tensor._from_op(out, (t,), backward, "l2_normalize_rows")


def log_sum_exp_rows(t, mask=None) -> Tensor:
    """Row-wise log-sum-exp, optionally over only the entries where ``mask`` is True.

    Every row must have at least one included entry. Stabilized by the
    per-row maximum over included entries.
    """
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError("log_sum_exp_rows", t.shape, detail="expected a 2-D tensor")
    x = t.data
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError("log_sum_exp_rows", x.shape, mask.shape, detail="mask shape")
        if not mask.any(axis=1).all():
            raise DomainError("log_sum_exp_rows: a row has no included entries")
    masked = np.where(mask, x, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(masked - m), 0.0)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s))[:, 0]
    soft = e / s

    def backward(g):
        return (g[:, None] * soft,)

    return Tensor._from_op(out, (t,), backward, "log_sum_exp_rows")

"""Minimal define-by-run tensor engine with reverse-mode differentiation.

Only the operations the fusion networks need are provided. Everything is
float64; there is no broadcasting beyond "tensor op python scalar".
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Raised when an operation would produce NaN/Inf or leave its domain."""


class GraphError(RuntimeError):
    pass


_ids = itertools.count()


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: non-finite value in output")
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_id", "_freed")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError("tensor extents must be positive")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._id = next(_ids)
        self._freed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t.op = "leaf"
        t._parents = ()
        t._backward = None
        t._id = next(_ids)
        t._freed = False
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- arithmetic sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scalar_mul(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._id = next(_ids)
    out._freed = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad = t.grad + g.reshape(t.shape)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    The graph is released afterwards; a second call on the same loss raises.
    """
    if loss.data.size != 1:
        raise ShapeError("backward() needs a scalar loss")
    if loss._freed:
        raise GraphError("graph already consumed by an earlier backward(); rebuild the forward pass")
    if not loss.requires_grad or loss._backward is None:
        raise GraphError("loss is not attached to any tensor that requires grad")

    order = []
    seen = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen.add(node._id)
        if node._freed:
            raise GraphError("graph shares nodes already consumed by an earlier backward()")
        order.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    # ids grow with construction, so descending id is a reverse topological order
    order.sort(key=lambda n: n._id, reverse=True)

    grads = {loss._id: np.ones_like(loss.data)}
    for node in order:
        g = grads.pop(node._id, None)
        if node._backward is None:
            # leaf
            if g is not None:
                _accumulate(node, g)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
        node._backward = None
        node._parents = ()
        node._freed = True
    loss._freed = True


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        c = float(b)
        return _node(a.data + c, (a,), "add", lambda g: (g,))
    if not isinstance(a, Tensor):
        return add(b, a)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scalar_mul(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _node(a.data * k, (a,), "scalar_mul", lambda g: (g * k,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), "sum", lambda g: (np.broadcast_to(g, shape),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _node(np.array(a.data.mean()), (a,), "mean", lambda g: (np.broadcast_to(g / n, shape),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _node(out, (a,), "reshape", lambda g: (g.reshape(old),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    x = a.data
    scale = np.where(x > 0, 1.0, slope)
    return _node(x * scale, (a,), "leaky_relu", lambda g: (g * scale,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(y, (a,), "softplus", lambda g: (g * sig,))


def softmax(a: Tensor) -> Tensor:
    """Softmax over all entries of ``a``."""
    x = a.data
    e = np.exp(x - x.max())
    p = e / e.sum()

    def bw(g):
        return (p * (g - np.sum(g * p)),)

    return _node(p, (a,), "softmax", bw)


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NumericError("log: input must be strictly positive")
    return _node(np.log(x), (a,), "log", lambda g: (g / x,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    x = a.data
    keep = x >= floor
    return _node(np.maximum(x, floor), (a,), "clamp_min", lambda g: (np.where(keep, g, 0.0),))


def l1_mean(a: Tensor, b, dead_zone: float = 0.0) -> Tensor:
    """Mean absolute difference ``(1/|a|) * sum|a - b|``.

    The subgradient is ``sign(a - b)``; residuals with ``|a - b| <= dead_zone``
    contribute zero, so round-off-level residuals at an exact fit stay silent.
    """
    b = as_tensor(b)
    _same_shape(a, b, "l1_mean")
    d = a.data - b.data
    n = d.size
    s = np.sign(d)
    if dead_zone > 0:
        s = np.where(np.abs(d) <= dead_zone, 0.0, s)

    def bw(g):
        ga = g * s / n
        return (ga, -ga)

    return _node(np.array(np.abs(d).mean()), (a, b), "l1_mean", bw)


# ---------------------------------------------------------------------------
# dense / convolutional
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x[..., in] @ weight[in, out] + bias[out]``; a 1x1 convolution on cubes."""
    if x.shape[-1] != weight.shape[0] or weight.data.ndim != 2:
        raise ShapeError(f"linear: {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (wd.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, "linear", bw)


def conv_spectral_1x1(x: Tensor, weights: Tensor, mask) -> Tensor:
    """Per-pixel normalized weighted average over each band support set.

    ``out[..., j] = sum_t mask[j,t] w[j,t] x[..., t] / sum_t mask[j,t] w[j,t]``.
    Weights outside the mask are ignored and receive zero gradient.
    """
    mask = np.asarray(mask, dtype=bool)
    if weights.data.ndim != 2 or mask.shape != weights.shape:
        raise ShapeError(f"conv_spectral_1x1: mask {mask.shape} vs weights {weights.shape}")
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(f"conv_spectral_1x1: input has {x.shape[-1]} bands, weights expect {weights.shape[1]}")
    if not mask.any(axis=1).all():
        raise ShapeError("conv_spectral_1x1: empty support set")
    wm = np.where(mask, weights.data, 0.0)
    total = wm.sum(axis=1)
    if np.any(total <= 0):
        raise NumericError("conv_spectral_1x1: support weights must sum to a positive value")
    A = wm / total[:, None]
    xd = x.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ A.T).reshape(xd.shape[:-1] + (A.shape[0],))

    def bw(g):
        g2 = g.reshape(-1, A.shape[0])
        gx = (g2 @ A).reshape(xd.shape) if x.requires_grad else None
        gw = None
        if weights.requires_grad:
            gA = g2.T @ x2
            gwm = (gA - np.sum(gA * A, axis=1, keepdims=True)) / total[:, None]
            gw = np.where(mask, gwm, 0.0)
        return gx, gw

    return _node(out, (x, weights), "conv_spectral_1x1", bw)


def conv_spatial_depthwise(x: Tensor, kernel: Tensor) -> Tensor:
    """Valid stride-r cross-correlation of every band with one shared r x r kernel."""
    if x.data.ndim != 3 or kernel.data.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError("conv_spatial_depthwise: need (W,H,C) input and square kernel")
    r = kernel.shape[0]
    W, H, _ = x.shape
    if W % r or H % r:
        raise ShapeError(f"conv_spatial_depthwise: extents {W}x{H} not divisible by {r}")
    xd, kd = x.data, kernel.data
    out = _kernels.get("stride_conv_forward")(xd, kd)

    def bw(g):
        gx, gk = _kernels.get("stride_conv_backward")(xd, kd, g, x.requires_grad)
        return gx, (gk if kernel.requires_grad else None)

    return _node(out, (x, kernel), "conv_spatial_depthwise", bw)


def rotate_bilinear(x: Tensor, angle) -> Tensor:
    """Rotate a ``(W, H, C)`` cube about its center by ``angle`` radians.

    Inverse-mapped bilinear sampling with zero padding; differentiable in the
    input values and, when ``angle`` is a tensor, in the angle.
    """
    angle = as_tensor(angle)
    if angle.size != 1:
        raise ShapeError("rotate_bilinear: angle must be a scalar")
    theta = angle.item()
    if not np.isfinite(theta):
        raise NumericError("rotate_bilinear: non-finite angle")
    if x.data.ndim != 3:
        raise ShapeError("rotate_bilinear: need a (W,H,C) cube")
    xd = x.data
    out = _kernels.get("rotate_forward")(xd, theta)
    ashape = angle.shape

    def bw(g):
        gx, gtheta = _kernels.get("rotate_backward")(xd, theta, g, x.requires_grad)
        return gx, np.full(ashape, gtheta)

    return _node(out, (x, angle), "rotate_bilinear", bw)


def adaptive_avg_pool_to_1(x: Tensor) -> Tensor:
    """``(w, h, C) -> (1, 1, C)`` per-channel spatial mean."""
    if x.data.ndim != 3:
        raise ShapeError("adaptive_avg_pool_to_1: need a (w,h,C) cube")
    w, h, c = x.shape
    # shifted mean: a spatially constant image pools to its value exactly
    ref = x.data[:1, :1, :]
    out = ref + (x.data - ref).mean(axis=(0, 1), keepdims=True)
    n = w * h
    return _node(out, (x,), "adaptive_avg_pool", lambda g: (np.broadcast_to(g / n, (w, h, c)),))

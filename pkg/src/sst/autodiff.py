"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation appends a node to an implicit tape: the node records its
input tensors and a backward rule, and carries a monotonically increasing
sequence number. Because inputs always exist before the node that consumes
them, processing nodes in decreasing sequence order is a valid reverse
topological sweep, so ``backward`` visits each node exactly once.

Tensors are immutable once created except for gradient accumulation; a tape
and its tensors belong to one worker at a time. Tapes are not reused across
training steps — dropping the loss tensor frees the whole graph.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfc

from .errors import ContractError, DimensionError

_SEQ = itertools.count()
_GRAD_ENABLED = True

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Node:
    """One tape entry: the tensors an op consumed and how to push gradients back."""

    __slots__ = ("inputs", "backward_rule", "seq")

    def __init__(self, inputs: tuple["Tensor", ...], backward_rule: Callable):
        self.inputs = inputs
        self.backward_rule = backward_rule  # grad_out -> tuple of grads (or None) per input
        self.seq = next(_SEQ)


class Tensor:
    """N-dimensional float64 array, optionally attached to the differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_rule: Callable) -> Tensor:
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        out.node = Node(inputs, backward_rule)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and broadcasting arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    return _make(a.data + c, (a,), lambda g: (g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def clamp_min(a: Tensor, c: float) -> Tensor:
    out = np.maximum(a.data, c)
    mask = a.data > c
    return _make(out, (a,), lambda g: (g * mask,))


def relu(a: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    """x * Phi(x) with the exact erf formulation of the normal CDF.

    Phi is evaluated as erfc(-x/sqrt(2))/2 so the deep negative tail keeps its
    magnitude instead of cancelling to zero.
    """
    x = a.data
    cdf = 0.5 * erfc(-x * _INV_SQRT2)
    out = x * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis`."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()

    def bwd(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and neural-network operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [.., m, k] x [.., k, n]; batch extents broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Max-subtracted softmax; outputs along `axis` sum to 1."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), bwd)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bwd(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bwd)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and bias.

    `eps` is added inside the square root; gain and bias are 1-D of the
    normalized extent.
    """
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layernorm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _make(out, (x, gain, bias), bwd)


def conv1d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation of [n, c_in, t] with [c_out, c_in, k].

    Output length is floor((t + 2*padding - k) / stride) + 1. No kernel flip:
    learned kernels make the correlation convention canonical.
    """
    n, c_in, t = x.shape
    c_out, c_in_k, k = kernel.shape
    if c_in_k != c_in:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if k > t + 2 * padding:
        raise DimensionError(
            f"conv1d kernel ({k}) longer than padded input ({t + 2 * padding})"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    out = np.einsum("ncik,ock->noi", windows, kernel.data, optimize=True)
    t_out = out.shape[-1]

    def bwd(g):
        g_kernel = np.einsum("noi,ncik->ock", g, windows, optimize=True)
        spread = np.einsum("noi,ock->ncik", g, kernel.data, optimize=True)
        gxp = np.zeros_like(xp)
        for kk in range(k):
            gxp[:, :, kk : kk + stride * (t_out - 1) + 1 : stride] += spread[:, :, :, kk]
        gx = gxp[:, :, padding : padding + t] if padding else gxp
        return gx, g_kernel

    return _make(out, (x, kernel), bwd)


def adaptive_avg_pool1d(x: Tensor, out_len: int) -> Tensor:
    """Average [n, c, t] into out_len segments with floor-split boundaries."""
    n, c, t = x.shape
    if out_len > t:
        raise DimensionError(f"adaptive_avg_pool1d: out_len {out_len} exceeds input length {t}")
    bounds = np.array([(i * t) // out_len for i in range(out_len + 1)])
    lengths = np.diff(bounds).astype(np.float64)
    sums = np.add.reduceat(x.data, bounds[:-1], axis=2)
    out = sums / lengths

    def bwd(g):
        return (np.repeat(g / lengths, np.diff(bounds), axis=2),)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every requires_grad ancestor.

    Repeated calls without zeroing add. Non-scalar losses are rejected.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Reachable sweep in decreasing tape order: every consumer of a tensor has
    # a higher sequence number than its producer, so each node is processed
    # after its output gradient is complete.
    nodes: dict[int, tuple[Node, Tensor]] = {}
    stack = [loss]
    seen = {id(loss)}
    while stack:
        t = stack.pop()
        if t.node is None:
            continue
        nodes[t.node.seq] = (t.node, t)
        for inp in t.node.inputs:
            if id(inp) not in seen and inp.requires_grad:
                seen.add(id(inp))
                stack.append(inp)

    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    keep: dict[int, Tensor] = {id(loss): loss}
    for seq in sorted(nodes, reverse=True):
        node, out = nodes[seq]
        g_out = acc.get(id(out))
        if g_out is None:
            continue
        grads = node.backward_rule(g_out)
        for inp, g in zip(node.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in acc:
                acc[key] = acc[key] + g
            else:
                acc[key] = g
                keep[key] = inp

    for key, t in keep.items():
        g = acc[key]
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)
        else:
            t.grad = t.grad + g

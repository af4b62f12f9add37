"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every primitive computes its forward value eagerly and registers a
vector-Jacobian closure; :func:`backward` walks the graph in reverse
topological order.  Inference paths can wrap calls in :func:`no_grad` to skip
graph construction.  All primitives raise on non-finite outputs and add to
any active FLOP counters, which the caching benchmarks rely on.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy import special as _special

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "backward",
    "flop_counter",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "getitem",
    "concat",
    "stack",
    "tsum",
    "log",
    "maximum",
    "layer_norm",
    "gelu",
    "sigmoid",
    "softplus",
    "softmax",
    "tri_solve",
    "grad_check",
]

_GRAD_ENABLED = [True]
_FINITE_CHECKS = [True]
_ACTIVE_COUNTERS = []


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward values only)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


@contextlib.contextmanager
def fast_math():
    """Skip per-primitive finiteness scans inside the block.

    Training loops that already watch their loss can trade the per-op checks
    for throughput; non-finite values then surface at the loss instead of at
    the originating primitive.
    """
    _FINITE_CHECKS.append(False)
    try:
        yield
    finally:
        _FINITE_CHECKS.pop()


class FlopCounter:
    def __init__(self):
        self.flops = 0


@contextlib.contextmanager
def flop_counter():
    """Count (approximate) floating-point operations of primitives run inside the block."""
    counter = FlopCounter()
    _ACTIVE_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE_COUNTERS.remove(counter)


def _flops(n: int) -> None:
    for c in _ACTIVE_COUNTERS:
        c.flops += n


class Tensor:
    """A float64 array plus the closure that routes gradients to its parents."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents if _GRAD_ENABLED[-1] else ()
        self._vjp = vjp if _GRAD_ENABLED[-1] else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def zero_grad(self):
        self.grad = None


def tensor(data) -> Tensor:
    """Wrap an array as a leaf tensor."""
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(name: str, out: np.ndarray) -> None:
    if _FINITE_CHECKS[-1] and out.size and not np.isfinite(out.sum()):
        raise FloatingPointError(f"non-finite values produced by primitive '{name}'")


def _node(name: str, data: np.ndarray, parents, vjp) -> Tensor:
    _check_finite(name, data)
    if not _GRAD_ENABLED[-1]:
        return Tensor(data)
    return Tensor(data, parents=parents, vjp=vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient to ``shape`` by summing over broadcast axes."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(out: Tensor, seed_grad=None) -> None:
    """Accumulate gradients of ``out`` into every reachable tensor's ``.grad``."""
    topo = []
    seen = set()
    stack_ = [out]
    while stack_:
        node = stack_[-1]
        if id(node) in seen:
            stack_.pop()
            continue
        unvisited = [p for p in node._parents if id(p) not in seen]
        if unvisited:
            stack_.extend(unvisited)
            continue
        seen.add(id(node))
        topo.append(node)
        stack_.pop()

    out.grad = np.ones_like(out.data) if seed_grad is None else np.asarray(seed_grad, dtype=np.float64)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, contrib in zip(node._parents, node._vjp(node.grad)):
            if contrib is None:
                continue
            if parent.grad is None:
                # copy: several vjps hand back views of their upstream gradient
                parent.grad = np.array(contrib)
            else:
                parent.grad += contrib


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    _flops(out.size)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node("add", out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data
    _flops(out.size)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node("sub", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    _flops(out.size)

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node("mul", out, (a, b), vjp)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = a.data * s
    _flops(out.size)

    def vjp(g):
        return (g * s,)

    return _node("scale", out, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.matmul(a.data, b.data)
    k = a.data.shape[-1]
    _flops(2 * out.size * k)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node("matmul", out, (a, b), vjp)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _node("transpose", np.transpose(a.data, axes), (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _node("reshape", a.data.reshape(shape), (a,), vjp)


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return _node("slice", a.data[idx], (a,), vjp)


def concat(parts, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _node("concat", out, tuple(parts), vjp)


def stack(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = np.stack([p.data for p in parts], axis=axis)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(parts)))

    return _node("stack", out, tuple(parts), vjp)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    _flops(a.data.size)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.data.shape).copy(),)

    return _node("sum", out, (a,), vjp)


def log(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    _flops(out.size)

    def vjp(g):
        return (g / a.data,)

    return _node("log", out, (a,), vjp)


def maximum(a, floor: float) -> Tensor:
    """Elementwise max against a scalar floor; gradient passes where a > floor."""
    a = _as_tensor(a)
    floor = float(floor)
    out = np.maximum(a.data, floor)
    _flops(out.size)

    def vjp(g):
        return (g * (a.data > floor),)

    return _node("maximum", out, (a,), vjp)


def layer_norm(a, eps: float = 1e-10) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered**2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * inv
    _flops(5 * a.data.size)

    def vjp(g):
        n = a.data.shape[-1]
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = np.mean(g * out, axis=-1, keepdims=True)
        return ((g - g_mean - out * gy_mean) * inv,)

    return _node("layer_norm", out, (a,), vjp)


def gelu(a) -> Tensor:
    """Exact Gaussian-error linear unit, x * Phi(x)."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + _special.erf(a.data / math.sqrt(2.0)))
    out = a.data * cdf
    _flops(8 * out.size)

    def vjp(g):
        pdf = np.exp(-0.5 * a.data**2) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + a.data * pdf),)

    return _node("gelu", out, (a,), vjp)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid_np(a.data)
    _flops(4 * out.size)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node("sigmoid", out, (a,), vjp)


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    _flops(4 * out.size)

    def vjp(g):
        return (g * _sigmoid_np(a.data),)

    return _node("softplus", out, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    _flops(4 * out.size)

    def vjp(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _node("softmax", out, (a,), vjp)


def tri_solve(a_mat: np.ndarray, delta, rhs) -> Tensor:
    """Solve (I - delta/2 * A) x = rhs per batch element, A a fixed lower-triangular matrix.

    ``delta`` broadcasts as (..., 1) against ``rhs`` of shape (..., D); the
    solve runs by forward substitution over the D state rows.  This is the
    bilinear-discretization kernel of the selective state-space layer, with
    gradients for both ``delta`` and ``rhs``.
    """
    delta, rhs = _as_tensor(delta), _as_tensor(rhs)
    A = np.asarray(a_mat, dtype=np.float64)
    d_state = A.shape[0]
    half = 0.5 * delta.data  # (..., 1)
    diag = A.diagonal()

    x = np.empty_like(rhs.data)
    for i in range(d_state):
        acc = rhs.data[..., i]
        if i > 0:
            acc = acc + half[..., 0] * (x[..., :i] @ A[i, :i])
        x[..., i] = acc / (1.0 - half[..., 0] * diag[i])
    _flops(rhs.data.size * (d_state + 3))

    def vjp(g):
        # u solves (I - delta/2 A)^T u = g by back substitution
        u = np.empty_like(g)
        for i in range(d_state - 1, -1, -1):
            acc = g[..., i]
            if i < d_state - 1:
                acc = acc + half[..., 0] * (u[..., i + 1 :] @ A[i + 1 :, i])
            u[..., i] = acc / (1.0 - half[..., 0] * diag[i])
        ax = x @ A.T
        g_delta = 0.5 * np.sum(u * ax, axis=-1, keepdims=True)
        return _unbroadcast(g_delta, delta.data.shape), u

    return _node("tri_solve", x, (delta, rhs), vjp)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


def grad_check(f, inputs, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` maps a list of Tensors to a scalar Tensor.  Every coordinate of
    every input is perturbed, so keep the inputs small.
    """
    inputs = [_as_tensor(x) for x in inputs]
    for t in inputs:
        t.zero_grad()
    out = f(inputs)
    if out.data.size != 1:
        raise ValueError("grad_check target must be scalar")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ref in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ref_flat = ref.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            with no_grad():
                hi = float(f(inputs).data)
            flat[j] = keep - step
            with no_grad():
                lo = float(f(inputs).data)
            flat[j] = keep
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(numeric) + abs(ref_flat[j]), 1e-8)
            worst = max(worst, abs(numeric - ref_flat[j]) / denom)
    return worst

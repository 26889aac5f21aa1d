"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that participates in training records its inputs and a
backward closure on the output tensor, forming a dynamic graph. Calling
``backward(loss)`` walks that graph in reverse topological order and fills
the ``grad`` buffers of every tensor it reaches, starting from freshly
zeroed buffers each call.

All math is 64-bit; the model is small enough that precision is worth more
than speed, and gradient checking depends on it.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, DimensionError

# tanh-form GELU constants
_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
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
    """A dense real-valued array plus optional gradient buffer.

    Values are stored row-major as float64. Non-finite values are rejected
    at construction; training code re-checks parameters after each
    optimizer step.
    """

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        """True if this tensor participates in gradient computation."""
        return self.requires_grad or bool(self._parents)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _check_finite(arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("tensor contains non-finite values")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def from_op(data, parents, backward_fn) -> Tensor:
    """Build an op output, recording the backward closure when tracking.

    ``backward_fn(out)`` must read ``out.grad`` and accumulate (+=) into
    each tracked parent's ``grad``.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.tracked for p in parents):
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Fill ``grad`` on every tensor reachable from ``loss``.

    The loss must be a scalar. Grad buffers of all reachable tensors are
    zeroed first, so repeated calls never accumulate across calls.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )

    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    for node in topo:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise and linear-algebra primitives --------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(out):
        if a.tracked:
            a.grad += _unbroadcast(out.grad, a.shape)
        if b.tracked:
            b.grad += _unbroadcast(out.grad, b.shape)

    return from_op(out_data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def bwd(out):
        a.grad -= out.grad

    return from_op(-a.data, (a,), bwd)


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def mul(a, b) -> Tensor:
    """Elementwise (broadcasting) product; either operand may be a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(out):
        if a.tracked:
            a.grad += _unbroadcast(out.grad * b.data, a.shape)
        if b.tracked:
            b.grad += _unbroadcast(out.grad * a.data, b.shape)

    return from_op(out_data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors with gradient recording."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def bwd(out):
        if a.tracked:
            a.grad += out.grad @ b.data.T
        if b.tracked:
            b.grad += a.data.T @ out.grad

    return from_op(a.data @ b.data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got {a.shape}")

    def bwd(out):
        a.grad += out.grad.T

    return from_op(a.data.T.copy(), (a,), bwd)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def bwd(out):
        x.grad += out.grad * mask

    return from_op(np.where(mask, x.data, 0.0), (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """GELU via the tanh approximation (constant 0.044715)."""
    x = _as_tensor(x)
    v = x.data
    inner = _GELU_K * (v + _GELU_C * v**3)
    t = np.tanh(inner)
    out_data = 0.5 * v * (1.0 + t)

    def bwd(out):
        dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * v**2)
        dgelu = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * dinner
        x.grad += out.grad * dgelu

    return from_op(out_data, (x,), bwd)


def activation(x: Tensor, kind: str) -> Tensor:
    """Dispatch to relu or gelu by name."""
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ContractError(f"unknown activation kind {kind!r}")


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D tensor, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(out):
        g = out.grad
        x.grad += y * (g - (g * y).sum(axis=1, keepdims=True))

    return from_op(y, (x,), bwd)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each row (population variance, eps-stabilized), then affine.

    gain and bias are 1-D of length n (the row width).
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.data.ndim != 2:
        raise DimensionError(f"layer_norm_rows expects a 2-D tensor, got {x.shape}")
    n = x.shape[1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise DimensionError(
            f"layer_norm_rows: gain/bias shapes {gain.shape}/{bias.shape} "
            f"do not match row width {n}"
        )
    if eps <= 0:
        raise ContractError("layer_norm_rows requires eps > 0")
    mean = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mean
    var = (xc**2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out_data = xhat * gain.data + bias.data

    def bwd(out):
        g = out.grad
        if gain.tracked:
            gain.grad += (g * xhat).sum(axis=0)
        if bias.tracked:
            bias.grad += g.sum(axis=0)
        if x.tracked:
            dxhat = g * gain.data
            # population-variance layer-norm gradient
            x.grad += inv_std * (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )

    return from_op(out_data, (x, gain, bias), bwd)


# -- structural primitives -----------------------------------------------------


def concat_rows(tensors) -> Tensor:
    """Stack 2-D tensors vertically."""
    tensors = [_as_tensor(t) for t in tensors]
    widths = {t.shape[1] for t in tensors}
    if len(widths) != 1:
        raise DimensionError(f"concat_rows: mixed widths {sorted(widths)}")
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def bwd(out):
        pieces = np.split(out.grad, splits, axis=0)
        for t, piece in zip(tensors, pieces):
            if t.tracked:
                t.grad += piece

    return from_op(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors), bwd)


def concat_cols(tensors) -> Tensor:
    """Stack 2-D tensors horizontally."""
    tensors = [_as_tensor(t) for t in tensors]
    heights = {t.shape[0] for t in tensors}
    if len(heights) != 1:
        raise DimensionError(f"concat_cols: mixed heights {sorted(heights)}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def bwd(out):
        pieces = np.split(out.grad, splits, axis=1)
        for t, piece in zip(tensors, pieces):
            if t.tracked:
                t.grad += piece

    return from_op(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bwd)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not (0 <= start < stop <= x.shape[0]):
        raise DimensionError(f"slice_rows[{start}:{stop}] out of range for {x.shape}")

    def bwd(out):
        x.grad[start:stop] += out.grad

    return from_op(x.data[start:stop].copy(), (x,), bwd)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not (0 <= start < stop <= x.shape[1]):
        raise DimensionError(f"slice_cols[{start}:{stop}] out of range for {x.shape}")

    def bwd(out):
        x.grad[:, start:stop] += out.grad

    return from_op(x.data[:, start:stop].copy(), (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    """Sum all entries to a scalar tensor."""
    x = _as_tensor(x)

    def bwd(out):
        x.grad += out.grad  # broadcasts the scalar

    return from_op(x.data.sum(), (x,), bwd)

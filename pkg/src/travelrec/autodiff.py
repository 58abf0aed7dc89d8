"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays; every differentiable operation records a node in
a define-by-run graph. Calling :func:`backward` on a scalar root walks the
graph in reverse topological order and accumulates gradients additively on
every grad-tracked leaf. Graphs are rebuilt on each forward pass, so tensors
are cheap, short-lived objects except for parameters, which persist across
steps and keep their accumulated ``grad`` until an optimizer clears it.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces or receives non-finite values."""


_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-operation finiteness validation (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values encountered")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g)  # copy: g may alias another node's buffer
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # Operator sugar; heavy lifting happens in the module-level functions.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a constant reciprocal")
        return mul(self, 1.0 / np.asarray(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like: np.ndarray | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and np.isscalar(x):
        # keep python scalars weak so float32 graphs stay float32
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    data = np.asarray(data)  # 0-d results degrade to numpy scalars otherwise
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _require_broadcastable(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    if isinstance(a, Tensor):
        a, b = a, as_tensor(b, like=a.data)
    else:
        b = as_tensor(b)
        a = as_tensor(a, like=b.data)
    _require_broadcastable(a, b, "add")
    out_data = a.data + b.data

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    if isinstance(a, Tensor):
        a, b = a, as_tensor(b, like=a.data)
    else:
        b = as_tensor(b)
        a = as_tensor(a, like=b.data)
    _require_broadcastable(a, b, "mul")
    out_data = a.data * b.data

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data @ b.data

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(out_data, (a, b), backward, "matmul")


def einsum(spec: str, a, b) -> Tensor:
    """Binary einsum. Every input index must appear in the output or the other
    operand so the gradient is itself an einsum with operands swapped."""
    a, b = as_tensor(a), as_tensor(b)
    in_spec, out_sub = spec.replace(" ", "").split("->")
    a_sub, b_sub = in_spec.split(",")
    for sub, other in ((a_sub, b_sub), (b_sub, a_sub)):
        missing = set(sub) - set(out_sub) - set(other)
        if missing:
            raise ShapeError(f"einsum {spec!r}: index {missing} summed over a single operand")
    try:
        out_data = np.einsum(spec, a.data, b.data)
    except ValueError:
        raise ShapeError(f"einsum {spec!r}: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate_grad(np.einsum(f"{out_sub},{b_sub}->{a_sub}", g, b.data))
        if b.requires_grad:
            b.accumulate_grad(np.einsum(f"{a_sub},{out_sub}->{b_sub}", a.data, g))

    return _node(out_data, (a, b), backward, "einsum")


def silu(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-x.data))
    out_data = x.data * sig

    def backward(out):
        x.accumulate_grad(out.grad * (sig + x.data * sig * (1.0 - sig)))

    return _node(out_data, (x,), backward, "silu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-x.data))

    def backward(out):
        x.accumulate_grad(out.grad * out_data * (1.0 - out_data))

    return _node(out_data, (x,), backward, "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.tanh(x.data)

    def backward(out):
        x.accumulate_grad(out.grad * (1.0 - out_data * out_data))

    return _node(out_data, (x,), backward, "tanh")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def backward(out):
        x.accumulate_grad(out.grad * out_data)

    return _node(out_data, (x,), backward, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)

    def backward(out):
        x.accumulate_grad(out.grad / x.data)

    return _node(out_data, (x,), backward, "log")


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    out_data = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(out):
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axes)
        x.accumulate_grad(np.broadcast_to(g, x.shape).copy())

    return _node(out_data, (x,), backward, "sum")


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def rms_norm(x, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x^2) + eps) along the last axis, no learnable gain."""
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ShapeError(f"rms_norm: empty last axis in shape {x.shape}")
    n = x.shape[-1]
    ms = np.mean(x.data * x.data, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    out_data = x.data * inv

    def backward(out):
        g = out.grad
        dot = np.sum(g * x.data, axis=-1, keepdims=True)
        x.accumulate_grad(g * inv - x.data * (inv**3) * dot / n)

    return _node(out_data, (x,), backward, "rms_norm")


def layer_norm(x, eps: float = 1e-6) -> Tensor:
    """(x - mean) / sqrt(var + eps) along the last axis, no learnable affine."""
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ShapeError(f"layer_norm: empty last axis in shape {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv

    def backward(out):
        g = out.grad
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        x.accumulate_grad(inv * (g - gm - y * gym))

    return _node(y, (x,), backward, "layer_norm")


def logsumexp(x, mask: np.ndarray | None = None) -> Tensor:
    """log(sum(exp(x))) along the last axis, optionally over mask==1 entries only.

    The mask is a constant 0/1 array; every row must keep at least one entry.
    """
    x = as_tensor(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=x.dtype)
        if mask.shape != x.shape:
            raise ShapeError(f"logsumexp: mask shape {mask.shape} != input shape {x.shape}")
        shifted = np.where(mask > 0, x.data, -np.inf)
        m = shifted.max(axis=-1, keepdims=True)
        # exponentiate the masked values: exp(-inf) is an exact zero, while
        # mask * exp(raw) would turn large masked-out logits into 0 * inf
        w = np.exp(shifted - m)
    else:
        m = x.data.max(axis=-1, keepdims=True)
        w = np.exp(x.data - m)
    s = w.sum(axis=-1, keepdims=True)
    out_data = (m + np.log(s)).squeeze(-1)

    def backward(out):
        g = np.expand_dims(out.grad, -1)
        x.accumulate_grad(g * w / s)

    return _node(out_data, (x,), backward, "logsumexp")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(out):
        g = out.grad
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                t.accumulate_grad(g[tuple(idx)])

    return _node(out_data, tuple(tensors), backward, "concat")


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    x = as_tensor(x)
    axis = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = x.data[idx]

    def backward(out):
        g = np.zeros_like(x.data)
        g[idx] = out.grad
        x.accumulate_grad(g)

    return _node(out_data, (x,), backward, "narrow")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward(out):
        x.accumulate_grad(out.grad.reshape(x.shape))

    return _node(out_data, (x,), backward, "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = np.transpose(x.data, axes)

    def backward(out):
        x.accumulate_grad(np.transpose(out.grad, inverse))

    return _node(out_data, (x,), backward, "transpose")


def expand(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    out_data = np.broadcast_to(x.data, shape)

    def backward(out):
        x.accumulate_grad(_unbroadcast(out.grad, x.shape))

    return _node(out_data.copy(), (x,), backward, "expand")


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup: table is (vocab, width), ids any integer shape."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: ids out of range [0, {table.shape[0]}) with min {ids.min()}, max {ids.max()}"
        )
    out_data = table.data[ids]

    def backward(out):
        # per-column bincount scatters far faster than np.add.at row scatter
        vocab, width = table.shape
        flat_ids = ids.reshape(-1)
        rows = out.grad.reshape(-1, width)
        g = np.empty_like(table.data)
        for col in range(width):
            g[:, col] = np.bincount(flat_ids, weights=rows[:, col], minlength=vocab)
        table.accumulate_grad(g)

    return _node(out_data, (table,), backward, "embedding")


def take_rows(x, idx: np.ndarray) -> Tensor:
    """Gather along the first axis with an integer index vector."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    out_data = x.data[idx]

    def backward(out):
        g = np.zeros_like(x.data)
        np.add.at(g, idx, out.grad)
        x.accumulate_grad(g)

    return _node(out_data, (x,), backward, "take_rows")


def select_columns(x, idx: np.ndarray) -> Tensor:
    """For a 2-d x, pick x[i, idx[i]] for every row i."""
    x = as_tensor(x)
    idx = np.asarray(idx)
    rows = np.arange(x.shape[0])
    out_data = x.data[rows, idx]

    def backward(out):
        g = np.zeros_like(x.data)
        np.add.at(g, (rows, idx), out.grad)
        x.accumulate_grad(g)

    return _node(out_data, (x,), backward, "select_columns")


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root; accumulates into leaf ``grad``s."""
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node)

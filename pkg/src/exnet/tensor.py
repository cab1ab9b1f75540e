"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray together with an optional gradient buffer and
a backward closure. Ops build a DAG; calling :meth:`Tensor.backward` on a
scalar root walks the graph in reverse topological order and accumulates
``d(root)/d(node)`` into ``grad`` for every node that requires it.

Gradient accumulation contract: when a tensor feeds several downstream ops
(a shared subexpression), each consumer adds its contribution into the same
``grad`` buffer, so after ``backward`` the buffer holds the full sum. Fresh
passes must therefore start from zeroed or absent gradients; the optimizer's
``zero_grad`` does that.

Arrays are float32 unless the caller hands in float64 explicitly; gradient
checking runs the same graph in float64. Backward closures never write into
their inputs' data buffers, only into ``grad``.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import kernels

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    # -- graph plumbing ------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            if g.shape == self.data.shape:
                self.grad = np.array(g)  # private copy, callers may pass views
            else:
                self.grad = np.zeros_like(self.data)
                self.grad += g
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this tensor, which must hold a single element.

        Leaf gradients accumulate across repeated calls; interior nodes are
        recomputed fresh each call so fan-in is never double-counted.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
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
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def zero_grad(self) -> None:
        self.grad = None

    def free_graph(self) -> None:
        """Sever the graph hanging off this tensor so the interpreter can
        reclaim every interior activation immediately by refcount.

        Training loops call this once per step after the optimizer update;
        the backward closures form reference cycles that otherwise sit
        around until a full garbage-collector pass.
        """
        stack: list[Tensor] = [self]
        seen: set[int] = set()
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            parents = node._parents
            node._parents = ()
            node._backward = None
            if parents:
                node.grad = None
                stack.extend(parents)


_GRAD_ENABLED = True


class no_grad:
    """Context manager: ops run inside build no graph (pure inference)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _track(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and _track(*parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward(out)
    return out


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_same_dtype(a, b, "add")
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(
            f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.data.shape))
        return run

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_same_dtype(a, b, "mul")
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(
            f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))
        return run

    return _make(data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar without touching the array dtype."""
    s = float(s)
    data = a.data * s

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * s)
        return run

    return _make(data, (a,), bwd)


def shift(a: Tensor, s: float) -> Tensor:
    """Add a python scalar without touching the array dtype."""
    data = a.data + float(s)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad)
        return run

    return _make(data, (a,), bwd)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return shift(a, -b)
    return add(a, neg(b))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading axes.

    Both operands must be at least 2-d; gradients for broadcast leading
    dimensions are summed back down.
    """
    a, b = _coerce(a), _coerce(b)
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul needs 2d+ operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def bwd(out):
        def run():
            g = out.grad
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.data.shape))
        return run

    return _make(data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map x @ w + b.

    With a 2-d weight the leading axes of x collapse into one row dimension,
    so batched inputs run as a single matrix product instead of a loop of
    small ones; anything else falls back to matmul + add."""
    x, w = _coerce(x), _coerce(w)
    if b is not None:
        b = _coerce(b)
    fused_bias = b is None or b.data.shape == (w.data.shape[-1],)
    if w.data.ndim != 2 or x.data.ndim < 2 or not fused_bias:
        out = matmul(x, w)
        return add(out, b) if b is not None else out
    _check_same_dtype(x, w, "linear")
    if b is not None:
        _check_same_dtype(x, b, "linear")
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(
            f"matmul: inner dimensions differ, {x.data.shape} @ {w.data.shape}"
        )
    x2 = x.data.reshape(-1, x.data.shape[-1])
    data = x2 @ w.data
    if b is not None:
        data += b.data
    data = data.reshape(*x.data.shape[:-1], w.data.shape[1])
    parents = (x, w) if b is None else (x, w, b)

    def bwd(out):
        def run():
            g2 = out.grad.reshape(-1, w.data.shape[1])
            if x.requires_grad:
                x._accumulate((g2 @ w.data.T).reshape(x.data.shape))
            if w.requires_grad:
                w._accumulate(x2.T @ g2)
            if b is not None and b.requires_grad:
                b._accumulate(g2.sum(axis=0))
        return run

    return _make(data, parents, bwd)


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad.reshape(a.data.shape))
        return run

    return _make(data, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(np.transpose(out.grad, inverse))
        return run

    return _make(data, (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or start + length > a.data.shape[axis]:
        raise ValueError(
            f"narrow: [{start}, {start + length}) out of range for axis {axis}"
            f" of shape {a.data.shape}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index]

    def bwd(out):
        def run():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                g[index] = out.grad
                a._accumulate(g)
        return run

    return _make(data, (a,), bwd)


def concat0(parts: Iterable[Tensor]) -> Tensor:
    """Concatenate along axis 0."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat0 of an empty sequence")
    data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def bwd(out):
        def run():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p._accumulate(out.grad[lo:hi])
        return run

    return _make(data, tuple(parts), bwd)


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(out):
        def run():
            if not a.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        return run

    return _make(data, (a,), bwd)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tlog(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad / a.data)
        return run

    return _make(data, (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient flows only through unclipped entries."""
    data = np.clip(a.data, lo, hi)

    def bwd(out):
        def run():
            if a.requires_grad:
                inside = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
                a._accumulate(out.grad * inside)
        return run

    return _make(data, (a,), bwd)


# -- neural ops ---------------------------------------------------------------


def gelu(a: Tensor) -> Tensor:
    """Exact gaussian-error-linear unit, x * Phi(x)."""
    data = kernels.gelu_fwd(a.data)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(kernels.gelu_bwd(a.data, out.grad))
        return run

    return _make(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    data = kernels.sigmoid_fwd(a.data)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(kernels.sigmoid_bwd(out.data, out.grad))
        return run

    return _make(data, (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Stable softmax over the last axis (row max subtracted before exp)."""
    data = kernels.softmax_fwd(a.data)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(kernels.softmax_bwd(out.data, out.grad))
        return run

    return _make(data, (a,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale+shift.

    eps sits inside the square root, so zero-variance rows stay finite.
    """
    data, mean, rstd = kernels.layer_norm_fwd(x.data, gamma.data, beta.data, eps)

    def bwd(out):
        def run():
            gx, ggamma, gbeta = kernels.layer_norm_bwd(
                x.data, gamma.data, mean, rstd, out.grad
            )
            if x.requires_grad:
                x._accumulate(gx)
            if gamma.requires_grad:
                gamma._accumulate(ggamma)
            if beta.requires_grad:
                beta._accumulate(gbeta)
        return run

    return _make(data, (x, gamma, beta), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate) so expectation is preserved. Identity when not training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    keep *= 1.0 / (1.0 - rate)
    data = a.data * keep

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * keep)
        return run

    return _make(data, (a,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into an embedding table; gradients scatter-add by id."""
    ids = np.asarray(ids)
    if ids.size and int(ids.max()) >= table.data.shape[0]:
        raise IndexError(
            f"embedding id {int(ids.max())} out of range for table of"
            f" {table.data.shape[0]} rows"
        )
    if ids.size and int(ids.min()) < 0:
        raise IndexError("embedding ids must be non-negative")
    data = table.data[ids]

    def bwd(out):
        def run():
            if table.requires_grad:
                g = np.zeros_like(table.data)
                np.add.at(g, ids, out.grad)
                table._accumulate(g)
        return run

    return _make(data, (table,), bwd)


# operator sugar used throughout the model code
Tensor.__add__ = lambda self, other: (
    shift(self, other) if isinstance(other, (int, float)) else add(self, other)
)
Tensor.__radd__ = Tensor.__add__
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: shift(neg(self), other)
Tensor.__mul__ = lambda self, other: (
    scale(self, other) if isinstance(other, (int, float)) else mul(self, other)
)
Tensor.__rmul__ = Tensor.__mul__
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)

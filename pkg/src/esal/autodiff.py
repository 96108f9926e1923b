"""Dense tensors with reverse-mode automatic differentiation.

Ops build a define-by-run graph of :class:`Tensor` nodes; ``backward()`` on a
scalar node walks the graph once in reverse topological order and accumulates
gradients into every reachable node with ``requires_grad``.  All math is
numpy, either float64 (gradient checks, tests) or float32 (training runs);
there is no broadcasting beyond scalar-tensor, so shape bugs surface early.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class AutodiffError(RuntimeError):
    """Graph misuse (non-scalar backward, repeated backward, ...)."""


class Tensor:
    """A numpy array plus the bookkeeping to backpropagate through it.

    ``_backward_fn(upstream) -> tuple[np.ndarray | None, ...]`` returns one
    gradient per parent (None for non-differentiable inputs).  Backward
    functions must not mutate the upstream array.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable | None = None
        self._done = False

    # -- introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def value(self) -> np.ndarray:
        """Copy of the forward value, detached from the graph."""
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    # -- graph -----------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar node.

        Raises on non-scalar roots and on a second call for the same node
        (rebuild the graph instead of reusing it).
        """
        if self.data.size != 1:
            raise AutodiffError(f"backward requires a scalar node, got shape {self.shape}")
        if self._done:
            raise AutodiffError("backward already called on this node")
        self._done = True

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=parent.data.dtype, copy=True)
                else:
                    parent.grad += g

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Build a graph node from a forward value and its backward closure.

    This is the hook for fused ops (LSTM runs, losses) whose backward is
    written by hand for speed or stability.
    """
    out = Tensor(data, dtype=data.dtype)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


# ---------------------------------------------------------------------------
# Elementwise and scalar ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape(a, b, "add")
    data = a.data + b.data

    def backward(g):
        ga = g.sum().reshape(a.shape) if _is_scalar(a) and g.size > 1 else g
        gb = g.sum().reshape(b.shape) if _is_scalar(b) and g.size > 1 else g
        return ga, gb

    return node(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        ga = g.sum().reshape(a.shape) if _is_scalar(a) and g.size > 1 else g
        gb = g.sum().reshape(b.shape) if _is_scalar(b) and g.size > 1 else g
        return ga, -gb

    return node(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        ga = g * b.data
        gb = g * a.data
        if _is_scalar(a) and ga.size > 1:
            ga = ga.sum().reshape(a.shape)
        if _is_scalar(b) and gb.size > 1:
            gb = gb.sum().reshape(b.shape)
        return ga, gb

    return node(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s
    return node(data, (a,), lambda g: (g * s,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return node(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    y = np.log(a.data)
    return node(y, (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic; output lies strictly in (0, 1)."""
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return node(y, (a,), lambda g: (g * y * (1.0 - y),))


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy semantics."""
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D supported, got {ad.shape} @ {bd.shape}")
    a2 = ad.reshape(1, -1) if ad.ndim == 1 else ad
    b2 = bd.reshape(-1, 1) if bd.ndim == 1 else bd
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: inner dims differ for {ad.shape} @ {bd.shape}")
    out2 = a2 @ b2
    if ad.ndim == 1 and bd.ndim == 1:
        data = out2.reshape(())
    elif ad.ndim == 1:
        data = out2.reshape(-1)
    elif bd.ndim == 1:
        data = out2.reshape(-1)
    else:
        data = out2

    def backward(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(ad.shape)
        gb = (a2.T @ g2).reshape(bd.shape)
        return ga, gb

    return node(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    return node(a.data.T.copy(), (a,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# Shape manipulation


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)
    return node(data, (a,), lambda g: (g.reshape(a.shape),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: no inputs")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return node(data, tuple(parts), backward)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along one axis."""
    if not (0 <= axis < a.data.ndim):
        raise ShapeError(f"narrow: axis {axis} out of range for shape {a.shape}")
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeError(f"narrow: range [{start},{stop}) bad for shape {a.shape}")
    slicer = [slice(None)] * a.data.ndim
    slicer[axis] = slice(start, stop)
    key = tuple(slicer)
    data = a.data[key].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return node(data, (a,), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape 1-D tensors into a matrix, one per row."""
    if not rows:
        raise ShapeError("stack_rows: no inputs")
    data = np.stack([r.data for r in rows], axis=0)

    def backward(g):
        return tuple(g[i] for i in range(len(rows)))

    return node(data, tuple(rows), backward)


# ---------------------------------------------------------------------------
# Reductions


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return node(np.asarray(data), (a,), backward)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full_like(a.data, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy() / n,)

    return node(np.asarray(data), (a,), backward)


def max_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    """Max reduction; the gradient routes to the first argmax on ties."""
    if axis is None:
        flat_idx = int(np.argmax(a.data))
        data = np.asarray(a.data.reshape(-1)[flat_idx])

        def backward(g):
            full = np.zeros_like(a.data)
            full.reshape(-1)[flat_idx] = float(g)
            return (full,)

        return node(data, (a,), backward)

    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(
            full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        return (full,)

    return node(np.asarray(data), (a,), backward)


# ---------------------------------------------------------------------------
# Softmax and gathers


def softmax(a: Tensor) -> Tensor:
    """Row-wise stable softmax over the last axis (1-D or 2-D input)."""
    x = a.data
    if x.ndim not in (1, 2):
        raise ShapeError(f"softmax: expected 1-D or 2-D, got {a.shape}")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return node(y, (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-D, got {a.shape}")
    return softmax(a)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup; backward scatter-adds into the table (embedding style)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: ids must be 1-D, got shape {idx.shape}")
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"gather_rows: id out of range [0,{table.shape[0]}) in {idx.tolist()}"
        )
    data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return node(data, (table,), backward)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """x[m,n] + v[n], the explicit per-row bias add."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {x.shape} and {v.shape} incompatible")
    data = x.data + v.data

    def backward(g):
        return g, g.sum(axis=0)

    return node(data, (x, v), backward)


def scale_rows(x: Tensor, c: Tensor) -> Tensor:
    """Scale each row of x[m,n] by the matching entry of c ([m] or [m,1])."""
    col = c.data.reshape(-1, 1)
    if x.data.ndim != 2 or col.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows: shapes {x.shape} and {c.shape} incompatible")
    data = x.data * col

    def backward(g):
        gx = g * col
        gc = (g * x.data).sum(axis=1).reshape(c.shape)
        return gx, gc

    return node(data, (x, c), backward)


# ---------------------------------------------------------------------------
# Gradient checking


def numeric_grad(f: Callable[[], float], t: Tensor, coords, eps: float) -> np.ndarray:
    """Central finite differences of f at the given flat coordinates of t."""
    flat = t.data.reshape(-1)
    out = np.empty(len(coords), dtype=np.float64)
    for k, c in enumerate(coords):
        orig = flat[c]
        flat[c] = orig + eps
        fp = f()
        flat[c] = orig - eps
        fm = f()
        flat[c] = orig
        out[k] = (fp - fm) / (2.0 * eps)
    return out


def grad_check(
    f: Callable[[], Tensor],
    tensors: Iterable[tuple[str, Tensor]],
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> tuple[float, dict[str, float]]:
    """Compare autodiff gradients of ``f()`` against central differences.

    ``f`` must rebuild the graph from the tensors' current values on every
    call and be deterministic.  Up to ``max_coords`` coordinates per tensor
    are sampled.  Relative error uses ``|a-n| / max(|a|+|n|, 1e-6)`` so that
    finite-difference noise around zero gradients does not dominate.  Points
    of non-differentiability (e.g. exact reduction ties) are the caller's
    responsibility to avoid.

    Returns (max relative error, per-tensor max relative error).
    """
    named = list(tensors)
    for _, t in named:
        t.zero_grad()
    loss = f()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in named}

    rng = np.random.default_rng(seed)
    scalar_f = lambda: float(f().data)
    report: dict[str, float] = {}
    worst = 0.0
    for name, t in named:
        size = t.data.size
        coords = (
            np.arange(size)
            if size <= max_coords
            else np.sort(rng.choice(size, size=max_coords, replace=False))
        )
        num = numeric_grad(scalar_f, t, coords, eps)
        ana = analytic[name].reshape(-1)[coords]
        denom = np.maximum(np.abs(ana) + np.abs(num), 1e-6)
        rel = float(np.max(np.abs(ana - num) / denom)) if len(coords) else 0.0
        report[name] = rel
        worst = max(worst, rel)
    return worst, report

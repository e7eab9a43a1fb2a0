"""Dense float64 tensors with tape-based reverse-mode differentiation.

Graphs are implicit: each tensor remembers its parents and a closure that
scatters the output gradient back to them.  backward() walks the reachable
subgraph in reverse creation order (a valid topological order, since parents
are always created before children), which makes gradient accumulation
deterministic and bit-reproducible across runs.

Only what the fusion network and losses need is implemented: elementwise
arithmetic with numpy-style broadcasting, 2D matmul, a handful of
activations, axis-0 gather/scatter, segment max (pillar pooling), reductions,
row norms and a numerically stable softmax.  Everything is float64.
"""

import itertools

import numpy as np

from ..errors import IndexOutOfRange, NotScalar, ShapeMismatch

# atomic under the GIL, so node ids stay unique across threads
_next_id = itertools.count(1).__next__

# active kink recorders (see gradcheck); relu and l2_norm report how close
# their pre-activations came to the non-differentiable point
_kink_recorders: list = []


def record_kink(distances: np.ndarray) -> None:
    if _kink_recorders:
        d = float(np.min(distances)) if distances.size else np.inf
        for rec in _kink_recorders:
            rec.append(d)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._id = _next_id()

    # -- plumbing ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may be a view into (or alias of) a consumer's buffer
            self.grad = np.array(g, dtype=np.float64, copy=True)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate .grad on every requires_grad tensor reachable from this scalar."""
        if self.data.size != 1:
            raise NotScalar("backward() requires a scalar loss")
        # collect the reachable subgraph
        seen = {self._id: self}
        stack = [self]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if p._id not in seen:
                    seen[p._id] = p
                    stack.append(p)
        self.grad = np.ones_like(self.data)
        for node in sorted(seen.values(), key=lambda t: -t._id):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), bw)


# -- activations --------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(g):
        a._accumulate(g * data)

    return _make(data, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bw(g):
        a._accumulate(g * (0.5 / data))

    return _make(data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        a._accumulate(g * (1.0 - data * data))

    return _make(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    record_kink(np.abs(a.data))
    pos = a.data > 0.0
    data = np.where(pos, a.data, 0.0)

    def bw(g):
        a._accumulate(g * pos)

    return _make(data, (a,), bw)


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    old = a.data.shape

    def bw(g):
        a._accumulate(g.reshape(old))

    return _make(data, (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(data, tuple(ts), bw)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows (axis 0) by integer index; duplicates allowed."""
    idx = np.asarray(indices, dtype=np.int64)
    n = a.data.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexOutOfRange(f"gather index out of range for axis of size {n}")
    data = a.data[idx]

    def bw(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        a._accumulate(acc)

    return _make(data, (a,), bw)


def scatter_add_rows(a: Tensor, indices, num_rows: int) -> Tensor:
    """Rows of `a` summed into a fresh (num_rows, ...) tensor at `indices`."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape[0] != a.data.shape[0]:
        raise ShapeMismatch("one index per input row required")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise IndexOutOfRange(f"scatter index out of range for {num_rows} rows")
    data = np.zeros((num_rows,) + a.data.shape[1:])
    np.add.at(data, idx, a.data)

    def bw(g):
        a._accumulate(g[idx])

    return _make(data, (a,), bw)


def segment_max(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment columnwise max over rows of a 2D tensor.

    Empty segments yield zero rows.  Backward routes each output gradient to
    the first row attaining the max within its segment, so ties resolve
    deterministically.
    """
    idx = np.asarray(segment_ids, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeMismatch("segment_max expects a 2D tensor")
    if idx.shape[0] != a.data.shape[0]:
        raise ShapeMismatch("one segment id per input row required")
    n = a.data.shape[0]
    data = np.full((num_segments, a.data.shape[1]), -np.inf)
    np.maximum.at(data, idx, a.data)
    data[np.bincount(idx, minlength=num_segments) == 0] = 0.0

    # first row achieving the max per (segment, column); n marks "no row"
    is_max = a.data == data[idx]
    rows = np.broadcast_to(np.arange(n)[:, None], a.data.shape)
    winner = np.full((num_segments, a.data.shape[1]), n, dtype=np.int64)
    np.minimum.at(winner, idx, np.where(is_max, rows, n))

    def bw(g):
        acc = np.zeros_like(a.data)
        seg_i, col_i = np.nonzero(winner < n)
        np.add.at(acc, (winner[seg_i, col_i], col_i), g[seg_i, col_i])
        a._accumulate(acc)

    return _make(data, (a,), bw)


# -- reductions ---------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _make(data, (a,), bw)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(reduce_sum(a, axis=axis), Tensor(1.0 / n))


def l2_norm_rows(a: Tensor) -> Tensor:
    """Euclidean norm of each row of a 2D tensor -> (N,).

    The gradient at an exactly-zero row is taken as 0 (the minimum-norm
    subgradient), which keeps zero-initialized predictions trainable against
    zero targets.
    """
    if a.data.ndim != 2:
        raise ShapeMismatch("l2_norm_rows expects a 2D tensor")
    data = np.sqrt(np.sum(a.data * a.data, axis=1))
    record_kink(data)

    def bw(g):
        safe = np.where(data > 0.0, data, 1.0)
        a._accumulate((g / safe)[:, None] * a.data)

    return _make(data, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along one axis; rows sum to 1 within 1e-12."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = np.sum(g * data, axis=axis, keepdims=True)
        a._accumulate(data * (g - dot))

    return _make(data, (a,), bw)


def segment_softmax(logits: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax over variable-size groups of a 1D logit vector.

    Each segment's maximum is subtracted before exponentiation (an exact
    shift for softmax, so treating it as constant keeps gradients exact).
    """
    idx = np.asarray(segment_ids, dtype=np.int64)
    if logits.data.ndim != 1:
        raise ShapeMismatch("segment_softmax expects 1D logits")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, idx, logits.data)
    seg_max[~np.isfinite(seg_max)] = 0.0
    shifted = sub(logits, Tensor(seg_max[idx]))
    e = exp(shifted)
    denom = scatter_add_rows(e, idx, num_segments)
    return div(e, gather_rows(denom, idx))

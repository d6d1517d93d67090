"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

Every primitive records a node on the active :class:`Tape` together with a
vector-Jacobian product written in terms of the same primitives.  Running
:func:`grad` with ``create_graph=True`` therefore records the backward pass
on the tape as well, and a second :func:`grad` call differentiates through
the first one (double backprop, as needed by a gradient penalty).

Usage::

    w = Tensor(np.ones((3, 1)), requires_grad=True)
    with Tape() as tape:
        loss = (x @ w).sum()
    (dw,) = grad(tape, loss, [w])
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from dgz.errors import ContractError, MissingNodeError, ShapeError

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def _recording():
    return getattr(_state, "recording", True)


@contextmanager
def no_record():
    """Evaluate primitives without recording anything on the active tape."""
    prev = _recording()
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = prev


class Tape:
    """Append-only record of primitive operations.

    A tape is single-writer: use one tape per training step.  Tapes nest;
    operations are recorded on the innermost active one.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _append(self, node):
        node._tape = self
        node._index = len(self.nodes)
        self.nodes.append(node)


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def current_tape():
    """Innermost active tape of this thread, or ``None``."""
    return _active_tape()


class Tensor:
    """An immutable array value, optionally tracked for differentiation.

    Leaves created with ``requires_grad=True`` act as parameters.  Results
    of primitives are tracked when a tape is active and any input is
    tracked; otherwise they are plain constants.
    """

    __slots__ = ("value", "requires_grad", "_parents", "_vjp", "_tape", "_index", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None):
        if isinstance(value, Tensor):
            value = value.value
        arr = np.asarray(value)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._tape = None
        self._index = -1
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return self._vjp is None

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def detach(self):
        return Tensor(self.value)

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, vjp):
    tape = _active_tape()
    if tape is None or not _recording() or not any(p.requires_grad for p in parents):
        return Tensor(value)
    out = Tensor(value, requires_grad=True)
    out._parents = parents
    out._vjp = vjp
    tape._append(out)
    return out


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = tsum(g, axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return g


# --- primitives -----------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_sum_to(g, sa), _sum_to(g, sb)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_sum_to(g, sa), _sum_to(neg(g), sb)),
    )


def neg(a):
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (neg(g),))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (
            _sum_to(mul(g, b), sa) if a.requires_grad else None,
            _sum_to(mul(g, a), sb) if b.requires_grad else None,
        ),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g):
        ga = _sum_to(div(g, b), sa) if a.requires_grad else None
        gb = _sum_to(neg(div(mul(g, a), mul(b, b))), sb) if b.requires_grad else None
        return ga, gb

    return _make(a.value / b.value, (a, b), vjp)


def power(a, exponent):
    """Elementwise power with a constant exponent."""
    a = as_tensor(a)
    p = float(exponent)
    if p == 2.0:
        return mul(a, a)
    return _make(
        a.value**p,
        (a,),
        lambda g: (mul(g, mul(p, power(a, p - 1.0))),),
    )


def exp(a):
    a = as_tensor(a)
    out_holder = []

    def vjp(g):
        return (mul(g, out_holder[0]),)

    out = _make(np.exp(a.value), (a,), vjp)
    out_holder.append(out)
    return out


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.value), (a,), lambda g: (div(g, a),))


def sqrt(a):
    a = as_tensor(a)
    out_holder = []

    def vjp(g):
        return (div(g, mul(2.0, out_holder[0])),)

    out = _make(np.sqrt(a.value), (a,), vjp)
    out_holder.append(out)
    return out


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    gain = np.where(a.value > 0, 1.0, slope).astype(a.dtype)
    return _make(a.value * gain, (a,), lambda g: (mul(g, gain),))


def relu(a):
    return leaky_relu(a, 0.0)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(
        a.value @ b.value,
        (a, b),
        lambda g: (
            matmul(g, transpose(b)) if a.requires_grad else None,
            matmul(transpose(a), g) if b.requires_grad else None,
        ),
    )


def transpose(a):
    a = as_tensor(a)
    return _make(a.value.T, (a,), lambda g: (transpose(g),))


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (reshape(g, src),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    src = a.shape
    return _make(
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        lambda g: (_sum_to(g, src),),
    )


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    src = a.shape
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    kept = tuple(1 if i in axes else s for i, s in enumerate(src))

    def vjp(g):
        if not keepdims:
            g = reshape(g, kept)
        return (broadcast_to(g, src),)

    return _make(a.value.sum(axis=axes, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def concat_cols(parts):
    """Concatenate 2-D tensors along columns."""
    parts = [as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(
            slice_cols(g, int(bounds[i]), int(bounds[i + 1])) if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    return _make(np.concatenate([p.value for p in parts], axis=1), tuple(parts), vjp)


def slice_cols(a, start, stop):
    a = as_tensor(a)
    n, m = a.shape
    return _make(
        a.value[:, start:stop].copy(),
        (a,),
        lambda g: (pad_cols(g, start, m - stop),),
    )


def pad_cols(a, left, right):
    a = as_tensor(a)
    n, w = a.shape
    out = np.zeros((n, left + w + right), dtype=a.dtype)
    out[:, left : left + w] = a.value
    return _make(out, (a,), lambda g: (slice_cols(g, left, left + w),))


def row_norm(a):
    """Euclidean norm of each row as an n x 1 column.

    The derivative at a zero row is taken as zero (subgradient), which keeps
    a gradient penalty finite for a constant critic.
    """
    a = as_tensor(a)
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    zero = (norms == 0).astype(a.dtype)
    nonzero = 1.0 - zero
    out_holder = []

    def vjp(g):
        safe = add(out_holder[0], zero)
        return (mul(a, div(mul(g, nonzero), safe)),)

    out = _make(norms, (a,), vjp)
    out_holder.append(out)
    return out


def normalize_rows(a, eps=0.0):
    """Scale each row to unit Euclidean norm."""
    a = as_tensor(a)
    n = row_norm(a)
    if eps:
        n = add(n, eps)
    return div(a, n)


# --- gradients ------------------------------------------------------------


def grad(tape, output, wrt, create_graph=False):
    """Reverse-mode gradient of a scalar ``output`` with respect to ``wrt``.

    Returns numpy arrays, or tracked tensors when ``create_graph`` is set so
    that the result can be differentiated again.  Tensors in ``wrt`` that
    ``output`` does not depend on get zero gradients.
    """
    if not isinstance(output, Tensor) or output.size != 1:
        shape = output.shape if isinstance(output, Tensor) else type(output).__name__
        raise ContractError(f"grad: output must be a scalar tensor, got {shape}")
    for w in wrt:
        if not isinstance(w, Tensor) or not w.requires_grad:
            raise MissingNodeError("grad: wrt tensor is not tracked")
        if not w.is_leaf and w._tape is not tape:
            raise MissingNodeError("grad: wrt tensor is not on this tape")
    if not output.is_leaf and output._tape is not tape:
        raise MissingNodeError("grad: output is not on this tape")

    adj = {}
    if output.requires_grad:
        adj[id(output)] = Tensor(np.ones_like(output.value))

    def accumulate(node, g):
        key = id(node)
        prev = adj.get(key)
        adj[key] = g if prev is None else add(prev, g)

    def run():
        stop = output._index if not output.is_leaf else -1
        for node in reversed(tape.nodes[: stop + 1]):
            g = adj.get(id(node))
            if g is None:
                continue
            grads = node._vjp(g)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                accumulate(parent, pg)

    if create_graph:
        _tape_stack().append(tape)
        try:
            run()
        finally:
            _tape_stack().pop()
    else:
        with no_record():
            run()

    results = []
    for w in wrt:
        g = adj.get(id(w))
        if g is None:
            g = Tensor(np.zeros_like(w.value))
        results.append(g if create_graph else g.value)
    return results

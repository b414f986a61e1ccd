"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The engine is a classic Wengert-list tape: every primitive appends one node
holding its parent node ids and a closure that maps the output gradient to
per-parent gradients. Tapes are single-use — ``backward`` consumes the tape —
which is what lets the noise optimizer record one diffusion step at a time
and keep memory flat in the step count.

Tensors detached from any tape are plain immutable value wrappers; ops on
them never record anything. Broadcasting is restricted to explicit
leading-dimension expansion (``broadcast_to``) so every backward rule stays a
few lines of numpy.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class GradEngineError(RuntimeError):
    """Tape misuse: consumed-tape reuse, cross-tape ops, non-scalar backward."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class GradTape:
    """Append-only record of primitive applications, consumed by backward()."""

    __slots__ = ("_parents", "_backwards", "_leaves", "live")

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._backwards: list[Callable | None] = []
        self._leaves: list[tuple[int, tuple[int, ...]]] = []
        self.live = True

    def _check_live(self):
        if not self.live:
            raise GradEngineError("tape already consumed by backward()")

    def _record(self, parents: tuple[int, ...], bwd: Callable | None) -> int:
        self._check_live()
        self._parents.append(parents)
        self._backwards.append(bwd)
        return len(self._parents) - 1

    def leaf(self, value) -> "Tensor":
        """Register an input variable whose gradient backward() will report."""
        data = _as_array(value)
        node = self._record((), None)
        self._leaves.append((node, data.shape))
        return Tensor(data, self, node)

    def __len__(self) -> int:
        return len(self._parents)


class Tensor:
    """Shaped float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: GradTape | None = None, node: int | None = None):
        self.data = _as_array(data)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def attached(self) -> bool:
        return self.tape is not None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f" node={self.node}" if self.attached else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return smul(self, float(other))

    def __neg__(self):
        return smul(self, -1.0)


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value)


def _tape_of(*tensors: Tensor) -> GradTape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        t.tape._check_live()
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise GradEngineError("operands belong to two different live tapes")
    return tape


def _apply(out_data: np.ndarray, inputs: Sequence[Tensor],
           bwd: Callable | None) -> Tensor:
    """Wrap a computed value; record a node when any input is attached."""
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out_data)
    parents = tuple(t.node if t.tape is not None else -1 for t in inputs)
    node = tape._record(parents, bwd)
    return Tensor(out_data, tape, node)


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape {a.shape} does not match shape {b.shape}")


# -- primitives -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "add")
    return _apply(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "sub")
    return _apply(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _apply(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def smul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _apply(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _apply(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _apply(out, ts, bwd)


def take(a, indices, axis: int = 0) -> Tensor:
    """Select rows along ``axis``; backward scatter-adds into the source."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take: indices must be 1-D, got shape {idx.shape}")
    if axis >= a.data.ndim:
        raise ShapeError(f"take: axis {axis} out of range for shape {a.shape}")
    n = a.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"take: index out of range for axis of length {n}: "
                         f"{int(idx.min())}..{int(idx.max())}")
    out = np.take(a.data, idx, axis=axis)
    src_shape = a.shape

    def bwd(g):
        grad = np.zeros(src_shape, dtype=np.float64)
        moved = np.moveaxis(grad, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (grad,)

    return _apply(out, (a,), bwd)


def narrow(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; backward zero-pads."""
    a = as_tensor(a)
    if axis >= a.data.ndim:
        raise ShapeError(f"narrow: axis {axis} out of range for shape {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    src_shape = a.shape

    def bwd(g):
        grad = np.zeros(src_shape, dtype=np.float64)
        grad[sl] = g
        return (grad,)

    return _apply(a.data[sl].copy(), (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}")
    old = a.shape
    return _apply(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _apply(np.asarray(a.data.sum()), (a,),
                  lambda g: (np.broadcast_to(g, shape).copy(),))


def tmean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return _apply(np.asarray(a.data.mean()), (a,),
                  lambda g: (np.broadcast_to(g / n, shape).copy(),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _apply(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _apply(out, (a,), lambda g: ((1.0 - out * out) * g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _apply(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def broadcast_to(a, shape) -> Tensor:
    """Expand by prepending dimensions; backward sums the expanded axes."""
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    nd = a.data.ndim
    if nd > len(shape) or (nd and shape[len(shape) - nd:] != a.shape):
        raise ShapeError(
            f"broadcast_to: {a.shape} is not a trailing suffix of {shape}")
    lead = tuple(range(len(shape) - nd))
    src_shape = a.shape

    def bwd(g):
        return (g.sum(axis=lead).reshape(src_shape) if lead else g,)

    return _apply(np.broadcast_to(a.data, shape).copy(), (a,), bwd)


# -- backward pass ------------------------------------------------------------

def backward(tape: GradTape, output: Tensor) -> dict[int, np.ndarray]:
    """Propagate d(output)/d(node) through the tape; consumes the tape.

    Returns gradients keyed by node id. Every leaf registered on the tape
    gets an entry, zero-filled when the output never depended on it.
    """
    if output.tape is not tape or output.node is None:
        raise GradEngineError("output tensor is not attached to this tape")
    tape._check_live()
    if output.data.size != 1:
        raise GradEngineError(
            f"backward() needs a scalar output, got shape {output.shape}")
    tape.live = False

    grads: dict[int, np.ndarray] = {output.node: np.ones_like(output.data)}
    for node in range(output.node, -1, -1):
        g = grads.get(node)
        bwd = tape._backwards[node]
        if g is None or bwd is None:
            continue
        for pid, pg in zip(tape._parents[node], bwd(g)):
            if pid < 0:
                continue  # detached operand
            acc = grads.get(pid)
            grads[pid] = pg.copy() if acc is None else acc + pg

    for leaf_id, shape in tape._leaves:
        if leaf_id not in grads:
            grads[leaf_id] = np.zeros(shape, dtype=np.float64)
    return grads

"""Dense 2-D float64 tensors with reverse-mode automatic differentiation.

Every value is a row-major (rows, cols) float64 matrix. Operations build a
flat tape of primitive nodes; ``backward`` walks the tape once, in reverse,
and returns a gradient for every leaf. Tensors are treated as immutable once
constructed, and one tape belongs to one training run (one writer). When no
operand is on a tape an op just computes, recording nothing.

Shapes in comments use the convention ``(rows, cols)``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "Grads",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "transpose",
    "sum_all",
    "mean_all",
    "log",
    "clamp",
    "softmax_rows",
    "elementwise",
    "tanh",
    "sigmoid",
    "relu",
    "elu",
    "concat",
    "split",
    "slice_rows",
    "slice_cols",
    "alpha_dropout",
    "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def _coerce(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D; got array of ndim {arr.ndim}")
    return arr


class Tensor:
    """A (rows, cols) float64 matrix, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, values, tape: "Tape | None" = None, node_id: int | None = None):
        self.data = _coerce(values)
        self.tape = tape
        self.node_id = node_id

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, _as_tensor(other))

    def __add__(self, other) -> "Tensor":
        return add(self, _as_tensor(other))

    def __sub__(self, other) -> "Tensor":
        return sub(self, _as_tensor(other))

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        tag = "" if self.node_id is None else f", node={self.node_id}"
        return f"Tensor({self.rows}x{self.cols}{tag})"


class _Node:
    __slots__ = ("parents", "pull")

    def __init__(self, parents: tuple[int | None, ...], pull: Callable | None):
        self.parents = parents
        self.pull = pull  # grad_out -> per-parent gradient contributions


class Tape:
    """Ordered record of primitive ops; parents always precede children."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, values) -> Tensor:
        """Register values as a differentiable leaf (e.g. a trainable weight)."""
        node_id = len(self.nodes)
        self.nodes.append(_Node((), None))
        return Tensor(values, tape=self, node_id=node_id)

    def _emit(self, out: np.ndarray, parents: Sequence[Tensor], pull: Callable) -> Tensor:
        node_id = len(self.nodes)
        self.nodes.append(_Node(tuple(p.node_id for p in parents), pull))
        return _wrap(out, tape=self, node_id=node_id)


class Grads:
    """Gradient of a scalar loss with respect to every tape node."""

    __slots__ = ("_by_node",)

    def __init__(self, by_node: list[np.ndarray | None]):
        self._by_node = by_node

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.node_id is None:
            raise KeyError("tensor was never recorded on the tape")
        g = self._by_node[t.node_id]
        if g is None:
            return np.zeros_like(t.data)
        return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(out: np.ndarray, tape: "Tape | None" = None, node_id: int | None = None) -> Tensor:
    # internal fast path: ``out`` is already a fresh 2-D float64 array
    t = Tensor.__new__(Tensor)
    t.data = out
    t.tape = tape
    t.node_id = node_id
    return t


def _tape_of(a: Tensor, b: Tensor | None = None) -> "Tape | None":
    ta = a.tape
    if b is None:
        return ta
    tb = b.tape
    if ta is None:
        return tb
    if tb is not None and tb is not ta:
        raise ValueError("operands were recorded on different tapes")
    return ta


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Collapse a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    r, c = shape
    if r == 1 and c == 1:
        return g.sum().reshape(1, 1)
    if r == 1:
        return g.sum(axis=0, keepdims=True)
    if c == 1:
        return g.sum(axis=1, keepdims=True)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    ar, ac = a.data.shape
    br, bc = b.data.shape
    if (ar != br and ar != 1 and br != 1) or (ac != bc and ac != 1 and bc != 1):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not align")


# ---------------------------------------------------------------------------
# arithmetic primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data
    tape = _tape_of(a, b)
    if tape is None:
        return _wrap(out)
    ad, bd = a.data, b.data

    def pull(g):
        return (g @ bd.T, ad.T @ g)

    return tape._emit(out, (a, b), pull)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a row (1, n), column (m, 1) or scalar operand broadcasts."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out = a.data + b.data
    tape = _tape_of(a, b)
    if tape is None:
        return _wrap(out)
    a_shape, b_shape = a.shape, b.shape

    def pull(g):
        return (_reduce_to(g, a_shape), _reduce_to(g, b_shape))

    return tape._emit(out, (a, b), pull)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = a.data - b.data
    tape = _tape_of(a, b)
    if tape is None:
        return _wrap(out)
    a_shape, b_shape = a.shape, b.shape

    def pull(g):
        return (_reduce_to(g, a_shape), -_reduce_to(g, b_shape))

    return tape._emit(out, (a, b), pull)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with the same broadcasting rules as ``add``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    tape = _tape_of(a, b)
    if tape is None:
        return _wrap(out)
    ad, bd = a.data, b.data
    a_shape, b_shape = a.shape, b.shape

    def pull(g):
        return (_reduce_to(g * bd, a_shape), _reduce_to(g * ad, b_shape))

    return tape._emit(out, (a, b), pull)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = a.data * c
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)

    def pull(g):
        return (g * c,)

    return tape._emit(out, (a,), pull)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = a.data.T.copy()
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)

    def pull(g):
        return (g.T,)

    return tape._emit(out, (a,), pull)


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.array([[a.data.sum()]])
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)
    shape = a.shape

    def pull(g):
        return (np.full(shape, g[0, 0]),)

    return tape._emit(out, (a,), pull)


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return scale(sum_all(a), 1.0 / a.data.size)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out = np.log(a.data)
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)
    ad = a.data

    def pull(g):
        return (g / ad,)

    return tape._emit(out, (a,), pull)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip entries into [lo, hi]; gradient passes only where the input lies inside."""
    a = _as_tensor(a)
    if not lo < hi:
        raise ValueError(f"clamp: need lo < hi, got [{lo}, {hi}]")
    out = np.clip(a.data, lo, hi)
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)

    def pull(g):
        return (g * mask,)

    return tape._emit(out, (a,), pull)


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # evaluate on the non-overflowing branch for each sign
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(x))  # alpha fixed at 1


# kind -> (forward, derivative in terms of input x and output y); the
# derivative is looked up at backward time so the verify harness can inject
# a deliberate fault without touching recorded nodes.
ELEMENTWISE_KINDS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    "elu": (_elu, lambda x, y: np.where(x > 0, 1.0, y + 1.0)),
}


def elementwise(a: Tensor, kind: str) -> Tensor:
    a = _as_tensor(a)
    try:
        fwd = ELEMENTWISE_KINDS[kind][0]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    out = fwd(a.data)
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)
    ad = a.data

    def pull(g):
        deriv = ELEMENTWISE_KINDS[kind][1]
        return (g * deriv(ad, out),)

    return tape._emit(out, (a,), pull)


def tanh(a: Tensor) -> Tensor:
    return elementwise(a, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    return elementwise(a, "sigmoid")


def relu(a: Tensor) -> Tensor:
    return elementwise(a, "relu")


def elu(a: Tensor) -> Tensor:
    return elementwise(a, "elu")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=1, keepdims=True)
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)

    def pull(g):
        gy = g * out
        return (gy - out * gy.sum(axis=1, keepdims=True),)

    return tape._emit(out, (a,), pull)


# ---------------------------------------------------------------------------
# layout primitives


def concat(a: Tensor, b: Tensor, axis: str) -> Tensor:
    """Stack two tensors along ``"rows"`` or ``"cols"``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if axis == "rows":
        if a.cols != b.cols:
            raise ShapeError(f"concat rows: column counts differ, {a.shape} vs {b.shape}")
        out = np.vstack([a.data, b.data])
        cut = a.rows

        def pull(g):
            return (g[:cut, :], g[cut:, :])

    elif axis == "cols":
        if a.rows != b.rows:
            raise ShapeError(f"concat cols: row counts differ, {a.shape} vs {b.shape}")
        out = np.hstack([a.data, b.data])
        cut = a.cols

        def pull(g):
            return (g[:, :cut], g[:, cut:])

    else:
        raise ValueError(f"concat axis must be 'rows' or 'cols', got {axis!r}")
    tape = _tape_of(a, b)
    if tape is None:
        return _wrap(out)
    return tape._emit(out, (a, b), pull)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not 0 <= start < stop <= a.rows:
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {a.shape}")
    out = a.data[start:stop, :]
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)
    shape = a.shape

    def pull(g):
        full = np.zeros(shape)
        full[start:stop, :] = g
        return (full,)

    return tape._emit(out, (a,), pull)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    if not 0 <= start < stop <= a.cols:
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for {a.shape}")
    out = a.data[:, start:stop]
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)
    shape = a.shape

    def pull(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return tape._emit(out, (a,), pull)


def split(a: Tensor, sizes: Iterable[int], axis: str) -> list[Tensor]:
    """Inverse of repeated ``concat``: cut into consecutive blocks of ``sizes``."""
    a = _as_tensor(a)
    sizes = list(sizes)
    if axis not in ("rows", "cols"):
        raise ValueError(f"split axis must be 'rows' or 'cols', got {axis!r}")
    total = a.rows if axis == "rows" else a.cols
    if sum(sizes) != total or any(s <= 0 for s in sizes):
        raise ShapeError(f"split sizes {sizes} do not partition {total} {axis}")
    parts = []
    offset = 0
    for s in sizes:
        if axis == "rows":
            parts.append(slice_rows(a, offset, offset + s))
        else:
            parts.append(slice_cols(a, offset, offset + s))
        offset += s
    return parts


# ---------------------------------------------------------------------------
# alpha dropout

# saturation point and affine correction of self-normalizing dropout; with
# these constants a standard-normal input keeps zero mean and unit variance.
_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805
_DROP_VALUE = -_SELU_SCALE * _SELU_ALPHA

_MASK32 = (1 << 32) - 1
_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=256)
def _cached_mask(word: int, shape: tuple[int, int], keep: float) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=word))
    mask = (rng.random(shape) < keep).astype(np.float64)
    mask.setflags(write=False)
    return mask


def dropout_mask(key: tuple[int, int, int], shape: tuple[int, int], keep: float) -> np.ndarray:
    """Deterministic keep-mask from a counter-based generator keyed by (seed, layer, step).

    Masks are memoized; repeated evaluation at the same key (e.g. during a
    finite-difference sweep) reuses the same draw.
    """
    seed, layer, step = key
    word = ((seed & _MASK64) << 64) | ((layer & _MASK32) << 32) | (step & _MASK32)
    return _cached_mask(word, shape, keep)


def alpha_dropout(
    a: Tensor,
    p: float,
    key: tuple[int, int, int],
    training: bool,
) -> Tensor:
    """Self-normalizing dropout: dropped entries saturate at a fixed negative
    value and an affine correction restores the mean/variance of a
    standard-normal input. Identity when not training or p == 0.
    """
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"alpha_dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = 1.0 - p
    mask = dropout_mask(key, a.shape, keep)
    gain = (keep + _DROP_VALUE**2 * keep * p) ** -0.5
    shift = -gain * _DROP_VALUE * p
    out = gain * (a.data * mask + _DROP_VALUE * (1.0 - mask)) + shift
    tape = _tape_of(a)
    if tape is None:
        return _wrap(out)

    def pull(g):
        return (g * gain * mask,)

    return tape._emit(out, (a,), pull)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, tape: Tape) -> Grads:
    """Gradient of a scalar loss w.r.t. every node on the tape.

    Visits each node exactly once, in reverse recording order.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward: loss must be 1x1, got {loss.shape}")
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("backward: loss is not recorded on this tape")
    by_node: list[np.ndarray | None] = [None] * len(tape.nodes)
    by_node[loss.node_id] = np.ones((1, 1))
    for nid in range(loss.node_id, -1, -1):
        g = by_node[nid]
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.pull is None:  # leaf
            continue
        for pid, pg in zip(node.parents, node.pull(g)):
            if pid is None:
                continue  # untaped constant operand
            if by_node[pid] is None:
                by_node[pid] = pg
            else:
                by_node[pid] = by_node[pid] + pg
    return Grads(by_node)

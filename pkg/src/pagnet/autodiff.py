"""Minimal reverse-mode automatic differentiation on dense numpy arrays.

The primitive set is exactly what the point-cloud networks in this package
need: affine maps, ReLU, concatenation, max/sum reductions, softmax
cross-entropy, gather/scatter by integer index, and pairwise squared
distances. There is deliberately no general broadcasting; every primitive
states its shapes.

Conventions:
  * a ``Tensor`` wraps a float32 or float64 ndarray; values must be finite
    at all times (a NaN or Inf coming out of any primitive raises).
  * operations record onto the innermost active ``Tape`` (a context
    manager). With no active tape they are plain forward computations.
  * ``backward(tape, root)`` runs once per tape; the tape is frozen
    afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not satisfy a primitive's contract."""


class NonFiniteValues(FloatingPointError):
    """Raised when a primitive produces (or receives) NaN or Inf."""


class TapeError(RuntimeError):
    """Raised on tape misuse, e.g. a second backward pass."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteValues(f"{where}: non-finite values encountered")


class Tensor:
    """A dense array with an optional gradient accumulator.

    ``data`` is treated as immutable once the tensor participates in a
    recorded computation; ``grad`` is the one mutable slot and always has
    the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        keep_dtype = isinstance(data, (np.ndarray, np.generic)) and data.dtype in _FLOAT_DTYPES
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not keep_dtype:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.dtype not in _FLOAT_DTYPES:
            raise TypeError(f"tensors are float32/float64, got {arr.dtype}")
        _check_finite(arr, "Tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single element, shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad[...] = 0.0

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple, backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Records primitive applications in execution (topological) order."""

    __slots__ = ("nodes", "frozen")

    def __init__(self):
        self.nodes: list[_Node] = []
        self.frozen = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must nest"
        return False


def _record(out: Tensor, inputs: Sequence, backward_fn: Callable) -> Tensor:
    """Attach a node to the active tape if any differentiable input flows in.

    ``backward_fn(upstream)`` must return one gradient array (or None) per
    entry of ``inputs``, aligned positionally. Entries that are not Tensors
    are ignored during accumulation.
    """
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs and _TAPE_STACK:
        tape = _TAPE_STACK[-1]
        if tape.frozen:
            raise TapeError("cannot record onto a frozen tape")
        tape.nodes.append(_Node(out, tuple(inputs), backward_fn))
    return out


def backward(tape: Tape, root: Tensor) -> None:
    """Accumulate d(root)/d(x) into ``x.grad`` for every tensor on the tape.

    ``root`` must be a scalar (single element). The tape is frozen after
    the pass; calling backward twice on the same tape raises.
    """
    if tape.frozen:
        raise TapeError("backward already ran on this tape")
    if root.data.size != 1:
        raise ShapeMismatch(f"backward root must be scalar, got shape {root.shape}")
    tape.frozen = True
    root.grad = np.ones_like(root.data)
    for node in reversed(tape.nodes):
        upstream = node.out.grad
        if upstream is None:
            continue
        grads = node.backward_fn(upstream)
        for inp, g in zip(node.inputs, grads):
            if g is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
            inp.grad += g


def _binary_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: dtypes {a.dtype} and {b.dtype} differ")


def _fresh(data: np.ndarray, where: str) -> Tensor:
    _check_finite(data, where)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.grad = None
    return t


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "add")
    out = _fresh(a.data + b.data, "add")
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "sub")
    out = _fresh(a.data - b.data, "sub")
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_check(a, b, "mul")
    out = _fresh(a.data * b.data, "mul")
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _fresh(a.data * a.dtype.type(s), "scale")
    return _record(out, (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow becomes a NonFiniteValues error
        out_data = np.exp(a.data)
    out = _fresh(out_data, "exp")
    return _record(out, (a,), lambda g: (g * out_data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at exactly 0 is 0
    out = _fresh(np.where(mask, a.data, a.dtype.type(0)), "relu")
    return _record(out, (a,), lambda g: (g * mask,))


@dataclass
class LinearParams:
    """Weights of one affine map: ``weight`` is [C_in, C_out], ``bias`` [C_out]."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeMismatch(
                f"LinearParams wants 2-D weight and 1-D bias, got {self.weight.shape} / {self.bias.shape}"
            )
        if self.weight.shape[1] != self.bias.shape[0]:
            raise ShapeMismatch(
                f"weight {self.weight.shape} incompatible with bias {self.bias.shape}"
            )

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]

    @property
    def size(self) -> int:
        return self.weight.data.size + self.bias.data.size

    @staticmethod
    def create(c_in: int, c_out: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> "LinearParams":
        # uniform +-sqrt(6/(c_in+c_out)), zero bias
        limit = np.sqrt(6.0 / (c_in + c_out))
        w = rng.uniform(-limit, limit, size=(c_in, c_out)).astype(dtype)
        b = np.zeros(c_out, dtype=dtype)
        return LinearParams(parameter(w), parameter(b))


def apply_linear(x: Tensor, params: LinearParams) -> Tensor:
    """x [N, C_in] -> x @ weight + bias, shape [N, C_out]."""
    if x.ndim != 2:
        raise ShapeMismatch(f"apply_linear wants a 2-D input, got {x.shape}")
    if x.shape[1] != params.c_in:
        raise ShapeMismatch(
            f"apply_linear: input {x.shape} does not match weight {params.weight.shape}"
        )
    if x.dtype != params.weight.dtype:
        raise TypeError(f"apply_linear: dtypes {x.dtype} and {params.weight.dtype} differ")
    w, b = params.weight, params.bias
    with np.errstate(over="ignore"):
        out = _fresh(x.data @ w.data + b.data, "apply_linear")

    def bwd(g):
        return (g @ w.data.T, x.data.T @ g, g.sum(axis=0))

    return _record(out, (x, w, b), bwd)


def reduce_max(x: Tensor, axis: int) -> Tensor:
    """Max over one axis; on ties the gradient goes to the lowest index."""
    if x.data.shape[axis] == 0:
        raise ShapeMismatch(f"reduce_max over empty axis {axis} of {x.shape}")
    idx = np.argmax(x.data, axis=axis)  # first occurrence wins ties
    out = _fresh(np.max(x.data, axis=axis), "reduce_max")

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (dx,)

    return _record(out, (x,), bwd)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    """Sum over one axis, or over all elements (scalar) when axis is None."""
    out = _fresh(np.sum(x.data, axis=axis), "reduce_sum")
    shape = x.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(out, (x,), bwd)


def mean(x: Tensor) -> Tensor:
    return scale(reduce_sum(x), 1.0 / x.data.size)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Columnwise concatenation of [N, C_i] tensors into [N, sum C_i]."""
    if not xs:
        raise ShapeMismatch("concat of zero tensors")
    n = xs[0].shape[0]
    for t in xs:
        if t.ndim != 2 or t.shape[0] != n:
            raise ShapeMismatch(f"concat: row counts differ, {[t.shape for t in xs]}")
        if t.dtype != xs[0].dtype:
            raise TypeError("concat: mixed dtypes")
    out = _fresh(np.concatenate([t.data for t in xs], axis=1), "concat")
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=1))

    return _record(out, tuple(xs), bwd)


def stack_rows(xs: Sequence[Tensor]) -> Tensor:
    """Rowwise concatenation of [N_i, C] tensors into [sum N_i, C]."""
    if not xs:
        raise ShapeMismatch("stack_rows of zero tensors")
    c = xs[0].shape[-1]
    for t in xs:
        if t.ndim != 2 or t.shape[1] != c:
            raise ShapeMismatch(f"stack_rows: column counts differ, {[t.shape for t in xs]}")
    out = _fresh(np.concatenate([t.data for t in xs], axis=0), "stack_rows")
    splits = np.cumsum([t.shape[0] for t in xs])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=0))

    return _record(out, tuple(xs), bwd)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows of x [N, C] by an int index array of shape [M] or [M, K].

    Output is [M, C] or [M, K, C]; the backward pass scatter-adds, so
    repeated indices accumulate.
    """
    if x.ndim != 2:
        raise ShapeMismatch(f"gather_rows wants a 2-D source, got {x.shape}")
    idx = np.asarray(idx)
    if idx.ndim not in (1, 2) or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeMismatch("gather_rows: index must be a 1-D or 2-D integer array")
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    out = _fresh(x.data[idx], "gather_rows")
    c = x.shape[1]

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx.ravel(), g.reshape(-1, c))
        return (dx,)

    return _record(out, (x,), bwd)


def expand_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row of x [N, C] k times along a new middle axis -> [N, k, C]."""
    if x.ndim != 2:
        raise ShapeMismatch(f"expand_rows wants a 2-D input, got {x.shape}")
    out = _fresh(np.repeat(x.data[:, None, :], k, axis=1), "expand_rows")
    return _record(out, (x,), lambda g: (g.sum(axis=1),))


def broadcast_rows(x: Tensor, n: int) -> Tensor:
    """Tile a single row [1, C] to [n, C]."""
    if x.ndim != 2 or x.shape[0] != 1:
        raise ShapeMismatch(f"broadcast_rows wants shape [1, C], got {x.shape}")
    out = _fresh(np.broadcast_to(x.data, (n, x.shape[1])).copy(), "broadcast_rows")
    return _record(out, (x,), lambda g: (g.sum(axis=0, keepdims=True),))


def reshape(x: Tensor, shape) -> Tensor:
    out = _fresh(x.data.reshape(shape), "reshape")
    old = x.shape
    return _record(out, (x,), lambda g: (g.reshape(old),))


def scale_rows(x: Tensor, w: np.ndarray) -> Tensor:
    """Multiply each [C] vector of x [N, K, C] by the scalar w[n, k].

    ``w`` is a plain ndarray: the weights are derived from point positions
    and carry no gradient.
    """
    if isinstance(w, Tensor):
        raise TypeError("scale_rows weights are non-differentiable; pass an ndarray")
    w = np.asarray(w, dtype=x.dtype)
    if x.ndim != 3 or w.shape != x.shape[:2]:
        raise ShapeMismatch(f"scale_rows: x {x.shape} vs weights {w.shape}")
    out = _fresh(x.data * w[:, :, None], "scale_rows")
    return _record(out, (x,), lambda g: (g * w[:, :, None],))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of row-softmaxed logits [N, C] against int labels [N].

    Stabilized by subtracting the rowwise max before exponentiation.
    """
    if logits.ndim != 2:
        raise ShapeMismatch(f"softmax_cross_entropy wants [N, C] logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise ShapeMismatch(f"labels must be int [{n}], got {labels.shape} {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    sumex = ex.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sumex)
    nll = -log_probs[np.arange(n), labels]
    out = _fresh(np.asarray(nll.mean(), dtype=logits.dtype), "softmax_cross_entropy")
    probs = ex / sumex

    def bwd(g):
        dx = probs.copy()
        dx[np.arange(n), labels] -= 1.0
        dx *= g / n
        return (dx,)

    return _record(out, (logits,), bwd)


def pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distances between rows: out[i, j] = ||a_i - b_j||^2."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"pairwise_sq_dists: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = _fresh(np.einsum("ijk,ijk->ij", diff, diff), "pairwise_sq_dists")

    def bwd(g):
        da = 2.0 * np.einsum("ij,ijk->ik", g, diff)
        db = -2.0 * np.einsum("ij,ijk->jk", g, diff)
        return (da, db)

    return _record(out, (a, b), bwd)

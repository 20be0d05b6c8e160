"""Dense float64 tensors with reverse-mode automatic differentiation.

A `Tape` records the forward computation as an append-only list of nodes in
topological order; `Tape.gradients` runs one reverse sweep and is then
consumed. Tensors without a tape compute values only, so the same model code
serves both training and fast evaluation. Everything is float64: the models
here are small and reproducibility matters more than speed.

Any operation producing a non-finite value raises `NonFiniteError` naming the
op; silent NaN/Inf propagation makes training failures undiagnosable.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeMismatchError",
    "NonFiniteError",
    "TapeError",
    "as_tensor",
    "matmul",
    "silu",
    "sigmoid",
    "square",
    "sqrt",
    "concat",
    "stop_gradient",
    "custom_op",
    "finite_difference_check",
]


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf from finite inputs (overflow is an error)."""


class TapeError(RuntimeError):
    """Tape misuse: consumed twice, mixed tapes, or non-scalar loss."""


def _ensure_finite(op: str, arr: np.ndarray) -> None:
    if arr.size == 0:
        return
    lo, hi = np.min(arr), np.max(arr)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NonFiniteError(f"{op}: produced non-finite values (min={lo}, max={hi})")


class Tensor:
    """Dense n-dimensional float64 value, optionally attached to a tape."""

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape: "Tape | None" = None, node_id: int | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = "" if self.tape is None else f", node={self.node_id}"
        return f"Tensor(shape={self.shape}{tag})"

    # arithmetic sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def abs(self):
        return absolute(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("op", "input_ids", "vjp")

    def __init__(self, op, input_ids, vjp):
        self.op = op
        self.input_ids = input_ids
        self.vjp = vjp


class Tape:
    """Append-only record of one forward computation.

    Nodes are stored in topological order (every node's inputs precede it),
    and the reverse sweep visits each node exactly once. A tape is consumed
    by `gradients` and cannot be reused; build a fresh tape per step.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.parameter_ids: set[int] = set()
        self._leaf_shapes: dict[int, tuple[int, ...]] = {}
        self._consumed = False

    def _record(self, op: str, input_ids: list[int], vjp) -> int:
        if self._consumed:
            raise TapeError(f"{op}: tape already consumed")
        self.nodes.append(_Node(op, input_ids, vjp))
        return len(self.nodes) - 1

    def _leaf(self, values, trainable: bool) -> Tensor:
        nid = self._record("parameter" if trainable else "watch", [], None)
        t = Tensor(values, tape=self, node_id=nid)
        self._leaf_shapes[nid] = t.shape
        if trainable:
            self.parameter_ids.add(nid)
        return t

    def parameter(self, values) -> Tensor:
        """Attach `values` as a trainable leaf (shares the underlying array)."""
        return self._leaf(values, trainable=True)

    def watch(self, values) -> Tensor:
        """Attach `values` as a non-trainable leaf (for input gradients)."""
        return self._leaf(values, trainable=False)

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor] | None = None):
        """Reverse sweep from scalar `loss`.

        Returns gradients aligned with `wrt` (zeros for unused leaves), or a
        dict {node_id: grad} over all parameters when `wrt` is None.
        Consumes the tape.
        """
        if loss.tape is not self:
            raise TapeError("loss does not belong to this tape")
        if loss.values.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if self._consumed:
            raise TapeError("tape already consumed")
        self._consumed = True

        adjoint: list[np.ndarray | None] = [None] * len(self.nodes)
        adjoint[loss.node_id] = np.ones_like(loss.values)
        for nid in range(loss.node_id, -1, -1):
            g = adjoint[nid]
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            for iid, ig in node.vjp(g):
                if adjoint[iid] is None:
                    # Store by reference; never mutate in place afterwards
                    # (a passthrough vjp may hand the same array to two inputs).
                    adjoint[iid] = ig
                else:
                    adjoint[iid] = adjoint[iid] + ig

        def grad_of(t: Tensor) -> np.ndarray:
            if t.tape is not self:
                raise TapeError("wrt tensor does not belong to this tape")
            g = adjoint[t.node_id]
            return np.zeros_like(t.values) if g is None else np.asarray(g)

        if wrt is None:
            return {
                nid: (
                    np.zeros(self._leaf_shapes[nid])
                    if adjoint[nid] is None
                    else np.asarray(adjoint[nid])
                )
                for nid in self.parameter_ids
            }
        return [grad_of(t) for t in wrt]


# -- op plumbing -------------------------------------------------------------


def _find_tape(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise TapeError("operands belong to different tapes")
    return tape


def custom_op(
    op: str,
    out_values: np.ndarray,
    inputs: Sequence[Tensor],
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Record a primitive with a hand-written vector-Jacobian product.

    `vjp(adjoint)` must return one gradient per input (None for no flow).
    Result is recorded only when some input is tape-attached.
    """
    out_values = np.asarray(out_values, dtype=np.float64)
    _ensure_finite(op, out_values)
    tape = _find_tape(inputs)
    if tape is None:
        return Tensor(out_values)

    ids = [t.node_id if t.tape is not None else None for t in inputs]

    def node_vjp(g):
        pairs = []
        for iid, ig in zip(ids, vjp(g)):
            if iid is not None and ig is not None:
                pairs.append((iid, ig))
        return pairs

    nid = tape._record(op, [i for i in ids if i is not None], node_vjp)
    return Tensor(out_values, tape=tape, node_id=nid)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce adjoint `g` back to the (broadcast) operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_values(op: str, a: Tensor, b: Tensor, fn) -> np.ndarray:
    try:
        return fn(a.values, b.values)
    except ValueError as exc:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- elementwise and reduction ops -------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values("add", a, b, np.add)
    return custom_op(
        "add", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values("sub", a, b, np.subtract)
    return custom_op(
        "sub", out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values("mul", a, b, np.multiply)
    return custom_op(
        "mul",
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values("div", a, b, np.divide)
    return custom_op(
        "div",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op("neg", -a.values, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = a.values @ b.values
    return custom_op(
        "matmul", out, (a, b), lambda g: (g @ b.values.T, a.values.T @ g)
    )


def _axis_tuple(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g: np.ndarray, in_shape, axis, keepdims) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, in_shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = _axis_tuple(axis, a.ndim)
    out = a.values.sum(axis=ax, keepdims=keepdims)
    return custom_op(
        "sum", out, (a,), lambda g: (_expand_reduced(g, a.shape, ax, keepdims),)
    )


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = _axis_tuple(axis, a.ndim)
    count = 1
    for d in ax:
        count *= a.shape[d]
    out = a.values.mean(axis=ax, keepdims=keepdims)
    return custom_op(
        "mean", out, (a,), lambda g: (_expand_reduced(g, a.shape, ax, keepdims) / count,)
    )


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_values(a.values)
    return custom_op("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_values(a.values)
    out = a.values * s
    return custom_op(
        "silu", out, (a,), lambda g: (g * s * (1.0 + a.values * (1.0 - s)),)
    )


def square(a) -> Tensor:
    a = as_tensor(a)
    return custom_op("square", a.values * a.values, (a,), lambda g: (2.0 * a.values * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values < 0):
        raise NonFiniteError("sqrt: negative input")
    out = np.sqrt(a.values)
    return custom_op("sqrt", out, (a,), lambda g: (g / (2.0 * np.maximum(out, 1e-300)),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return custom_op("abs", np.abs(a.values), (a,), lambda g: (g * np.sign(a.values),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.values.reshape(shape)
    return custom_op("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return custom_op(
        "permute", a.values.transpose(axes), (a,), lambda g: (g.transpose(inv),)
    )


def take(a, key) -> Tensor:
    """Basic (slice/int) indexing; fancy indexing is not supported."""
    a = as_tensor(a)
    out = a.values[key]

    def vjp(g):
        z = np.zeros_like(a.values)
        z[key] = g
        return (z,)

    return custom_op("slice", out, (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.values for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return custom_op("concat", out, ts, vjp)


def stop_gradient(a) -> Tensor:
    """Pass the value through; block all gradient flow through this node."""
    a = as_tensor(a)
    return custom_op("stop_gradient", a.values.copy(), (a,), lambda g: (None,))


# -- gradient checking --------------------------------------------------------


def finite_difference_check(f, point, h: float = 1e-5) -> float:
    """Max relative error between tape gradients of `f` and central differences.

    `f` maps a Tensor to a scalar Tensor using ops from this module. The
    relative error per coordinate is |analytic - numeric| / (|numeric| + 1e-8).
    """
    point = np.asarray(point, dtype=np.float64)
    tape = Tape()
    x = tape.watch(point.copy())
    y = f(x)
    if y.values.size != 1:
        raise TapeError("finite_difference_check: f must return a scalar")
    (analytic,) = tape.gradients(y, [x])

    numeric = np.zeros_like(point)
    for idx in np.ndindex(point.shape):
        bumped = point.copy()
        bumped[idx] = point[idx] + h
        fp = f(Tensor(bumped)).values.item()
        bumped[idx] = point[idx] - h
        fm = f(Tensor(bumped)).values.item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError("finite_difference_check: non-finite f evaluation")
        numeric[idx] = (fp - fm) / (2.0 * h)

    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    return float(np.max(rel)) if rel.size else 0.0

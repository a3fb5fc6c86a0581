"""
Define-by-run reverse-mode differentiation over dense float64 matrices.

Every value on a tape is a 2-D ``numpy`` array. Scalars are 1x1 and vectors
are rows (1xn) unless an op says otherwise. A tape records nodes in
execution order, so parents always precede children, and ``backward`` walks
the list once in reverse.

A tape is single-use: build it, call ``backward`` once, throw it away.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import linalg as sla

from ..errors import CholeskyError, NonFiniteError, ShapeError, TapeError

logger = logging.getLogger(__name__)

Array = np.ndarray
Adjoint = Callable[[Array], Sequence[Optional[Array]]]
Operand = Union["Node", float, int, Array]

JITTER_START = 1e-8
JITTER_STOP = 1e-2


def as_matrix(value: object, what: str = "value") -> Array:
    """Coerce scalars, rows and matrices to a finite float64 2-D array."""
    array = np.array(value, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    elif array.ndim != 2:
        raise ShapeError(f"{what} must be at most 2-D, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return array


class Node:
    """One recorded value plus the rule that sends its adjoint to its parents."""

    __slots__ = ("tape", "index", "op", "parents", "value", "adjoint", "name")
    __array_priority__ = 1000

    def __init__(
        self,
        tape: "Tape",
        index: int,
        op: str,
        parents: tuple["Node", ...],
        value: Array,
        adjoint: Optional[Adjoint],
        name: Optional[str] = None,
    ) -> None:
        self.tape = tape
        self.index = index
        self.op = op
        self.parents = parents
        self.value = value
        self.adjoint = adjoint
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def T(self) -> "Node":
        return transpose(self)

    def item(self) -> float:
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

    def __add__(self, other: Operand) -> "Node":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Node":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Node":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Node":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Node":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Node":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "Node":
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> "Node":
        return div(other, self)

    def __matmul__(self, other: Operand) -> "Node":
        return matmul(self, other)

    def __rmatmul__(self, other: Operand) -> "Node":
        return matmul(other, self)

    def __neg__(self) -> "Node":
        return neg(self)

    def __pow__(self, power: int) -> "Node":
        if power != 2:
            raise ShapeError(f"only squaring is supported, got power {power}")
        return square(self)

    def __getitem__(self, key: object) -> "Node":
        if not isinstance(key, tuple) or len(key) != 2:
            raise ShapeError("nodes are indexed as node[rows, cols]")
        rows, cols = (_as_slice(part) for part in key)
        return slice_(self, rows, cols)


class Tape:
    """Ordered record of operations for one forward/backward pass."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._consumed = False

    def variable(self, value: object, name: str) -> Node:
        """Record a trainable leaf; ``backward`` reports its gradient under ``name``."""
        return self._record("variable", as_matrix(value, name), (), None, name=name)

    def constant(self, value: object) -> Node:
        return self._record("constant", as_matrix(value), (), None)

    def lift(self, value: Operand) -> Node:
        if isinstance(value, Node):
            if value.tape is not self:
                raise TapeError("operands belong to different tapes")
            return value
        return self.constant(value)

    def _record(
        self,
        op: str,
        value: Array,
        parents: tuple[Node, ...],
        adjoint: Optional[Adjoint],
        name: Optional[str] = None,
    ) -> Node:
        if self._consumed:
            raise TapeError("tape already ran backward; build a new tape")
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op} produced NaN or Inf")
        node = Node(self, len(self.nodes), op, parents, value, adjoint, name)
        self.nodes.append(node)
        return node

    def backward(self, output: Node) -> dict[str, Array]:
        """Accumulate adjoints from a 1x1 output into every trainable leaf."""
        if self._consumed:
            raise TapeError("backward may only run once per tape")
        if output.tape is not self:
            raise TapeError("output node belongs to a different tape")
        if output.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 output, got {output.shape}")
        self._consumed = True

        grads: dict[int, Array] = {output.index: np.ones((1, 1))}
        for node in reversed(self.nodes[: output.index + 1]):
            grad = grads.get(node.index)
            if grad is None or node.adjoint is None:
                continue
            for parent, parent_grad in zip(node.parents, node.adjoint(grad)):
                if parent_grad is None:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + parent_grad
                else:
                    grads[parent.index] = parent_grad

        return {
            node.name: grads.get(node.index, np.zeros_like(node.value))
            for node in self.nodes
            if node.op == "variable" and node.name is not None
        }


def _as_slice(part: object) -> slice:
    if isinstance(part, slice):
        return part
    if isinstance(part, (int, np.integer)):
        index = int(part)
        return slice(index, index + 1 if index != -1 else None)
    raise ShapeError(f"unsupported index {part!r}")


def _tape_of(*operands: Operand) -> Tape:
    for operand in operands:
        if isinstance(operand, Node):
            return operand.tape
    raise TapeError("at least one operand must be a Node")


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    return np.full(shape, grad.sum())


def _elementwise_pair(a: Operand, b: Operand, op: str) -> tuple[Node, Node]:
    tape = _tape_of(a, b)
    left, right = tape.lift(a), tape.lift(b)
    if left.shape != right.shape and (1, 1) not in (left.shape, right.shape):
        raise ShapeError(f"{op}: shapes {left.shape} and {right.shape} differ")
    return left, right


# -- elementwise arithmetic -------------------------------------------------


def add(a: Operand, b: Operand) -> Node:
    left, right = _elementwise_pair(a, b, "add")
    return left.tape._record(
        "add",
        left.value + right.value,
        (left, right),
        lambda g: (_unbroadcast(g, left.shape), _unbroadcast(g, right.shape)),
    )


def sub(a: Operand, b: Operand) -> Node:
    left, right = _elementwise_pair(a, b, "sub")
    return left.tape._record(
        "sub",
        left.value - right.value,
        (left, right),
        lambda g: (_unbroadcast(g, left.shape), _unbroadcast(-g, right.shape)),
    )


def mul(a: Operand, b: Operand) -> Node:
    left, right = _elementwise_pair(a, b, "mul")
    return left.tape._record(
        "mul",
        left.value * right.value,
        (left, right),
        lambda g: (
            _unbroadcast(g * right.value, left.shape),
            _unbroadcast(g * left.value, right.shape),
        ),
    )


def div(a: Operand, b: Operand) -> Node:
    left, right = _elementwise_pair(a, b, "div")
    out = left.value / right.value
    return left.tape._record(
        "div",
        out,
        (left, right),
        lambda g: (
            _unbroadcast(g / right.value, left.shape),
            _unbroadcast(-g * out / right.value, right.shape),
        ),
    )


def neg(a: Node) -> Node:
    return a.tape._record("neg", -a.value, (a,), lambda g: (-g,))


# -- unary maps -------------------------------------------------------------


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape._record("exp", out, (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    if np.any(a.value <= 0.0):
        raise NonFiniteError("log of a non-positive value")
    return a.tape._record("log", np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a: Node) -> Node:
    if np.any(a.value < 0.0):
        raise NonFiniteError("sqrt of a negative value")
    out = np.sqrt(a.value)
    return a.tape._record(
        "sqrt", out, (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-300),)
    )


def square(a: Node) -> Node:
    return a.tape._record("square", a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def sin(a: Node) -> Node:
    return a.tape._record("sin", np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a: Node) -> Node:
    return a.tape._record("cos", np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return a.tape._record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def clamp_min(a: Node, floor: float) -> Node:
    """Elementwise max(a, floor); the gradient passes only where a > floor."""
    keep = a.value > floor
    return a.tape._record(
        "clamp_min", np.where(keep, a.value, floor), (a,), lambda g: (g * keep,)
    )


# -- shape ops --------------------------------------------------------------


def matmul(a: Operand, b: Operand) -> Node:
    tape = _tape_of(a, b)
    left, right = tape.lift(a), tape.lift(b)
    if left.shape[1] != right.shape[0]:
        raise ShapeError(f"matmul: {left.shape} @ {right.shape}")
    return tape._record(
        "matmul",
        left.value @ right.value,
        (left, right),
        lambda g: (g @ right.value.T, left.value.T @ g),
    )


def transpose(a: Node) -> Node:
    return a.tape._record("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def sum_(a: Node, axis: Optional[int] = None) -> Node:
    """Sum everything (1x1), down columns (axis=0, 1xn) or across rows (axis=1, nx1)."""
    if axis is None:
        return a.tape._record(
            "sum", np.array([[a.value.sum()]]), (a,), lambda g: (np.full(a.shape, g[0, 0]),)
        )
    if axis not in (0, 1):
        raise ShapeError(f"sum axis must be None, 0 or 1, got {axis}")
    return a.tape._record(
        "sum",
        a.value.sum(axis=axis, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def broadcast_row(a: Node, rows: int) -> Node:
    """Repeat a 1xn row ``rows`` times."""
    if a.shape[0] != 1:
        raise ShapeError(f"broadcast_row needs a single row, got {a.shape}")
    return a.tape._record(
        "broadcast_row",
        np.repeat(a.value, rows, axis=0),
        (a,),
        lambda g: (g.sum(axis=0, keepdims=True),),
    )


def broadcast_col(a: Node, cols: int) -> Node:
    """Repeat an nx1 column ``cols`` times."""
    if a.shape[1] != 1:
        raise ShapeError(f"broadcast_col needs a single column, got {a.shape}")
    return a.tape._record(
        "broadcast_col",
        np.repeat(a.value, cols, axis=1),
        (a,),
        lambda g: (g.sum(axis=1, keepdims=True),),
    )


def slice_(a: Node, rows: slice, cols: slice) -> Node:
    out = a.value[rows, cols].copy()
    if out.size == 0:
        raise ShapeError(f"empty slice [{rows}, {cols}] of {a.shape}")

    def adjoint(g: Array) -> tuple[Array]:
        full = np.zeros_like(a.value)
        full[rows, cols] = g
        return (full,)

    return a.tape._record("slice", out, (a,), adjoint)


def concat(parts: Iterable[Operand], axis: int) -> Node:
    """Join nodes along rows (axis=0) or columns (axis=1)."""
    parts = list(parts)
    tape = _tape_of(*parts)
    nodes = [tape.lift(part) for part in parts]
    other = 1 - axis
    if len({node.shape[other] for node in nodes}) != 1:
        raise ShapeError(f"concat axis={axis}: {[node.shape for node in nodes]}")
    sizes = [node.shape[axis] for node in nodes]
    bounds = np.cumsum([0] + sizes)

    def adjoint(g: Array) -> list[Array]:
        if axis == 0:
            return [g[start:stop] for start, stop in zip(bounds[:-1], bounds[1:])]
        return [g[:, start:stop] for start, stop in zip(bounds[:-1], bounds[1:])]

    return tape._record(
        "concat", np.concatenate([node.value for node in nodes], axis=axis), tuple(nodes), adjoint
    )


# -- linear algebra ---------------------------------------------------------


def jittered_cholesky(matrix: Array) -> tuple[Array, float]:
    """Lower Cholesky factor of ``matrix``, adding diagonal jitter only if needed."""
    scale = float(np.mean(np.diag(matrix)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    ladder = [0.0]
    jitter = JITTER_START
    while jitter <= JITTER_STOP * (1.0 + 1e-9):
        ladder.append(jitter * scale)
        jitter *= 10.0
    identity = np.eye(matrix.shape[0])
    for amount in ladder:
        try:
            factor = sla.cholesky(matrix + amount * identity, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if amount > 0.0:
            logger.debug("cholesky needed jitter %.3e", amount)
        return factor, amount
    raise CholeskyError(
        f"matrix of size {matrix.shape[0]} is not positive definite "
        f"even with jitter {ladder[-1]:.3e}"
    )


def cholesky(a: Node) -> Node:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {a.shape}")
    factor, _ = jittered_cholesky(a.value)

    def adjoint(g: Array) -> tuple[Array]:
        phi = np.tril(factor.T @ g)
        phi[np.diag_indices_from(phi)] *= 0.5
        left = sla.solve_triangular(factor, phi, lower=True, trans="T")
        grad = sla.solve_triangular(factor, left.T, lower=True, trans="T").T
        return (0.5 * (grad + grad.T),)

    return a.tape._record("cholesky", factor, (a,), adjoint)


def solve_triangular(lower: Node, b: Operand, transpose: bool = False) -> Node:
    """Solve L X = B, or Lᵀ X = B when ``transpose``, for lower-triangular L."""
    tape = lower.tape
    rhs = tape.lift(b)
    if lower.shape[0] != lower.shape[1] or lower.shape[1] != rhs.shape[0]:
        raise ShapeError(f"solve_triangular: {lower.shape} vs {rhs.shape}")
    trans = "T" if transpose else "N"
    out = sla.solve_triangular(lower.value, rhs.value, lower=True, trans=trans, check_finite=False)

    def adjoint(g: Array) -> tuple[Array, Array]:
        if transpose:
            grad_b = sla.solve_triangular(lower.value, g, lower=True, check_finite=False)
            grad_l = -np.tril(out @ grad_b.T)
        else:
            grad_b = sla.solve_triangular(lower.value, g, lower=True, trans="T", check_finite=False)
            grad_l = -np.tril(grad_b @ out.T)
        return grad_l, grad_b

    return tape._record("solve_triangular", out, (lower, rhs), adjoint)


def logdet_cholesky(lower: Node) -> Node:
    """log|A| from its Cholesky factor: 2 Σ log L_ii."""
    diagonal = np.diag(lower.value)
    if np.any(diagonal <= 0.0):
        raise NonFiniteError("Cholesky factor has a non-positive diagonal")

    def adjoint(g: Array) -> tuple[Array]:
        return (np.diag(2.0 * g[0, 0] / diagonal),)

    return lower.tape._record(
        "logdet_cholesky", np.array([[2.0 * np.log(diagonal).sum()]]), (lower,), adjoint
    )

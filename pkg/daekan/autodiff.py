"""Scalar automatic differentiation with a time tangent and a reverse pass over both channels.

Every value carries its primal and its derivative with respect to the single
seeded input ``t`` (dual-number style). Each recorded node stores, per
parent, two local partials:

* ``J`` = d(child primal) / d(parent primal), which also equals
  d(child tangent) / d(parent tangent);
* ``K`` = d(child tangent) / d(parent primal).

The reverse pass propagates adjoints of the primal and of the tangent
channel, so gradients of expressions containing ``u'`` are exact.

A value may hold one real number or a 1-D batch of real numbers evaluated
in lockstep; parameters are scalars broadcast over the batch.

Operations with many operands, such as a whole KAN layer output, can be
recorded as one :func:`custom` node that brings its own reverse rule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from error_tracking import (
    ADDivisionByZeroError,
    AutodiffError,
    InputAlreadySeededError,
    NonFiniteValueError,
    RecordMismatchError,
    StaleRecordError,
)

Real = Union[float, np.ndarray]
Operand = Union["ADScalar", float, int, np.ndarray]
# (adjoint of the primal, adjoint of the tangent) -> per operand (primal, tangent) contributions
Pullback = Callable[[Optional[Real], Optional[Real]], Sequence[Tuple[Optional[Real], Optional[Real]]]]

_record_ids = itertools.count()

# node kinds
PARAMETER = "parameter"
INPUT = "input"
TANGENT = "tangent"


def _nonzero(value: Real) -> Optional[Real]:
    """``None`` for an exact scalar zero, so the reverse pass can skip the term."""
    if np.ndim(value) == 0 and value == 0.0:
        return None
    return value


class ComputationRecord:
    """Append-only record of one loss evaluation.

    Usable as a context manager; leaving the block closes the record and any
    later use of its values raises :class:`StaleRecordError`.
    """

    def __init__(self) -> None:
        self.record_id = next(_record_ids)
        self.kinds: List[str] = []
        self.parents: List[Tuple[Tuple[int, Optional[Real], Optional[Real]], ...]] = []
        self.shapes: List[Tuple[int, ...]] = []
        self.tangent_tracked: List[bool] = []
        self.parameter_ids: List[int] = []
        self.pullbacks: Dict[int, Tuple["Pullback", Tuple[Optional[int], ...]]] = {}
        self.input_id: Optional[int] = None
        self.active = True

    def __len__(self) -> int:
        return len(self.kinds)

    def __enter__(self) -> "ComputationRecord":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        self.active = False

    @property
    def parameter_count(self) -> int:
        return len(self.parameter_ids)

    def _append(self, kind: str, primal: Real, tangent: Real, parents, tracked: bool = True) -> "ADScalar":
        node_id = len(self.kinds)
        if not (np.all(np.isfinite(primal)) and np.all(np.isfinite(tangent))):
            raise NonFiniteValueError(f"Non-finite result of '{kind}'", node_id)
        self.kinds.append(kind)
        self.parents.append(tuple(parents))
        self.shapes.append(np.shape(primal))
        self.tangent_tracked.append(tracked)
        return ADScalar(primal, tangent, node_id, self)

    def _append_parameters(self, values: np.ndarray) -> List["ADScalar"]:
        start = len(self.kinds)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise NonFiniteValueError("Non-finite parameter value", start + int(bad[0]))
        count = len(values)
        ids = range(start, start + count)
        self.kinds.extend([PARAMETER] * count)
        self.parents.extend([()] * count)
        self.shapes.extend([()] * count)
        self.tangent_tracked.extend([True] * count)
        self.parameter_ids.extend(ids)
        return [ADScalar(value, 0.0, node_id, self) for value, node_id in zip(values.tolist(), ids)]


class ADScalar:
    """A primal value, its time tangent and its provenance in a record.

    Constants have ``node_id is None`` and tangent 0.
    """

    __slots__ = ("primal", "tangent", "node_id", "record")
    # Make numpy defer to our reflected operators (``np.float64 * ADScalar``).
    __array_ufunc__ = None

    def __init__(self, primal: Real, tangent: Real = 0.0,
                 node_id: Optional[int] = None,
                 record: Optional[ComputationRecord] = None) -> None:
        self.primal = primal
        self.tangent = tangent
        self.node_id = node_id
        self.record = record

    @property
    def is_constant(self) -> bool:
        return self.node_id is None

    @property
    def tangent_tracked(self) -> bool:
        if self.record is None:
            return True
        return self.record.tangent_tracked[self.node_id]

    def __repr__(self) -> str:
        return f"ADScalar(primal={self.primal!r}, tangent={self.tangent!r}, node={self.node_id})"

    def __add__(self, other: Operand) -> "ADScalar":
        return add(self, other)

    def __radd__(self, other: Operand) -> "ADScalar":
        return add(other, self)

    def __sub__(self, other: Operand) -> "ADScalar":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "ADScalar":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "ADScalar":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "ADScalar":
        return mul(other, self)

    def __truediv__(self, other: Operand) -> "ADScalar":
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> "ADScalar":
        return div(other, self)

    def __neg__(self) -> "ADScalar":
        return neg(self)

    def __pos__(self) -> "ADScalar":
        return self

    def __pow__(self, exponent: int) -> "ADScalar":
        return pow_int(self, exponent)


@dataclass(frozen=True)
class GradientVector:
    """d(output)/d(parameter) in parameter registration order."""
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, index):
        return self.values[index]

    def __add__(self, other: "GradientVector") -> "GradientVector":
        if len(self) != len(other):
            raise AutodiffError("Cannot add gradient vectors of different lengths")
        return GradientVector(self.values + other.values)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


# ============================================================================
# RECORD ENTRY POINTS
# ============================================================================

def _require_active(record: ComputationRecord) -> None:
    if not record.active:
        raise StaleRecordError(f"Computation record {record.record_id} is closed")


def register_parameter(record: ComputationRecord, value: float) -> ADScalar:
    """Register a trainable scalar; it appears in every later gradient of this record."""
    _require_active(record)
    node = record._append(PARAMETER, float(value), 0.0, ())
    record.parameter_ids.append(node.node_id)
    return node


def register_parameters(record: ComputationRecord, values: Iterable[float]) -> List[ADScalar]:
    """Register several parameters at once, in the given order."""
    _require_active(record)
    return record._append_parameters(np.array(values if isinstance(values, np.ndarray) else list(values), dtype=np.float64).ravel())


def seed_input(record: ComputationRecord, value: Union[float, Sequence[float], np.ndarray]) -> ADScalar:
    """Seed the time input (tangent exactly 1). One seeding per record."""
    _require_active(record)
    if record.input_id is not None:
        raise InputAlreadySeededError(
            f"Record {record.record_id} already has a seeded input (node {record.input_id})")
    primal = np.asarray(value, dtype=np.float64)
    if primal.ndim > 1:
        raise AutodiffError("The seeded input must be a scalar or a 1-D batch")
    if primal.ndim == 0:
        primal = float(primal)
        tangent: Real = 1.0
    else:
        tangent = np.ones_like(primal)
    node = record._append(INPUT, primal, tangent, ())
    record.input_id = node.node_id
    return node


def constant(value: Real) -> ADScalar:
    if np.ndim(value) == 0:
        return ADScalar(float(value), 0.0)
    array = np.asarray(value, dtype=np.float64)
    return ADScalar(array, np.zeros_like(array))


def _lift(value: Operand) -> ADScalar:
    if isinstance(value, ADScalar):
        return value
    return constant(value)


def _common_record(*operands: ADScalar) -> Optional[ComputationRecord]:
    record = None
    for operand in operands:
        if operand.record is None:
            continue
        if record is None:
            record = operand.record
        elif operand.record is not record:
            raise RecordMismatchError(
                f"Operands come from records {record.record_id} and {operand.record.record_id}")
    if record is not None:
        _require_active(record)
    return record


def _emit(kind: str, primal: Real, tangent: Real,
          partials: Sequence[Tuple[ADScalar, Optional[Real], Optional[Real]]]) -> ADScalar:
    """Create a node from its operands and their (J, K) local partials."""
    operands = [operand for operand, _, _ in partials]
    record = _common_record(*operands)
    if record is None:
        if not (np.all(np.isfinite(primal)) and np.all(np.isfinite(tangent))):
            raise NonFiniteValueError(f"Non-finite result of constant '{kind}'", -1)
        return ADScalar(primal, tangent)
    parents = []
    tracked = True
    for operand, first, second in partials:
        if operand.record is None:
            continue
        tracked = tracked and record.tangent_tracked[operand.node_id]
        parents.append((operand.node_id, _nonzero(first), _nonzero(second)))
    return record._append(kind, primal, tangent, parents, tracked)


# ============================================================================
# ELEMENTARY OPERATIONS
# ============================================================================

def _check_batch(a: ADScalar, b: ADScalar) -> None:
    shape_a, shape_b = np.shape(a.primal), np.shape(b.primal)
    if shape_a and shape_b and shape_a != shape_b:
        raise AutodiffError(f"Batch size mismatch: {shape_a} vs {shape_b}")


def add(a: Operand, b: Operand) -> ADScalar:
    a, b = _lift(a), _lift(b)
    _check_batch(a, b)
    return _emit("add", a.primal + b.primal, a.tangent + b.tangent,
                 ((a, 1.0, None), (b, 1.0, None)))


def sub(a: Operand, b: Operand) -> ADScalar:
    a, b = _lift(a), _lift(b)
    _check_batch(a, b)
    return _emit("sub", a.primal - b.primal, a.tangent - b.tangent,
                 ((a, 1.0, None), (b, -1.0, None)))


def mul(a: Operand, b: Operand) -> ADScalar:
    a, b = _lift(a), _lift(b)
    _check_batch(a, b)
    return _emit("mul", a.primal * b.primal, a.tangent * b.primal + a.primal * b.tangent,
                 ((a, b.primal, b.tangent), (b, a.primal, a.tangent)))


def _next_node_id(*operands: ADScalar) -> int:
    record = _common_record(*operands)
    return -1 if record is None else len(record)


def div(a: Operand, b: Operand) -> ADScalar:
    a, b = _lift(a), _lift(b)
    _check_batch(a, b)
    if np.any(np.asarray(b.primal) == 0.0):
        raise ADDivisionByZeroError("Division by zero", _next_node_id(a, b))
    inv = 1.0 / b.primal
    inv2 = inv * inv
    primal = a.primal * inv
    tangent = a.tangent * inv - a.primal * b.tangent * inv2
    return _emit("div", primal, tangent, (
        (a, inv, -b.tangent * inv2),
        (b, -a.primal * inv2, -a.tangent * inv2 + 2.0 * a.primal * b.tangent * inv2 * inv),
    ))


def neg(a: Operand) -> ADScalar:
    a = _lift(a)
    return _emit("neg", -a.primal, -a.tangent, ((a, -1.0, None),))


def pow_int(a: Operand, exponent: int) -> ADScalar:
    """``a ** n`` for integer ``n``."""
    if isinstance(exponent, bool) or not isinstance(exponent, (int, np.integer)):
        raise AutodiffError(f"Only integer exponents are supported, got {exponent!r}")
    a = _lift(a)
    n = int(exponent)
    if n == 0:
        return _emit("pow", np.ones_like(a.primal) if np.ndim(a.primal) else 1.0,
                     np.zeros_like(a.primal) if np.ndim(a.primal) else 0.0, ((a, 0.0, None),))
    if n < 0 and np.any(np.asarray(a.primal) == 0.0):
        raise ADDivisionByZeroError("Negative power of zero", _next_node_id(a))
    p = a.primal
    first = n * p ** (n - 1) if n != 1 else 1.0
    second = n * (n - 1) * p ** (n - 2) if n not in (0, 1) else 0.0
    return _emit("pow", p ** n, first * a.tangent, ((a, first, second * a.tangent),))


def elementwise(kind: str, a: Operand, value: Real, first: Real, second: Real) -> ADScalar:
    """Apply a scalar function given its value, first and second derivative at ``a``."""
    a = _lift(a)
    return _emit(kind, value, first * a.tangent, ((a, first, second * a.tangent),))


def _is_ad(x) -> bool:
    return isinstance(x, ADScalar)


def sin(x):
    if not _is_ad(x):
        return np.sin(x)
    s, c = np.sin(x.primal), np.cos(x.primal)
    return elementwise("sin", x, s, c, -s)


def cos(x):
    if not _is_ad(x):
        return np.cos(x)
    s, c = np.sin(x.primal), np.cos(x.primal)
    return elementwise("cos", x, c, -s, -c)


def exp(x):
    if not _is_ad(x):
        return np.exp(x)
    e = np.exp(x.primal)
    return elementwise("exp", x, e, e, e)


def tanh(x):
    if not _is_ad(x):
        return np.tanh(x)
    y = np.tanh(x.primal)
    first = 1.0 - y * y
    return elementwise("tanh", x, y, first, -2.0 * y * first)


def _logistic_value(p: Real) -> Real:
    # 0.5 * (1 + tanh(p / 2)) never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * p))


def logistic(x):
    if not _is_ad(x):
        return _logistic_value(x)
    s = _logistic_value(x.primal)
    first = s * (1.0 - s)
    return elementwise("logistic", x, s, first, first * (1.0 - 2.0 * s))


def dot(coefficients: Sequence[Operand], values: Sequence[Operand],
        bias: Optional[Operand] = None) -> ADScalar:
    """``sum_i c_i * v_i (+ bias)`` as one node."""
    if len(coefficients) != len(values):
        raise AutodiffError(f"dot: {len(coefficients)} coefficients for {len(values)} values")
    cs = [_lift(c) for c in coefficients]
    vs = [_lift(v) for v in values]
    primal: Real = 0.0
    tangent: Real = 0.0
    partials = []
    for c, v in zip(cs, vs):
        _check_batch(c, v)
        primal = primal + c.primal * v.primal
        tangent = tangent + c.tangent * v.primal + c.primal * v.tangent
        partials.append((c, v.primal, v.tangent))
        partials.append((v, c.primal, c.tangent))
    if bias is not None:
        b = _lift(bias)
        primal = primal + b.primal
        tangent = tangent + b.tangent
        partials.append((b, 1.0, None))
    return _emit("dot", primal, tangent, partials)


def ad_sum(values: Sequence[Operand]) -> ADScalar:
    """Sum of several values as one node, in the given order."""
    if not values:
        return constant(0.0)
    lifted = [_lift(v) for v in values]
    primal: Real = 0.0
    tangent: Real = 0.0
    for v in lifted:
        primal = primal + v.primal
        tangent = tangent + v.tangent
    return _emit("sum", primal, tangent, [(v, 1.0, None) for v in lifted])


def custom(kind: str, primal: Real, tangent: Real, operands: Sequence[Operand],
           pullback: Pullback) -> ADScalar:
    """A node whose reverse rule is supplied by the caller.

    ``pullback(bar_primal, bar_tangent)`` returns one ``(primal, tangent)``
    adjoint contribution per operand, in operand order; either may be ``None``.
    Operands that are not recorded values are passed over.
    """
    record = None
    operand_ids: List[Optional[int]] = []
    tracked = True
    for operand in operands:
        if not isinstance(operand, ADScalar) or operand.record is None:
            operand_ids.append(None)
            continue
        if record is None:
            record = operand.record
        elif operand.record is not record:
            raise RecordMismatchError(
                f"Operands come from records {record.record_id} and {operand.record.record_id}")
        operand_ids.append(operand.node_id)
        tracked = tracked and record.tangent_tracked[operand.node_id]
    if record is None:
        if not (np.all(np.isfinite(primal)) and np.all(np.isfinite(tangent))):
            raise NonFiniteValueError(f"Non-finite result of constant '{kind}'", -1)
        return ADScalar(primal, tangent)
    _require_active(record)
    parents = [(node_id, None, None) for node_id in operand_ids if node_id is not None]
    node = record._append(kind, primal, tangent, parents, tracked)
    record.pullbacks[node.node_id] = (pullback, tuple(operand_ids))
    return node


def batch_mean(x: Operand) -> ADScalar:
    """Mean over the batch axis; a scalar passes through unchanged."""
    x = _lift(x)
    if np.ndim(x.primal) == 0:
        return x
    n = np.shape(x.primal)[0]
    return _emit("mean", float(np.mean(x.primal)), float(np.mean(x.tangent)),
                 ((x, 1.0 / n, None),))


def tangent_of(x: ADScalar) -> ADScalar:
    """Promote the time tangent of ``x`` to a primal value (``x'``).

    The result's own tangent (a second time derivative) is not tracked; taking
    ``tangent_of`` of it again raises :class:`AutodiffError`.
    """
    if not isinstance(x, ADScalar):
        raise AutodiffError("tangent_of expects an ADScalar")
    if x.record is None:
        return constant(x.tangent)
    _require_active(x.record)
    if not x.record.tangent_tracked[x.node_id]:
        raise AutodiffError(f"Tangent of node {x.node_id} is not tracked")
    zero = np.zeros_like(x.tangent) if np.ndim(x.tangent) else 0.0
    return x.record._append(TANGENT, x.tangent, zero, ((x.node_id, None, None),), tracked=False)


# ============================================================================
# REVERSE PASS
# ============================================================================

def _fit(contribution: Real, shape: Tuple[int, ...]) -> Real:
    if shape == () and np.ndim(contribution) > 0:
        return float(np.sum(contribution))
    if shape != () and np.ndim(contribution) == 0:
        return np.full(shape, contribution)
    return contribution


def _accumulate(store: List[Optional[Real]], node_id: int, contribution: Real,
                shape: Tuple[int, ...]) -> None:
    contribution = _fit(contribution, shape)
    current = store[node_id]
    store[node_id] = contribution if current is None else current + contribution


def backward(record: ComputationRecord, output: ADScalar) -> GradientVector:
    """Gradient of a scalar output with respect to every registered parameter."""
    if not isinstance(output, ADScalar):
        raise AutodiffError("backward expects an ADScalar output")
    _require_active(record)
    if output.node_id is None:
        return GradientVector(np.zeros(record.parameter_count))
    if output.record is not record:
        raise StaleRecordError("Output does not belong to this computation record")
    if np.ndim(output.primal) != 0:
        raise AutodiffError("backward needs a scalar output; reduce batches with batch_mean")

    size = output.node_id + 1
    adj_primal: List[Optional[Real]] = [None] * size
    adj_tangent: List[Optional[Real]] = [None] * size
    adj_primal[output.node_id] = 1.0

    kinds, parents, shapes = record.kinds, record.parents, record.shapes
    pullbacks = record.pullbacks
    for node_id in range(output.node_id, -1, -1):
        bar_p = adj_primal[node_id]
        bar_d = adj_tangent[node_id]
        if bar_p is None and bar_d is None:
            continue
        rule = pullbacks.get(node_id)
        if rule is not None:
            pullback, operand_ids = rule
            for parent_id, (first, second) in zip(operand_ids, pullback(bar_p, bar_d)):
                if parent_id is None:
                    continue
                if first is not None:
                    _accumulate(adj_primal, parent_id, first, shapes[parent_id])
                if second is not None:
                    _accumulate(adj_tangent, parent_id, second, shapes[parent_id])
            continue
        if kinds[node_id] == TANGENT:
            (parent_id, _, _), = parents[node_id]
            if bar_p is not None:
                _accumulate(adj_tangent, parent_id, bar_p, shapes[parent_id])
            continue
        for parent_id, first, second in parents[node_id]:
            shape = shapes[parent_id]
            if first is not None:
                if bar_p is not None:
                    _accumulate(adj_primal, parent_id, first * bar_p, shape)
                if bar_d is not None:
                    _accumulate(adj_tangent, parent_id, first * bar_d, shape)
            if second is not None and bar_d is not None:
                _accumulate(adj_primal, parent_id, second * bar_d, shape)

    gradient = np.zeros(record.parameter_count)
    for position, node_id in enumerate(record.parameter_ids):
        if node_id < size and adj_primal[node_id] is not None:
            gradient[position] = adj_primal[node_id]
    if not np.all(np.isfinite(gradient)):
        raise AutodiffError("Non-finite gradient after the reverse pass")
    return GradientVector(gradient)


def is_finite(x: Real) -> bool:
    return bool(np.all(np.isfinite(x)))


__all__ = [
    "ADScalar", "ComputationRecord", "GradientVector",
    "register_parameter", "register_parameters", "seed_input", "constant",
    "add", "sub", "mul", "div", "neg", "pow_int", "elementwise",
    "sin", "cos", "exp", "tanh", "logistic", "dot", "ad_sum", "custom",
    "batch_mean", "tangent_of", "backward", "is_finite",
]

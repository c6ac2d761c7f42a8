"""B-spline bases on a uniform extended knot grid and the KAN edge activation."""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Sequence, Tuple, Union

import numpy as np

from daekan import autodiff as ad
from daekan.autodiff import ADScalar
from error_tracking import SplineGridError

DEFAULT_INTERVALS = 5
DEFAULT_ORDER = 3


@dataclass(frozen=True)
class SplineGrid:
    """Uniform knots over ``[lower - k*h, upper + k*h]`` with ``h = (upper - lower) / G``."""
    lower: float
    upper: float
    intervals: int = DEFAULT_INTERVALS
    order: int = DEFAULT_ORDER
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if int(self.intervals) != self.intervals or self.intervals < 1:
            raise SplineGridError(f"Grid needs at least one interval, got {self.intervals}")
        if int(self.order) != self.order or self.order < 1:
            raise SplineGridError(f"Spline order must be a positive integer, got {self.order}")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)) or self.upper <= self.lower:
            raise SplineGridError(f"Degenerate grid domain [{self.lower}, {self.upper}]")
        h = (self.upper - self.lower) / self.intervals
        offsets = np.arange(-self.order, self.intervals + self.order + 1, dtype=np.float64)
        knots = self.lower + offsets * h
        # pin the domain endpoints exactly
        knots[self.order] = self.lower
        knots[self.order + self.intervals] = self.upper
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / self.intervals

    @property
    def basis_count(self) -> int:
        return self.intervals + self.order

    def clamp(self, t):
        return np.clip(t, self.lower, self.upper)


def _levels(grid: SplineGrid, t: np.ndarray) -> List[np.ndarray]:
    """Cox-de Boor table: entry ``p`` holds every degree-``p`` basis, shape ``(N, len(knots) - 1 - p)``."""
    knots = grid.knots
    h = grid.spacing
    left, right = knots[:-1], knots[1:]
    x = t[:, None]
    level = ((x >= left) & (x < right)).astype(np.float64)
    # the right end of the domain belongs to the last interior interval
    at_upper = t == grid.upper
    if np.any(at_upper):
        last = grid.order + grid.intervals - 1
        level[at_upper, :] = 0.0
        level[at_upper, last] = 1.0

    table = [level]
    for p in range(1, grid.order + 1):
        prev = table[-1]
        lo = knots[: len(knots) - 1 - p]
        hi = knots[p + 1:]
        level = ((x - lo) * prev[:, :-1] + (hi - x) * prev[:, 1:]) / (p * h)
        table.append(level)
    return table


def _as_batch(t) -> Tuple[np.ndarray, bool]:
    array = np.asarray(t, dtype=np.float64)
    return np.atleast_1d(array), array.ndim == 0


def basis_values(grid: SplineGrid, t: Union[float, np.ndarray]) -> np.ndarray:
    """All ``G + k`` basis values at ``t`` (clamped to the grid domain).

    A scalar ``t`` gives a vector; an array of ``N`` times gives an ``(N, G + k)`` matrix.
    """
    batch, scalar = _as_batch(t)
    values = _levels(grid, grid.clamp(batch))[grid.order]
    return values[0] if scalar else values


def basis_derivatives(grid: SplineGrid, t: Union[float, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Basis values with their first and second derivatives in ``t``.

    Derivatives vanish outside ``[lower, upper]`` where the input is clamped.
    """
    batch, scalar = _as_batch(t)
    clamped = grid.clamp(batch)
    table = _levels(grid, clamped)
    k, h = grid.order, grid.spacing
    values = table[k]
    below = table[k - 1]
    first = (below[:, :-1] - below[:, 1:]) / h
    if k >= 2:
        lower = table[k - 2]
        second = (lower[:, :-2] - 2.0 * lower[:, 1:-1] + lower[:, 2:]) / (h * h)
    else:
        second = np.zeros_like(values)
    inside = ((batch >= grid.lower) & (batch <= grid.upper)).astype(np.float64)[:, None]
    first = first * inside
    second = second * inside
    if scalar:
        return values[0], first[0], second[0]
    return values, first, second


def silu_derivatives(p):
    """``silu`` with its first and second derivative, on plain numbers or arrays."""
    s = ad.logistic(p)
    ds = s * (1.0 - s)
    return p * s, s + p * ds, ds * (2.0 + p * (1.0 - 2.0 * s))


def silu(x):
    """``x * logistic(x)`` as one node."""
    if not isinstance(x, ADScalar):
        return x * ad.logistic(x)
    value, first, second = silu_derivatives(x.primal)
    return ad.elementwise("silu", x, value, first, second)


@lru_cache(maxsize=32)
def _cached_derivatives(grid: SplineGrid, key: bytes) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    tables = basis_derivatives(grid, np.frombuffer(key, dtype=np.float64))
    for table in tables:
        table.setflags(write=False)
    return tables


def cached_basis_derivatives(grid: SplineGrid, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """:func:`basis_derivatives` of a 1-D batch, memoised per grid and batch.

    Meant for inputs that repeat across evaluations, such as a fixed
    collocation grid; the returned arrays are read-only.
    """
    batch = np.ascontiguousarray(t, dtype=np.float64)
    return _cached_derivatives(grid, batch.tobytes())


def spline_basis_ad(grid: SplineGrid, x: ADScalar) -> List[ADScalar]:
    """Basis functions of ``x`` as recorded values carrying time tangents."""
    values, first, second = basis_derivatives(grid, x.primal)
    batched = np.ndim(x.primal) > 0
    basis = []
    for s in range(grid.basis_count):
        if batched:
            v, d1, d2 = values[:, s], first[:, s], second[:, s]
        else:
            v, d1, d2 = float(values[s]), float(first[s]), float(second[s])
        if not (np.any(v) or np.any(d1) or np.any(d2)):
            basis.append(ad.constant(v))
            continue
        basis.append(ad.elementwise("bspline", x, v, d1, d2))
    return basis


Coefficient = Union[float, ADScalar]


@dataclass
class EdgeActivation:
    """``w * (silu(x) + sum_s c_s B_s(x))`` on one KAN edge."""
    weight: Coefficient
    coefficients: Sequence[Coefficient]
    grid: SplineGrid

    def __post_init__(self) -> None:
        if len(self.coefficients) != self.grid.basis_count:
            raise SplineGridError(
                f"Edge has {len(self.coefficients)} coefficients, grid has {self.grid.basis_count} bases")


def edge_eval(edge: EdgeActivation, x, basis=None, base=None) -> ADScalar:
    """Evaluate an edge; ``basis`` and ``base`` may be shared across edges leaving one node."""
    if not isinstance(x, ADScalar):
        x = ad.constant(x)
    if basis is None:
        basis = spline_basis_ad(edge.grid, x)
    if base is None:
        base = silu(x)
    return ad.mul(edge.weight, ad.dot(edge.coefficients, basis, bias=base))


def fit_coefficients(grid: SplineGrid, samples: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Least-squares spline coefficients reproducing ``targets`` at ``samples``."""
    design = basis_values(grid, np.asarray(samples, dtype=np.float64))
    coefficients, *_ = np.linalg.lstsq(design, np.asarray(targets, dtype=np.float64), rcond=None)
    return coefficients

"""
Uniform grid on (0, 1), finite-difference derivatives under the pinned
boundary contract, the inverse negative Laplacian N, quadrature and norms.

Pinned fields carry u = D^2 u = 0 at both endpoints and are extended past the
boundary by odd reflection, u(-x) = -u(x). Free fields (derived quantities)
are extended by quintic extrapolation from the interior, anchored on their
endpoint values when those are known.
"""

from __future__ import annotations

import enum
import functools
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy import linalg

if TYPE_CHECKING:
    from gch_model.gch_model import CoefficientSpec

logger = logging.getLogger(__name__)

MIN_INTERIOR_NODES = 7


class GridSizingError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class NonFiniteFieldError(FloatingPointError):
    pass


class BCClass(enum.StrEnum):
    PINNED = "pinned"
    FREE = "free"


class NormKind(enum.StrEnum):
    L2 = "L2"
    L4 = "L4"
    L8 = "L8"
    LINF = "Linf"
    HMINUS1 = "HminusOne"


@dataclass(frozen=True)
class Grid1D:
    n_interior: int

    def __post_init__(self):
        if isinstance(self.n_interior, bool) or not isinstance(
            self.n_interior, (int, np.integer)
        ):
            raise GridSizingError(
                f"n_interior must be an integer, got {type(self.n_interior).__name__}"
            )
        if self.n_interior < MIN_INTERIOR_NODES:
            raise GridSizingError(
                f"n_interior={self.n_interior} is below the minimum of "
                f"{MIN_INTERIOR_NODES} interior nodes"
            )
        object.__setattr__(self, "n_interior", int(self.n_interior))

    @property
    def h(self) -> float:
        return 1.0 / (self.n_interior + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.n_interior + 1) * self.h

    @property
    def nodes_with_endpoints(self) -> np.ndarray:
        x = np.arange(self.n_interior + 2) * self.h
        x[-1] = 1.0
        return x


def make_grid(n_interior: int) -> Grid1D:
    return Grid1D(n_interior)


@dataclass(frozen=True, eq=False)
class Field:
    """
    Samples of a function at the interior nodes of a grid.

    `edges` holds the endpoint values of a free field when they are known
    (e.g. a derivative evaluated with ghost values). Pinned fields always
    vanish at the endpoints and never carry edges.
    """

    grid: Grid1D
    values: np.ndarray
    bc_class: BCClass = BCClass.PINNED
    edges: tuple[float, float] | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_interior,):
            raise ValueError(
                f"Field values must have shape ({self.grid.n_interior},), got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            bad = np.flatnonzero(~np.isfinite(values))
            raise NonFiniteFieldError(
                f"Field has {bad.size} non-finite value(s), first at node {bad[0] + 1}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bc_class", BCClass(self.bc_class))

        if self.edges is not None:
            if self.bc_class is BCClass.PINNED:
                raise ValueError("Pinned fields vanish at the endpoints; edges not allowed")
            left, right = (float(e) for e in self.edges)
            if not (np.isfinite(left) and np.isfinite(right)):
                raise NonFiniteFieldError(f"Field edges are not finite: {self.edges}")
            object.__setattr__(self, "edges", (left, right))

    @property
    def endpoint_values(self) -> tuple[float, float]:
        if self.bc_class is BCClass.PINNED:
            return 0.0, 0.0
        if self.edges is not None:
            return self.edges
        left = float(_EXTRAPOLATE_FROM_INTERIOR[0] @ self.values[:6])
        right = float(_EXTRAPOLATE_FROM_INTERIOR[0] @ self.values[::-1][:6])
        return left, right

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> Field:
        """Apply a pointwise function; the result is free with mapped endpoint values."""
        ends = fn(np.asarray(self.endpoint_values, dtype=float))
        return Field(self.grid, fn(self.values), BCClass.FREE, edges=(ends[0], ends[1]))

    def _combine(self, other, op) -> Field:
        if isinstance(other, Field):
            _check_same_grid(self, other)
            values = op(self.values, other.values)
            if self.bc_class is BCClass.PINNED and other.bc_class is BCClass.PINNED:
                return Field(self.grid, values, BCClass.PINNED)
            ends = op(np.asarray(self.endpoint_values), np.asarray(other.endpoint_values))
            return Field(self.grid, values, BCClass.FREE, edges=(ends[0], ends[1]))

        scalar = float(other)
        values = op(self.values, scalar)
        if self.bc_class is BCClass.PINNED and op(0.0, scalar) == 0.0:
            return Field(self.grid, values, BCClass.PINNED)
        ends = op(np.asarray(self.endpoint_values), scalar)
        return Field(self.grid, values, BCClass.FREE, edges=(ends[0], ends[1]))

    def __add__(self, other) -> Field:
        return self._combine(other, np.add)

    def __sub__(self, other) -> Field:
        return self._combine(other, np.subtract)

    def __mul__(self, other) -> Field:
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Field:
        if isinstance(other, Field):
            raise TypeError("Division by a Field is not supported")
        return self._combine(other, np.divide)

    def __neg__(self) -> Field:
        return self * -1.0


def sample_field(
    grid: Grid1D,
    fn: Callable[[np.ndarray], np.ndarray],
    bc_class: BCClass = BCClass.PINNED,
) -> Field:
    """Sample `fn` on the interior nodes; free fields also sample the endpoints."""
    if BCClass(bc_class) is BCClass.PINNED:
        return Field(grid, fn(grid.nodes), BCClass.PINNED)
    ends = fn(np.array([0.0, 1.0]))
    return Field(grid, fn(grid.nodes), BCClass.FREE, edges=(ends[0], ends[1]))


def _check_same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise GridMismatchError(
            f"Fields live on different grids: n={f.grid.n_interior} vs n={g.grid.n_interior}"
        )


def _lagrange_weights(nodes: np.ndarray, target: float) -> np.ndarray:
    weights = np.empty(nodes.size)
    for j, xj in enumerate(nodes):
        others = np.delete(nodes, j)
        weights[j] = np.prod((target - others) / (xj - others))
    return weights


# rows: targets at 0, -1, -2 (units of h) from the first six interior nodes
_EXTRAPOLATE_FROM_INTERIOR = np.array(
    [_lagrange_weights(np.arange(1.0, 7.0), t) for t in (0.0, -1.0, -2.0)]
)
# rows: targets at -1, -2 from the endpoint value and the first five interior nodes
_EXTRAPOLATE_FROM_EDGE = np.array(
    [_lagrange_weights(np.arange(0.0, 6.0), t) for t in (-1.0, -2.0)]
)


def _ghosts(values: np.ndarray, field: Field, side: int) -> np.ndarray:
    """Values at distances 0, h, 2h outside the boundary, ordered outward."""
    inward = values if side == 0 else values[::-1]
    if field.bc_class is BCClass.PINNED:
        return np.array([0.0, -inward[0], -inward[1]])
    if field.edges is None:
        return _EXTRAPOLATE_FROM_INTERIOR @ inward[:6]
    edge = field.edges[side]
    stencil = np.concatenate([[edge], inward[:5]])
    return np.concatenate([[edge], _EXTRAPOLATE_FROM_EDGE @ stencil])


def _extended(field: Field) -> np.ndarray:
    values = field.values
    left = _ghosts(values, field, 0)[::-1]
    right = _ghosts(values, field, 1)
    return np.concatenate([left, values, right])


def apply_derivative(f: Field, order: int) -> Field:
    """
    Second-order centered derivative of the requested order (1 to 4).

    The stencil is also evaluated at both endpoints from the ghost values;
    those endpoint values are returned as the edges of the (free) result.
    """
    if order not in (1, 2, 3, 4):
        raise ValueError(f"Derivative order must be 1, 2, 3 or 4, got {order}")

    h = f.grid.h
    e = _extended(f)
    m2, m1, c, p1, p2 = e[:-4], e[1:-3], e[2:-2], e[3:-1], e[4:]

    if order == 1:
        full = (p1 - m1) / (2.0 * h)
    elif order == 2:
        full = (p1 - 2.0 * c + m1) / h**2
    elif order == 3:
        full = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h**3)
    else:
        full = (p2 - 4.0 * p1 + 6.0 * c - 4.0 * m1 + m2) / h**4

    return Field(f.grid, full[1:-1], BCClass.FREE, edges=(full[0], full[-1]))


@functools.lru_cache(maxsize=32)
def _neg_laplacian_factor(grid: Grid1D) -> np.ndarray:
    n, h = grid.n_interior, grid.h
    ab = np.empty((2, n))
    ab[0, 0] = 0.0
    ab[0, 1:] = -1.0 / h**2
    ab[1, :] = 2.0 / h**2
    factor = linalg.cholesky_banded(ab, lower=False)
    factor.setflags(write=False)
    logger.debug(f"Factorized Dirichlet Laplacian for n={n}")
    return factor


def apply_inverse_neg_laplacian(f: Field) -> Field:
    """Solve -D^2 w = f with w(0) = w(1) = 0 on the three-point stencil."""
    w = linalg.cho_solve_banded((_neg_laplacian_factor(f.grid), False), f.values)
    return Field(f.grid, w, BCClass.PINNED)


def _trapezoid(values: np.ndarray, ends: tuple[float, float], h: float) -> float:
    return float(h * np.sum(values) + 0.5 * h * (ends[0] + ends[1]))


def integral(f: Field) -> float:
    """Trapezoid rule over [0, 1]; equals h * sum(values) for pinned fields."""
    return _trapezoid(f.values, f.endpoint_values, f.grid.h)


def inner_product(f: Field, g: Field) -> float:
    """h * sum(f g) over interior nodes; endpoint values do not enter."""
    _check_same_grid(f, g)
    return float(f.grid.h * np.sum(f.values * g.values))


def norm(f: Field, kind: NormKind) -> float:
    kind = NormKind(kind)
    ends = np.abs(np.asarray(f.endpoint_values))

    if kind is NormKind.LINF:
        return float(max(np.max(np.abs(f.values)), ends.max()))
    if kind is NormKind.HMINUS1:
        return float(np.sqrt(max(inner_product(f, apply_inverse_neg_laplacian(f)), 0.0)))

    p = {NormKind.L2: 2, NormKind.L4: 4, NormKind.L8: 8}[kind]
    total = _trapezoid(np.abs(f.values) ** p, tuple(ends**p), f.grid.h)
    return float(total ** (1.0 / p))


# forward one-sided third derivative from samples at 0, h, 2h, 3h, 4h
_ONE_SIDED_D3 = np.array([-2.5, 9.0, -12.0, 7.0, -1.5])


def boundary_third_derivative(f_u: Field) -> tuple[float, float]:
    h = f_u.grid.h
    left_edge, right_edge = f_u.endpoint_values
    left = np.concatenate([[left_edge], f_u.values[:4]])
    right = np.concatenate([[right_edge], f_u.values[::-1][:4]])
    return float(_ONE_SIDED_D3 @ left / h**3), float(-(_ONE_SIDED_D3 @ right) / h**3)


def boundary_flux(f_u: Field, spec: CoefficientSpec) -> tuple[float, float]:
    """Boundary values of D[a(u)D^2u - f(u)], which reduce to a(0) D^3u under (u, D^2u) = 0."""
    a0 = float(spec.coefficient.a(np.zeros(1))[0])
    d3_left, d3_right = boundary_third_derivative(f_u)
    return a0 * d3_left, a0 * d3_right


if __name__ == "__main__":
    grid = make_grid(127)
    for k in (1, 2, 3):
        mode = sample_field(grid, lambda x: np.sin(k * np.pi * x))
        lam_h = (2.0 / grid.h**2) * (1.0 - np.cos(k * np.pi * grid.h))
        err = np.max(np.abs(apply_inverse_neg_laplacian(mode).values - mode.values / lam_h))
        print(f"k={k}  max |N sin - sin/lambda_h| = {err:.3e}")

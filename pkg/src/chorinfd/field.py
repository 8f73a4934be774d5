"""Grid functions with zero extension and the difference calculus on them.

Values live at every point of the discrete domain, boundary points included.
Reads at lattice points outside the domain return zero.  The gradient uses
forward differences and the divergence uses backward differences.
"""
from __future__ import annotations

import math
from typing import TYPE_CHECKING, Union

import numpy as np

from .errors import AxisOutOfRange, BoundaryNotZero, DomainMismatch

if TYPE_CHECKING:
    from .grid import GridDomain

__all__ = [
    "ScalarField",
    "VectorField",
    "set_summation_mode",
    "get_summation_mode",
    "fsum",
    "dplus",
    "dminus",
    "d2",
    "grad",
    "div",
    "laplacian",
    "inner",
    "norm",
    "inner_interior",
    "sbp_defect",
    "adjoint_defect",
    "check_boundary_zero",
]

_SUMMATION = {"mode": "sequential"}


def set_summation_mode(mode: str) -> None:
    """Select ``"sequential"`` (default, strict index order) or ``"compensated"``."""
    if mode not in ("sequential", "compensated"):
        raise ValueError(f"unknown summation mode {mode!r}")
    _SUMMATION["mode"] = mode


def get_summation_mode() -> str:
    return _SUMMATION["mode"]


def fsum(values: np.ndarray) -> float:
    """Sum a 1D array in a fixed, reproducible order."""
    v = np.ascontiguousarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        return 0.0
    if _SUMMATION["mode"] == "compensated":
        return math.fsum(v)
    return float(np.cumsum(v)[-1])


class ScalarField:
    """Real-valued grid function on a :class:`GridDomain`."""

    __slots__ = ("domain", "values")
    ncomp = 1

    def __init__(self, domain: "GridDomain", values=None):
        self.domain = domain
        if values is None:
            values = np.zeros(domain.n_points)
        values = np.array(values, dtype=float)
        if values.shape != (domain.n_points,):
            raise ValueError(
                f"expected {domain.n_points} values, got array of shape {values.shape}"
            )
        self.values = values

    @classmethod
    def from_function(cls, domain, func) -> "ScalarField":
        """Sample ``func(points)`` at the physical point coordinates."""
        return cls(domain, np.asarray(func(domain.points), dtype=float))

    def at(self, z) -> np.ndarray:
        """Values at lattice coordinates ``z`` with zero extension."""
        idx = self.domain.index_of(z)
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)

    def copy(self) -> "ScalarField":
        return ScalarField(self.domain, self.values.copy())

    def interior_values(self) -> np.ndarray:
        return self.values[self.domain.interior_idx]

    def boundary_values(self) -> np.ndarray:
        return self.values[self.domain.boundary_idx]

    def _wrap(self, values):
        return ScalarField(self.domain, values)

    def _other(self, other):
        if isinstance(other, ScalarField):
            _check_same(self, other)
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def __repr__(self):
        return f"ScalarField({self.domain!r})"


class VectorField:
    """Three-component grid function; ``values`` has shape ``(3, N)``."""

    __slots__ = ("domain", "values")
    ncomp = 3

    def __init__(self, domain: "GridDomain", values=None):
        self.domain = domain
        if values is None:
            values = np.zeros((3, domain.n_points))
        elif isinstance(values, (list, tuple)) and values and isinstance(values[0], ScalarField):
            for c in values:
                _check_same_domain(domain, c.domain)
            values = np.stack([c.values for c in values])
        values = np.array(values, dtype=float)
        if values.shape != (3, domain.n_points):
            raise ValueError(
                f"expected shape (3, {domain.n_points}), got {values.shape}"
            )
        self.values = values

    @classmethod
    def from_function(cls, domain, func) -> "VectorField":
        """Sample ``func(points) -> (3, N)`` at the physical point coordinates."""
        return cls(domain, np.asarray(func(domain.points), dtype=float))

    def component(self, i: int) -> ScalarField:
        _check_axis(i)
        return ScalarField(self.domain, self.values[i])

    def __getitem__(self, i):
        return self.component(i)

    def at(self, z) -> np.ndarray:
        idx = self.domain.index_of(z)
        return np.where(idx >= 0, self.values[:, np.maximum(idx, 0)], 0.0)

    def copy(self) -> "VectorField":
        return VectorField(self.domain, self.values.copy())

    def interior_values(self) -> np.ndarray:
        return self.values[:, self.domain.interior_idx]

    def boundary_values(self) -> np.ndarray:
        return self.values[:, self.domain.boundary_idx]

    def _wrap(self, values):
        return VectorField(self.domain, values)

    def _other(self, other):
        if isinstance(other, VectorField):
            _check_same(self, other)
            return other.values
        if isinstance(other, ScalarField):
            _check_same(self, other)
            return other.values[None, :]
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def __repr__(self):
        return f"VectorField({self.domain!r})"


Field = Union[ScalarField, VectorField]


def _check_axis(i):
    if not isinstance(i, (int, np.integer)) or not 0 <= i < 3:
        raise AxisOutOfRange(f"axis must be 0, 1 or 2, got {i!r}")


def _check_same_domain(d1, d2):
    if not (d1 is d2 or d1.same_as(d2)):
        raise DomainMismatch("fields live on different discrete domains")


def _check_same(a, b):
    _check_same_domain(a.domain, b.domain)


def _apply(f, op):
    return type(f)(f.domain, op(f.values))


def dplus(f: Field, i: int) -> Field:
    """Forward difference ``(f(x + h e_i) - f(x)) / h`` with zero extension."""
    _check_axis(i)
    d = f.domain
    return _apply(f, lambda v: (d.neighbor(v, i, +1) - v) / d.h)


def dminus(f: Field, i: int) -> Field:
    """Backward difference ``(f(x) - f(x - h e_i)) / h`` with zero extension."""
    _check_axis(i)
    d = f.domain
    return _apply(f, lambda v: (v - d.neighbor(v, i, -1)) / d.h)


def d2(f: Field, i: int) -> Field:
    """Second difference ``(f(x + h e_i) - 2 f(x) + f(x - h e_i)) / h^2``."""
    _check_axis(i)
    d = f.domain
    return _apply(f, lambda v: (d.neighbor(v, i, +1) - 2.0 * v + d.neighbor(v, i, -1)) / d.h**2)


def laplacian(f: Field) -> Field:
    """Seven-point Laplacian ``sum_i D_i^2 f``."""
    out = d2(f, 0)
    out.values += d2(f, 1).values + d2(f, 2).values
    return out


def grad(phi: ScalarField) -> VectorField:
    """Discrete gradient built from forward differences."""
    return VectorField(phi.domain, np.stack([dplus(phi, i).values for i in range(3)]))


def div(w: VectorField) -> ScalarField:
    """Discrete divergence built from backward differences."""
    d = w.domain
    v = w.values
    out = np.zeros(d.n_points)
    for i in range(3):
        out += (v[i] - d.neighbor(v[i], i, -1)) / d.h
    return ScalarField(d, out)


def _pointwise_dot(u: Field, w: Field) -> np.ndarray:
    _check_same(u, w)
    if u.ncomp != w.ncomp:
        raise ValueError("cannot pair a scalar with a vector field")
    p = u.values * w.values
    return p if u.ncomp == 1 else p[0] + p[1] + p[2]


def inner(u: Field, w: Field) -> float:
    """``sum_{x in domain} u(x) . w(x) h^3`` in index order."""
    return fsum(_pointwise_dot(u, w)) * u.domain.h**3


def inner_interior(u: Field, w: Field) -> float:
    """As :func:`inner`, restricted to interior points."""
    return fsum(_pointwise_dot(u, w)[u.domain.interior_idx]) * u.domain.h**3


def norm(u: Field) -> float:
    return math.sqrt(inner(u, u))


def check_boundary_zero(f: Field, name: str = "field") -> None:
    b = f.values[..., f.domain.boundary_idx]
    if np.any(b != 0.0):
        raise BoundaryNotZero(f"{name} does not vanish on the discrete boundary")


def sbp_defect(w: VectorField, phi: ScalarField) -> float:
    """Summation-by-parts defect ``sum w . grad(phi) h^3 + sum div(w) phi h^3``.

    Both sums run over interior points.  The result is zero up to rounding
    whenever ``w`` and ``phi`` vanish on the discrete boundary.
    """
    _check_same(w, phi)
    check_boundary_zero(w, "w")
    check_boundary_zero(phi, "phi")
    a = inner_interior(w, grad(phi))
    b = inner_interior(div(w), phi)
    return a + b


def adjoint_defect(u: ScalarField, phi: ScalarField, i: int) -> float:
    """Defect of ``(D_i^+ u, phi) = -(u, D_i^- phi)`` over the whole domain.

    ``D_i^- phi(y)`` equals ``D_i^+ phi(y - h e_i)`` under zero extension.  The
    identity needs ``phi`` to vanish on the discrete boundary; ``u`` is free.
    """
    _check_same(u, phi)
    check_boundary_zero(phi, "phi")
    return inner(dplus(u, i), phi) + inner(u, dminus(phi, i))

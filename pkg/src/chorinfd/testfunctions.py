"""Divergence-free test functions with compact support.

Each function is the curl of a polynomial bump potential, optionally
multiplied by a smooth time cutoff that vanishes at the final time.
"""
from __future__ import annotations

import itertools
import math
from typing import TYPE_CHECKING, List, Optional, Sequence

import numpy as np

from .analytic import SeparableField, SmoothCutoff, Temporal, bump_potential_curl
from .errors import EmptyDictionary

if TYPE_CHECKING:
    from .grid import GridDomain

__all__ = ["TestFunction", "default_dictionary", "clear_of_boundary"]


class TestFunction:
    """Analytic divergence-free vector field ``chi(t) * phi(x)``.

    Parameters
    ----------
    spatial : SeparableField
    name : str
    temporal : Temporal, optional
        Time factor; ``None`` for a time-independent function.
    """

    __test__ = False  # not a pytest class

    def __init__(self, spatial: SeparableField, name: str = "phi", temporal: Optional[Temporal] = None):
        self.spatial = spatial
        self.name = name
        self.temporal = temporal
        self._w4 = None

    def __call__(self, points) -> np.ndarray:
        return self.spatial(points)

    def derivative(self, alpha: Sequence[int]) -> SeparableField:
        return self.spatial.derivative(alpha)

    def partial(self, axis: int, order: int = 1) -> SeparableField:
        return self.spatial.partial(axis, order)

    def support_box(self):
        return self.spatial.support_box()

    def w4inf_norm(self, samples: int = 64) -> float:
        """Max of all derivatives up to order four, sampled ``samples`` per axis over the support."""
        if self._w4 is None or self._w4[0] != samples:
            lo, hi = self.support_box()
            best = 0.0
            for order in range(5):
                for alpha in itertools.product(range(order + 1), repeat=3):
                    if sum(alpha) != order:
                        continue
                    best = max(best, self.spatial.derivative(alpha).max_abs_on_lattice(lo, hi, samples))
            self._w4 = (samples, best)
        return self._w4[1]

    def normalized(self, samples: int = 64) -> "TestFunction":
        """Copy scaled to unit sampled ``W^{4,inf}`` norm."""
        s = self.w4inf_norm(samples)
        if s == 0.0:
            return self
        out = TestFunction(self.spatial.scaled(1.0 / s), self.name, self.temporal)
        out._w4 = (samples, 1.0)
        return out

    def with_cutoff(self, T: float) -> "TestFunction":
        """Copy multiplied by a smooth cutoff vanishing at ``T``."""
        out = TestFunction(self.spatial, self.name, SmoothCutoff(float(T)))
        out._w4 = self._w4
        return out

    def time_factor(self, t) -> np.ndarray:
        if self.temporal is None:
            return np.ones_like(np.asarray(t, dtype=float))
        return self.temporal(t)

    def sample(self, grid: "GridDomain") -> np.ndarray:
        """Values at all grid points, shape ``(3, N)``."""
        return self.spatial(grid.points)

    def __repr__(self):
        return f"TestFunction({self.name!r})"


def clear_of_boundary(phi: TestFunction, grid: "GridDomain") -> bool:
    """Whether the support avoids the closed cubes ``y + [-h, h]^3`` of all boundary points ``y``.

    This makes ``phi`` vanish at every boundary point and at its axis
    neighbours, so ``phi`` and its discrete gradient vanish on the boundary.
    """
    lo, hi = phi.support_box()
    y = grid.points[grid.boundary_idx]
    h = grid.h
    # open support box and closed cube are disjoint if separated along some axis
    sep = np.any((hi <= y - h) | (lo >= y + h), axis=1)
    return bool(np.all(sep))


def default_dictionary(
    core_lower: float = 0.25,
    core_upper: float = 0.75,
    normalize: bool = True,
    T: Optional[float] = None,
) -> List[TestFunction]:
    """Eight shipped test functions supported in the cube ``[core_lower, core_upper]^3``.

    Four use the whole core with different axes and aspect ratios; four use
    quarter-size bumps placed off centre.
    """
    c0 = 0.5 * (core_lower + core_upper)
    r0 = 0.5 * (core_upper - core_lower)
    if not r0 > 0:
        raise EmptyDictionary("empty core box")
    q = 0.5 * r0
    s3 = 1.0 / math.sqrt(3.0)
    s2 = 1.0 / math.sqrt(2.0)
    specs = [
        ("core_e1", c0, r0, (1.0, 0.0, 0.0)),
        ("core_e2", c0, r0, (0.0, 1.0, 0.0)),
        ("core_e3", c0, r0, (0.0, 0.0, 1.0)),
        ("core_aniso", c0, (r0, 0.8 * r0, 0.6 * r0), (s3, -s3, s3)),
        ("quarter_a", (c0 - q, c0 - q, c0), (q, q, r0), (0.0, 0.0, 1.0)),
        ("quarter_b", (c0 + q, c0 - q, c0), (q, q, r0), (1.0, 0.0, 0.0)),
        ("quarter_c", (c0 - q, c0 + q, c0), (q, q, r0), (0.0, 1.0, 0.0)),
        ("quarter_d", (c0 + q, c0 + q, c0), (q, q, r0), (s2, s2, 0.0)),
    ]
    out = []
    for name, center, radius, axis in specs:
        tf = TestFunction(bump_potential_curl(center, radius, axis), name)
        if normalize:
            tf = tf.normalized()
        if T is not None:
            tf = tf.with_cutoff(T)
        out.append(tf)
    return out

"""Continuum fields used as data: initial velocities, forces and test functions.

Most shipped fields are sums of products of one-dimensional piecewise
polynomials.  Cell and slab integrals of such fields are computed exactly from
antiderivatives.  Arbitrary callables fall back to a Gauss product rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, QuadratureFailure

__all__ = [
    "Factor1D",
    "SeparableField",
    "bump_factor",
    "bump_potential_curl",
    "gauss_cell_average",
    "Temporal",
    "ConstantInTime",
    "ExponentialDecay",
    "SmoothCutoff",
    "InitialField",
    "ForceField",
    "make_initial",
    "make_force",
]


class Factor1D:
    """Polynomial on ``[lo, hi]`` extended by zero; ``lo = -inf, hi = inf`` means everywhere."""

    __slots__ = ("poly", "lo", "hi")

    def __init__(self, poly: Polynomial, lo: float = -math.inf, hi: float = math.inf):
        self.poly = poly
        self.lo = float(lo)
        self.hi = float(hi)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, self.poly(x), 0.0)

    def deriv(self, m: int = 1) -> "Factor1D":
        if m == 0:
            return self
        return Factor1D(self.poly.deriv(m), self.lo, self.hi)

    def integral(self, a, b) -> np.ndarray:
        """``int_a^b`` of the factor, vectorised over ``a <= b``."""
        a = np.clip(np.asarray(a, dtype=float), self.lo, self.hi)
        b = np.clip(np.asarray(b, dtype=float), self.lo, self.hi)
        P = self.poly.integ()
        return P(b) - P(a)

    def product_integral(self, other: "Factor1D") -> float:
        """``int_R`` of the product of two factors with finite common support."""
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if not hi > lo:
            return 0.0
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("product of factors has unbounded support")
        dom = [lo, hi]
        p = self.poly.convert(domain=dom, window=[-1, 1]) * other.poly.convert(
            domain=dom, window=[-1, 1]
        )
        P = p.integ()
        return float(P(hi) - P(lo))


def bump_factor(center: float, radius: float, power: int = 5) -> Factor1D:
    """``(1 - s^2)^power`` with ``s = (x - center) / radius`` on ``|s| <= 1``."""
    base = Polynomial([1.0, 0.0, -1.0], domain=[center - radius, center + radius], window=[-1, 1])
    return Factor1D(base**power, center - radius, center + radius)


Term = Tuple[float, Tuple[Factor1D, Factor1D, Factor1D]]


class SeparableField:
    """Vector field whose components are sums of ``coef * f1(x1) f2(x2) f3(x3)``.

    Parameters
    ----------
    components : sequence of three lists of terms
        Each term is ``(coef, (f1, f2, f3))``.
    """

    def __init__(self, components: Sequence[List[Term]]):
        if len(components) != 3:
            raise ValueError("a vector field needs three components")
        self.components = [list(c) for c in components]

    def scaled(self, c: float) -> "SeparableField":
        return SeparableField([[(coef * c, fs) for coef, fs in comp] for comp in self.components])

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((3, p.shape[0]))
        for i, comp in enumerate(self.components):
            for coef, fs in comp:
                out[i] += coef * fs[0](p[:, 0]) * fs[1](p[:, 1]) * fs[2](p[:, 2])
        return out

    def derivative(self, alpha: Sequence[int]) -> "SeparableField":
        """Mixed partial derivative of multi-index ``alpha``."""
        return SeparableField(
            [
                [(coef, tuple(f.deriv(m) for f, m in zip(fs, alpha))) for coef, fs in comp]
                for comp in self.components
            ]
        )

    def partial(self, axis: int, order: int = 1) -> "SeparableField":
        alpha = [0, 0, 0]
        alpha[axis] = order
        return self.derivative(alpha)

    def component_field(self, i: int) -> "SeparableField":
        """Scalar component ``i`` stored in slot 0 of a vector field."""
        return SeparableField([self.components[i], [], []])

    def box_integrals(self, lo, hi) -> np.ndarray:
        """Exact integrals over boxes ``[lo, hi]`` (rows of shape ``(M, 3)``), shape ``(3, M)``."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        out = np.zeros((3, lo.shape[0]))
        for i, comp in enumerate(self.components):
            for coef, fs in comp:
                out[i] += (
                    coef
                    * fs[0].integral(lo[:, 0], hi[:, 0])
                    * fs[1].integral(lo[:, 1], hi[:, 1])
                    * fs[2].integral(lo[:, 2], hi[:, 2])
                )
        return out

    def l2_norm_sq(self) -> float:
        """Exact ``int_R^3 |field|^2``."""
        total = 0.0
        for comp in self.components:
            for c1, f in comp:
                for c2, g in comp:
                    total += c1 * c2 * math.prod(a.product_integral(b) for a, b in zip(f, g))
        return total

    def support_box(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for comp in self.components:
            for _, fs in comp:
                lo = np.minimum(lo, [f.lo for f in fs])
                hi = np.maximum(hi, [f.hi for f in fs])
        return lo, hi

    def max_abs_on_lattice(self, lo, hi, n: int) -> float:
        """Max of ``|component|`` over an ``n^3`` tensor lattice spanning ``[lo, hi]``."""
        axes = [np.linspace(lo[k], hi[k], n) for k in range(3)]
        best = 0.0
        for comp in self.components:
            if not comp:
                continue
            vals = np.zeros((n, n, n))
            for coef, fs in comp:
                vals += coef * np.einsum(
                    "i,j,k->ijk", fs[0](axes[0]), fs[1](axes[1]), fs[2](axes[2])
                )
            best = max(best, float(np.max(np.abs(vals))))
        return best


def bump_potential_curl(center, radius, axis, amplitude: float = 1.0, power: int = 5) -> SeparableField:
    """Curl of ``amplitude * axis * B`` with ``B`` a product of bump factors.

    The result is divergence free, ``C^(power-1)`` and supported in the box
    ``center +- radius``.
    """
    c = np.broadcast_to(np.asarray(center, dtype=float), (3,))
    r = np.broadcast_to(np.asarray(radius, dtype=float), (3,))
    a = np.asarray(axis, dtype=float) * float(amplitude)
    if a.shape != (3,):
        raise ConfigError("axis must have three components")
    b = [bump_factor(c[k], r[k], power) for k in range(3)]

    def dB(k):
        return tuple(b[m].deriv(1) if m == k else b[m] for m in range(3))

    comps: List[List[Term]] = [[], [], []]
    # curl(a B) = grad(B) x a
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        if a[k] != 0.0:
            comps[i].append((a[k], dB(j)))
        if a[j] != 0.0:
            comps[i].append((-a[j], dB(k)))
    return SeparableField(comps)


def gauss_cell_average(func: Callable, lo, h: float, nodes: int = 3) -> np.ndarray:
    """Average of ``func(points) -> (3, M)`` over cubes ``[lo, lo + h]^3`` by a Gauss product rule."""
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    x, w = leggauss(nodes)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    out = np.zeros((3, lo.shape[0]))
    for a in range(nodes):
        for b in range(nodes):
            for c in range(nodes):
                pts = lo + h * np.array([x[a], x[b], x[c]])
                vals = np.asarray(func(pts), dtype=float)
                out += w[a] * w[b] * w[c] * vals
    if not np.all(np.isfinite(out)):
        raise QuadratureFailure("non-finite values while averaging over cells")
    return out


class Temporal:
    """Scalar time factor with value, derivative and slab integrals."""

    def __call__(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def integral(self, t0, t1, nodes: int = 8):
        """Integral over ``[t0, t1]``; Gauss rule unless overridden."""
        return _gauss_1d(self, t0, t1, nodes)

    def derivative_integral(self, t0, t1, nodes: int = 8):
        return _gauss_1d(self.derivative, t0, t1, nodes)

    def sq_integral(self, t0, t1):
        return _gauss_1d(lambda t: self(t) ** 2, t0, t1, 16)


def _gauss_1d(fn, t0, t1, nodes):
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    x, w = leggauss(nodes)
    mid = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    total = 0.0
    for xk, wk in zip(x, w):
        total = total + wk * np.asarray(fn(mid + half * xk), dtype=float)
    out = half * total
    if not np.all(np.isfinite(out)):
        raise QuadratureFailure("non-finite values in time quadrature")
    return out


@dataclass(frozen=True)
class ConstantInTime(Temporal):
    value: float = 1.0

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.value)

    def derivative(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def integral(self, t0, t1, nodes: int = 8):
        return self.value * (np.asarray(t1, dtype=float) - np.asarray(t0, dtype=float))

    def sq_integral(self, t0, t1):
        return self.value**2 * (t1 - t0)


@dataclass(frozen=True)
class ExponentialDecay(Temporal):
    """``amplitude * exp(-rate * t)``."""

    amplitude: float = 1.0
    rate: float = 1.0

    def __call__(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))

    def derivative(self, t):
        return -self.rate * self(t)

    def integral(self, t0, t1, nodes: int = 8):
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        if self.rate == 0.0:
            return self.amplitude * (t1 - t0)
        return self.amplitude * (np.exp(-self.rate * t0) - np.exp(-self.rate * t1)) / self.rate

    def sq_integral(self, t0, t1):
        if self.rate == 0.0:
            return self.amplitude**2 * (t1 - t0)
        k = 2.0 * self.rate
        return self.amplitude**2 * (math.exp(-k * t0) - math.exp(-k * t1)) / k


@dataclass(frozen=True)
class SmoothCutoff(Temporal):
    """``exp(1 - 1/(1 - (t/T)^2))`` on ``[0, T)``, zero from ``T`` on; smooth at ``T``."""

    T: float = 1.0

    def _s(self, t):
        return np.asarray(t, dtype=float) / self.T

    def __call__(self, t):
        s = self._s(t)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            v = np.exp(1.0 - 1.0 / (1.0 - s * s))
        return np.where(np.abs(s) < 1.0, v, 0.0)

    def derivative(self, t):
        s = self._s(t)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            d = self(t) * (-2.0 * s / (1.0 - s * s) ** 2) / self.T
        return np.where(np.abs(s) < 1.0, d, 0.0)


class InitialField:
    """Initial velocity with exact or quadrature cell averages.

    Parameters
    ----------
    kind : str
        Name recorded in configs and summaries.
    separable : SeparableField, optional
        Exact representation; supported inside the domain unless ``constant`` is set.
    constant : array_like, optional
        Constant vector value everywhere.
    func : callable, optional
        Generic ``func(points) -> (3, M)``, averaged by Gauss quadrature.
    cells : tuple, optional
        Piecewise-constant data ``(grid, values)`` on centred cells of a finer lattice.
    """

    def __init__(self, kind, separable=None, constant=None, func=None, cells=None, params=None):
        self.kind = kind
        self.separable = separable
        self.constant = None if constant is None else np.asarray(constant, dtype=float)
        self.func = func
        self.cells = cells
        self.params = params or {}

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        if self.separable is not None:
            return self.separable(p)
        if self.constant is not None:
            return np.repeat(self.constant[:, None], p.shape[0], axis=1)
        if self.func is not None:
            return np.asarray(self.func(p), dtype=float)
        if self.cells is not None:
            return _cells_lookup(self.cells, p)
        return np.zeros((3, p.shape[0]))

    def cell_averages(self, centers, h: float, quadrature="exact", nodes: int = 3) -> np.ndarray:
        """Averages over centred cells ``[x - h/2, x + h/2)^3``, shape ``(3, M)``."""
        c = np.atleast_2d(centers)
        lo = c - h / 2
        if self.separable is not None and quadrature == "exact":
            return self.separable.box_integrals(lo, lo + h) / h**3
        if self.constant is not None:
            return np.repeat(self.constant[:, None], c.shape[0], axis=1)
        if self.cells is not None:
            return _cells_average(self.cells, c, h)
        if self.separable is None and self.func is None:
            return np.zeros((3, c.shape[0]))
        return gauss_cell_average(self, lo, h, nodes)

    def l2_norm(self, domain_spec=None) -> float:
        """``||v^0||_{L^2(Omega)}``."""
        if self.separable is not None:
            return math.sqrt(max(self.separable.l2_norm_sq(), 0.0))
        if self.constant is not None:
            if domain_spec is None:
                raise ValueError("the norm of a constant field needs the domain")
            return float(np.linalg.norm(self.constant)) * math.sqrt(domain_spec.volume())
        if self.cells is not None:
            grid, values = self.cells
            return math.sqrt(float(np.sum(values**2)) * grid.h**3)
        if self.func is None:
            return 0.0
        raise ValueError("no exact norm for a generic callable")

    def to_dict(self):
        return {"kind": self.kind, **self.params}


class ForceField:
    """Force ``temporal(t) * spatial(x)``."""

    def __init__(self, kind, spatial: Optional[InitialField], temporal: Temporal, params=None):
        self.kind = kind
        self.spatial = spatial
        self.temporal = temporal
        self.params = params or {}

    @property
    def is_zero(self) -> bool:
        return self.spatial is None or self.spatial.kind == "zero"

    def __call__(self, t, points):
        if self.is_zero:
            return np.zeros((3, np.atleast_2d(points).shape[0]))
        return float(self.temporal(t)) * self.spatial(points)

    def slab_averages(self, centers, h, t0, t1, quadrature="exact", nodes: int = 3) -> np.ndarray:
        """Space-time averages over ``[t0, t1] x C_h(x)``."""
        c = np.atleast_2d(centers)
        if self.is_zero:
            return np.zeros((3, c.shape[0]))
        tfac = float(self.temporal.integral(t0, t1, nodes=max(nodes, 8))) / (t1 - t0)
        return tfac * self.spatial.cell_averages(c, h, quadrature, nodes)

    def l2l2_norm(self, T: float, domain_spec=None) -> float:
        """``||f||_{L^2(0,T; L^2(Omega))}``."""
        if self.is_zero:
            return 0.0
        s = self.spatial.l2_norm(domain_spec)
        return s * math.sqrt(float(self.temporal.sq_integral(0.0, T)))

    def to_dict(self):
        return {"kind": self.kind, **self.params}


def _cells_lookup(cells, p):
    grid, values = cells
    z = np.floor(p / grid.h + 0.5).astype(np.int64)
    idx = grid.index_of(z)
    return np.where(idx >= 0, values[:, np.maximum(idx, 0)], 0.0)


def _cells_average(cells, centers, h):
    """Exact averages of data piecewise constant on centred cells of a lattice ``h / m``, ``m`` odd."""
    grid, values = cells
    ratio = h / grid.h
    m = int(round(ratio))
    if abs(ratio - m) > 1e-9 * ratio or m % 2 == 0:
        raise ConfigError(
            f"file data spacing {grid.h} must divide the mesh size {h} by an odd integer"
        )
    k = (m - 1) // 2
    zc = np.rint(centers / grid.h).astype(np.int64)
    out = np.zeros((3, zc.shape[0]))
    offs = np.arange(-k, k + 1)
    for a in offs:
        for b in offs:
            for c in offs:
                idx = grid.index_of(zc + np.array([a, b, c]))
                out += np.where(idx >= 0, values[:, np.maximum(idx, 0)], 0.0)
    return out / m**3


def _get(params, key, default, conv=float):
    return conv(params.get(key, default))


def _vec(v, n=3):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise ConfigError(f"expected {n} numbers, got {v!r}")
    return arr


def make_initial(params: dict) -> InitialField:
    """Build a named field from a parameter dictionary.

    Kinds: ``zero``, ``constant`` (``value``), ``solenoidal_bump`` (``center``,
    ``radius``, ``axis``, ``amplitude``), ``file`` (``path``).
    """
    params = dict(params)
    kind = params.get("kind", "zero")
    if kind == "zero":
        return InitialField("zero", params={})
    if kind == "constant":
        val = _vec(params.get("value", [0.0, 0.0, 0.0]))
        return InitialField("constant", constant=val, params={"value": [float(v) for v in val]})
    if kind == "solenoidal_bump":
        center = _vec(params.get("center", 0.5))
        radius = _vec(params.get("radius", 0.35))
        axis = _vec(params.get("axis", [0.0, 0.0, 1.0]))
        amp = float(params.get("amplitude", 1.0))
        if np.any(radius <= 0):
            raise ConfigError("bump radius must be positive")
        sep = bump_potential_curl(center, radius, axis, amp)
        return InitialField(
            "solenoidal_bump",
            separable=sep,
            params={
                "center": [float(v) for v in center],
                "radius": [float(v) for v in radius],
                "axis": [float(v) for v in axis],
                "amplitude": amp,
            },
        )
    if kind == "file":
        from .io import read_field

        path = params.get("path")
        if not path:
            raise ConfigError("file field needs a path")
        fld = read_field(path)
        return InitialField(
            "file", cells=(fld.domain, np.atleast_2d(fld.values)), params={"path": str(path)}
        )
    raise ConfigError(f"unknown field kind {kind!r}")


def make_force(params: dict) -> ForceField:
    """Build a force; ``decaying_swirl`` is a bump curl about ``x_3`` times ``exp(-rate t)``.

    Other kinds reuse :func:`make_initial` as a time-constant spatial profile.
    """
    params = dict(params)
    kind = params.get("kind", "zero")
    if kind == "zero":
        return ForceField("zero", None, ConstantInTime(0.0), params={})
    if kind == "decaying_swirl":
        rate = float(params.get("rate", 1.0))
        amp = float(params.get("amplitude", 1.0))
        sp_params = {
            "kind": "solenoidal_bump",
            "center": params.get("center", 0.5),
            "radius": params.get("radius", 0.35),
            "axis": params.get("axis", [0.0, 0.0, 1.0]),
            "amplitude": 1.0,
        }
        spatial = make_initial(sp_params)
        out = dict(spatial.params)
        out.pop("amplitude")
        out.update({"amplitude": amp, "rate": rate})
        return ForceField("decaying_swirl", spatial, ExponentialDecay(amp, rate), params=out)
    spatial = make_initial(params)
    return ForceField(kind, spatial, ConstantInTime(1.0), params=spatial.params)

"""Diagnostics on run outputs.

Space-time step functions live on slabs ``[n tau, n tau + tau)`` times shifted
cells ``[y, y + h)^3``.  This module builds them, measures exact distances
between them, evaluates the weak-form residual and the divergence bound
against test functions, and provides the interpolation and Poincare checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Dict, Sequence, Tuple

import numpy as np

from .errors import (
    EmptyDictionary,
    GridsNotAligned,
    MissingSnapshots,
    SupportTooClose,
)
from .field import (
    ScalarField,
    VectorField,
    check_boundary_zero,
    div,
    dplus,
    fsum,
    grad,
    inner,
    norm,
)
from .testfunctions import TestFunction, clear_of_boundary

if TYPE_CHECKING:
    from .grid import GridDomain
    from .stepper import RunResult

__all__ = [
    "EmbeddedField",
    "embed",
    "l2_distance",
    "qh_apply",
    "qh_divergence",
    "raw_divergence",
    "qh_beta",
    "DivergenceDefect",
    "divergence_defect",
    "WeakFormResidual",
    "weak_form_residual",
    "initial_terms_telescoped",
    "shifted_cell_integrals",
    "LipschitzInterpolant",
    "lipschitz_interpolate",
    "poincare_check",
    "triple_norm",
    "triple_norm_integral",
    "triple_norm_bound",
    "op_norm_estimate",
]


def _slab_edges(T: float, tau: float, n_slabs: int) -> np.ndarray:
    edges = np.arange(n_slabs + 1, dtype=float) * tau
    edges[-1] = min(edges[-1], T)
    return edges


def _n_slabs(T: float, tau: float) -> int:
    from .stepper import steps_for

    k = steps_for(T, tau)
    return k if abs(k * tau - T) <= 1e-12 * max(T, 1.0) else k + 1


class EmbeddedField:
    """Piecewise-constant space-time field.

    Parameters
    ----------
    domain : GridDomain
    tau, T : float
    snapshots : ndarray, shape ``(S, 3, N)``
        Value on slab ``n`` and shifted cell of grid point ``k``.
    kind : str
    """

    def __init__(self, domain: "GridDomain", tau: float, T: float, snapshots, kind: str = "u"):
        self.domain = domain
        self.tau = float(tau)
        self.T = float(T)
        snaps = np.asarray(snapshots, dtype=float)
        if snaps.ndim != 3 or snaps.shape[1:] != (3, domain.n_points):
            raise ValueError(f"snapshots must have shape (S, 3, {domain.n_points})")
        need = _n_slabs(self.T, self.tau)
        if snaps.shape[0] < need:
            raise MissingSnapshots(f"{kind} needs {need} snapshots, got {snaps.shape[0]}")
        self.snapshots = snaps[:need]
        self.kind = kind
        self.edges = _slab_edges(self.T, self.tau, need)

    @property
    def h(self) -> float:
        return self.domain.h

    @property
    def n_slabs(self) -> int:
        return self.snapshots.shape[0]

    def __call__(self, t: float, x) -> np.ndarray:
        """Value at time ``t`` and points ``x`` (shape ``(M, 3)``), zero outside."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not 0.0 <= t < self.T:
            return np.zeros((3, x.shape[0]))
        n = min(int(math.floor(t / self.tau)), self.n_slabs - 1)
        z = np.floor(x / self.h).astype(np.int64)
        idx = self.domain.index_of(z)
        return np.where(idx >= 0, self.snapshots[n][:, np.maximum(idx, 0)], 0.0)

    def l2_norm_sq(self) -> float:
        lengths = np.diff(self.edges)
        per = [fsum((s * s).sum(axis=0)) for s in self.snapshots]
        return fsum(np.array(per) * lengths) * self.h**3

    def l2_norm(self) -> float:
        return math.sqrt(self.l2_norm_sq())


def embed(result: "RunResult", kind: str = "v") -> EmbeddedField:
    """Step function of a run.

    ``kind`` is ``"u"`` (end-of-step velocities), ``"v"`` (intermediate
    velocities), ``"w1"``, ``"w2"``, ``"w3"`` (forward differences of the
    intermediate velocities) or ``"f"`` (cell-averaged force).
    """
    d = result.domain
    if result.first_step != 0:
        raise MissingSnapshots("run was resumed from a checkpoint; early snapshots are missing")
    need = _n_slabs(result.T, result.tau)
    if kind == "u":
        src = [u.values for u in result.u]
    elif kind == "v":
        src = [u.values for u in result.u_half]
    elif kind in ("w1", "w2", "w3"):
        j = int(kind[1]) - 1
        src = [dplus(u, j).values for u in result.u_half]
    elif kind == "f":
        src = [f.values for f in result.f]
    else:
        raise ValueError(f"unknown embedding kind {kind!r}")
    if len(src) < need:
        raise MissingSnapshots(f"embedding {kind!r} needs {need} snapshots, run has {len(src)}")
    return EmbeddedField(d, result.tau, result.T, np.stack(src[:need]), kind)


def _dyadic_ratio(h1: float, h2: float) -> int:
    r = h1 / h2
    k = round(math.log2(r))
    if abs(r - 2.0**k) > 1e-12 * r:
        raise GridsNotAligned(f"mesh sizes {h1} and {h2} are not dyadically related")
    return k


def _time_breaks(e1: EmbeddedField, e2: EmbeddedField) -> np.ndarray:
    r = e1.tau / e2.tau
    frac = Fraction(r).limit_denominator(1 << 20)
    if abs(float(frac) - r) > 1e-12 * r:
        raise GridsNotAligned(f"time steps {e1.tau} and {e2.tau} are not rationally related")
    pts = np.unique(np.concatenate([e1.edges, e2.edges]))
    keep = np.concatenate([[True], np.diff(pts) > 1e-12 * max(e1.T, 1.0)])
    return pts[keep]


def l2_distance(e1: EmbeddedField, e2: EmbeddedField) -> float:
    """Exact ``L^2(0,T; L^2)`` distance between two aligned step functions."""
    if abs(e1.T - e2.T) > 1e-12 * max(e1.T, 1.0):
        raise GridsNotAligned("embeddings cover different time intervals")
    k = _dyadic_ratio(e1.h, e2.h)
    coarse, fine = (e1, e2) if k >= 0 else (e2, e1)
    m = 1 << abs(k)
    dc, df = coarse.domain, fine.domain
    parent = dc.index_of(np.floor_divide(df.coords, m))
    has_parent = parent >= 0
    children = np.bincount(parent[has_parent], minlength=dc.n_points)
    uncovered = dc.h**3 - children * df.h**3
    breaks = _time_breaks(e1, e2)
    cache: Dict[Tuple[int, int], float] = {}
    total = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        mid = 0.5 * (a + b)
        nc = min(int(mid // coarse.tau), coarse.n_slabs - 1)
        nf = min(int(mid // fine.tau), fine.n_slabs - 1)
        key = (nc, nf)
        if key not in cache:
            vc = coarse.snapshots[nc]
            vf = fine.snapshots[nf]
            vp = np.where(has_parent, vc[:, np.maximum(parent, 0)], 0.0)
            diff = vf - vp
            s_fine = fsum((diff * diff).sum(axis=0)) * df.h**3
            s_coarse = fsum((vc * vc).sum(axis=0) * uncovered)
            cache[key] = s_fine + s_coarse
        total.append(cache[key] * (b - a))
    return math.sqrt(max(fsum(np.array(total)), 0.0))


# -- corrected sampling ----------------------------------------------------


def qh_apply(phi: TestFunction, grid: "GridDomain") -> VectorField:
    """Samples of ``phi_j + (h/2) d_j phi_j + (h^2/12) d_j^2 phi_j`` at all grid points."""
    h = grid.h
    p = grid.points
    vals = phi.spatial(p)
    for j in range(3):
        vals[j] += 0.5 * h * phi.partial(j, 1)(p)[j] + h * h / 12.0 * phi.partial(j, 2)(p)[j]
    return VectorField(grid, vals)


def qh_divergence(phi: TestFunction, grid: "GridDomain") -> float:
    """``max`` over interior points of ``|div(Q_h phi)|``."""
    return float(np.max(np.abs(div(qh_apply(phi, grid)).values[grid.interior_idx])))


def raw_divergence(phi: TestFunction, grid: "GridDomain") -> float:
    """``max`` over interior points of ``|div|`` of plain samples of ``phi``."""
    return float(np.max(np.abs(div(VectorField(grid, phi.sample(grid))).values[grid.interior_idx])))


def qh_beta(phi: TestFunction, spec, h: float, levels: int = 3) -> float:
    """``max_k max|div(Q_{h_k} phi)| / h_k^3`` over ``h_k = h / 2^k``, ``k < levels``."""
    from .grid import build_grid

    best = 0.0
    for k in range(levels):
        hk = h / 2**k
        best = max(best, qh_divergence(phi, build_grid(spec, hk, check_connected=False)) / hk**3)
    return best


# -- divergence bound --------------------------------------------------------


@dataclass
class DivergenceDefect:
    """Pairing of the intermediate divergence with scalar test functions.

    ``lhs``, ``rhs`` and ``slack`` have one entry per component of the vector
    test function, each component used as a scalar test function.
    """

    lhs: np.ndarray
    rhs: np.ndarray
    slack: np.ndarray
    admissible: bool

    def __iter__(self):
        yield self.lhs
        yield self.rhs

    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs + self.slack))


def divergence_defect(result: "RunResult", phi: TestFunction, n: int, strict: bool = True) -> DivergenceDefect:
    """Measured ``|(div u^{n+1/2}, psi)|`` and its bound for ``psi`` each component of ``phi``.

    The bound is ``tau max|grad psi| sum_j ||u_j^n|| ||D_j^+ u^{n+1/2}||
    + tau ||grad psi|| ||f^{n+1}|| + tau sum_j ||D_j^+ grad psi|| ||D_j^+ u^{n+1/2}||``,
    every factor evaluated on the grid.  ``slack`` carries ``|(div u^n, psi)|``,
    which is zero in exact arithmetic.

    Raises
    ------
    SupportTooClose
        If ``strict`` and ``phi`` does not clear the boundary collar.
    """
    d = result.domain
    k = n - result.first_step
    if not 0 <= k < len(result.u_half):
        raise MissingSnapshots(f"step {n} is not available")
    admissible = clear_of_boundary(phi, d)
    if strict and not admissible:
        raise SupportTooClose(f"{phi.name} does not vanish near the boundary of the h={d.h} grid")
    tau = result.tau
    un, uh, fn = result.u[k], result.u_half[k], result.f[k]
    samples = phi.sample(d)
    div_h = div(uh)
    div_n = div(un)
    du = [norm(dplus(uh, j)) for j in range(3)]
    un_norm = [norm(un.component(j)) for j in range(3)]
    f_norm = norm(fn)
    lhs = np.zeros(3)
    rhs = np.zeros(3)
    slack = np.zeros(3)
    for i in range(3):
        psi = ScalarField(d, samples[i])
        g = grad(psi)
        gmax = float(np.max(np.sqrt((g.values**2).sum(axis=0))))
        lhs[i] = abs(inner(div_h, psi))
        rhs[i] = tau * (
            gmax * sum(a * b for a, b in zip(un_norm, du))
            + norm(g) * f_norm
            + sum(norm(dplus(g, j)) * du[j] for j in range(3))
        )
        slack[i] = abs(inner(div_n, psi)) + 1e-12 * rhs[i]
    return DivergenceDefect(lhs, rhs, slack, admissible)


# -- weak form ---------------------------------------------------------------


def shifted_cell_integrals(phi: TestFunction, grid: "GridDomain"):
    """Exact integrals of ``phi`` and ``d_j phi`` over the shifted cells of all grid points.

    Returns ``(I, J)`` with ``I`` of shape ``(3, N)`` and ``J[j]`` of shape
    ``(3, N)`` holding the integrals of ``d_j phi``.
    """
    lo = grid.points
    hi = lo + grid.h
    I = phi.spatial.box_integrals(lo, hi)
    J = np.stack([phi.partial(j).box_integrals(lo, hi) for j in range(3)])
    return I, J


@dataclass
class WeakFormResidual:
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float

    @property
    def total(self) -> float:
        return self.r1 + self.r2 + self.r3 - self.r4 + self.r5

    def as_dict(self) -> Dict[str, float]:
        return {"r1": self.r1, "r2": self.r2, "r3": self.r3, "r4": self.r4, "r5": self.r5, "total": self.total}


def _require_full_run(result: "RunResult"):
    if result.first_step != 0:
        raise MissingSnapshots("run was resumed from a checkpoint; early snapshots are missing")
    need = _n_slabs(result.T, result.tau)
    if len(result.u_half) < need or len(result.f) < need:
        raise MissingSnapshots(f"weak form needs {need} intermediate snapshots")
    return need


def weak_form_residual(
    result: "RunResult", phi: TestFunction, strict: bool = True, time_nodes: int = 8
) -> WeakFormResidual:
    """Terms of the discrete weak form tested against ``chi(t) phi(x)``.

    Spatial integrals over shifted cells are exact; slab integrals of the
    cutoff and its derivative use a ``time_nodes``-point Gauss rule.
    """
    if phi.temporal is None:
        raise ValueError("the weak form needs a test function with a time cutoff")
    d = result.domain
    if strict and not clear_of_boundary(phi, d):
        raise SupportTooClose(f"{phi.name} does not vanish near the boundary of the h={d.h} grid")
    S = _require_full_run(result)
    edges = _slab_edges(result.T, result.tau, S)
    chi_int = np.array([phi.temporal.integral(a, b, time_nodes) for a, b in zip(edges[:-1], edges[1:])])
    dchi_int = np.array(
        [phi.temporal.derivative_integral(a, b, time_nodes) for a, b in zip(edges[:-1], edges[1:])]
    )
    I, J = shifted_cell_integrals(phi, d)

    def pair(v, w):
        return fsum((v * w).sum(axis=0))

    r1 = float(phi.temporal(0.0)) * pair(result.u[0].values, I)
    r2 = fsum(np.array([dchi_int[n] * pair(result.u[n].values, I) for n in range(S)]))
    r3_terms, r4_terms, r5_terms = [], [], []
    for n in range(S):
        un = result.u[n].values
        uh = result.u_half[n].values
        s3 = 0.0
        s4 = 0.0
        for j in range(3):
            shifted = d.neighbor(uh, j, +1)
            s3 += 0.5 * pair(un[j][None, :] * (uh + shifted), J[j])
            s4 += pair(dplus(result.u_half[n], j).values, J[j])
        r3_terms.append(chi_int[n] * s3)
        r4_terms.append(chi_int[n] * s4)
        r5_terms.append(chi_int[n] * pair(result.f[n].values, I))
    return WeakFormResidual(
        r1=r1,
        r2=r2,
        r3=fsum(np.array(r3_terms)),
        r4=fsum(np.array(r4_terms)),
        r5=fsum(np.array(r5_terms)),
    )


def initial_terms_telescoped(result: "RunResult", phi: TestFunction) -> float:
    """``R1 + R2`` by summation by parts in time, using exact cutoff values."""
    S = _require_full_run(result)
    edges = _slab_edges(result.T, result.tau, S)
    I, _ = shifted_cell_integrals(phi, result.domain)
    chi = phi.temporal(edges)
    terms = [chi[0] * fsum((result.u[0].values * I).sum(axis=0))]
    for n in range(S):
        terms.append((chi[n + 1] - chi[n]) * fsum((result.u[n].values * I).sum(axis=0)))
    return math.fsum(terms)


# -- interpolation -----------------------------------------------------------

_MASS_1D = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])


class LipschitzInterpolant:
    """Continuous trilinear interpolant of a grid function on shifted cells."""

    def __init__(self, u: ScalarField):
        self.u = u
        self.h = u.domain.h

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = x / self.h
        y = np.floor(s).astype(np.int64)
        xi = s - y
        out = np.zeros(x.shape[0])
        for e in np.ndindex(2, 2, 2):
            wgt = np.prod(np.where(np.array(e) == 1, xi, 1.0 - xi), axis=1)
            out += wgt * self.u.at(y + np.array(e))
        return out


@dataclass
class LipschitzResult:
    interpolant: LipschitzInterpolant
    err_norm: float
    grad_norms: np.ndarray
    du_norm: float

    @property
    def err_ratio(self) -> float:
        """``||w - v|| / (h ||grad u||)``."""
        if self.du_norm == 0.0:
            return 0.0
        return self.err_norm / (self.interpolant.h * self.du_norm)

    @property
    def grad_ratio(self) -> float:
        """``max_i ||d_i w|| / ||grad u||``."""
        if self.du_norm == 0.0:
            return 0.0
        return float(np.max(self.grad_norms)) / self.du_norm

    def __iter__(self):
        yield self.interpolant
        yield self.err_ratio
        yield self.grad_ratio


def lipschitz_interpolate(u: ScalarField) -> LipschitzResult:
    """Trilinear interpolant ``w`` of ``u`` and exact norms of ``w - v`` and ``d_i w``.

    ``v`` is the step function equal to ``u(y)`` on ``[y, y + h)^3``.  All norms
    are integrated exactly cell by cell.

    Raises
    ------
    BoundaryNotZero
        If ``u`` does not vanish on the discrete boundary.
    """
    check_boundary_zero(u, "u")
    d = u.domain
    h = d.h
    offsets = np.array(list(np.ndindex(2, 2, 2)), dtype=np.int64)
    cells = np.unique((d.coords[:, None, :] - offsets[None, :, :]).reshape(-1, 3), axis=0)
    c = np.stack([u.at(cells + e) for e in offsets], axis=1).reshape(-1, 2, 2, 2)
    dlt = c - c[:, :1, :1, :1]
    M = _MASS_1D
    err = np.einsum("mabc,ad,be,cf,mdef->m", dlt, M, M, M, dlt) * h**3
    grads = []
    for axis in range(3):
        g = np.diff(c, axis=axis + 1) / h
        g = np.squeeze(g, axis=axis + 1)
        grads.append(fsum(np.einsum("mab,ac,bd,mcd->m", g, M, M, g)) * h**3)
    du = math.sqrt(sum(inner(dplus(u, j), dplus(u, j)) for j in range(3)))
    return LipschitzResult(
        interpolant=LipschitzInterpolant(u),
        err_norm=math.sqrt(fsum(err)),
        grad_norms=np.sqrt(np.array(grads)),
        du_norm=du,
    )


def poincare_check(phi: ScalarField) -> Tuple[float, float]:
    """``(sum |phi|^2, a^2 sum_I |D_1^+ phi|^2)`` with ``a`` the ``x_1`` extent of the domain."""
    check_boundary_zero(phi, "phi")
    d = phi.domain
    a = d.spec.x1_diameter()
    lhs = fsum(phi.values**2)
    rhs = a * a * fsum(dplus(phi, 0).values[d.interior_idx] ** 2)
    return lhs, rhs


# -- triple norms ----------------------------------------------------------


def _slab_index(result: "RunResult", t: float) -> int:
    if not 0.0 <= t <= result.T:
        raise ValueError(f"t = {t} outside [0, {result.T}]")
    n = int(math.floor(t / result.tau))
    return min(n, len(result.u_half) - 1 + result.first_step)


def _triple_sq(result: "RunResult", k: int) -> float:
    uh = result.u_half[k]
    return (
        inner(uh, uh)
        + sum(inner(dplus(uh, j), dplus(uh, j)) for j in range(3))
        + result.tau * inner(result.f[k], result.f[k])
    )


def triple_norm(result: "RunResult", t: float) -> float:
    """Combined intermediate-velocity energy at the slab containing ``t``."""
    if not result.u_half:
        return 0.0
    k = _slab_index(result, t) - result.first_step
    if k < 0:
        raise MissingSnapshots(f"slab of t = {t} precedes the first stored step")
    return math.sqrt(_triple_sq(result, k))


def triple_norm_integral(result: "RunResult") -> float:
    """``(int_0^T |||v(t)|||^2 dt)^(1/2)`` over all slabs."""
    S = _require_full_run(result)
    lengths = np.diff(_slab_edges(result.T, result.tau, S))
    return math.sqrt(fsum(np.array([_triple_sq(result, n) for n in range(S)]) * lengths))


def triple_norm_bound(result: "RunResult") -> float:
    """Bound on :func:`triple_norm_integral` implied by the energy estimates.

    With ``M = ||v^0|| + sqrt(T) ||f||`` the estimates give
    ``T M^2 + ||v^0||^2 + 2 M sqrt(T) ||f|| + 2 tau ||f||^2``.
    """
    meta = result.ledger.meta
    T, tau = result.T, result.tau
    v0, f = meta["norm_v0"], meta["norm_f_l2l2"]
    M = v0 + math.sqrt(T) * f
    return math.sqrt(T * M * M + v0 * v0 + 2.0 * M * math.sqrt(T) * f + 2.0 * tau * f * f)


def op_norm_estimate(
    run1: "RunResult",
    run2: "RunResult",
    t: float,
    dictionary: Sequence[TestFunction],
    strict: bool = True,
) -> float:
    """``max`` over the dictionary of ``|(u_1^{n_1+1/2}, Q_{h_1} phi) - (u_2^{n_2+1/2}, Q_{h_2} phi)|``.

    A lower bound for the dual-norm distance, limited to the dictionary.
    """
    if not dictionary:
        raise EmptyDictionary("op-norm estimate needs at least one test function")
    k1 = _slab_index(run1, t) - run1.first_step
    k2 = _slab_index(run2, t) - run2.first_step
    best = 0.0
    for phi in dictionary:
        if strict:
            for r in (run1, run2):
                if not clear_of_boundary(phi, r.domain):
                    raise SupportTooClose(f"{phi.name} does not clear the h={r.h} boundary collar")
        a = inner(run1.u_half[k1], qh_apply(phi, run1.domain))
        b = inner(run2.u_half[k2], qh_apply(phi, run2.domain))
        best = max(best, abs(a - b))
    return best

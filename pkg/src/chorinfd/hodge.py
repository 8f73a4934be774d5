"""Discrete Helmholtz-Hodge decomposition ``u = w + grad(phi)``.

On interior points ``div(w) = 0`` and ``w + grad(phi) = u``; on the discrete
boundary ``w = 0`` and ``phi = 0``.  Two backends are provided: the coupled
``4a x 4a`` system solved densely, and an equivalent symmetric positive
definite problem for ``phi`` alone solved by conjugate gradients.

Eliminating ``w`` must respect that ``w`` vanishes on the boundary: the
potential solves ``-div(1_I grad(phi)) = -div(1_I u)`` at interior points, where
``1_I`` is the interior indicator.  This differs from ``sum_i D_i^2 phi = div(u)``
at points adjacent to the boundary.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrix, SolverDiverged, TooLargeForDense
from .field import ScalarField, VectorField, div, grad

if TYPE_CHECKING:
    from .grid import GridDomain

__all__ = [
    "HodgeResult",
    "decompose",
    "decompose_dense",
    "project",
    "potential_operator",
    "coupled_matrix",
    "poincare_constant",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 4096


@dataclass
class HodgeResult:
    """Outcome of a decomposition with residual certificates.

    Attributes
    ----------
    w, phi : VectorField, ScalarField
    div_residual : float
        ``max |div(w)|`` over interior points.
    split_residual : float
        ``max |w + grad(phi) - u|`` over interior points.
    boundary_w, boundary_phi : float
        ``max |w|`` and ``max |phi|`` over boundary points (zero by construction).
    iterations : int
    solver_residual : float
        Relative residual of the linear solve.
    backend : str
    """

    w: VectorField
    phi: ScalarField
    div_residual: float
    split_residual: float
    boundary_w: float
    boundary_phi: float
    iterations: int = 0
    solver_residual: float = 0.0
    backend: str = "poisson"

    def residuals(self) -> dict:
        return {
            "div_residual": self.div_residual,
            "split_residual": self.split_residual,
            "boundary_w": self.boundary_w,
            "boundary_phi": self.boundary_phi,
            "iterations": self.iterations,
            "solver_residual": self.solver_residual,
            "backend": self.backend,
        }


_OPERATOR_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()
_DENSE_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def potential_operator(domain: "GridDomain") -> sp.csr_matrix:
    """Matrix of ``phi -> -div(1_I grad(phi))`` on interior unknowns.

    Symmetric positive definite; its quadratic form is ``sum_I |grad(phi)|^2``
    (without the ``h^3`` weight).
    """
    cached = _OPERATOR_CACHE.get(domain)
    if cached is not None:
        return cached
    a = domain.n_interior
    pos = np.append(domain.interior_pos, -1)
    rows_i = np.arange(a)
    idx = domain.interior_idx
    inv_h2 = 1.0 / domain.h**2
    diag = np.zeros(a)
    rows, cols = [], []
    for i in range(3):
        plus = pos[domain.nbr[i, 1, idx]]
        minus = pos[domain.nbr[i, 0, idx]]
        # forward edge always contributes to the diagonal; backward edge only
        # when the backward neighbour carries a gradient, i.e. is interior
        diag += inv_h2 * (1.0 + (minus >= 0))
        m = plus >= 0
        rows.append(rows_i[m])
        cols.append(plus[m])
        m = minus >= 0
        rows.append(rows_i[m])
        cols.append(minus[m])
    r = np.concatenate(rows + [rows_i])
    c = np.concatenate(cols + [rows_i])
    v = np.concatenate([np.full(sum(len(x) for x in rows), -inv_h2), diag])
    mat = sp.csr_matrix((v, (r, c)), shape=(a, a))
    mat.sum_duplicates()
    mat.sort_indices()
    _OPERATOR_CACHE[domain] = mat
    return mat


def _finish(u: VectorField, phi_int: np.ndarray, backend, iterations, solver_residual, w_int=None):
    d = u.domain
    phi = np.zeros(d.n_points)
    phi[d.interior_idx] = phi_int
    phi_f = ScalarField(d, phi)
    gphi = grad(phi_f)
    w = np.zeros((3, d.n_points))
    if w_int is None:
        w[:, d.interior_idx] = u.values[:, d.interior_idx] - gphi.values[:, d.interior_idx]
    else:
        w[:, d.interior_idx] = w_int
    w_f = VectorField(d, w)
    ii = d.interior_idx
    dw = div(w_f).values[ii]
    split = (w_f.values + gphi.values - u.values)[:, ii]
    return HodgeResult(
        w=w_f,
        phi=phi_f,
        div_residual=float(np.max(np.abs(dw), initial=0.0)),
        split_residual=float(np.max(np.abs(split), initial=0.0)),
        boundary_w=float(np.max(np.abs(w[:, d.boundary_idx]), initial=0.0)),
        boundary_phi=float(np.max(np.abs(phi[d.boundary_idx]), initial=0.0)),
        iterations=int(iterations),
        solver_residual=float(solver_residual),
        backend=backend,
    )


def _masked_div(u: VectorField) -> np.ndarray:
    """``div(1_I u)`` at interior points."""
    d = u.domain
    masked = np.zeros_like(u.values)
    masked[:, d.interior_idx] = u.values[:, d.interior_idx]
    return div(VectorField(d, masked)).values[d.interior_idx]


def decompose(
    u: VectorField,
    tol: float = 1e-10,
    maxiter: Optional[int] = None,
    backend: str = "poisson",
) -> HodgeResult:
    """Split ``u`` into a discretely divergence-free part and a gradient.

    Parameters
    ----------
    u : VectorField
        Need not vanish on the boundary; boundary values are ignored.
    tol : float
        Relative residual for the conjugate gradient solve.
    maxiter : int, optional
        Iteration cap, default ``10 * a``.
    backend : {"poisson", "dense"}

    Raises
    ------
    SolverDiverged
        If the iteration cap is reached before ``tol``.
    """
    if backend == "dense":
        return decompose_dense(u)
    if backend != "poisson":
        raise ValueError(f"unknown backend {backend!r}")
    d = u.domain
    a = d.n_interior
    rhs = -_masked_div(u)
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return _finish(u, np.zeros(a), "poisson", 0, 0.0)
    mat = potential_operator(d)
    cap = 10 * a if maxiter is None else int(maxiter)
    count = [0]

    def _cb(_xk):
        count[0] += 1

    x, info = spla.cg(mat, rhs, rtol=tol, atol=0.0, maxiter=cap, callback=_cb)
    res = float(np.linalg.norm(rhs - mat @ x)) / bnorm
    if info != 0 and res > tol:
        raise SolverDiverged(
            f"conjugate gradients stopped after {count[0]} iterations at relative residual {res:.3e}"
        )
    return _finish(u, x, "poisson", count[0], res)


def coupled_matrix(domain: "GridDomain") -> np.ndarray:
    """Dense ``4a x 4a`` matrix of the coupled system.

    Unknowns are ordered ``(w_1, w_2, w_3, phi)`` at interior points in index
    order.  Rows ``0..a-1`` encode ``div(w) = 0``; rows ``a(1+i) + k`` encode
    ``w_i + D_i^+ phi = u_i`` at the ``k``-th interior point.
    """
    a = domain.n_interior
    if 4 * a > DENSE_LIMIT:
        raise TooLargeForDense(f"dense system of size {4 * a} exceeds {DENSE_LIMIT}")
    pos = np.append(domain.interior_pos, -1)
    idx = domain.interior_idx
    inv_h = 1.0 / domain.h
    k = np.arange(a)
    A = np.zeros((4 * a, 4 * a))
    for i in range(3):
        A[k, i * a + k] += inv_h
        minus = pos[domain.nbr[i, 0, idx]]
        m = minus >= 0
        A[k[m], i * a + minus[m]] -= inv_h
        row = a * (1 + i) + k
        A[row, i * a + k] = 1.0
        A[row, 3 * a + k] -= inv_h
        plus = pos[domain.nbr[i, 1, idx]]
        m = plus >= 0
        A[row[m], 3 * a + plus[m]] += inv_h
    return A


def _dense_factor(domain):
    cached = _DENSE_CACHE.get(domain)
    if cached is not None:
        return cached
    A = coupled_matrix(domain)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= 4 * A.shape[0] * np.finfo(float).eps * pivots.max():
        raise SingularMatrix("coupled decomposition matrix is numerically singular")
    _DENSE_CACHE[domain] = (lu, piv)
    return lu, piv


def decompose_dense(u: VectorField) -> HodgeResult:
    """Decompose by LU factorisation of the coupled system (reference backend)."""
    d = u.domain
    a = d.n_interior
    lu, piv = _dense_factor(d)
    rhs = np.zeros(4 * a)
    rhs[a:] = u.values[:, d.interior_idx].reshape(-1)
    y = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    w_int = y[: 3 * a].reshape(3, a)
    return _finish(u, y[3 * a :], "dense", 0, 0.0, w_int=w_int)


def project(u: VectorField, tol: float = 1e-10, maxiter: Optional[int] = None) -> VectorField:
    """Divergence-free part of ``u``."""
    return decompose(u, tol=tol, maxiter=maxiter).w


def poincare_constant(domain: "GridDomain") -> float:
    """Smallest ``A`` with ``sum |phi|^2 <= A sum_I |D_1^+ phi|^2`` for ``phi = 0`` on the boundary.

    The forward difference along ``x_1`` decouples into independent runs of
    consecutive interior points, each closed by a boundary point.  ``A`` is the
    largest inverse squared singular value over all runs.
    """
    z = domain.coords[domain.interior_idx]
    pos = np.append(domain.interior_pos, -1)
    plus_int = pos[domain.nbr[0, 1, domain.interior_idx]] >= 0
    # group by (x_2, x_3) lines, ordered along x_1 within each line
    order = np.lexsort((z[:, 0], z[:, 2], z[:, 1]))
    zs = z[order]
    nxt = plus_int[order]
    lengths = []
    run = 0
    for k in range(zs.shape[0]):
        run += 1
        if not nxt[k]:
            lengths.append(run)
            run = 0
    best = 0.0
    for n in sorted(set(lengths)):
        g = -np.eye(n) + np.eye(n, k=1)
        smin = np.linalg.svd(g, compute_uv=False)[-1]
        best = max(best, (domain.h / smin) ** 2)
    return best

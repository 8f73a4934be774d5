"""Implicit intermediate-velocity step.

For every interior point ``x`` and component ``i`` the unknown ``y = u^{n+1/2}``
satisfies::

    y_i(x) + (tau/2) sum_j [u_j(x - h e_j) D_j^+ y_i(x - h e_j) + u_j(x) D_j^+ y_i(x)]
           - tau sum_j D_j^2 y_i(x) = u_i(x) + tau f_i(x)

with ``u = u^n`` and ``y = 0`` on the discrete boundary and beyond.  The
operator is the same for the three components.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceWarning, NonpositiveTau, SolverDiverged
from .field import (
    VectorField,
    check_boundary_zero,
    div,
    dplus,
    fsum,
    inner,
)

if TYPE_CHECKING:
    from .grid import GridDomain

__all__ = [
    "MomentumSystem",
    "SolveInfo",
    "assemble",
    "apply_stencil",
    "solve",
    "advection",
    "advection_form",
    "energy_identity_terms",
    "DIVERGENCE_WARN",
]

DIVERGENCE_WARN = 1e-8
DENSE_FALLBACK = 3000


@dataclass
class SolveInfo:
    residual: float
    iterations: int
    method: str


class MomentumSystem:
    """Sparse interior operator ``I + tau (C[u^n] - L)`` shared by all components.

    Attributes
    ----------
    domain : GridDomain
    u_n : VectorField
    tau : float
    matrix : scipy.sparse.csr_matrix
        Acts on interior values in interior index order.
    """

    def __init__(self, domain: "GridDomain", u_n: VectorField, tau: float, matrix: sp.csr_matrix):
        self.domain = domain
        self.u_n = u_n
        self.tau = tau
        self.matrix = matrix

    def rhs(self, f: Optional[VectorField]) -> np.ndarray:
        """Interior right-hand sides ``u^n + tau f``, shape ``(3, a)``."""
        ii = self.domain.interior_idx
        b = self.u_n.values[:, ii].copy()
        if f is not None:
            b += self.tau * f.values[:, ii]
        return b

    def symmetric_part(self) -> sp.csr_matrix:
        return ((self.matrix + self.matrix.T) * 0.5).tocsr()


def assemble(u_n: VectorField, tau: float) -> MomentumSystem:
    """Assemble the momentum operator for the advecting field ``u_n``.

    Raises
    ------
    BoundaryNotZero
        If ``u_n`` is nonzero on the discrete boundary.
    NonpositiveTau
        If ``tau <= 0``.
    """
    if not (tau > 0 and math.isfinite(tau)):
        raise NonpositiveTau(f"time step must be positive, got {tau!r}")
    check_boundary_zero(u_n, "u_n")
    d = u_n.domain
    h = d.h
    a = d.n_interior
    idx = d.interior_idx
    pos = np.append(d.interior_pos, -1)
    k = np.arange(a)
    diag = np.full(a, 1.0 + 6.0 * tau / h**2)
    rows, cols, vals = [k], [k], [None]
    for j in range(3):
        uj = u_n.values[j]
        u_here = uj[idx]
        u_back = d.neighbor(uj, j, -1)[idx]
        diag += tau * 0.5 * (u_back - u_here) / h
        minus = pos[d.nbr[j, 0, idx]]
        plus = pos[d.nbr[j, 1, idx]]
        m = minus >= 0
        rows.append(k[m])
        cols.append(minus[m])
        vals.append(tau * (-0.5 * u_back[m] / h - 1.0 / h**2))
        m = plus >= 0
        rows.append(k[m])
        cols.append(plus[m])
        vals.append(tau * (0.5 * u_here[m] / h - 1.0 / h**2))
    vals[0] = diag
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(a, a)
    )
    mat.sum_duplicates()
    mat.sort_indices()
    return MomentumSystem(d, u_n, float(tau), mat)


def advection(u_n: VectorField, y: VectorField) -> VectorField:
    """Averaged advection ``(1/2) sum_j [u_j(x-he_j) D_j^+ y(x-he_j) + u_j(x) D_j^+ y(x)]``.

    Evaluated at every point with zero extension.
    """
    d = u_n.domain
    out = np.zeros_like(y.values)
    for j in range(3):
        g = u_n.values[j] * dplus(y, j).values
        out += 0.5 * (d.neighbor(g, j, -1) + g)
    return VectorField(d, out)


def apply_stencil(u_n: VectorField, tau: float, y: VectorField) -> VectorField:
    """Matrix-free evaluation of the momentum operator at interior points.

    ``y`` is treated as zero on the boundary; boundary entries of the result are zero.
    """
    d = u_n.domain
    yv = np.zeros_like(y.values)
    yv[:, d.interior_idx] = y.values[:, d.interior_idx]
    yz = VectorField(d, yv)
    out = yz.values + tau * advection(u_n, yz).values
    for j in range(3):
        out -= tau * (d.neighbor(yv, j, +1) - 2.0 * yv + d.neighbor(yv, j, -1)) / d.h**2
    res = np.zeros_like(out)
    res[:, d.interior_idx] = out[:, d.interior_idx]
    return VectorField(d, res)


def _krylov(mat, b, tol, cap):
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, 0, "trivial"
    count = [0]

    def _cb(_xk):
        count[0] += 1

    x, _ = spla.bicgstab(mat, b, rtol=tol, atol=0.0, maxiter=cap, callback=_cb)
    res = float(np.linalg.norm(b - mat @ x)) / bnorm
    method = "bicgstab"
    if not res <= tol:
        x, _ = spla.gmres(
            mat, b, x0=x, rtol=tol, atol=0.0, restart=50, maxiter=cap,
            callback=_cb, callback_type="pr_norm",
        )
        res = float(np.linalg.norm(b - mat @ x)) / bnorm
        method = "gmres"
    return x, res, count[0], method


def solve(
    sys: MomentumSystem,
    f: Optional[VectorField] = None,
    tol: float = 1e-10,
    maxiter: Optional[int] = None,
    return_info: bool = False,
):
    """Solve for the intermediate velocity.

    Parameters
    ----------
    sys : MomentumSystem
    f : VectorField, optional
        Cell-averaged force; only interior values enter.
    tol : float
        Relative residual per component.
    maxiter : int, optional
        Iteration cap, default ``20 * a``.
    return_info : bool
        Also return a :class:`SolveInfo` with the worst component residual.

    Returns
    -------
    VectorField or (VectorField, SolveInfo)
    """
    d = sys.domain
    a = d.n_interior
    div_u = div(sys.u_n).values[d.interior_idx]
    if div_u.size and np.max(np.abs(div_u)) > DIVERGENCE_WARN:
        warnings.warn(
            f"advecting field has max |div| = {np.max(np.abs(div_u)):.3e}; "
            "unique solvability is not guaranteed",
            DivergenceWarning,
            stacklevel=2,
        )
    cap = 20 * a if maxiter is None else int(maxiter)
    b = sys.rhs(f)
    out = np.zeros((3, d.n_points))
    worst, iters, method = 0.0, 0, "trivial"
    dense_lu = None
    for i in range(3):
        x, res, it, meth = _krylov(sys.matrix, b[i], tol, cap)
        if not res <= tol:
            if a > DENSE_FALLBACK:
                raise SolverDiverged(
                    f"momentum solve for component {i} stalled at relative residual {res:.3e}"
                )
            if dense_lu is None:
                dense_lu = scipy.linalg.lu_factor(sys.matrix.toarray(), check_finite=False)
            x = scipy.linalg.lu_solve(dense_lu, b[i], check_finite=False)
            res = float(np.linalg.norm(b[i] - sys.matrix @ x)) / float(np.linalg.norm(b[i]))
            meth = "dense"
            if not res <= max(tol, 1e-12):
                raise SolverDiverged(
                    f"momentum solve for component {i} failed with relative residual {res:.3e}"
                )
        out[i, d.interior_idx] = x
        worst = max(worst, res)
        iters = max(iters, it)
        if meth != "trivial":
            method = meth
    u_half = VectorField(d, out)
    if return_info:
        return u_half, SolveInfo(worst, iters, method)
    return u_half


def advection_form(u_n: VectorField, y: VectorField) -> float:
    """Bilinear pairing ``(C[u_n] y, y)`` over interior points for ``y = 0`` on the boundary."""
    check_boundary_zero(y, "y")
    d = u_n.domain
    c = advection(u_n, y)
    prod = (c.values * y.values).sum(axis=0)[d.interior_idx]
    return fsum(prod) * d.h**3


def energy_identity_terms(u_n: VectorField, u_half: VectorField) -> Tuple[float, float]:
    """Advection and diffusion terms of the discrete energy identity.

    Returns
    -------
    advection_term : float
        ``-sum_I div(u_n) |u_half|^2 h^3``.
    diffusion_term : float
        ``-sum_j ||D_j^+ u_half||^2``.

    Both are also evaluated by the direct double sums; a disagreement beyond
    ``1e-12`` relative raises ``AssertionError``.
    """
    check_boundary_zero(u_n, "u_n")
    check_boundary_zero(u_half, "u_half")
    d = u_n.domain
    h3 = d.h**3
    ii = d.interior_idx
    sq = (u_half.values**2).sum(axis=0)
    adv_closed = -fsum((div(u_n).values * sq)[ii]) * h3
    # direct double sum of the averaged advection paired with u_half
    adv_raw = 2.0 * advection_form(u_n, u_half)
    diff_closed = -sum(inner(dplus(u_half, j), dplus(u_half, j)) for j in range(3))
    lap = np.zeros_like(u_half.values)
    for j in range(3):
        v = u_half.values
        lap += (d.neighbor(v, j, +1) - 2.0 * v + d.neighbor(v, j, -1)) / d.h**2
    diff_raw = fsum((lap * u_half.values).sum(axis=0)[ii]) * h3
    scale_a = fsum((np.abs(div(u_n).values) * sq)[ii]) * h3
    scale_d = abs(diff_closed)
    tol = 1e-12
    if abs(adv_closed - adv_raw) > tol * max(scale_a, _adv_scale(u_n, u_half)):
        raise AssertionError(f"advection term mismatch: {adv_closed!r} vs {adv_raw!r}")
    if abs(diff_closed - diff_raw) > tol * max(scale_d, 1e-300):
        raise AssertionError(f"diffusion term mismatch: {diff_closed!r} vs {diff_raw!r}")
    return adv_closed, diff_closed


def _adv_scale(u_n: VectorField, y: VectorField) -> float:
    """Magnitude of the individual products in the advection pairing."""
    d = u_n.domain
    tot = 0.0
    for j in range(3):
        g = np.abs(u_n.values[j] * dplus(y, j).values)
        tot += fsum((g * np.abs(y.values)).sum(axis=0)) + fsum(
            (d.neighbor(g, j, -1) * np.abs(y.values)).sum(axis=0)
        )
    return tot * d.h**3

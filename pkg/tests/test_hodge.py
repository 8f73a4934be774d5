import numpy as np
import pytest

from chorinfd.checks import random_scalar, random_vector
from chorinfd.errors import SolverDiverged, TooLargeForDense
from chorinfd.field import VectorField, div, grad, inner, norm
from chorinfd.grid import Box, build_grid
from chorinfd.hodge import (
    coupled_matrix,
    decompose,
    decompose_dense,
    poincare_constant,
    potential_operator,
    project,
)


@pytest.fixture(scope="module")
def box5():
    # 5^3 interior points
    return build_grid(Box(), 1.0 / 12)


def test_zero_field(box5):
    r = decompose(VectorField(box5))
    assert not r.w.values.any() and not r.phi.values.any()
    d = decompose_dense(VectorField(build_grid(Box(), 1.0 / 10)))
    assert not d.w.values.any() and not d.phi.values.any()


def test_pure_gradient_recovered(box5, rng):
    phi0 = random_scalar(box5, rng)
    r = decompose(grad(phi0), tol=1e-13)
    assert np.max(np.abs(r.w.values)) < 1e-9
    assert np.max(np.abs(r.phi.values - phi0.values)) < 1e-9


def test_backends_agree(box5, rng):
    for _ in range(5):
        u = random_vector(box5, rng, boundary_zero=False)
        a = decompose(u, tol=1e-13)
        b = decompose_dense(u)
        assert np.max(np.abs(a.w.values - b.w.values)) <= 1e-10
        assert np.max(np.abs(a.phi.values - b.phi.values)) <= 1e-10


def test_result_invariants(box5, rng):
    u = random_vector(box5, rng, boundary_zero=False)
    r = decompose(u, tol=1e-12)
    assert r.boundary_w == 0.0 and r.boundary_phi == 0.0
    assert r.div_residual < 1e-8
    assert r.split_residual < 1e-12
    assert set(r.residuals()) >= {"div_residual", "split_residual", "iterations", "backend"}


def test_pythagoras_and_contraction(box5, rng):
    for _ in range(10):
        u = random_vector(box5, rng)
        r = decompose_dense(u)
        g = grad(r.phi)
        gi = VectorField(box5, np.where(box5.interior, g.values, 0.0))
        lhs = norm(u) ** 2
        rhs = norm(r.w) ** 2 + norm(gi) ** 2
        assert abs(lhs - rhs) <= 1e-10 * lhs
        assert norm(r.w) <= norm(u)
        assert abs(inner(r.w, gi)) <= 1e-10 * lhs


def test_idempotent(box5, rng):
    tol = 1e-10
    u = random_vector(box5, rng)
    p1 = project(u, tol=tol)
    p2 = project(p1, tol=tol)
    assert np.max(np.abs(p2.values - p1.values)) <= 2 * tol * np.max(np.abs(p1.values))


def test_divergence_free_field_unchanged(box5, rng):
    w = project(random_vector(box5, rng), tol=1e-13)
    again = project(w, tol=1e-10)
    assert np.max(np.abs(again.values - w.values)) < 1e-10


def test_estimate_with_poincare_constant(small_grids, rng):
    for g in (small_grids["box"], small_grids["ball"]):
        A = poincare_constant(g)
        for _ in range(10):
            u = random_vector(g, rng)
            r = decompose(u, tol=1e-12)
            d = (u - r.w).values[:, g.interior_idx]
            lhs = np.sum(d**2)
            rhs = A * np.sum(div(u).values[g.interior_idx] ** 2)
            assert lhs <= rhs * (1 + 1e-9)
            # potential bound
            gphi = grad(r.phi).values[:, g.interior_idx]
            assert np.sum(r.phi.values**2) <= A * np.sum(gphi**2) * (1 + 1e-9)


def test_poincare_constant_box_value(box5):
    # runs of 5 interior points closed by one boundary point
    n = 5
    G = -np.eye(n) + np.eye(n, k=1)
    smin = np.linalg.svd(G, compute_uv=False)[-1]
    assert poincare_constant(box5) == pytest.approx((box5.h / smin) ** 2)
    assert poincare_constant(box5) <= 1.0  # x1-diameter squared


def test_potential_operator_spd(box5):
    M = potential_operator(box5).toarray()
    assert np.allclose(M, M.T)
    assert np.linalg.eigvalsh(M).min() > 0


def test_coupled_matrix_shape_and_guard(box5):
    A = coupled_matrix(box5)
    assert A.shape == (4 * 125, 4 * 125)
    with pytest.raises(TooLargeForDense):
        coupled_matrix(build_grid(Box(), 1.0 / 19))


def test_iteration_cap_reported(box5, rng):
    with pytest.raises(SolverDiverged):
        decompose(random_vector(box5, rng), tol=1e-14, maxiter=1)


def test_unknown_backend(box5):
    with pytest.raises(ValueError):
        decompose(VectorField(box5), backend="spectral")


def test_dense_backend_selector(box5, rng):
    u = random_vector(box5, rng)
    assert decompose(u, backend="dense").backend == "dense"

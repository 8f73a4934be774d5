import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chorinfd.checks import random_scalar, random_vector
from chorinfd.errors import AxisOutOfRange, BoundaryNotZero, DomainMismatch
from chorinfd.field import (
    ScalarField,
    VectorField,
    adjoint_defect,
    d2,
    div,
    dminus,
    dplus,
    fsum,
    get_summation_mode,
    grad,
    inner,
    laplacian,
    norm,
    sbp_defect,
    set_summation_mode,
)
from chorinfd.grid import Box, build_grid


def test_dplus_exact_on_linear(box16):
    g = box16
    u = ScalarField.from_function(g, lambda p: 3.0 * p[:, 0] - 2.0 * p[:, 2])
    ok = g.nbr[0, 1] < g.n_points
    assert np.allclose(dplus(u, 0).values[ok], 3.0)
    ok = g.nbr[2, 0] < g.n_points
    assert np.allclose(dminus(u, 2).values[ok], -2.0)


def test_second_difference_exact_on_quadratic(box16):
    g = box16
    u = ScalarField.from_function(g, lambda p: p[:, 1] ** 2)
    lap = laplacian(u).values[g.interior_idx]
    assert np.allclose(lap, 2.0)
    assert np.allclose(d2(u, 1).values[g.interior_idx], 2.0)


def test_div_grad_is_laplacian(box16, rng):
    phi = random_scalar(box16, rng)
    a = div(grad(phi)).values[box16.interior_idx]
    b = laplacian(phi).values[box16.interior_idx]
    assert np.allclose(a, b, rtol=0, atol=1e-9 * np.abs(b).max())


def test_sbp_identity_three_shapes(small_grids, rng):
    for g in small_grids.values():
        for _ in range(20):
            w, phi = random_vector(g, rng), random_scalar(g, rng)
            scale = norm(w) * norm(phi) / g.h
            assert abs(sbp_defect(w, phi)) <= 1e-12 * scale


def test_adjointness_needs_only_phi_zero(small_grids, rng):
    for g in small_grids.values():
        u = random_scalar(g, rng, boundary_zero=False)
        phi = random_scalar(g, rng)
        for i in range(3):
            assert abs(adjoint_defect(u, phi, i)) <= 1e-12 * norm(u) * norm(phi) / g.h


def test_sbp_requires_boundary_zero(box16, rng):
    w = random_vector(box16, rng, boundary_zero=False)
    with pytest.raises(BoundaryNotZero):
        sbp_defect(w, random_scalar(box16, rng))


def test_axis_checked(box16):
    with pytest.raises(AxisOutOfRange):
        dplus(ScalarField(box16), 3)


def test_mixed_domains_rejected(box16):
    other = build_grid(Box(), 1.0 / 12)
    with pytest.raises(DomainMismatch):
        inner(ScalarField(box16), ScalarField(other))


def test_vector_arithmetic(box16, rng):
    u = random_vector(box16, rng)
    v = random_vector(box16, rng)
    assert np.allclose((u + v - v).values, u.values)
    assert np.allclose((2.0 * u / 2.0).values, u.values)
    assert inner(u, v) == pytest.approx(sum(inner(u.component(i), v.component(i)) for i in range(3)))
    assert norm(u) ** 2 == pytest.approx(inner(u, u))


def test_summation_modes(box16, rng):
    vals = rng.standard_normal(1000)
    assert get_summation_mode() == "sequential"
    seq = fsum(vals)
    set_summation_mode("compensated")
    try:
        comp = fsum(vals)
    finally:
        set_summation_mode("sequential")
    assert seq == pytest.approx(comp, rel=1e-12)
    with pytest.raises(ValueError):
        set_summation_mode("pairwise")


def test_fsum_order_is_fixed():
    v = np.array([1e16, 1.0, -1e16, 1.0])
    assert fsum(v) == ((1e16 + 1.0) - 1e16) + 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), shape=st.sampled_from(["box", "ball", "lshape"]))
def test_sbp_property(small_grids, seed, shape):
    g = small_grids[shape]
    r = np.random.default_rng(seed)
    w, phi = random_vector(g, r), random_scalar(g, r)
    assert abs(sbp_defect(w, phi)) <= 1e-12 * norm(w) * norm(phi) / g.h


def test_vector_field_shape_checked(box16):
    with pytest.raises(ValueError):
        VectorField(box16, np.zeros((2, box16.n_points)))

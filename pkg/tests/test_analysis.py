import math

import numpy as np
import pytest

from chorinfd.analysis import (
    EmbeddedField,
    divergence_defect,
    embed,
    initial_terms_telescoped,
    l2_distance,
    lipschitz_interpolate,
    op_norm_estimate,
    poincare_check,
    qh_apply,
    qh_divergence,
    raw_divergence,
    triple_norm,
    triple_norm_bound,
    triple_norm_integral,
    weak_form_residual,
)
from chorinfd.checks import random_scalar
from chorinfd.errors import GridsNotAligned, MissingSnapshots, SupportTooClose
from chorinfd.field import ScalarField, norm
from chorinfd.grid import Box, build_grid
from chorinfd.stepper import RunConfig, run

from conftest import acceptance_config


@pytest.fixture(scope="module")
def zero_run():
    return run(RunConfig(h=1.0 / 16, T=0.25, alpha=2.0))


def test_embedding_norm_matches_lattice_sum(acceptance_run):
    e = embed(acceptance_run, "v")
    expect = sum(norm(u) ** 2 for u in acceptance_run.u_half) * acceptance_run.tau
    assert e.l2_norm_sq() == pytest.approx(expect, rel=1e-13)


def test_embedding_pointwise(acceptance_run):
    e = embed(acceptance_run, "u")
    g = acceptance_run.domain
    x = g.points[g.interior_idx[:5]] + 0.3 * g.h
    t = 1.5 * acceptance_run.tau
    assert np.array_equal(e(t, x), acceptance_run.u[1].values[:, g.interior_idx[:5]])
    assert not e(t, np.array([[-0.5, 0.5, 0.5]])).any()
    assert not e(acceptance_run.T, x).any()


def test_embedding_kinds(acceptance_run):
    for kind in ("u", "v", "w1", "w2", "w3", "f"):
        assert embed(acceptance_run, kind).n_slabs == 4
    with pytest.raises(ValueError):
        embed(acceptance_run, "p")


def test_distance_basic(acceptance_run, zero_run):
    e = embed(acceptance_run)
    z = embed(zero_run)
    assert l2_distance(e, e) == 0.0
    assert l2_distance(e, z) == pytest.approx(e.l2_norm(), rel=1e-12)


def test_distance_across_levels_by_hand():
    coarse = build_grid(Box(), 1.0 / 8)
    fine = build_grid(Box(), 1.0 / 16)
    T = 0.25
    snaps = np.zeros((2, 3, coarse.n_points))
    snaps[:, :, coarse.interior_idx[0]] = [1.0, -2.0, 2.0]
    ec = EmbeddedField(coarse, 0.125, T, snaps)
    ef = EmbeddedField(fine, 1.0 / 16, T, np.zeros((4, 3, fine.n_points)))
    expect = math.sqrt(T * 9.0 * coarse.h**3)
    assert l2_distance(ec, ef) == pytest.approx(expect, rel=1e-14)
    assert l2_distance(ef, ec) == pytest.approx(expect, rel=1e-14)


def test_distance_child_cells_cancel():
    # a fine field that copies the coarse one on covered child cells
    coarse = build_grid(Box(), 1.0 / 8)
    fine = build_grid(Box(), 1.0 / 16)
    c = np.zeros((1, 3, coarse.n_points))
    c[0, 0, coarse.interior_idx[0]] = 1.0
    kids = coarse.index_of(np.floor_divide(fine.coords, 2)) == coarse.interior_idx[0]
    f = np.zeros((1, 3, fine.n_points))
    f[0, 0, kids] = 1.0
    d = l2_distance(EmbeddedField(coarse, 0.25, 0.25, c), EmbeddedField(fine, 0.25, 0.25, f))
    uncovered = coarse.h**3 - kids.sum() * fine.h**3
    assert d == pytest.approx(math.sqrt(0.25 * uncovered), rel=1e-12, abs=1e-15)


def test_distance_alignment_errors():
    a = build_grid(Box(), 1.0 / 8)
    b = build_grid(Box(), 1.0 / 12)
    ea = EmbeddedField(a, 0.25, 0.25, np.zeros((1, 3, a.n_points)))
    eb = EmbeddedField(b, 0.25, 0.25, np.zeros((1, 3, b.n_points)))
    with pytest.raises(GridsNotAligned):
        l2_distance(ea, eb)
    with pytest.raises(MissingSnapshots):
        EmbeddedField(a, 0.125, 0.25, np.zeros((1, 3, a.n_points)))


def test_qh_preserves_constants_and_divergence_free(box16):
    from chorinfd.analytic import bump_potential_curl
    from chorinfd.testfunctions import TestFunction

    phi = TestFunction(bump_potential_curl(0.5, 0.25, (0, 0, 1)))
    q = qh_apply(phi, box16)
    assert q.values.shape == (3, box16.n_points)
    assert qh_divergence(phi, box16) < raw_divergence(phi, box16)


def test_qh_divergence_decays_faster_than_raw(dictionary):
    phi = dictionary[0]
    g1 = build_grid(Box(), 1.0 / 16)
    g2 = build_grid(Box(), 1.0 / 32)
    raw = raw_divergence(phi, g1) / raw_divergence(phi, g2)
    qh = qh_divergence(phi, g1) / qh_divergence(phi, g2)
    # plain samples lose a power of h to the one-sided differences
    assert raw < 2.5
    assert qh > 4.0 * raw


def test_divergence_defect_zero_run(zero_run, dictionary):
    dd = divergence_defect(zero_run, dictionary[0], 0)
    assert not dd.lhs.any() and not dd.rhs.any()
    assert dd.holds() and dd.admissible


def test_divergence_defect_acceptance(acceptance_run, dictionary):
    for phi in dictionary:
        for n in range(4):
            dd = divergence_defect(acceptance_run, phi, n)
            assert dd.holds()
            assert np.all(dd.rhs[dd.lhs > 0] > 0)
            assert dd.rhs.any()


def test_divergence_defect_support_guard(dictionary):
    res = run(acceptance_config(h=1.0 / 8))
    with pytest.raises(SupportTooClose):
        divergence_defect(res, dictionary[0], 0)
    assert not divergence_defect(res, dictionary[0], 0, strict=False).admissible
    with pytest.raises(MissingSnapshots):
        divergence_defect(res, dictionary[0], 7, strict=False)


def test_weak_form_zero_run(zero_run, dictionary_T):
    r = weak_form_residual(zero_run, dictionary_T[0])
    assert r.total == 0.0
    assert set(r.as_dict()) == {"r1", "r2", "r3", "r4", "r5", "total"}


def test_weak_form_needs_cutoff(acceptance_run, dictionary):
    with pytest.raises(ValueError):
        weak_form_residual(acceptance_run, dictionary[0])


def test_initial_terms_two_paths(acceptance_run, dictionary_T):
    for phi in dictionary_T:
        r = weak_form_residual(acceptance_run, phi, time_nodes=12)
        tele = initial_terms_telescoped(acceptance_run, phi)
        assert r.r1 + r.r2 == pytest.approx(tele, rel=1e-9, abs=1e-12)


def test_lipschitz_matches_at_corners(rng):
    g = build_grid(Box(), 1.0 / 11)
    u = random_scalar(g, rng)
    li = lipschitz_interpolate(u)
    assert np.allclose(li.interpolant(g.points), u.values, rtol=0, atol=1e-14)
    off = np.array([[-1.0, 0.5, 0.5]])
    assert li.interpolant(off)[0] == 0.0


def test_lipschitz_constants(rng):
    # per-cell bounds summed over the 8 cells touching each grid point
    g = build_grid(Box(), 1.0 / 11)
    worst_err, worst_grad = 0.0, 0.0
    for _ in range(100):
        _, e, gr = lipschitz_interpolate(random_scalar(g, rng))
        worst_err, worst_grad = max(worst_err, e), max(worst_grad, gr)
    assert worst_err <= math.sqrt(12.0)
    assert worst_grad <= math.sqrt(45.0)
    zero = lipschitz_interpolate(ScalarField(g))
    assert zero.err_ratio == 0.0 and zero.grad_ratio == 0.0


def test_poincare_single_point():
    g = build_grid(Box(), 1.0 / 8)
    phi = ScalarField(g)
    phi.values[g.interior_idx] = 1.0
    lhs, rhs = poincare_check(phi)
    assert lhs == 1.0
    assert rhs == pytest.approx(64.0)


def test_poincare_random(small_grids, rng):
    for g in small_grids.values():
        for _ in range(20):
            lhs, rhs = poincare_check(random_scalar(g, rng))
            assert lhs <= rhs


def test_triple_norms(acceptance_run, zero_run):
    assert triple_norm(zero_run, 0.1) == 0.0
    assert triple_norm_integral(zero_run) == 0.0
    assert triple_norm(acceptance_run, 0.1) > 0.0
    assert triple_norm_integral(acceptance_run) <= triple_norm_bound(acceptance_run)
    with pytest.raises(ValueError):
        triple_norm(acceptance_run, 1.0)


def test_op_norm_identical_runs(acceptance_run, dictionary):
    assert op_norm_estimate(acceptance_run, acceptance_run, 0.1, dictionary) == 0.0


def test_poincare_tent_closed_form():
    # interior x_1 indices are 4..8 at h = 1/12; tent 1 2 3 2 1 along each line
    g = build_grid(Box(), 1.0 / 12)
    phi = ScalarField(g)
    z1 = g.coords[g.interior_idx, 0]
    phi.values[g.interior_idx] = np.minimum(z1 - 3, 9 - z1)
    lhs, rhs = poincare_check(phi)
    lines = 25
    assert lhs == 19 * lines
    assert rhs == pytest.approx(5 * lines / g.h**2)
    assert lhs < rhs


def test_single_cell_embedding_norm():
    g = build_grid(Box(), 1.0 / 8)
    snaps = np.zeros((1, 3, g.n_points))
    snaps[0, :, g.interior_idx[0]] = [3.0, 0.0, 4.0]
    e = EmbeddedField(g, 0.25, 0.25, snaps)
    assert e.l2_norm_sq() == pytest.approx(0.25 * g.h**3 * 25.0, rel=1e-15)

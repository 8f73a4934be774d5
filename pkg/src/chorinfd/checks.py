"""Built-in invariant suite run by ``chorinfd check``.

Every check works on small grids and finishes in seconds.  A check returns
its worst measured value next to the threshold it must stay under.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import analysis, hodge, momentum
from .analytic import bump_potential_curl
from .field import ScalarField, VectorField, adjoint_defect, norm, sbp_defect
from .grid import Ball, Box, LShape, build_grid
from .harness import ledger_audit
from .stepper import RunConfig, run
from .testfunctions import TestFunction

__all__ = ["CheckResult", "random_scalar", "random_vector", "run_checks", "CHECKS"]


@dataclass
class CheckResult:
    name: str
    ok: bool
    value: float
    threshold: float
    seconds: float = 0.0
    detail: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "ok": self.ok,
            "value": self.value,
            "threshold": self.threshold,
            "seconds": self.seconds,
            "detail": self.detail,
        }


def random_scalar(domain, rng, boundary_zero: bool = True) -> ScalarField:
    v = rng.standard_normal(domain.n_points)
    if boundary_zero:
        v[domain.boundary_idx] = 0.0
    return ScalarField(domain, v)


def random_vector(domain, rng, boundary_zero: bool = True) -> VectorField:
    v = rng.standard_normal((3, domain.n_points))
    if boundary_zero:
        v[:, domain.boundary_idx] = 0.0
    return VectorField(domain, v)


def _grids():
    return [
        build_grid(Box(), 1.0 / 12),
        build_grid(Ball((0.0, 0.0, 0.0), 1.0), 1.0 / 8),
        build_grid(LShape(), 1.0 / 16),
    ]


def _hodge(trials: int) -> float:
    rng = np.random.default_rng(1)
    worst = 0.0
    for g in _grids()[:2]:
        for _ in range(trials):
            u = random_vector(g, rng)
            a = hodge.decompose(u, tol=1e-13)
            b = hodge.decompose_dense(u)
            worst = max(worst, float(np.max(np.abs(a.w.values - b.w.values))))
            du = u - a.w
            pyth = abs(norm(u) ** 2 - norm(a.w) ** 2 - norm(du) ** 2) / norm(u) ** 2
            worst = max(worst, pyth, a.div_residual)
    return worst


def _sbp(trials: int) -> float:
    rng = np.random.default_rng(2)
    worst = 0.0
    for g in _grids():
        for _ in range(trials):
            w, phi = random_vector(g, rng), random_scalar(g, rng)
            scale = norm(w) * norm(phi) / g.h
            worst = max(worst, abs(sbp_defect(w, phi)) / scale)
            u = random_scalar(g, rng)
            for i in range(3):
                worst = max(worst, abs(adjoint_defect(u, phi, i)) / (norm(u) * norm(phi) / g.h))
    return worst


def _momentum(trials: int) -> float:
    rng = np.random.default_rng(3)
    g = build_grid(Box(), 1.0 / 12)
    worst = 0.0
    for _ in range(trials):
        un = hodge.project(random_vector(g, rng), tol=1e-13)
        f = random_vector(g, rng)
        for tau in (g.h**3, g.h**2, g.h, 10 * g.h, 100 * g.h):
            _, info = momentum.solve(momentum.assemble(un, tau), f, tol=1e-10, return_info=True)
            worst = max(worst, info.residual)
    return worst


def _advection(trials: int) -> float:
    rng = np.random.default_rng(5)
    g = build_grid(Box(), 1.0 / 12)
    worst = 0.0
    for _ in range(trials):
        un = hodge.project(random_vector(g, rng), tol=1e-13)
        y = random_vector(g, rng)
        worst = max(worst, abs(momentum.advection_form(un, y)) / momentum._adv_scale(un, y))
    return worst


def _energy() -> float:
    cfg = RunConfig(
        h=1.0 / 12,
        T=0.25,
        tau=1.0 / 8,
        alpha=2.0,
        initial={"kind": "solenoidal_bump", "radius": 0.3},
        force={"kind": "decaying_swirl", "radius": 0.3},
    )
    res = run(cfg)
    audit = ledger_audit(res.ledger, cfg)
    if audit.flagged:
        return math.inf
    return max(0.0, audit.max_violation, -res.ledger.min_relative_slack())


def _appendix(trials: int) -> float:
    rng = np.random.default_rng(4)
    worst = 0.0
    for g in _grids()[:2]:
        for _ in range(trials):
            phi = random_scalar(g, rng)
            lhs, rhs = analysis.poincare_check(phi)
            worst = max(worst, lhs / rhs)
    g = build_grid(Box(), 1.0 / 11)
    for _ in range(trials):
        r = analysis.lipschitz_interpolate(random_scalar(g, rng))
        worst = max(worst, r.err_ratio / math.sqrt(12.0), r.grad_ratio / math.sqrt(45.0))
    return worst


def _qh() -> float:
    phi = TestFunction(bump_potential_curl((0.5, 0.5, 0.5), 0.25, (0.0, 0.0, 1.0)), "probe")
    q = [analysis.qh_divergence(phi, build_grid(Box(), 1.0 / n)) for n in (16, 32)]
    return q[1] / q[0]


def _determinism() -> float:
    cfg = RunConfig(h=1.0 / 12, T=0.25, tau=1.0 / 8, initial={"kind": "solenoidal_bump", "radius": 0.3})
    a = run(cfg).ledger.to_csv(include_timing=False)
    b = run(cfg).ledger.to_csv(include_timing=False)
    return 0.0 if a == b else 1.0


CHECKS: List[tuple] = [
    ("hodge_backends_and_pythagoras", lambda t: _hodge(t), 1e-10),
    ("summation_by_parts", lambda t: _sbp(t), 1e-12),
    ("momentum_solvability", lambda t: _momentum(max(1, t // 5)), 1e-8),
    ("advection_annihilation", lambda t: _advection(t), 1e-12),
    ("energy_ledger_audit", lambda t: _energy(), 1e-10),
    ("poincare_and_interpolation", lambda t: _appendix(t), 1.0),
    ("qh_divergence_decay", lambda t: _qh(), 0.25),
    ("ledger_determinism", lambda t: _determinism(), 0.5),
]


def run_checks(trials: int = 10, only: Optional[List[str]] = None) -> List[CheckResult]:
    """Run the suite; ``value <= threshold`` is a pass."""
    out = []
    for name, fn, thr in CHECKS:
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            v = float(fn(trials))
            detail = ""
        except Exception as exc:  # report, never crash the suite
            v, detail = math.inf, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(v <= thr), v, thr, time.perf_counter() - t0, detail))
    return out

"""Convergence studies over dyadic families and an independent ledger audit.

A study runs the scheme on levels ``h_k = h_0 / 2^k`` with ``tau_k`` the
dyadic fraction of ``T`` nearest to ``h_k^(3 - alpha)`` from above.  The
report collects consecutive space-time distances, time-integrated triple
norms against their a priori bound, weak-form residuals and the divergence
bound per test function, and least-squares log-log slopes of each trend.
"""
from __future__ import annotations

import functools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import analysis
from .errors import AlignmentError, ConfigError
from .stepper import RunConfig, RunLedger, RunResult, run
from .testfunctions import TestFunction, clear_of_boundary, default_dictionary

__all__ = [
    "DIAGNOSTICS",
    "StudyPlan",
    "StudyReport",
    "dyadic_tau",
    "run_study",
    "loglog_slope",
    "AuditReport",
    "ledger_audit",
]

DIAGNOSTICS = ("distance", "triple", "weak", "divergence", "op_norm")

_RUN_CACHE: Dict[str, RunResult] = {}


def dyadic_tau(h: float, alpha: float, T: float) -> float:
    """Smallest ``T / 2^m`` (``m >= 0``) that is still ``>= h^(3 - alpha)``."""
    target = h ** (3.0 - alpha)
    if target > T:
        raise ConfigError(f"h^(3-alpha) = {target!r} exceeds T = {T!r}; no admissible dyadic step")
    tau = T
    while tau / 2.0 >= target:
        tau /= 2.0
    return tau


@dataclass
class StudyPlan:
    """A dyadic family of runs sharing everything but ``h`` and ``tau``.

    Parameters
    ----------
    base : RunConfig
        Domain, data, final time and solver settings.  Its ``h``, ``tau`` and
        ``alpha`` are overridden per level.
    levels : list of float
        Mesh widths, each a power-of-two fraction of the first.
    alpha : float
        Exponent of the scaling condition ``h^(3 - alpha) <= tau``.
    taus : list of float, optional
        Explicit time steps; by default :func:`dyadic_tau`.
    diagnostics : sequence of str
        Subset of :data:`DIAGNOSTICS`.
    dictionary : sequence of str, optional
        Names of shipped test functions to use; all eight by default.
    """

    base: RunConfig
    levels: List[float]
    alpha: float = 2.0
    taus: Optional[List[float]] = None
    diagnostics: Sequence[str] = DIAGNOSTICS
    dictionary: Optional[Sequence[str]] = None

    def tau_for(self, k: int) -> float:
        if self.taus is not None:
            return float(self.taus[k])
        return dyadic_tau(self.levels[k], self.alpha, self.base.T)

    def validate(self) -> "StudyPlan":
        if len(self.levels) < 2:
            raise ConfigError("study.levels needs at least two mesh widths")
        if not 0.0 < self.alpha <= 2.0:
            raise ConfigError(f"study alpha = {self.alpha!r} is outside the admissible range (0, 2]")
        if self.taus is not None and len(self.taus) != len(self.levels):
            raise ConfigError("study.taus must have one entry per level")
        unknown = set(self.diagnostics) - set(DIAGNOSTICS)
        if unknown:
            raise ConfigError(f"study.diagnostics: unknown entries {sorted(unknown)}")
        h0 = self.levels[0]
        for k, h in enumerate(self.levels):
            if not h > 0:
                raise ConfigError(f"study.levels[{k}] must be positive")
            r = h0 / h
            if r < 1 or abs(r - 2 ** round(math.log2(r))) > 1e-9 * r:
                raise AlignmentError(f"study.levels[{k}] = {h!r} is not h_0 / 2^k")
            tau = self.tau_for(k)
            if h ** (3.0 - self.alpha) > tau * (1 + 1e-12):
                raise ConfigError(
                    f"level h = {h!r}: tau = {tau!r} violates the scaling condition h^(3-alpha) <= tau"
                )
            ratio = self.base.T / tau
            if abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise AlignmentError(f"level h = {h!r}: tau = {tau!r} does not divide T")
        return self

    def configs(self) -> List[RunConfig]:
        self.validate()
        return [
            replace(self.base, h=float(h), tau=self.tau_for(k), alpha=float(self.alpha), output_dir=None)
            for k, h in enumerate(self.levels)
        ]


@functools.lru_cache(maxsize=4)
def _dictionary(T: float) -> tuple:
    return tuple(default_dictionary(T=T))


def _select(T: float, names: Optional[Sequence[str]]) -> List[TestFunction]:
    full = _dictionary(T)
    if names is None:
        return list(full)
    by_name = {p.name: p for p in full}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigError(f"study.dictionary: unknown test functions {missing}")
    return [by_name[n] for n in names]


def loglog_slope(hs: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Least-squares slope of ``log value`` against ``log h``; ``None`` if any value is not positive."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2 or not np.all(v > 0):
        return None
    return float(np.polyfit(np.log(np.asarray(hs, dtype=float)), np.log(v), 1)[0])


@dataclass
class StudyReport:
    """Study outcome; ``timing`` is kept apart so the rest is reproducible."""

    plan: Dict[str, Any]
    levels: List[Dict[str, Any]]
    pairs: List[Dict[str, Any]]
    trends: Dict[str, Any]
    checks: Dict[str, Any]
    timing: Dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        d = {"plan": self.plan, "levels": self.levels, "pairs": self.pairs, "trends": self.trends, "checks": self.checks}
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def write(self, outdir) -> Path:
        """Write ``study.json``, ``timing.json`` and CSV tables into ``outdir``."""
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "study.json").write_text(self.to_json())
        (out / "timing.json").write_text(json.dumps(self.timing, sort_keys=True, indent=2) + "\n")
        lines = ["h,tau,n_steps,n_interior,triple_integral,triple_bound,max_div_lhs"]
        for lv in self.levels:
            lines.append(
                f"{lv['h']!r},{lv['tau']!r},{lv['n_steps']},{lv['n_interior']},"
                f"{lv['triple_integral']!r},{lv['triple_bound']!r},{lv.get('max_divergence_lhs')!r}"
            )
        (out / "levels.csv").write_text("\n".join(lines) + "\n")
        lines = ["h_coarse,h_fine,distance,op_norm"]
        for p in self.pairs:
            lines.append(f"{p['h_coarse']!r},{p['h_fine']!r},{p.get('distance')!r},{p.get('op_norm')!r}")
        (out / "pairs.csv").write_text("\n".join(lines) + "\n")
        lines = ["name,h,r1,r2,r3,r4,r5,total"]
        for lv in self.levels:
            for name, w in sorted(lv.get("weak", {}).items()):
                lines.append(
                    f"{name},{lv['h']!r}," + ",".join(repr(w[k]) for k in ("r1", "r2", "r3", "r4", "r5", "total"))
                )
        (out / "weak.csv").write_text("\n".join(lines) + "\n")
        return out


def _run_one(config: RunConfig) -> RunResult:
    return run(config)


def _execute(configs: List[RunConfig], cache: Dict[str, RunResult], workers: int) -> Dict[str, float]:
    timing: Dict[str, float] = {}
    todo = []
    for c in configs:
        if c.key() not in cache and c.key() not in [t.key() for t in todo]:
            todo.append(c)
    if workers > 1 and len(todo) > 1:
        t0 = time.perf_counter()
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for c, res in zip(todo, ex.map(_run_one, todo)):
                cache[c.key()] = res
        timing["parallel_runs"] = time.perf_counter() - t0
    else:
        for c in todo:
            t0 = time.perf_counter()
            cache[c.key()] = _run_one(c)
            timing[f"run_h={c.h!r}"] = time.perf_counter() - t0
    return timing


def run_study(plan: StudyPlan, cache: Optional[Dict[str, RunResult]] = None, workers: int = 1) -> StudyReport:
    """Execute every level of ``plan`` and assemble the report.

    Runs already present in ``cache`` (keyed by :meth:`RunConfig.key`) are
    reused.  Test functions that do not clear the boundary collar of a level
    are still evaluated there; the level entry records ``admissible = False``.
    """
    configs = plan.configs()
    cache = _RUN_CACHE if cache is None else cache
    timing = _execute(configs, cache, workers)
    results = [cache[c.key()] for c in configs]
    diags = set(plan.diagnostics)
    T = plan.base.T
    t0 = time.perf_counter()
    need_dict = diags & {"weak", "divergence", "op_norm"}
    dictionary = _select(T, plan.dictionary) if need_dict else []
    timing["dictionary"] = time.perf_counter() - t0

    levels = []
    for cfg, res in zip(configs, results):
        t0 = time.perf_counter()
        lv: Dict[str, Any] = {
            "h": res.h,
            "tau": res.tau,
            "n_steps": res.n_steps,
            "n_points": res.domain.n_points,
            "n_interior": res.domain.n_interior,
            "config_key": cfg.key(),
            "ledger_min_relative_slack": res.ledger.min_relative_slack() if len(res.ledger) else None,
        }
        if "triple" in diags:
            lv["triple_integral"] = analysis.triple_norm_integral(res)
            lv["triple_bound"] = analysis.triple_norm_bound(res)
        else:
            lv["triple_integral"] = lv["triple_bound"] = None
        if dictionary:
            lv["admissible"] = {p.name: clear_of_boundary(p, res.domain) for p in dictionary}
        if "weak" in diags:
            lv["weak"] = {p.name: analysis.weak_form_residual(res, p, strict=False).as_dict() for p in dictionary}
        if "divergence" in diags:
            div: Dict[str, Any] = {}
            for p in dictionary:
                lhs, rhs, ok = 0.0, 0.0, True
                for n in range(res.first_step, res.first_step + len(res.u_half)):
                    dd = analysis.divergence_defect(res, p, n, strict=False)
                    lhs = max(lhs, float(dd.lhs.max()))
                    rhs = max(rhs, float(dd.rhs.max()))
                    ok = ok and dd.holds()
                div[p.name] = {"max_lhs": lhs, "max_rhs": rhs, "holds": ok}
            lv["divergence"] = div
            lv["max_divergence_lhs"] = max((v["max_lhs"] for v in div.values()), default=0.0)
        levels.append(lv)
        timing[f"diagnostics_h={res.h!r}"] = time.perf_counter() - t0

    pairs = []
    for (c1, r1), (c2, r2) in zip(zip(configs, results), zip(configs[1:], results[1:])):
        p: Dict[str, Any] = {"h_coarse": r1.h, "h_fine": r2.h}
        if "distance" in diags:
            p["distance"] = analysis.l2_distance(analysis.embed(r1, "v"), analysis.embed(r2, "v"))
        if "op_norm" in diags:
            p["op_norm"] = analysis.op_norm_estimate(r1, r2, 0.5 * T, dictionary, strict=False)
        pairs.append(p)

    hs = [lv["h"] for lv in levels]
    trends: Dict[str, Any] = {}
    checks: Dict[str, Any] = {}
    if "distance" in diags:
        d = [p["distance"] for p in pairs]
        trends["distance_slope"] = loglog_slope([p["h_coarse"] for p in pairs], d)
        checks["distances_strictly_decreasing"] = all(b < a for a, b in zip(d, d[1:]))
    if "op_norm" in diags:
        trends["op_norm_slope"] = loglog_slope([p["h_coarse"] for p in pairs], [p["op_norm"] for p in pairs])
    if "triple" in diags:
        checks["triple_bounded"] = all(lv["triple_integral"] <= lv["triple_bound"] for lv in levels)
    if "weak" in diags:
        slopes, mono = {}, {}
        for phi in dictionary:
            tot = [abs(lv["weak"][phi.name]["total"]) for lv in levels]
            slopes[phi.name] = loglog_slope(hs, tot)
            mono[phi.name] = all(b < a for a, b in zip(tot, tot[1:]))
        trends["weak_slopes"] = slopes
        checks["weak_monotone"] = mono
    if "divergence" in diags:
        slopes, factors = {}, {}
        for phi in dictionary:
            lhs = [lv["divergence"][phi.name]["max_lhs"] for lv in levels]
            slopes[phi.name] = loglog_slope(hs, lhs)
            factors[phi.name] = [a / b if b > 0 else None for a, b in zip(lhs, lhs[1:])]
        trends["divergence_slopes"] = slopes
        trends["divergence_factors"] = factors
        checks["divergence_bound_holds"] = all(
            v["holds"] for lv in levels for v in lv["divergence"].values()
        )
    plan_d = {
        "base": configs[0].to_dict() | {"h": None, "tau": None},
        "levels": [float(h) for h in plan.levels],
        "taus": [c.tau for c in configs],
        "alpha": plan.alpha,
        "diagnostics": sorted(diags),
        "dictionary": [p.name for p in dictionary],
    }
    return StudyReport(plan_d, levels, pairs, trends, checks, timing)


# -- ledger audit ----------------------------------------------------------


@dataclass
class AuditReport:
    """Outcome of :func:`ledger_audit`.

    ``max_violation`` is the largest ``-slack / scale`` over all recomputed
    inequalities (zero or negative when everything holds).  ``flagged`` lists
    ``(step, reason)`` pairs.
    """

    max_violation: float
    threshold: float
    per_check: Dict[str, float]
    flagged: List[tuple]
    notes: List[str]

    @property
    def ok(self) -> bool:
        return not self.flagged and self.max_violation <= self.threshold

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ok": self.ok,
            "max_violation": self.max_violation,
            "threshold": self.threshold,
            "per_check": self.per_check,
            "flagged": [list(f) for f in self.flagged],
            "notes": self.notes,
        }


def _rel(slack: float, scale: float) -> float:
    if scale > 0:
        return -slack / scale
    return 0.0 if slack >= 0 else math.inf


def ledger_audit(ledger: RunLedger, config: Optional[RunConfig] = None) -> AuditReport:
    """Recheck the energy estimates from the raw ledger columns.

    Stored slack columns are ignored.  Per step: ``||u^{n+1/2}|| <= ||u^n|| + tau ||f||``
    and ``||u^{n+1}|| <= ||u^{n+1/2}||``.  Cumulatively: the running norm bound,
    the global bound and the energy inequality.  Also checks the chain
    ``||u^0|| <= ||u~^0|| <= ||v^0||`` and that consecutive rows connect.
    """
    meta = ledger.meta
    tau = config.time_step if config is not None else float(meta["tau"])
    T = config.T if config is not None else float(meta["T"])
    thr = config.ledger_threshold if config is not None else float(meta.get("ledger_threshold", 1e-10))
    notes: List[str] = []
    flagged: List[tuple] = []
    worst: Dict[str, float] = {k: -math.inf for k in ("step", "projection", "running", "global", "energy", "ingest")}

    def record(name, step, slack, scale):
        r = _rel(slack, scale)
        worst[name] = max(worst[name], r)
        if r > thr:
            flagged.append((step, name))

    norm_u0 = float(meta["norm_u0"])
    if "norm_u0_tilde" in meta and "norm_v0" in meta:
        a, b, c = norm_u0, float(meta["norm_u0_tilde"]), float(meta["norm_v0"])
        record("ingest", -1, b - a, a + b)
        record("ingest", -1, c - b, b + c)
    glob = float(meta["norm_v0"]) + math.sqrt(T) * float(meta["norm_f_l2l2"])

    rows = ledger.rows
    if not rows:
        notes.append("empty ledger")
    elif int(rows[0]["step"]) != 0:
        notes.append(f"ledger starts at step {rows[0]['step']}; cumulative checks skipped")
    cumulative = bool(rows) and int(rows[0]["step"]) == 0
    prev = None
    sum_f, sum_d, sum_uf, sum_f2 = [], [], [], []
    for r in rows:
        n = int(r["step"])
        nu, nuh, nf, nun, diss = (float(r[k]) for k in ("norm_u", "norm_u_half", "norm_f", "norm_u_next", "dissipation"))
        if prev is None:
            if cumulative and nu != norm_u0:
                flagged.append((n, "initial norm differs from meta norm_u0"))
        else:
            if n != int(prev["step"]) + 1:
                flagged.append((n, "steps not consecutive"))
            if nu != float(prev["norm_u_next"]):
                flagged.append((n, "norm_u differs from previous norm_u_next"))
        if not math.isclose(float(r["t"]), n * tau, rel_tol=1e-12, abs_tol=1e-15):
            flagged.append((n, "t does not match step * tau"))
        if min(nu, nuh, nf, nun, diss) < 0:
            flagged.append((n, "negative norm"))
        record("step", n, nu + tau * nf - nuh, nu + tau * nf + nuh)
        record("projection", n, nuh - nun, nuh + nun)
        record("global", n, glob - nun, glob + nun)
        if cumulative:
            sum_f.append(nf * tau)
            sum_d.append(diss * tau)
            sum_uf.append(nu * nf * tau)
            sum_f2.append(nf * nf * tau * tau)
            bound = norm_u0 + math.fsum(sum_f)
            record("running", n, bound - nun, bound + nun)
            terms = [norm_u0**2, -math.fsum(sum_d), 2.0 * math.fsum(sum_uf), math.fsum(sum_f2), -nun * nun]
            record("energy", n, math.fsum(terms), math.fsum(abs(x) for x in terms))
        prev = r
    per_check = {k: (v if v != -math.inf else 0.0) for k, v in worst.items()}
    max_violation = max(per_check.values(), default=0.0)
    return AuditReport(max_violation, thr, per_check, flagged, notes)

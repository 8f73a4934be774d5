"""Time loop of the projection scheme and its energy ledger.

``u^0 = P_h u~^0``; then for ``n = 0 .. T_tau - 1`` the intermediate velocity
solves the implicit momentum system and ``u^{n+1} = P_h u^{n+1/2}``.  After
every step the ledger records the norms entering the energy estimates and the
slack of each estimate (nonnegative when it holds).
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from . import momentum
from .analytic import InitialField, make_force, make_initial
from .errors import ConfigError, LedgerViolation, NonpositiveTau
from .field import VectorField, dplus, inner, norm
from .grid import Box, DomainSpec, GridDomain, build_grid, domain_from_dict
from .hodge import decompose

__all__ = [
    "RunConfig",
    "RunLedger",
    "RunResult",
    "LEDGER_COLUMNS",
    "TIMING_COLUMNS",
    "steps_for",
    "cell_average_initial",
    "ingest_initial",
    "ingest_force",
    "run",
    "load_checkpoint",
]

LEDGER_COLUMNS = [
    "step",
    "t",
    "norm_u",
    "norm_u_half",
    "dissipation",
    "norm_f",
    "norm_u_next",
    "slack_step",
    "scale_step",
    "slack_running",
    "scale_running",
    "slack_global",
    "scale_global",
    "slack_energy",
    "scale_energy",
    "max_div_u_next",
    "hodge_residual",
    "hodge_iterations",
    "momentum_residual",
    "momentum_iterations",
    "wall_time",
]
TIMING_COLUMNS = ("wall_time",)
_INT_COLUMNS = ("step", "hodge_iterations", "momentum_iterations")


def steps_for(T: float, tau: float) -> int:
    """``T_tau`` with ``T`` in ``[tau T_tau, tau T_tau + tau)``.

    A ratio within ``1e-9`` relative of an integer is treated as that integer,
    so that decimal inputs such as ``T = 0.3, tau = 0.1`` give three steps.
    """
    r = T / tau
    k = round(r)
    if abs(r - k) <= 1e-9 * max(1.0, abs(r)):
        return int(k)
    return int(math.floor(r))


@dataclass
class RunConfig:
    """Everything that determines a run.

    Either ``tau`` or ``alpha`` must be given.  With ``alpha`` alone the time
    step is ``h^(3 - alpha)``; with both, ``tau`` must satisfy ``h^(3 - alpha) <= tau``.
    """

    domain: DomainSpec = field(default_factory=Box)
    h: float = 1.0 / 16
    T: float = 0.25
    tau: Optional[float] = None
    alpha: Optional[float] = 2.0
    initial: Dict[str, Any] = field(default_factory=lambda: {"kind": "zero"})
    force: Dict[str, Any] = field(default_factory=lambda: {"kind": "zero"})
    hodge_tol: float = 1e-10
    hodge_maxiter: Optional[int] = None
    momentum_tol: float = 1e-10
    momentum_maxiter: Optional[int] = None
    quadrature: str = "exact"
    quadrature_nodes: int = 3
    ledger_threshold: float = 1e-10
    output_dir: Optional[str] = None
    cadence: int = 0
    vtk: bool = False

    def validate(self) -> "RunConfig":
        if not (isinstance(self.h, (int, float)) and self.h > 0 and math.isfinite(self.h)):
            raise ConfigError(f"discretization.h must be positive, got {self.h!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"discretization.T must be positive, got {self.T!r}")
        if self.alpha is not None and not (0.0 < self.alpha <= 2.0):
            raise ConfigError(
                f"discretization.alpha = {self.alpha!r} is outside the admissible range (0, 2]"
            )
        if self.tau is None and self.alpha is None:
            raise ConfigError("discretization needs tau or alpha")
        if self.tau is not None:
            if not (self.tau > 0 and math.isfinite(self.tau)):
                raise NonpositiveTau(f"discretization.tau must be positive, got {self.tau!r}")
            if self.alpha is not None and self.h ** (3.0 - self.alpha) > self.tau * (1 + 1e-12):
                raise ConfigError(
                    f"tau = {self.tau!r} violates the scaling condition h^(3-alpha) <= tau "
                    f"(h^(3-alpha) = {self.h ** (3.0 - self.alpha)!r})"
                )
        if self.quadrature not in ("exact", "gauss"):
            raise ConfigError("solver.quadrature must be 'exact' or 'gauss'")
        if self.quadrature_nodes < 1:
            raise ConfigError("solver.quadrature_nodes must be at least 1")
        for name in ("hodge_tol", "momentum_tol", "ledger_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.cadence < 0:
            raise ConfigError("output.cadence must be nonnegative")
        return self

    @property
    def time_step(self) -> float:
        if self.tau is not None:
            return float(self.tau)
        return float(self.h ** (3.0 - self.alpha))

    @property
    def n_steps(self) -> int:
        return steps_for(self.T, self.time_step)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["domain"] = self.domain.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        d = dict(d)
        if isinstance(d.get("domain"), dict):
            d["domain"] = domain_from_dict(d["domain"])
        return cls(**d)

    def key(self) -> str:
        """Hash of the numerically relevant settings (output options excluded)."""
        d = self.to_dict()
        for k in ("output_dir", "cadence", "vtk"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class RunLedger:
    """Per-step energy bookkeeping plus run-level constants in ``meta``."""

    def __init__(self, rows=None, meta=None):
        self.rows: List[Dict[str, Any]] = list(rows or [])
        self.meta: Dict[str, Any] = dict(meta or {})

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path=None, include_timing: bool = True) -> str:
        cols = [c for c in LEDGER_COLUMNS if include_timing or c not in TIMING_COLUMNS]
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
            meta_path = Path(path).with_suffix(".meta.json")
            meta_path.write_text(json.dumps(self.meta, sort_keys=True, indent=2) + "\n")
        return text

    @classmethod
    def from_csv(cls, path, meta=None) -> "RunLedger":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = []
            for r in csv.DictReader(fh):
                rows.append({k: (int(v) if k in _INT_COLUMNS else float(v)) for k, v in r.items()})
        if meta is None:
            mp = path.with_suffix(".meta.json")
            meta = json.loads(mp.read_text()) if mp.exists() else {}
        return cls(rows, meta)

    def min_relative_slack(self) -> float:
        """Smallest ``slack / scale`` over all inequalities and steps (``inf`` if empty)."""
        best = math.inf
        for r in self.rows:
            for k in ("step", "running", "global", "energy"):
                s, sc = r[f"slack_{k}"], r[f"scale_{k}"]
                best = min(best, s / sc if sc > 0 else (0.0 if s >= 0 else -math.inf))
        return best


@dataclass
class RunResult:
    """Run output: all snapshots, the ledger and the discretisation."""

    config: RunConfig
    domain: GridDomain
    tau: float
    n_steps: int
    u: List[VectorField]
    u_half: List[VectorField]
    f: List[VectorField]
    ledger: RunLedger
    first_step: int = 0
    u0_tilde: Optional[VectorField] = None

    @property
    def h(self) -> float:
        return self.domain.h

    @property
    def T(self) -> float:
        return self.config.T

    @property
    def states(self) -> List[Tuple[VectorField, Optional[VectorField]]]:
        return [
            (self.u[k], self.u_half[k] if k < len(self.u_half) else None)
            for k in range(len(self.u))
        ]

    def __iter__(self):
        yield self.states
        yield self.ledger


def cell_average_initial(v0: InitialField, grid: GridDomain, quadrature="exact", nodes=3) -> VectorField:
    """``u~^0``: centred-cell averages at interior points, zero on the boundary."""
    vals = np.zeros((3, grid.n_points))
    ii = grid.interior_idx
    vals[:, ii] = v0.cell_averages(grid.points[ii], grid.h, quadrature, nodes)
    return VectorField(grid, vals)


def ingest_initial(v0, grid: GridDomain, quadrature="exact", nodes=3, tol=1e-10) -> VectorField:
    """``u^0 = P_h u~^0`` for an :class:`InitialField` or a parameter dictionary."""
    if isinstance(v0, dict):
        v0 = make_initial(v0)
    return decompose(cell_average_initial(v0, grid, quadrature, nodes), tol=tol).w


def ingest_force(f, n: int, grid: GridDomain, tau: float, quadrature="exact", nodes=3) -> VectorField:
    """``f^{n+1}``: average over ``[tau n, tau (n+1)] x C_h(x)`` at every grid point."""
    if isinstance(f, dict):
        f = make_force(f)
    if not tau > 0:
        raise NonpositiveTau(f"time step must be positive, got {tau!r}")
    vals = f.slab_averages(grid.points, grid.h, tau * n, tau * (n + 1), quadrature, nodes)
    return VectorField(grid, vals)


def _checkpoint_path(outdir: Path, n: int) -> Path:
    return outdir / "checkpoints" / f"step_{n:06d}.fld"


def load_checkpoint(path, domain: Optional[GridDomain] = None):
    """Return ``(u^n, header_extra)`` from a checkpoint dump."""
    from .io import read_field

    fld = read_field(path, domain)
    from .io import read_field_header

    header, _ = read_field_header(path)
    return fld, header["extra"]


def run(
    config: RunConfig,
    resume: Optional[str] = None,
    max_steps: Optional[int] = None,
    domain: Optional[GridDomain] = None,
    raise_on_violation: bool = True,
) -> RunResult:
    """Execute the scheme.

    Parameters
    ----------
    config : RunConfig
    resume : path, optional
        Checkpoint to restart from; the ledger continues with identical rows.
    max_steps : int, optional
        Stop after this many steps (used by single-step advancing).
    domain : GridDomain, optional
        Prebuilt grid for ``config``.
    raise_on_violation : bool
        Raise :class:`LedgerViolation` when a slack breaches the threshold.
    """
    from .io import write_field, write_vtk

    config.validate()
    grid = domain if domain is not None else build_grid(config.domain, config.h)
    tau = config.time_step
    n_total = config.n_steps
    T = config.T
    v0 = make_initial(config.initial)
    force = make_force(config.force)
    q, nodes = config.quadrature, config.quadrature_nodes
    htol, mtol = config.hodge_tol, config.momentum_tol
    outdir = Path(config.output_dir) if config.output_dir else None

    if resume is None:
        u0_tilde = cell_average_initial(v0, grid, q, nodes)
        hr = decompose(u0_tilde, tol=htol, maxiter=config.hodge_maxiter)
        u = hr.w
        acc = {
            "sum_f_tau": 0.0,
            "sum_diss_tau": 0.0,
            "sum_uf_tau": 0.0,
            "sum_f2_tau2": 0.0,
            "sum_f2_tau": 0.0,
        }
        norm_v0 = v0.l2_norm(config.domain)
        norm_f = force.l2l2_norm(T, config.domain)
        meta = {
            "h": grid.h,
            "tau": tau,
            "T": T,
            "n_steps": n_total,
            "n_points": grid.n_points,
            "n_interior": grid.n_interior,
            "norm_v0": norm_v0,
            "norm_u0_tilde": norm(u0_tilde),
            "norm_u0": norm(u),
            "norm_f_l2l2": norm_f,
            "hodge_tol": htol,
            "momentum_tol": mtol,
            "ledger_threshold": config.ledger_threshold,
            "config_key": config.key(),
        }
        start = 0
    else:
        u, extra = load_checkpoint(resume, grid)
        if extra.get("config_key") != config.key():
            raise ConfigError(f"checkpoint {resume} was written by a different configuration")
        acc = dict(extra["accumulators"])
        meta = dict(extra["meta"])
        start = int(extra["step"])
        u0_tilde = None
    norm_u0 = meta["norm_u0"]
    global_bound = meta["norm_v0"] + math.sqrt(T) * meta["norm_f_l2l2"]

    def checkpoint(n, un):
        if outdir is None:
            return
        write_field(
            _checkpoint_path(outdir, n),
            un,
            extra={"step": n, "t": n * tau, "accumulators": acc, "meta": meta, "config_key": config.key()},
        )

    us: List[VectorField] = [u]
    halves: List[VectorField] = []
    forces: List[VectorField] = []
    ledger = RunLedger(meta=meta)
    if outdir is not None and config.cadence and start % config.cadence == 0 and resume is None:
        checkpoint(start, u)
    stop = n_total if max_steps is None else min(n_total, start + max_steps)
    for n in range(start, stop):
        t0 = time.perf_counter()
        fn = ingest_force(force, n, grid, tau, q, nodes)
        sys_ = momentum.assemble(u, tau)
        uh, minfo = momentum.solve(sys_, fn, tol=mtol, maxiter=config.momentum_maxiter, return_info=True)
        hr = decompose(uh, tol=htol, maxiter=config.hodge_maxiter)
        un1 = hr.w
        nu, nuh, nf, nun = norm(u), norm(uh), norm(fn), norm(un1)
        diss = sum(inner(dplus(uh, j), dplus(uh, j)) for j in range(3))
        acc["sum_f_tau"] += nf * tau
        acc["sum_diss_tau"] += diss * tau
        acc["sum_uf_tau"] += nu * nf * tau
        acc["sum_f2_tau2"] += nf * nf * tau * tau
        acc["sum_f2_tau"] += nf * nf * tau
        energy_terms = [norm_u0**2, -acc["sum_diss_tau"], 2.0 * acc["sum_uf_tau"], acc["sum_f2_tau2"], -nun**2]
        row = {
            "step": n,
            "t": n * tau,
            "norm_u": nu,
            "norm_u_half": nuh,
            "dissipation": diss,
            "norm_f": nf,
            "norm_u_next": nun,
            "slack_step": nu + tau * nf - nuh,
            "scale_step": nu + tau * nf + nuh,
            "slack_running": norm_u0 + acc["sum_f_tau"] - nun,
            "scale_running": norm_u0 + acc["sum_f_tau"] + nun,
            "slack_global": global_bound - nun,
            "scale_global": global_bound + nun,
            "slack_energy": math.fsum(energy_terms),
            "scale_energy": math.fsum(abs(x) for x in energy_terms),
            "max_div_u_next": hr.div_residual,
            "hodge_residual": hr.solver_residual,
            "hodge_iterations": hr.iterations,
            "momentum_residual": minfo.residual,
            "momentum_iterations": minfo.iterations,
            "wall_time": time.perf_counter() - t0,
        }
        ledger.rows.append(row)
        us.append(un1)
        halves.append(uh)
        forces.append(fn)
        u = un1
        if outdir is not None and config.cadence and (n + 1) % config.cadence == 0:
            checkpoint(n + 1, u)
            if config.vtk:
                write_vtk(outdir / "vtk" / f"step_{n + 1:06d}.vtk", grid, {"u": u, "u_half": uh})
        bad = _violations(row, config.ledger_threshold)
        if bad and raise_on_violation:
            if outdir is not None:
                ledger.to_csv(outdir / "ledger_violation.csv")
            raise LedgerViolation(
                f"energy estimate(s) {', '.join(bad)} violated at step {n}", ledger=ledger
            )

    result = RunResult(
        config=config,
        domain=grid,
        tau=tau,
        n_steps=n_total,
        u=us,
        u_half=halves,
        f=forces,
        ledger=ledger,
        first_step=start,
        u0_tilde=u0_tilde,
    )
    if outdir is not None:
        ledger.to_csv(outdir / "ledger.csv")
        summary = {
            "config": config.to_dict(),
            "meta": meta,
            "steps_run": len(ledger),
            "final_norm": norm(u),
            "min_relative_slack": ledger.min_relative_slack() if len(ledger) else None,
            "max_div": max((r["max_div_u_next"] for r in ledger.rows), default=0.0),
            "wall_time": sum(r["wall_time"] for r in ledger.rows),
        }
        (outdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2, default=repr) + "\n")
    return result


def _violations(row, threshold) -> List[str]:
    bad = []
    for k in ("step", "running", "global", "energy"):
        if row[f"slack_{k}"] < -threshold * row[f"scale_{k}"]:
            bad.append(k)
    return bad

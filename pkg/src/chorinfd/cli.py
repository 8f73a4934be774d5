"""Command-line front end.

Exit codes: 0 success, 2 configuration or input error, 3 solver failure,
4 invariant violation.  Errors go to standard error as one line of JSON.
The environment variables ``CHORINFD_OUTPUT_DIR`` and ``CHORINFD_WORKERS``
set the default output directory and the number of study workers.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .errors import (
    AlignmentError,
    BoundaryNotZero,
    ChorinError,
    ConfigError,
    DomainMismatch,
    EmptyGrid,
    GridsNotAligned,
    LedgerViolation,
    QuadratureFailure,
    SingularMatrix,
    SolverDiverged,
    TooLargeForDense,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4

_CONFIG_ERRORS = (ConfigError, DomainMismatch, EmptyGrid, AlignmentError, GridsNotAligned, BoundaryNotZero)
_SOLVER_ERRORS = (SolverDiverged, SingularMatrix, TooLargeForDense, QuadratureFailure)


class InvariantFailure(ChorinError):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2, default=repr))


def _load(args):
    from .config import apply_overrides, parse_config

    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if args.set:
        text = apply_overrides(text, args.set)
    return parse_config(text, base_dir=path.parent)


def _with_output(config, args):
    out = getattr(args, "out", None) or config.output_dir or os.environ.get("CHORINFD_OUTPUT_DIR")
    return replace(config, output_dir=str(out) if out else None)


def cmd_grid_info(args) -> int:
    from .grid import build_grid
    from .io import write_grid

    config, _ = _load(args)
    grid = build_grid(config.domain, config.h)
    info = dict(grid.summary())
    info["tau"] = config.time_step
    info["n_steps"] = config.n_steps
    if args.dump:
        write_grid(args.dump, grid)
    _emit(info)
    return EXIT_OK


def cmd_decompose(args) -> int:
    from .field import VectorField
    from .hodge import decompose
    from .io import read_field, write_field

    u = read_field(args.field)
    if not isinstance(u, VectorField):
        raise ConfigError(f"{args.field}: expected a vector field dump")
    res = decompose(u, tol=args.tol, backend=args.backend)
    out = Path(args.out or os.environ.get("CHORINFD_OUTPUT_DIR") or ".")
    write_field(out / "w.fld", res.w)
    write_field(out / "phi.fld", res.phi)
    report = res.residuals()
    (out / "hodge.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    _emit(report)
    return EXIT_OK


def cmd_step(args) -> int:
    from .stepper import run

    config, _ = _load(args)
    config = _with_output(config, args)
    if not config.output_dir:
        raise ConfigError("output.dir: required by 'step' (or pass --out)")
    config = replace(config, cadence=1)
    res = run(config, resume=args.checkpoint, max_steps=1)
    if not res.ledger.rows:
        raise ConfigError("final time already reached; nothing to advance")
    n = res.ledger.rows[-1]["step"] + 1
    ckpt = Path(config.output_dir) / "checkpoints" / f"step_{n:06d}.fld"
    _emit({"checkpoint": str(ckpt), "row": res.ledger.rows[-1]})
    return EXIT_OK


def cmd_run(args) -> int:
    from .stepper import run

    config, _ = _load(args)
    config = _with_output(config, args)
    res = run(config, resume=args.resume)
    led = res.ledger
    _emit(
        {
            "output_dir": config.output_dir,
            "steps_run": len(led),
            "h": res.h,
            "tau": res.tau,
            "min_relative_slack": led.min_relative_slack() if len(led) else None,
            "max_div": max((r["max_div_u_next"] for r in led.rows), default=0.0),
        }
    )
    return EXIT_OK


def cmd_study(args) -> int:
    from .harness import StudyPlan, run_study

    config, study = _load(args)
    if study is None:
        raise ConfigError("study: section required by 'study'")
    config = _with_output(config, args)
    plan = StudyPlan(
        base=replace(config, output_dir=None),
        levels=study["levels"],
        alpha=study["alpha"],
        **{k: study[k] for k in ("diagnostics", "dictionary") if k in study},
    )
    workers = args.workers or int(os.environ.get("CHORINFD_WORKERS", "1"))
    report = run_study(plan, workers=workers)
    if config.output_dir:
        report.write(config.output_dir)
    _emit({"pairs": report.pairs, "trends": report.trends, "checks": report.checks})
    if args.strict and not _all_true(report.checks):
        raise InvariantFailure("study trend checks failed")
    return EXIT_OK


def _all_true(obj) -> bool:
    if isinstance(obj, dict):
        return all(_all_true(v) for v in obj.values())
    return bool(obj)


def cmd_audit(args) -> int:
    from .harness import ledger_audit
    from .stepper import RunLedger

    led = RunLedger.from_csv(args.ledger)
    config = None
    if args.config:
        config, _ = _load(args)
    rep = ledger_audit(led, config)
    _emit(rep.to_dict())
    if not rep.ok:
        raise InvariantFailure(f"ledger audit failed: max violation {rep.max_violation!r}, {len(rep.flagged)} flagged")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(trials=args.trials)
    _emit([r.to_dict() for r in results])
    bad = [r.name for r in results if not r.ok]
    if bad:
        raise InvariantFailure(f"checks failed: {', '.join(bad)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chorinfd", description="Projection-scheme Navier-Stokes solver and diagnostics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        if required:
            sp.add_argument("config", help="configuration file")
        sp.add_argument(
            "--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config entry"
        )

    sp = sub.add_parser("grid-info", help="print the discrete domain summary")
    with_config(sp)
    sp.add_argument("--dump", metavar="PREFIX", help="also write PREFIX.json and PREFIX.bin")
    sp.set_defaults(func=cmd_grid_info)

    sp = sub.add_parser("decompose", help="Hodge-decompose a field dump")
    sp.add_argument("field")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--backend", choices=("poisson", "dense"), default="poisson")
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("step", help="advance one step from a checkpoint")
    with_config(sp)
    sp.add_argument("--checkpoint", help="checkpoint to start from (default: initial data)")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_step)

    sp = sub.add_parser("run", help="run the scheme to the final time")
    with_config(sp)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--resume", help="checkpoint to restart from")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("study", help="dyadic convergence study")
    with_config(sp)
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--workers", type=int, default=0)
    sp.add_argument("--strict", action="store_true", help="exit 4 when any trend check fails")
    sp.set_defaults(func=cmd_study)

    sp = sub.add_parser("audit", help="recheck the energy estimates of a ledger CSV")
    sp.add_argument("ledger")
    sp.add_argument("--config", help="configuration of the run (default: ledger metadata)")
    sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("check", help="run the built-in invariant suite")
    sp.add_argument("--trials", type=int, default=10)
    sp.set_defaults(func=cmd_check)
    return p


def _fail(exc: BaseException, code: int) -> int:
    msg = " ".join(str(exc).split())
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": msg, "exit_code": code}) + "\n")
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except InvariantFailure as exc:
        return _fail(exc, EXIT_INVARIANT)
    except LedgerViolation as exc:
        return _fail(exc, EXIT_INVARIANT)
    except _SOLVER_ERRORS as exc:
        return _fail(exc, EXIT_SOLVER)
    except (*_CONFIG_ERRORS, ValueError, OSError) as exc:
        return _fail(exc, EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())

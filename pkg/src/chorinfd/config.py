"""Sectioned key-value configuration files.

The format is INI as read by :mod:`configparser`.  Every key is checked
against a fixed schema; errors name the offending ``section.key``.  Numbers
may be written as decimals or fractions (``1/16``); vectors are
whitespace-separated triples.  See ``FORMATS.md`` for the full schema.
"""
from __future__ import annotations

import configparser
import io
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .grid import Ball, Box, LShape, VoxelMask
from .stepper import RunConfig

__all__ = ["SCHEMA_VERSION", "parse_config", "load_config", "dump_config", "apply_overrides", "StudySettings"]

SCHEMA_VERSION = 1

_FIELD_KEYS = {
    "zero": set(),
    "constant": {"value"},
    "solenoidal_bump": {"center", "radius", "axis", "amplitude"},
    "file": {"path"},
}
_FORCE_KEYS = dict(_FIELD_KEYS, decaying_swirl={"center", "radius", "axis", "amplitude", "rate"})

_SECTIONS: Dict[str, set] = {
    "meta": {"schema_version"},
    "domain": {"kind", "lower", "upper", "center", "radius", "notch_lower", "notch_upper", "file", "origin", "voxel"},
    "discretization": {"h", "T", "alpha", "tau"},
    "initial": {"kind"} | set().union(*_FIELD_KEYS.values()),
    "force": {"kind"} | set().union(*_FORCE_KEYS.values()),
    "solver": {
        "hodge_tol",
        "hodge_maxiter",
        "momentum_tol",
        "momentum_maxiter",
        "quadrature",
        "quadrature_nodes",
        "ledger_threshold",
    },
    "output": {"dir", "cadence", "vtk"},
    "study": {"levels", "alpha", "diagnostics", "dictionary"},
}
_DOMAIN_KEYS = {
    "box": {"lower", "upper"},
    "ball": {"center", "radius"},
    "lshape": {"lower", "upper", "notch_lower", "notch_upper"},
    "mask": {"file", "origin", "voxel"},
}
_VECTOR_KEYS = {"lower", "upper", "center", "notch_lower", "notch_upper", "origin", "axis", "value"}


class StudySettings(dict):
    """Contents of the optional ``[study]`` section."""


def _number(text: str, where: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{where}: expected a number, got {text!r}") from None


def _integer(text: str, where: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {text!r}") from None


def _vector(text: str, where: str) -> List[float]:
    parts = text.replace(",", " ").split()
    if len(parts) == 1:
        return [_number(parts[0], where)] * 3
    if len(parts) != 3:
        raise ConfigError(f"{where}: expected three numbers, got {text!r}")
    return [_number(p, where) for p in parts]


def _bool(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {text!r}")


def _optional_int(text: str, where: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none") else _integer(text, where)


def _field_params(sec: Dict[str, str], name: str, allowed: Dict[str, set], base: Path) -> Dict[str, Any]:
    kind = sec.get("kind", "zero").strip()
    if kind not in allowed:
        raise ConfigError(f"{name}.kind: unknown kind {kind!r} (expected one of {sorted(allowed)})")
    out: Dict[str, Any] = {"kind": kind}
    for key, text in sec.items():
        if key == "kind":
            continue
        where = f"{name}.{key}"
        if key not in allowed[kind]:
            raise ConfigError(f"{where}: not valid for kind {kind!r}")
        if key in _VECTOR_KEYS:
            out[key] = _vector(text, where)
        elif key == "radius":
            parts = text.split()
            out[key] = _vector(text, where) if len(parts) > 1 else _number(text, where)
        elif key == "path":
            p = Path(text.strip())
            out[key] = str(p if p.is_absolute() else base / p)
        else:
            out[key] = _number(text, where)
    return out


def _domain(sec: Dict[str, str], base: Path):
    kind = sec.get("kind", "box").strip()
    if kind not in _DOMAIN_KEYS:
        raise ConfigError(f"domain.kind: unknown kind {kind!r} (expected one of {sorted(_DOMAIN_KEYS)})")
    vals: Dict[str, Any] = {}
    for key, text in sec.items():
        if key == "kind":
            continue
        if key not in _DOMAIN_KEYS[kind]:
            raise ConfigError(f"domain.{key}: not valid for kind {kind!r}")
        if key in _VECTOR_KEYS:
            vals[key] = _vector(text, f"domain.{key}")
        elif key == "file":
            p = Path(text.strip())
            vals[key] = p if p.is_absolute() else base / p
        else:
            vals[key] = _number(text, f"domain.{key}")
    try:
        if kind == "box":
            return Box(**vals)
        if kind == "ball":
            return Ball(**vals)
        if kind == "lshape":
            return LShape(**vals)
        if "file" not in vals:
            raise ConfigError("domain.file: required for kind 'mask'")
        occ = np.load(vals["file"]).astype(bool)
        return VoxelMask(occ, vals.get("origin", [0.0, 0.0, 0.0]), vals.get("voxel", 1.0))
    except ConfigError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(f"domain: {exc}") from None


def parse_config(text: str, base_dir=".") -> Tuple[RunConfig, Optional[StudySettings]]:
    """Parse configuration text into a validated :class:`RunConfig` and optional study settings.

    Relative file paths are resolved against ``base_dir``.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case, e.g. ``T``
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}".replace("\n", " ")) from None
    base = Path(base_dir)
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{name}: unknown section")
        for key in cp[name]:
            if key not in _SECTIONS[name]:
                raise ConfigError(f"{name}.{key}: unknown key")
    if not cp.has_section("meta") or "schema_version" not in cp["meta"]:
        raise ConfigError("meta.schema_version: required")
    ver = _integer(cp["meta"]["schema_version"], "meta.schema_version")
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"meta.schema_version: unsupported version {ver} (expected {SCHEMA_VERSION})")

    sec = lambda n: dict(cp[n]) if cp.has_section(n) else {}  # noqa: E731
    kw: Dict[str, Any] = {"domain": _domain(sec("domain"), base)}
    disc = sec("discretization")
    for key in ("h", "T"):
        if key not in disc:
            raise ConfigError(f"discretization.{key}: required")
        kw[key] = _number(disc[key], f"discretization.{key}")
    kw["alpha"] = _number(disc["alpha"], "discretization.alpha") if "alpha" in disc else None
    kw["tau"] = _number(disc["tau"], "discretization.tau") if "tau" in disc else None
    kw["initial"] = _field_params(sec("initial"), "initial", _FIELD_KEYS, base)
    kw["force"] = _field_params(sec("force"), "force", _FORCE_KEYS, base)
    solver = sec("solver")
    for key in ("hodge_tol", "momentum_tol", "ledger_threshold"):
        if key in solver:
            kw[key] = _number(solver[key], f"solver.{key}")
    for key in ("hodge_maxiter", "momentum_maxiter"):
        if key in solver:
            kw[key] = _optional_int(solver[key], f"solver.{key}")
    if "quadrature" in solver:
        kw["quadrature"] = solver["quadrature"].strip()
    if "quadrature_nodes" in solver:
        kw["quadrature_nodes"] = _integer(solver["quadrature_nodes"], "solver.quadrature_nodes")
    out = sec("output")
    if "dir" in out:
        p = Path(out["dir"].strip())
        kw["output_dir"] = str(p if p.is_absolute() else base / p)
    if "cadence" in out:
        kw["cadence"] = _integer(out["cadence"], "output.cadence")
    if "vtk" in out:
        kw["vtk"] = _bool(out["vtk"], "output.vtk")
    if kw["alpha"] is None and kw["tau"] is None:
        kw["alpha"] = 2.0
    config = RunConfig(**kw).validate()

    study = None
    if cp.has_section("study"):
        st = sec("study")
        study = StudySettings()
        if "levels" not in st:
            raise ConfigError("study.levels: required")
        study["levels"] = [_number(t, "study.levels") for t in st["levels"].split()]
        alpha = _number(st["alpha"], "study.alpha") if "alpha" in st else (config.alpha or 2.0)
        if not 0.0 < alpha <= 2.0:
            raise ConfigError(f"study.alpha = {alpha!r} is outside the admissible range (0, 2]")
        study["alpha"] = alpha
        if "diagnostics" in st:
            study["diagnostics"] = st["diagnostics"].split()
        if "dictionary" in st:
            study["dictionary"] = st["dictionary"].split()
    return config, study


def load_config(path) -> Tuple[RunConfig, Optional[StudySettings]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (list, tuple)):
        return " ".join(_fmt(v) for v in x)
    if isinstance(x, float):
        return repr(x)
    return str(x)


def dump_config(config: RunConfig, study: Optional[StudySettings] = None) -> str:
    """Canonical text of a configuration: fixed section and key order, ``repr`` floats."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["meta"] = {"schema_version": str(SCHEMA_VERSION)}
    d = config.domain.to_dict()
    if d["kind"] == "mask":
        raise ConfigError("domain: voxel masks are written as .npy files and cannot be inlined")
    cp["domain"] = {k: _fmt(v) for k, v in d.items()}
    disc = {"h": _fmt(float(config.h)), "T": _fmt(float(config.T))}
    if config.alpha is not None:
        disc["alpha"] = _fmt(float(config.alpha))
    if config.tau is not None:
        disc["tau"] = _fmt(float(config.tau))
    cp["discretization"] = disc
    for name in ("initial", "force"):
        params = dict(getattr(config, name))
        kind = params.pop("kind", "zero")
        cp[name] = {"kind": kind, **{k: _fmt(v) for k, v in sorted(params.items())}}
    cp["solver"] = {
        "hodge_tol": _fmt(config.hodge_tol),
        "hodge_maxiter": _fmt(config.hodge_maxiter),
        "momentum_tol": _fmt(config.momentum_tol),
        "momentum_maxiter": _fmt(config.momentum_maxiter),
        "quadrature": config.quadrature,
        "quadrature_nodes": _fmt(config.quadrature_nodes),
        "ledger_threshold": _fmt(config.ledger_threshold),
    }
    outp = {"cadence": _fmt(config.cadence), "vtk": _fmt(config.vtk)}
    if config.output_dir:
        outp = {"dir": config.output_dir, **outp}
    cp["output"] = outp
    if study:
        s = {"levels": _fmt([float(h) for h in study["levels"]]), "alpha": _fmt(float(study["alpha"]))}
        for key in ("diagnostics", "dictionary"):
            if key in study:
                s[key] = " ".join(study[key])
        cp["study"] = s
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def apply_overrides(text: str, overrides: List[str]) -> str:
    """Apply ``section.key=value`` overrides to configuration text."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}".replace("\n", " ")) from None
    for item in overrides:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        if section not in _SECTIONS:
            raise ConfigError(f"{section}: unknown section")
        if key not in _SECTIONS[section]:
            raise ConfigError(f"{section}.{key}: unknown key")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value.strip()
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()

"""File formats: field dumps, grid dumps and legacy VTK structured points.

A field dump is a single file: one line of UTF-8 JSON header terminated by a
newline, followed by the little-endian float64 payload in domain point order
(component-major for vector fields).
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, DomainMismatch
from .field import ScalarField, VectorField
from .grid import GridDomain, build_grid, domain_from_dict

__all__ = [
    "FIELD_FORMAT",
    "grid_checksum",
    "write_field",
    "read_field",
    "read_field_header",
    "write_grid",
    "read_grid",
    "write_vtk",
]

FIELD_FORMAT = "chorinfd-field"
GRID_FORMAT = "chorinfd-grid"
FORMAT_VERSION = 1


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def grid_checksum(domain: GridDomain) -> str:
    """SHA-256 of the little-endian lattice coordinates in point order."""
    return _sha256(np.ascontiguousarray(domain.coords, dtype="<i8").tobytes())


def write_field(path, field: Union[ScalarField, VectorField], extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write ``field`` with a JSON header line; ``extra`` is stored verbatim in the header."""
    path = Path(path)
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    d = field.domain
    header = {
        "format": FIELD_FORMAT,
        "version": FORMAT_VERSION,
        "h": d.h,
        "n_points": d.n_points,
        "n_interior": d.n_interior,
        "components": field.ncomp,
        "dtype": "<f8",
        "checksum": _sha256(payload),
        "grid_checksum": grid_checksum(d),
        "domain": d.spec.to_dict() if d.spec is not None else None,
        "extra": extra or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)
    os.replace(tmp, path)
    return path


def read_field_header(path) -> Tuple[Dict[str, Any], bytes]:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not a field dump ({exc})") from None
    if header.get("format") != FIELD_FORMAT:
        raise ConfigError(f"{path}: not a field dump")
    return header, payload


def read_field(path, domain: Optional[GridDomain] = None):
    """Read a field dump.

    Parameters
    ----------
    path : path-like
    domain : GridDomain, optional
        Expected domain.  Without it the domain is rebuilt from the header.

    Raises
    ------
    ConfigError
        Corrupt file or checksum mismatch.
    DomainMismatch
        The dump belongs to a different discrete domain.
    """
    header, payload = read_field_header(path)
    if _sha256(payload) != header["checksum"]:
        raise ConfigError(f"{path}: payload checksum mismatch")
    if domain is None:
        if header.get("domain") is None:
            raise ConfigError(f"{path}: header carries no domain description")
        domain = build_grid(domain_from_dict(header["domain"]), header["h"], check_connected=False)
    if grid_checksum(domain) != header["grid_checksum"] or domain.h != header["h"]:
        raise DomainMismatch(f"{path}: dump was written on a different discrete domain")
    values = np.frombuffer(payload, dtype="<f8").astype(float)
    ncomp = int(header["components"])
    if values.size != ncomp * domain.n_points:
        raise ConfigError(f"{path}: payload has {values.size} values, expected {ncomp * domain.n_points}")
    if ncomp == 1:
        return ScalarField(domain, values)
    return VectorField(domain, values.reshape(3, domain.n_points))


def write_grid(prefix, domain: GridDomain) -> Tuple[Path, Path]:
    """Write ``prefix.json`` (summary) and ``prefix.bin`` (coordinates then interior flags)."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    coords = np.ascontiguousarray(domain.coords, dtype="<i8").tobytes()
    flags = domain.interior.astype(np.uint8).tobytes()
    summary = dict(domain.summary())
    summary.update({"format": GRID_FORMAT, "version": FORMAT_VERSION, "checksum": _sha256(coords + flags)})
    jpath = prefix.with_suffix(".json")
    bpath = prefix.with_suffix(".bin")
    jpath.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    bpath.write_bytes(coords + flags)
    return jpath, bpath


def read_grid(prefix) -> GridDomain:
    prefix = Path(prefix)
    summary = json.loads(prefix.with_suffix(".json").read_text())
    raw = prefix.with_suffix(".bin").read_bytes()
    if _sha256(raw) != summary["checksum"]:
        raise ConfigError(f"{prefix}: grid checksum mismatch")
    n = int(summary["n_points"])
    coords = np.frombuffer(raw[: 24 * n], dtype="<i8").reshape(n, 3)
    flags = np.frombuffer(raw[24 * n :], dtype=np.uint8).astype(bool)
    spec = domain_from_dict(summary["domain"]) if summary.get("domain") else None
    return GridDomain(spec, summary["h"], coords, interior=flags)


def write_vtk(path, domain: GridDomain, fields: Mapping[str, Union[ScalarField, VectorField]]) -> Path:
    """Legacy binary VTK structured points over the bounding box of the domain.

    Points outside the domain are written as zero.  A scalar ``interior`` flag
    is always included.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nx, ny, nz = domain.shape
    npts = nx * ny * nz
    local = domain.coords - domain.origin
    # VTK orders points with x varying fastest
    flat = local[:, 0] + nx * (local[:, 1] + ny * local[:, 2])
    origin = domain.origin * domain.h
    out = bytearray()
    out += b"# vtk DataFile Version 3.0\n"
    out += b"chorinfd grid fields\nBINARY\nDATASET STRUCTURED_POINTS\n"
    out += f"DIMENSIONS {nx} {ny} {nz}\n".encode()
    out += f"ORIGIN {origin[0]!r} {origin[1]!r} {origin[2]!r}\n".encode()
    out += f"SPACING {domain.h!r} {domain.h!r} {domain.h!r}\n".encode()
    out += f"POINT_DATA {npts}\n".encode()
    flag = np.zeros(npts)
    flag[flat] = np.where(domain.interior, 1.0, 0.5)
    out += b"SCALARS domain double 1\nLOOKUP_TABLE default\n"
    out += flag.astype(">f8").tobytes() + b"\n"
    for name, f in fields.items():
        if f.domain is not domain and not f.domain.same_as(domain):
            raise DomainMismatch(f"field {name!r} lives on another domain")
        safe = "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in name)
        if f.ncomp == 1:
            arr = np.zeros(npts)
            arr[flat] = f.values
            out += f"SCALARS {safe} double 1\nLOOKUP_TABLE default\n".encode()
        else:
            arr = np.zeros((npts, 3))
            arr[flat] = f.values.T
            out += f"VECTORS {safe} double\n".encode()
        out += np.ascontiguousarray(arr, dtype=">f8").tobytes() + b"\n"
    path.write_bytes(bytes(out))
    return path

"""Discrete domains on the lattice hZ^3.

A lattice point ``x`` belongs to the discrete domain when the closed cube of
side ``4h`` centred at ``x`` lies inside the open set.  Points with at least
one axis neighbour outside the discrete domain form the discrete boundary;
the remaining points are interior.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DisconnectedGrid, EmptyGrid

__all__ = [
    "DomainSpec",
    "Box",
    "Ball",
    "LShape",
    "VoxelMask",
    "domain_from_dict",
    "GridDomain",
    "build_grid",
    "cell",
]


def _vec3(v, name):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be three finite numbers, got {v!r}")
    return tuple(float(a) for a in arr)


class DomainSpec:
    """Geometric description of a bounded open set in R^3.

    Subclasses implement membership, the closed-cube inclusion test used to
    admit lattice points and a few geometric constants.
    """

    kind: str = ""

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership of ``points`` (shape ``(M, 3)``) in the open set."""
        raise NotImplementedError

    def box_inside(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """True where the closed box ``[lo, hi]`` (rows of shape ``(M, 3)``) lies in the open set."""
        raise NotImplementedError

    def cube_inside(self, centers: np.ndarray, half: float) -> np.ndarray:
        """True where the closed cube ``centers + [-half, half]^3`` lies in the open set."""
        c = np.atleast_2d(np.asarray(centers, dtype=float))
        return self.box_inside(c - half, c + half)

    def x1_diameter(self) -> float:
        lo, hi = self.bounds()
        return float(hi[0] - lo[0])

    def volume(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(DomainSpec):
    """Open axis-aligned box ``(lower, upper)``."""

    lower: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        lo, hi = _vec3(self.lower, "lower"), _vec3(self.upper, "upper")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ConfigError("box requires lower < upper on every axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def bounds(self):
        return np.array(self.lower), np.array(self.upper)

    def contains(self, points):
        p = np.atleast_2d(points)
        return np.all((p > np.array(self.lower)) & (p < np.array(self.upper)), axis=1)

    def box_inside(self, lo, hi):
        return np.all((lo > np.array(self.lower)) & (hi < np.array(self.upper)), axis=1)

    def volume(self):
        return float(np.prod(np.array(self.upper) - np.array(self.lower)))

    def to_dict(self):
        return {"kind": "box", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Ball(DomainSpec):
    """Open ball of given centre and radius."""

    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    kind: str = field(default="ball", init=False)

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        r = float(self.radius)
        if not (r > 0 and math.isfinite(r)):
            raise ConfigError("ball radius must be positive")
        object.__setattr__(self, "radius", r)

    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def contains(self, points):
        d = np.atleast_2d(points) - np.array(self.center)
        return np.sum(d * d, axis=1) < self.radius**2

    def box_inside(self, lo, hi):
        # the farthest corner of the box decides inclusion in a convex ball
        c = np.array(self.center)
        d = np.maximum(np.abs(lo - c), np.abs(hi - c))
        return np.sum(d * d, axis=1) < self.radius**2

    def x1_diameter(self):
        return 2.0 * self.radius

    def volume(self):
        return 4.0 / 3.0 * math.pi * self.radius**3

    def to_dict(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class LShape(DomainSpec):
    """Open outer box with a closed notch box removed."""

    lower: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    notch_lower: Tuple[float, float, float] = (0.5, 0.5, 0.0)
    notch_upper: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = field(default="lshape", init=False)

    def __post_init__(self):
        vals = {}
        for name in ("lower", "upper", "notch_lower", "notch_upper"):
            vals[name] = _vec3(getattr(self, name), name)
            object.__setattr__(self, name, vals[name])
        lo, hi = np.array(vals["lower"]), np.array(vals["upper"])
        nlo, nhi = np.array(vals["notch_lower"]), np.array(vals["notch_upper"])
        if not np.all(lo < hi) or not np.all(nlo < nhi):
            raise ConfigError("lshape requires lower < upper for both boxes")
        if np.all(nlo <= lo) and np.all(nhi >= hi):
            raise ConfigError("lshape notch removes the whole box")

    def bounds(self):
        return np.array(self.lower), np.array(self.upper)

    def _outside_notch(self, lo, hi):
        nlo, nhi = np.array(self.notch_lower), np.array(self.notch_upper)
        return np.any((hi < nlo) | (lo > nhi), axis=1)

    def contains(self, points):
        p = np.atleast_2d(points)
        return self.box_inside(p, p)

    def box_inside(self, lo, hi):
        inside = np.all((lo > np.array(self.lower)) & (hi < np.array(self.upper)), axis=1)
        return inside & self._outside_notch(lo, hi)

    def volume(self):
        lo, hi = self.bounds()
        nlo = np.maximum(np.array(self.notch_lower), lo)
        nhi = np.minimum(np.array(self.notch_upper), hi)
        cut = float(np.prod(np.clip(nhi - nlo, 0.0, None)))
        return float(np.prod(hi - lo)) - cut

    def to_dict(self):
        return {
            "kind": "lshape",
            "lower": list(self.lower),
            "upper": list(self.upper),
            "notch_lower": list(self.notch_lower),
            "notch_upper": list(self.notch_upper),
        }


class VoxelMask(DomainSpec):
    """Open set given as the interior of a union of closed occupied voxels.

    The cube test is conservative: every voxel touched by the closed cube
    must be occupied.
    """

    kind = "mask"

    def __init__(self, occupancy, origin=(0.0, 0.0, 0.0), voxel: float = 1.0):
        occ = np.asarray(occupancy, dtype=bool)
        if occ.ndim != 3 or not occ.any():
            raise ConfigError("voxel mask must be a nonempty 3D boolean array")
        if not voxel > 0:
            raise ConfigError("voxel size must be positive")
        self.occupancy = occ
        self.origin = np.array(_vec3(origin, "origin"))
        self.voxel = float(voxel)
        # summed-area table for O(1) box occupancy counts
        sat = np.zeros(tuple(s + 1 for s in occ.shape), dtype=np.int64)
        sat[1:, 1:, 1:] = occ.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
        self._sat = sat

    def __eq__(self, other):
        return (
            isinstance(other, VoxelMask)
            and self.voxel == other.voxel
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.occupancy, other.occupancy)
        )

    def __hash__(self):
        return hash((self.voxel, tuple(self.origin), self.occupancy.tobytes()))

    def bounds(self):
        idx = np.argwhere(self.occupancy)
        lo = self.origin + idx.min(axis=0) * self.voxel
        hi = self.origin + (idx.max(axis=0) + 1) * self.voxel
        return lo, hi

    def _count(self, i0, i1):
        # occupied voxels in the inclusive index box [i0, i1], clipped to the array
        shape = np.array(self.occupancy.shape)
        a = np.clip(i0, 0, shape)
        b = np.clip(i1 + 1, 0, shape)
        b = np.maximum(a, b)
        s = self._sat
        return (
            s[b[:, 0], b[:, 1], b[:, 2]]
            - s[a[:, 0], b[:, 1], b[:, 2]]
            - s[b[:, 0], a[:, 1], b[:, 2]]
            - s[b[:, 0], b[:, 1], a[:, 2]]
            + s[a[:, 0], a[:, 1], b[:, 2]]
            + s[a[:, 0], b[:, 1], a[:, 2]]
            + s[b[:, 0], a[:, 1], a[:, 2]]
            - s[a[:, 0], a[:, 1], a[:, 2]]
        )

    def box_inside(self, lo, hi):
        i0 = np.ceil((np.atleast_2d(lo) - self.origin) / self.voxel).astype(np.int64) - 1
        i1 = np.floor((np.atleast_2d(hi) - self.origin) / self.voxel).astype(np.int64)
        # a closed face landing on a voxel boundary touches the voxel beyond it too
        need = np.prod(i1 - i0 + 1, axis=1)
        shape = np.array(self.occupancy.shape)
        in_range = np.all((i0 >= 0) & (i1 < shape), axis=1)
        return in_range & (self._count(i0, i1) == need)

    def contains(self, points):
        return self.cube_inside(points, 0.0)

    def volume(self):
        return float(self.occupancy.sum()) * self.voxel**3

    def to_dict(self):
        return {
            "kind": "mask",
            "origin": list(map(float, self.origin)),
            "voxel": self.voxel,
            "shape": list(self.occupancy.shape),
            "occupancy": np.packbits(self.occupancy.ravel()).tobytes().hex(),
        }


def domain_from_dict(d: Dict[str, Any]) -> DomainSpec:
    """Rebuild a :class:`DomainSpec` from :meth:`DomainSpec.to_dict` output."""
    kind = d.get("kind")
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "ball":
        return Ball(d["center"], d["radius"])
    if kind == "lshape":
        return LShape(d["lower"], d["upper"], d["notch_lower"], d["notch_upper"])
    if kind == "mask":
        shape = tuple(int(s) for s in d["shape"])
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(d["occupancy"]), dtype=np.uint8))
        occ = bits[: int(np.prod(shape))].astype(bool).reshape(shape)
        return VoxelMask(occ, d["origin"], d["voxel"])
    raise ConfigError(f"unknown domain kind {kind!r}")


def cell(x, h: float, variant: str = "centered") -> Tuple[np.ndarray, np.ndarray]:
    """Half-open cell attached to the point ``x``.

    Returns ``(lo, hi)`` describing ``[lo, hi)`` per axis.  ``centered`` gives
    the cube of side ``h`` centred at ``x``; ``shifted`` the cube with lower
    corner ``x``.
    """
    x = np.asarray(x, dtype=float)
    if variant == "centered":
        return x - h / 2, x + h / 2
    if variant == "shifted":
        return x.copy(), x + h
    raise ValueError(f"unknown cell variant {variant!r}")


class GridDomain:
    """The discrete domain for a given mesh size.

    Attributes
    ----------
    spec : DomainSpec
    h : float
    coords : ndarray of int64, shape (N, 3)
        Lattice coordinates ``z`` of the points ``x = h z``, sorted lexicographically.
    interior : ndarray of bool, shape (N,)
    nbr : ndarray of int64, shape (3, 2, N)
        ``nbr[i, 0]`` and ``nbr[i, 1]`` index the ``-e_i`` and ``+e_i`` neighbours;
        the value ``N`` marks a neighbour outside the domain.
    """

    def __init__(self, spec: Optional[DomainSpec], h: float, coords: np.ndarray, interior=None):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        if coords.shape[0] == 0:
            raise EmptyGrid("discrete domain has no points")
        order = np.lexsort(coords.T[::-1])
        coords = coords[order]
        if np.any(np.all(np.diff(coords, axis=0) == 0, axis=1)):
            raise ValueError("duplicate lattice points")
        self.spec = spec
        self.h = float(h)
        self.coords = coords
        self.coords.setflags(write=False)
        n = coords.shape[0]
        self.origin = coords.min(axis=0)
        self.shape = tuple(int(s) for s in coords.max(axis=0) - self.origin + 1)
        lut = np.full(tuple(s + 2 for s in self.shape), -1, dtype=np.int64)
        local = coords - self.origin + 1
        lut[local[:, 0], local[:, 1], local[:, 2]] = np.arange(n)
        self._lut = lut
        nbr = np.empty((3, 2, n), dtype=np.int64)
        for i in range(3):
            for s, sign in enumerate((-1, 1)):
                q = local.copy()
                q[:, i] += sign
                idx = lut[q[:, 0], q[:, 1], q[:, 2]]
                nbr[i, s] = np.where(idx < 0, n, idx)
        self.nbr = nbr
        self.nbr.setflags(write=False)
        computed = np.all(nbr < n, axis=(0, 1))
        if interior is not None and not np.array_equal(np.asarray(interior, bool)[order], computed):
            raise ValueError("interior flags disagree with the neighbour structure")
        self.interior = computed
        self.interior.setflags(write=False)
        self.interior_idx = np.flatnonzero(computed)
        self.boundary_idx = np.flatnonzero(~computed)
        if self.interior_idx.size == 0:
            raise EmptyGrid("discrete domain has no interior points")
        # position of each point among interior points, -1 for boundary points
        self.interior_pos = np.full(n, -1, dtype=np.int64)
        self.interior_pos[self.interior_idx] = np.arange(self.interior_idx.size)

    # -- sizes -------------------------------------------------------------
    @property
    def n_points(self) -> int:
        return int(self.coords.shape[0])

    @property
    def n_interior(self) -> int:
        return int(self.interior_idx.size)

    @property
    def n_boundary(self) -> int:
        return int(self.boundary_idx.size)

    @property
    def points(self) -> np.ndarray:
        """Physical coordinates ``h z`` of all points, shape ``(N, 3)``."""
        return self.coords * self.h

    # -- lookup ------------------------------------------------------------
    def index_of(self, z) -> np.ndarray:
        """Dense indices of lattice coordinates ``z`` (shape ``(M, 3)``), ``-1`` if absent."""
        z = np.atleast_2d(np.asarray(z, dtype=np.int64))
        local = z - self.origin + 1
        ok = np.all((local >= 0) & (local < np.array(self._lut.shape)), axis=1)
        out = np.full(z.shape[0], -1, dtype=np.int64)
        lz = local[ok]
        out[ok] = self._lut[lz[:, 0], lz[:, 1], lz[:, 2]]
        return out

    def contains_lattice(self, z) -> np.ndarray:
        return self.index_of(z) >= 0

    def neighbor(self, values: np.ndarray, axis: int, sign: int) -> np.ndarray:
        """Values at the ``sign * e_axis`` neighbour with zero extension.

        ``values`` has shape ``(..., N)``.
        """
        ext = np.concatenate([values, np.zeros(values.shape[:-1] + (1,))], axis=-1)
        return ext[..., self.nbr[axis, 0 if sign < 0 else 1]]

    def summary(self) -> Dict[str, Any]:
        lo = self.coords.min(axis=0)
        hi = self.coords.max(axis=0)
        return {
            "h": self.h,
            "n_points": self.n_points,
            "n_interior": self.n_interior,
            "n_boundary": self.n_boundary,
            "lattice_lower": [int(v) for v in lo],
            "lattice_upper": [int(v) for v in hi],
            "bbox_lower": [float(v) for v in lo * self.h],
            "bbox_upper": [float(v) for v in hi * self.h],
            "domain": self.spec.to_dict() if self.spec is not None else None,
        }

    def __repr__(self):
        return f"GridDomain(h={self.h!r}, points={self.n_points}, interior={self.n_interior})"

    def same_as(self, other: "GridDomain") -> bool:
        return self is other or (
            self.h == other.h and np.array_equal(self.coords, other.coords)
        )

    def interior_components(self) -> int:
        """Number of 6-connected components of the interior."""
        mask = np.zeros(self.shape, dtype=bool)
        z = self.coords[self.interior_idx] - self.origin
        mask[z[:, 0], z[:, 1], z[:, 2]] = True
        _, count = ndimage.label(mask)
        return int(count)


def build_grid(spec: DomainSpec, h: float, check_connected: bool = True) -> GridDomain:
    """Build the discrete domain of ``spec`` at mesh size ``h``.

    Raises
    ------
    EmptyGrid
        If no interior point exists.

    Warns
    -----
    DisconnectedGrid
        If the interior splits into several 6-connected pieces.
    """
    h = float(h)
    if not (h > 0 and math.isfinite(h)):
        raise ConfigError("mesh size h must be positive")
    lo, hi = spec.bounds()
    zlo = np.ceil(lo / h).astype(np.int64)
    zhi = np.floor(hi / h).astype(np.int64)
    if np.any(zhi < zlo):
        raise EmptyGrid(f"no lattice points inside the domain at h={h}")
    axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(zlo, zhi)]
    z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    # corners in lattice units first so that touching faces are detected exactly
    keep = spec.box_inside((z - 2) * h, (z + 2) * h)
    z = z[keep]
    if z.shape[0] == 0:
        raise EmptyGrid(f"no lattice point admits its 4h cube at h={h}")
    grid = GridDomain(spec, h, z)
    if check_connected and grid.interior_components() > 1:
        warnings.warn(
            f"interior of the discrete domain at h={h} is not edge-connected",
            DisconnectedGrid,
            stacklevel=2,
        )
    return grid

"""Truncated box grids, the half-integer cube tiling and discrete derivatives.

Nodes sit at ``x_i = -L/2 + i*h`` for ``i = 0..n-1`` along every axis, with
``n = L/h``.  The node at ``+L/2`` is identified with index 0: for a periodic
box this is the usual wrap, for a Dirichlet box index 0 carries the (zero)
boundary value shared by both faces.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

BOUNDARIES = ("periodic", "dirichlet-zero")


def _is_integer(x: float, tol: float = 1e-9) -> bool:
    return abs(x - round(x)) < tol


@dataclass(frozen=True)
class Grid:
    dim: int
    box_half_width: float
    spacing: float
    boundary: str = "periodic"

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.spacing <= 0 or self.box_half_width <= 0:
            raise ValueError("spacing and box_half_width must be positive")
        L = 2.0 * self.box_half_width
        if not _is_integer(2.0 * L):
            raise ValueError(f"box length {L} is not a multiple of 1/2")
        if not _is_integer(1.0 / self.spacing):
            raise ValueError(f"1/h = {1.0 / self.spacing} is not an integer")
        if round(1.0 / self.spacing) % 2:
            # cube centres step by 1/2, which must land on nodes
            raise ValueError("1/h must be even so half-integer centres are nodes")

    @property
    def length(self) -> float:
        return 2.0 * self.box_half_width

    @property
    def points_per_axis(self) -> int:
        return int(round(self.length / self.spacing))

    @property
    def nodes_per_unit(self) -> int:
        return int(round(1.0 / self.spacing))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.box_half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """True on nodes pinned to zero (Dirichlet only)."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.boundary == "dirichlet-zero":
            for a in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[a] = 0
                mask[tuple(idx)] = True
        return mask

    @cached_property
    def tiling(self) -> "CubeTiling":
        return build_tiling(self)

    def index_of(self, x: float) -> int:
        """Node index along an axis for a coordinate lying on a node."""
        i = (x + self.box_half_width) / self.spacing
        if not _is_integer(i):
            raise ValueError(f"{x} is not a grid node")
        return int(round(i)) % self.points_per_axis

    def to_dict(self) -> dict:
        return {"dim": self.dim, "L": self.length, "h": self.spacing,
                "boundary": self.boundary}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(int(d["dim"]), float(d["L"]) / 2.0, float(d["h"]),
                   d.get("boundary", "periodic"))


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - other.values)

    def __mul__(self, s: float) -> "Field":
        return Field(self.grid, s * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float

    def to_dict(self) -> dict:
        return {"x0": list(self.center), "R": self.radius}


@dataclass(frozen=True, eq=False)
class CubeTiling:
    """Closed unit cubes centred on ``(Z/2)^d`` and fully inside the box.

    Cubes are the tensor product of per-axis centre lists; ``axis_starts[a][j]``
    is the node index of the left face of the j-th cube along axis ``a``.
    """
    grid: Grid
    axis_centers: np.ndarray
    axis_starts: np.ndarray
    centers: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.centers)

    @property
    def counts_per_axis(self) -> tuple[int, ...]:
        return (len(self.axis_centers),) * self.grid.dim

    def cell_index_ranges(self, k: int) -> list[np.ndarray]:
        """Per-axis node indices (wrapped) of cube ``k``."""
        multi = np.unravel_index(k, self.counts_per_axis)
        m = self.grid.nodes_per_unit
        n = self.grid.points_per_axis
        return [(self.axis_starts[j] + np.arange(m + 1)) % n for j in multi]

    @cached_property
    def quadrature_matrix(self) -> np.ndarray:
        """Row j holds the 1-D trapezoid weights of cube j over the axis nodes."""
        g = self.grid
        m, n = g.nodes_per_unit, g.points_per_axis
        W = np.zeros((len(self.axis_centers), n))
        w = np.full(m + 1, g.spacing)
        w[0] = w[-1] = 0.5 * g.spacing
        for j, s in enumerate(self.axis_starts):
            np.add.at(W[j], (s + np.arange(m + 1)) % n, w)
        return W

    def cube_integrals(self, density: np.ndarray) -> np.ndarray:
        """Trapezoid integral of ``density`` over every cube.

        ``density`` may carry leading batch axes; the trailing ``dim`` axes are
        spatial.  Returns batch shape + ``(count,)`` in lexicographic order.
        """
        d = self.grid.dim
        W = self.quadrature_matrix
        out = np.asarray(density, dtype=float)
        nb = out.ndim - d
        for a in range(d):
            out = np.moveaxis(np.tensordot(out, W, axes=([nb + a], [1])), -1, nb + a)
        return out.reshape(out.shape[:nb] + (-1,))

    def cube_blocks(self, values: np.ndarray, interior: bool = False) -> np.ndarray:
        """Gather node values of every cube.

        Returns batch shape + ``(count,) + (m+1,)*dim`` (or ``(m-1,)*dim`` for
        interior nodes only).
        """
        d = self.grid.dim
        m, n = self.grid.nodes_per_unit, self.grid.points_per_axis
        offs = np.arange(1, m) if interior else np.arange(m + 1)
        idx = (self.axis_starts[:, None] + offs[None, :]) % n
        out = np.asarray(values)
        nb = out.ndim - d
        for a in range(d):
            out = np.take(out, idx, axis=nb + 2 * a)
        # axes now: batch, (c0, m0), (c1, m1), ...
        perm = list(range(nb)) + [nb + 2 * a for a in range(d)] + [nb + 2 * a + 1 for a in range(d)]
        out = out.transpose(perm)
        return out.reshape(out.shape[:nb] + (-1,) + out.shape[nb + d:])


def build_tiling(grid: Grid) -> CubeTiling:
    """Enumerate unit cubes with half-integer centres lying inside the box."""
    hw = grid.box_half_width
    lo, hi = -hw + 0.5, hw - 0.5
    if hi < lo - 1e-12:
        raise ValueError(f"box of length {grid.length} contains no unit cube")
    k0 = int(np.ceil(2 * lo - 1e-9))
    k1 = int(np.floor(2 * hi + 1e-9))
    axis_centers = np.arange(k0, k1 + 1) / 2.0
    axis_starts = np.array([grid.index_of(c - 0.5) for c in axis_centers])
    # the left face of the rightmost cube may be at +L/2 - 1; index_of wraps
    mesh = np.meshgrid(*([axis_centers] * grid.dim), indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=-1)
    return CubeTiling(grid, axis_centers, axis_starts, centers)


def cubes_intersecting(tiling: CubeTiling, region: Ball) -> np.ndarray:
    """Indices of cubes meeting the closed ball ``region``."""
    c = np.asarray(region.center, dtype=float)
    # distance from the ball centre to the nearest point of each cube
    gap = np.maximum(np.abs(tiling.centers - c) - 0.5, 0.0)
    dist = np.sqrt((gap ** 2).sum(axis=1))
    return np.flatnonzero(dist <= region.radius + 1e-12)


def cubes_outside(tiling: CubeTiling, region: Ball) -> np.ndarray:
    """Indices of cubes whose centre lies outside the closed ball."""
    c = np.asarray(region.center, dtype=float)
    dist = np.linalg.norm(tiling.centers - c, axis=1)
    return np.flatnonzero(dist > region.radius + 1e-12)


def _shift(u: np.ndarray, s: int, axis: int) -> np.ndarray:
    return np.roll(u, -s, axis=axis)


def gradient(field: Field | np.ndarray, grid: Grid | None = None) -> np.ndarray:
    """Centred second-order gradient, shape ``(dim,) + values.shape``.

    Accepts a Field or a raw array with leading batch axes (then ``grid`` is
    required).  Dirichlet grids use a forward difference on boundary nodes.
    """
    if isinstance(field, Field):
        grid, u = field.grid, field.values
    else:
        u = np.asarray(field, dtype=float)
    d, h = grid.dim, grid.spacing
    nb = u.ndim - d
    comps = []
    for a in range(d):
        ax = nb + a
        du = (_shift(u, 1, ax) - _shift(u, -1, ax)) / (2 * h)
        if grid.boundary == "dirichlet-zero":
            idx = [slice(None)] * u.ndim
            idx[ax] = 0
            nxt = [slice(None)] * u.ndim
            nxt[ax] = 1
            du[tuple(idx)] = (u[tuple(nxt)] - u[tuple(idx)]) / h
        comps.append(du)
    return np.stack(comps, axis=0)


def divergence(vec: np.ndarray, grid: Grid) -> np.ndarray:
    """Centred divergence of a vector field of shape ``(dim,) + batch + shape``."""
    d, h = grid.dim, grid.spacing
    out = np.zeros(vec.shape[1:])
    nb = out.ndim - d
    for a in range(d):
        ax = nb + a
        out += (_shift(vec[a], 1, ax) - _shift(vec[a], -1, ax)) / (2 * h)
    return out


def laplacian(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Standard (2d+1)-point Laplacian with periodic wrap."""
    d, h = grid.dim, grid.spacing
    u = np.asarray(u, dtype=float)
    nb = u.ndim - d
    out = -2.0 * d * u
    for a in range(d):
        out = out + _shift(u, 1, nb + a) + _shift(u, -1, nb + a)
    return out / h ** 2


def integrate(density: np.ndarray, grid: Grid) -> np.ndarray:
    """Trapezoid integral over the whole box (nodes carry weight h^d)."""
    d = grid.dim
    return np.asarray(density).sum(axis=tuple(range(-d, 0))) * grid.cell_volume


def point_index(grid: Grid, x: Sequence[float]) -> tuple[int, ...]:
    return tuple(grid.index_of(float(c)) for c in x)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-sampled solution segment; ``values`` has shape ``(nt,) + grid.shape``."""
    grid: Grid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(t),) + self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match {len(t)} samples on {self.grid.shape}")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("time samples must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def ell(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)

    def snapshot(self, i: int) -> Field:
        return Field(self.grid, self.values[i])

    def window(self, t0: float, t1: float) -> "Trajectory":
        tol = 1e-9 * max(1.0, abs(t1))
        sel = (self.times >= t0 - tol) & (self.times <= t1 + tol)
        return Trajectory(self.grid, self.times[sel], self.values[sel], dict(self.meta))

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(self.grid, self.times, self.values - other.values, {})

    def scaled(self, s: float) -> "Trajectory":
        return Trajectory(self.grid, self.times, s * self.values, dict(self.meta))

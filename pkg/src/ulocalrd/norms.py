"""Uniformly-local weighted norms of fields and short trajectories.

Two forms of every norm are provided.  The cube form takes a weighted
supremum of local integrals over the unit cubes ``C_k``; the tilde form takes
the same supremum of integrals against the kernel ``exp(-|x - x_k|)`` over the
whole box.  For trajectories the time integral is always taken before the
supremum.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.signal import fftconvolve

from .grid import Ball, Field, Grid, Trajectory, cubes_intersecting, gradient
from .weights import Weight, constant_weight

FIELD_FAMILIES = ("Lp_b", "W12_b", "Wm12_b", "Lp_tilde", "W12_tilde", "Wm12_tilde")
TRAJ_FAMILIES = ("traj_L2L2", "traj_L2W12", "traj_L2Wm12", "traj_LpLp",
                 "traj_L2L2_tilde", "traj_L2W12_tilde", "traj_LpLp_tilde")


@dataclass(frozen=True, eq=False)
class NormSpec:
    family: str
    p: float = 2.0
    weight: Weight = field(default_factory=constant_weight)
    restriction: Ball | None = None

    def __post_init__(self):
        if self.family not in FIELD_FAMILIES + TRAJ_FAMILIES:
            raise ValueError(f"unknown norm family {self.family!r}")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if "tilde" in self.family and self.weight.mu >= 1:
            raise ValueError(f"tilde norms need weight growth rate < 1, got {self.weight.mu}")

    @property
    def is_tilde(self) -> bool:
        return self.family.endswith("tilde")

    @property
    def exponent(self) -> float:
        return self.p if self.family in ("Lp_b", "Lp_tilde", "traj_LpLp", "traj_LpLp_tilde") else 2.0

    def to_dict(self) -> dict:
        return {"family": self.family, "p": self.p,
                "weight": self.weight.to_dict() if self.weight.kind != "custom" else "custom",
                "restriction": None if self.restriction is None else self.restriction.to_dict()}


def _cube_selection(grid: Grid, restriction: Ball | None) -> np.ndarray:
    tiling = grid.tiling
    if restriction is None:
        return np.arange(tiling.count)
    idx = cubes_intersecting(tiling, restriction)
    if len(idx) == 0:
        raise ValueError(f"restriction {restriction} meets no cube of the tiling")
    return idx


def center_weights(grid: Grid, weight: Weight) -> np.ndarray:
    return np.asarray(weight(grid.tiling.centers), dtype=float)


def _weighted_sup(local: np.ndarray, grid: Grid, spec: NormSpec) -> np.ndarray:
    """sup_k phi(x_k) * local[..., k] over the selected cubes."""
    sel = _cube_selection(grid, spec.restriction)
    phi = center_weights(grid, spec.weight)
    return np.max(local[..., sel] * phi[sel], axis=-1)


# ---------------------------------------------------------------- densities

def _density(values: np.ndarray, grid: Grid, family: str, p: float) -> np.ndarray:
    if family in ("Lp_b", "Lp_tilde", "traj_LpLp", "traj_LpLp_tilde"):
        return np.abs(values) ** p
    if family in ("traj_L2L2", "traj_L2L2_tilde"):
        return values ** 2
    if family in ("W12_b", "W12_tilde", "traj_L2W12", "traj_L2W12_tilde"):
        g = gradient(values, grid)
        return values ** 2 + (g ** 2).sum(axis=0)
    raise ValueError(f"family {family!r} has no pointwise density")


def time_integrate(samples: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Trapezoid rule along axis 0."""
    if len(times) < 2:
        raise ValueError("need at least 2 time samples")
    dt = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return np.tensordot(w, samples, axes=(0, 0))


# ---------------------------------------------------------------- kernels

_KERNEL_CACHE_LIMIT = 4_000_000


@lru_cache(maxsize=8)
def _kernel_matrix(grid: Grid) -> np.ndarray:
    centers = grid.tiling.centers
    pts = grid.coords.reshape(-1, grid.dim)
    r = np.sqrt(((centers[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    return np.exp(-r) * grid.cell_volume


def kernel_integrals(density: np.ndarray, grid: Grid) -> np.ndarray:
    """``int density(x) exp(-|x - x_k|) dx`` for every tiling centre ``x_k``.

    Returns batch shape + ``(count,)``.
    """
    nb = density.ndim - grid.dim
    flat = density.reshape(density.shape[:nb] + (-1,))
    centers = grid.tiling.centers
    if len(centers) * grid.size <= _KERNEL_CACHE_LIMIT:
        return flat @ _kernel_matrix(grid).T
    # large grids: exact linear convolution by FFT, read off at the centre nodes
    n = grid.points_per_axis
    off = grid.spacing * np.arange(-(n - 1), n)
    mesh = np.meshgrid(*([off] * grid.dim), indexing="ij")
    kern = np.exp(-np.sqrt(sum(m ** 2 for m in mesh))) * grid.cell_volume
    axes = tuple(range(nb, nb + grid.dim))
    full = fftconvolve(density, kern.reshape((1,) * nb + kern.shape), axes=axes)
    idx = np.rint((centers + grid.box_half_width) / grid.spacing).astype(int) + n - 1
    return full[(Ellipsis,) + tuple(idx.T)]


def kernel_mass(grid: Grid) -> np.ndarray:
    """``int_box exp(-|x - x_k|) dx`` per centre."""
    return kernel_integrals(np.ones(grid.shape), grid)


# ---------------------------------------------------------------- dual norms

@lru_cache(maxsize=16)
def _cube_riesz_factor(dim: int, m: int):
    """Cholesky factor of (-Lap_h + I) on the (m-1)^dim interior nodes of a unit cube."""
    h = 1.0 / m
    n = m - 1
    T = scipy.sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h ** 2
    I1 = scipy.sparse.identity(n)
    A = scipy.sparse.csr_matrix((n ** dim, n ** dim))
    for a in range(dim):
        term = None
        for b in range(dim):
            f = T if a == b else I1
            term = f if term is None else scipy.sparse.kron(term, f)
        A = A + term
    A = (A + scipy.sparse.identity(n ** dim)).toarray()
    return scipy.linalg.cho_factor(A)


def cube_dual_squares(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Squared W^{-1,2}(C_k) norm of the field restricted to every cube.

    Solves ``-Lap v + v = u`` with zero Dirichlet data on each cube and returns
    ``int u v``.  Batch axes are kept; result is batch shape + ``(count,)``.
    """
    d, m = grid.dim, grid.nodes_per_unit
    if m < 2:
        raise ValueError("need at least one interior node per cube")
    blocks = grid.tiling.cube_blocks(values, interior=True)
    lead = blocks.shape[:-d]
    rhs = blocks.reshape(-1, (m - 1) ** d)
    try:
        fac = _cube_riesz_factor(d, m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD by construction
        raise RuntimeError("singular cube Riesz system") from exc
    v = scipy.linalg.cho_solve(fac, rhs.T).T
    return ((rhs * v).sum(axis=-1) * grid.cell_volume).reshape(lead)


def _weighted_riesz_square(u: np.ndarray, grid: Grid, xbar: np.ndarray) -> float:
    """Squared dual norm of u against the exp(-|x - xbar|)-weighted W^{1,2} inner product."""
    d, h = grid.dim, grid.spacing
    pts = grid.coords
    w = np.exp(-np.linalg.norm(pts - xbar, axis=-1))
    N = grid.size
    lin = np.arange(N).reshape(grid.shape)
    rows, cols, vals = [], [], []
    diag = (w * 1.0).ravel().copy()
    for a in range(d):
        nbr = np.roll(lin, -1, axis=a).ravel()
        wf = 0.5 * (w.ravel() + w.ravel()[nbr]) / h ** 2
        rows += [lin.ravel(), nbr]
        cols += [nbr, lin.ravel()]
        vals += [-wf, -wf]
        diag += wf
        diag[nbr] += wf
    A = scipy.sparse.csc_matrix((np.concatenate(vals + [diag]),
                                 (np.concatenate(rows + [lin.ravel()]),
                                  np.concatenate(cols + [lin.ravel()]))), shape=(N, N))
    b = (w * u).ravel()
    v = scipy.sparse.linalg.spsolve(A, b)
    return float(b @ v) * grid.cell_volume


# ---------------------------------------------------------------- field norms

def cube_norm(field: Field, k: int, p: float = 2.0) -> float:
    """(int_{C_k} |u|^p)^{1/p} by the trapezoid rule."""
    tiling = field.grid.tiling
    if not 0 <= k < tiling.count:
        raise IndexError(f"cube index {k} out of range")
    integrals = tiling.cube_integrals(np.abs(field.values) ** p)
    return float(integrals[k] ** (1.0 / p))


def ulocal_norm(field: Field, spec: NormSpec) -> float:
    if spec.family != "Lp_b":
        raise ValueError("ulocal_norm expects an Lp_b spec")
    local = field.grid.tiling.cube_integrals(_density(field.values, field.grid, "Lp_b", spec.p))
    return float(_weighted_sup(local, field.grid, spec) ** (1.0 / spec.p))


def tilde_norm(field: Field, spec: NormSpec) -> float:
    if spec.family not in ("Lp_tilde", "W12_tilde"):
        raise ValueError("tilde_norm expects an Lp_tilde or W12_tilde spec")
    if spec.weight.mu >= 1:
        raise ValueError("tilde norms need weight growth rate < 1")
    p = spec.exponent
    dens = _density(field.values, field.grid, spec.family, p)
    return float(_weighted_sup(kernel_integrals(dens, field.grid), field.grid, spec) ** (1.0 / p))


def w12_norm(field: Field, spec: NormSpec) -> float:
    if spec.family == "W12_tilde":
        return tilde_norm(field, spec)
    if spec.family != "W12_b":
        raise ValueError("w12_norm expects a W12_b or W12_tilde spec")
    dens = _density(field.values, field.grid, "W12_b", 2.0)
    local = field.grid.tiling.cube_integrals(dens)
    return float(np.sqrt(_weighted_sup(local, field.grid, spec)))


def dual_norm(field: Field, spec: NormSpec) -> float:
    if not field.is_finite():
        raise ValueError("field has non-finite values")
    grid = field.grid
    if spec.family == "Wm12_b":
        return float(np.sqrt(_weighted_sup(cube_dual_squares(field.values, grid), grid, spec)))
    if spec.family == "Wm12_tilde":
        sel = _cube_selection(grid, spec.restriction)
        phi = center_weights(grid, spec.weight)
        centers = grid.tiling.centers
        best = max(phi[k] * _weighted_riesz_square(field.values, grid, centers[k]) for k in sel)
        return float(np.sqrt(best))
    raise ValueError("dual_norm expects a Wm12_b or Wm12_tilde spec")


def trajectory_norm(traj: Trajectory, spec: NormSpec) -> float:
    """Parabolic norm: time integral of local quantities, then weighted sup."""
    if len(traj.times) < 2:
        raise ValueError("trajectory norms need at least 2 time samples")
    grid = traj.grid
    if spec.family == "traj_L2Wm12":
        local = time_integrate(cube_dual_squares(traj.values, grid), traj.times)
        return float(np.sqrt(_weighted_sup(local, grid, spec)))
    if spec.family not in TRAJ_FAMILIES:
        raise ValueError(f"{spec.family} is not a trajectory family")
    p = spec.exponent
    dens = time_integrate(_density(traj.values, grid, spec.family, p), traj.times)
    if spec.is_tilde:
        local = kernel_integrals(dens, grid)
    else:
        local = grid.tiling.cube_integrals(dens)
    return float(_weighted_sup(local, grid, spec) ** (1.0 / p))


def norm(obj: Field | Trajectory, spec: NormSpec) -> float:
    """Dispatch on the norm family."""
    fam = spec.family
    if isinstance(obj, Trajectory):
        return trajectory_norm(obj, spec)
    if fam == "Lp_b":
        return ulocal_norm(obj, spec)
    if fam in ("Lp_tilde", "W12_tilde"):
        return tilde_norm(obj, spec)
    if fam == "W12_b":
        return w12_norm(obj, spec)
    if fam in ("Wm12_b", "Wm12_tilde"):
        return dual_norm(obj, spec)
    raise ValueError(f"{fam} does not apply to a Field")


def local_squares(obj: Field | Trajectory, family: str = "L2") -> np.ndarray:
    """Unweighted per-cube squared L2 (time-integrated for trajectories)."""
    grid = obj.grid
    if isinstance(obj, Trajectory):
        return grid.tiling.cube_integrals(time_integrate(obj.values ** 2, obj.times))
    return grid.tiling.cube_integrals(obj.values ** 2)


@dataclass
class EquivalenceReport:
    min_ratio: float
    max_ratio: float
    rows: list[tuple[int, float, float, float]]

    @property
    def spread(self) -> float:
        return self.max_ratio / self.min_ratio


def equivalence_ratio(spec_a: NormSpec, spec_b: NormSpec,
                      fields: Sequence[Field | Trajectory]) -> EquivalenceReport:
    """Extremal ratios norm_a / norm_b over a sample; zero samples are skipped."""
    rows = []
    for i, f in enumerate(fields):
        b = norm(f, spec_b)
        if b == 0.0:
            continue
        a = norm(f, spec_a)
        rows.append((i, a, b, a / b))
    if not rows:
        raise ValueError("no nonzero sample")
    r = np.array([row[3] for row in rows])
    return EquivalenceReport(float(r.min()), float(r.max()), rows)

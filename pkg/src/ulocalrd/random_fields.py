"""Reproducible random test fields and trajectories."""
from __future__ import annotations

import numpy as np

from .grid import Field, Grid, Trajectory, laplacian

KINDS = ("bumps", "waves", "noise", "mixture")


def _bumps(grid: Grid, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    x = grid.coords
    hw = grid.box_half_width
    count = count or int(rng.integers(1, 6))
    out = np.zeros(grid.shape)
    for _ in range(count):
        c = rng.uniform(-hw, hw, size=grid.dim)
        width = rng.uniform(0.3, 2.0)
        amp = rng.normal()
        out += amp * np.exp(-((x - c) ** 2).sum(-1) / (2 * width ** 2))
    return out


def _waves(grid: Grid, rng: np.random.Generator) -> np.ndarray:
    x = grid.coords
    out = np.zeros(grid.shape)
    for _ in range(int(rng.integers(1, 4))):
        # integer wavenumbers keep the field periodic on the box
        k = rng.integers(-8, 9, size=grid.dim) * 2 * np.pi / grid.length
        out += rng.normal() * np.cos(x @ k + rng.uniform(0, 2 * np.pi))
    return out


def _noise(grid: Grid, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(-1.0, 1.0, size=grid.shape)
    # one explicit diffusion step at the stability limit
    return u + grid.spacing ** 2 / (2 * grid.dim) * laplacian(u, grid)


def random_field(grid: Grid, rng: np.random.Generator, kind: str = "mixture") -> Field:
    """Gaussian bumps, plane waves, smoothed uniform noise, or a random mix of the three."""
    if kind == "bumps":
        v = _bumps(grid, rng)
    elif kind == "waves":
        v = _waves(grid, rng)
    elif kind == "noise":
        v = _noise(grid, rng)
    elif kind == "mixture":
        a = rng.uniform(0, 1, size=3) * (rng.uniform(size=3) < 0.7)
        if not a.any():
            a[int(rng.integers(3))] = 1.0
        v = a[0] * _bumps(grid, rng) + a[1] * _waves(grid, rng) + a[2] * _noise(grid, rng)
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    v = np.where(grid.boundary_mask, 0.0, v)
    return Field(grid, v)


def random_fields(grid: Grid, count: int, seed: int = 0, kind: str = "mixture") -> list[Field]:
    rng = np.random.default_rng(seed)
    return [random_field(grid, rng, kind) for _ in range(count)]


def random_trajectory(grid: Grid, rng: np.random.Generator, ell: float = 1.0,
                      samples: int = 11, modes: int = 3, kind: str = "mixture") -> Trajectory:
    """Sum of random fields modulated by smooth random functions of time."""
    t = np.linspace(0.0, ell, samples)
    vals = np.zeros((samples,) + grid.shape)
    for _ in range(modes):
        f = random_field(grid, rng, kind).values
        om = rng.uniform(0, 2 * np.pi / ell)
        ph = rng.uniform(0, 2 * np.pi)
        vals += np.cos(om * t + ph).reshape((-1,) + (1,) * grid.dim) * f
    return Trajectory(grid, t, vals)


def random_smooth_function(dim: int, half_width: float, rng: np.random.Generator,
                           bumps: int = 4, waves: int = 2):
    """A grid-independent smooth random function ``coords -> values``.

    Used wherever the same initial datum must be sampled on several grids.
    """
    cs = rng.uniform(-half_width, half_width, size=(bumps, dim))
    widths = rng.uniform(0.5, 2.0, size=bumps)
    amps = rng.normal(size=bumps)
    ks = rng.integers(-6, 7, size=(waves, dim)) * np.pi / half_width
    wamps = rng.normal(size=waves) * 0.5
    phases = rng.uniform(0, 2 * np.pi, size=waves)

    def func(x):
        out = np.zeros(x.shape[:-1])
        for c, w, a in zip(cs, widths, amps):
            out += a * np.exp(-((x - c) ** 2).sum(-1) / (2 * w ** 2))
        for k, a, ph in zip(ks, wamps, phases):
            out += a * np.cos(x @ k + ph)
        return out
    return func

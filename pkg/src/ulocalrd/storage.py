"""Flat-file persistence: field snapshots, trajectory sequences and bundles.

A snapshot file is one magic line, one JSON header line and the row-major
little-endian float64 values.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid import Field, Grid, Trajectory

MAGIC = b"ULRD-SNAPSHOT 1\n"


def fmt(x) -> str:
    """Floats with 17 significant digits (round-trip exact)."""
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_snapshot(path, field: Field, time: float = 0.0) -> None:
    header = dict(field.grid.to_dict(), time=float(time), shape=list(field.grid.shape), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[Field, float]:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = Grid.from_dict(header)
    if data.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {data.size}")
    return Field(grid, data.reshape(grid.shape).astype(float)), float(header["time"])


def write_field_csv(path, field: Field) -> None:
    """One line per grid point: coordinates, then the value."""
    g = field.grid
    names = ["x", "y", "z"][:g.dim]
    coords = g.coords.reshape(-1, g.dim)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["u"])
        for c, v in zip(coords, field.values.reshape(-1)):
            w.writerow([fmt(float(a)) for a in c] + [fmt(float(v))])


def write_trajectory(directory, traj: Trajectory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, t in enumerate(traj.times):
        p = d / f"snap_{i:05d}.ulrd"
        write_snapshot(p, traj.snapshot(i), t)
        paths.append(p)
    return paths


def read_trajectory(directory, meta: dict | None = None) -> Trajectory:
    files = sorted(Path(directory).glob("snap_*.ulrd"))
    if not files:
        raise FileNotFoundError(f"no snapshots in {directory}")
    snaps = [read_snapshot(p) for p in files]
    grid = snaps[0][0].grid
    return Trajectory(grid, np.array([t for _, t in snaps]),
                      np.stack([f.values for f, _ in snaps]), meta or {})


def write_bundle(directory, trajectories, manifest: dict | None = None) -> Path:
    """One snapshot sequence per member plus ``bundle.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, tr in enumerate(trajectories):
        write_trajectory(d / f"member_{i:05d}", tr)
    info = dict(manifest or {}, members=len(trajectories),
                grid=trajectories[0].grid.to_dict() if trajectories else None)
    (d / "bundle.json").write_text(json.dumps(info, indent=2, sort_keys=True, default=str))
    return d


def read_bundle(directory) -> tuple[list[Trajectory], dict]:
    d = Path(directory)
    info_path = d / "bundle.json"
    if not info_path.exists():
        raise FileNotFoundError(f"{d} is not a trajectory bundle (no bundle.json)")
    info = json.loads(info_path.read_text())
    members = sorted(p for p in d.iterdir() if p.is_dir() and p.name.startswith("member_"))
    return [read_trajectory(p) for p in members], info


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            values = [r[h] for h in header] if isinstance(r, dict) else r
            w.writerow([fmt(v) for v in values])

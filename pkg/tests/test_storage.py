import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ulocalrd.grid import Field, Grid, Trajectory
from ulocalrd.storage import (fmt, read_bundle, read_snapshot, read_trajectory, write_bundle, write_csv,
                              write_field_csv, write_snapshot, write_trajectory)

G = Grid(2, 1.0, 1 / 4, "dirichlet-zero")


def test_snapshot_roundtrip_is_bit_exact(tmp_path):
    f = Field(G, np.random.default_rng(0).normal(size=G.shape))
    write_snapshot(tmp_path / "a.ulrd", f, time=0.1)
    back, t = read_snapshot(tmp_path / "a.ulrd")
    assert back.grid == G and t == 0.1
    assert np.array_equal(back.values, f.values)


def test_snapshot_rejects_foreign_and_truncated_files(tmp_path):
    (tmp_path / "x").write_bytes(b"hello\n")
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "x")
    write_snapshot(tmp_path / "y", Field(G, np.zeros(G.shape)))
    (tmp_path / "y").write_bytes((tmp_path / "y").read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "y")


def test_trajectory_and_bundle_roundtrip(tmp_path):
    g = Grid(1, 2.0, 1 / 8)
    rng = np.random.default_rng(1)
    trs = [Trajectory(g, np.linspace(1, 2, 4), rng.normal(size=(4,) + g.shape)) for _ in range(3)]
    write_trajectory(tmp_path / "t", trs[0])
    back = read_trajectory(tmp_path / "t")
    assert np.array_equal(back.values, trs[0].values) and np.array_equal(back.times, trs[0].times)
    write_bundle(tmp_path / "b", trs, {"seed": 4})
    members, info = read_bundle(tmp_path / "b")
    assert info["members"] == 3 and info["seed"] == 4
    assert all(np.array_equal(a.values, b.values) for a, b in zip(members, trs))
    with pytest.raises(FileNotFoundError):
        read_bundle(tmp_path / "t")


def test_field_csv(tmp_path):
    f = Field(G, np.arange(G.size, dtype=float).reshape(G.shape) / 3)
    write_field_csv(tmp_path / "f.csv", f)
    rows = list(csv.reader((tmp_path / "f.csv").open()))
    assert rows[0] == ["x", "y", "u"] and len(rows) == G.size + 1
    assert float(rows[2][2]) == f.values.reshape(-1)[1]


def test_csv_rows_from_dicts_and_sequences(tmp_path):
    write_csv(tmp_path / "a.csv", ["a", "b"], [{"a": 1, "b": 0.1, "c": "ignored"}, [2, 0.2]])
    assert (tmp_path / "a.csv").read_text().splitlines() == [
        "a,b", "1,0.10000000000000001", "2,0.20000000000000001"]


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    assert float(fmt(x)) == x

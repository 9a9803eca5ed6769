import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from ulocalrd.cli import EXIT_CONFIG, EXIT_IO, EXIT_RUNTIME, main, run, validate_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def small_simulate(out):
    return {"experiment": "simulate", "seed": 7, "output": str(out),
            "grid": {"dim": 1, "L": 8, "h": 0.125},
            "problem": {"reaction": "cubic", "forcing": {"kind": "noise", "amplitude": 0.5}},
            "solver": {"dt": 0.005, "T": 0.2, "record_every": 10},
            "simulate": {"amplitude": 1.5, "csv": True}}


def test_shipped_configs_validate():
    files = sorted(CONFIGS.glob("*.json"))
    assert len(files) == 7
    for f in files:
        validate_config(json.loads(f.read_text()))


def test_simulate_twice_is_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run("simulate", write(tmp_path, small_simulate(out))) == 0
        outs.append(out)
    data = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file() and p.name != "manifest.json")
    assert any(p.suffix == ".ulrd" for p in data) and Path("final.csv") in data
    for rel in data:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["config"]["seed"] == 7
    assert {"version", "timings", "result"} <= set(manifest)


def test_missing_field_exits_2_with_path(tmp_path, capsys):
    cfg = small_simulate(tmp_path / "o")
    del cfg["grid"]["h"]
    assert run("simulate", write(tmp_path, cfg)) == EXIT_CONFIG
    assert "'grid'" in capsys.readouterr().err


def test_bad_values_exit_2(tmp_path, capsys):
    cfg = small_simulate(tmp_path / "o")
    cfg["grid"]["h"] = 0.3
    assert run("simulate", write(tmp_path, cfg)) == EXIT_CONFIG
    cfg = small_simulate(tmp_path / "o")
    cfg["solver"]["dt"] = 1.0          # breaks the explicit reaction bound
    assert run("simulate", write(tmp_path, cfg)) == EXIT_CONFIG
    assert run("norms", write(tmp_path, cfg)) == EXIT_CONFIG  # experiment mismatch
    assert "experiment" in capsys.readouterr().err


def test_tilde_norm_rejects_fast_weight(tmp_path):
    cfg = {"experiment": "norms", "grid": {"dim": 1, "L": 8, "h": 0.125}, "output": str(tmp_path / "o"),
           "weights": {"w": {"kind": "exponential", "center": [0.0], "rate": -1.0}},
           "norms": {"spec": {"family": "Lp_tilde", "weight": "w"}}}
    assert run("norms", write(tmp_path, cfg)) == EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_exits_3(tmp_path, capsys):
    cfg = small_simulate(tmp_path / "o")
    cfg["problem"] = {"reaction": "linear", "lam": -60.0}
    cfg["solver"] = {"dt": 0.005, "T": 30.0, "record_every": 100}
    assert run("simulate", write(tmp_path, cfg)) == EXIT_RUNTIME
    assert "BlowUpError" in capsys.readouterr().err


def test_io_errors_exit_4(tmp_path):
    assert run("simulate", tmp_path / "missing.json") == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("simulate", write(tmp_path, small_simulate(blocker / "sub"))) == EXIT_IO
    cfg = {"experiment": "entropy", "output": str(tmp_path / "e"),
           "entropy": {"bundle": str(tmp_path / "nowhere"), "R_list": [1], "eps_list": [0.5]}}
    assert run("entropy", write(tmp_path, cfg)) == EXIT_IO


def test_norms_prints_record(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "norms.json").read_text())
    assert main(["norms", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "n")]) == 0
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rec["family"] == "Lp_tilde" and rec["value"] > 0
    rows = list(csv.reader((tmp_path / "n" / "equivalence.csv").open()))
    assert rows[0] == ["field_id", "norm_a", "norm_b", "ratio"] and len(rows) == 21


def test_sample_then_entropy_end_to_end(tmp_path):
    sample = {"experiment": "sample", "seed": 3, "output": str(tmp_path / "s"),
              "grid": {"dim": 1, "L": 24, "h": 0.25}, "problem": {"reaction": "cubic"},
              "solver": {"dt": 0.004, "T": 1.0, "record_every": 50},
              "sample": {"ensemble_size": 12, "radius": 3.0, "burn_in": 1.0, "ell": 1.0}}
    assert run("sample", write(tmp_path, sample, "s.json")) == 0
    eps, Rs = [0.2, 0.4, 0.8], [1, 2]
    ent = {"experiment": "entropy", "output": str(tmp_path / "e"),
           "entropy": {"bundle": str(tmp_path / "s" / "bundle"), "R_list": Rs, "eps_list": eps,
                       "c1": 2.0, "plots": True}}
    assert run("entropy", write(tmp_path, ent, "e.json")) == 0
    rows = list(csv.DictReader((tmp_path / "e" / "entropy.csv").open()))
    assert list(rows[0]) == ["epsilon", "R", "N", "H", "bound", "slack"]
    assert sorted((float(r["epsilon"]), float(r["R"])) for r in rows) == sorted(
        (e, float(R)) for e in eps for R in Rs)
    fit = json.loads((tmp_path / "e" / "fit.json").read_text())
    assert "lower bound" in fit["caveat"]
    assert (tmp_path / "e" / "H_vs_eps.gp").exists()


def test_verify_and_aubin_lions(tmp_path):
    cfg = json.loads((CONFIGS / "verify-hypotheses.json").read_text())
    cfg["verify-hypotheses"]["samples"] = 500
    assert run("verify-hypotheses", write(tmp_path, cfg), out=tmp_path / "v") == 0
    assert json.loads((tmp_path / "v" / "hypotheses.json").read_text())["passed"]
    al = {"experiment": "aubin-lions", "grid": {"dim": 1, "L": 16, "h": 0.125},
          "aubin-lions": {"n_samples": 30, "replicates": 2, "R_list": [1, 2, 4]}}
    assert run("aubin-lions", write(tmp_path, al), out=tmp_path / "a", seed=5) == 0
    assert len(list(csv.reader((tmp_path / "a" / "aubin_lions.csv").open()))) == 1 + 6


def test_seed_out_of_range(tmp_path):
    assert run("simulate", write(tmp_path, small_simulate(tmp_path / "o")), seed=-1) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, small_simulate(tmp_path / "o"))
    proc = subprocess.run([sys.executable, "-m", "ulocalrd.cli", "simulate", "--config", str(cfg),
                           "--threads", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "ulocalrd.cli", "simulate"], capture_output=True, text=True)
    assert proc.returncode == 2          # argparse: --config is required

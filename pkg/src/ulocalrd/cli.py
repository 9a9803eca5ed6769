"""Config-driven command line front end.

Exit statuses: 0 success, 2 invalid configuration, 3 numerical blow-up or
solver failure, 4 file-system error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
import time
from importlib import resources
from pathlib import Path

EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 2, 3, 4
COMMANDS = ("simulate", "norms", "dissipation", "sample", "entropy", "aubin-lions", "verify-hypotheses")
ENTROPY_COLUMNS = ["epsilon", "R", "N", "H", "bound", "slack"]

log = logging.getLogger("ulocalrd")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------ configuration

def load_schema() -> dict:
    return json.loads(resources.files("ulocalrd").joinpath("config_schema.json").read_text())


def validate_config(cfg: dict) -> None:
    import jsonschema
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field '{path}': {e.message}")


def read_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"config field '{k}': required for experiment '{cfg['experiment']}'")


def build_grid(cfg: dict):
    from .grid import Grid
    g = cfg["grid"]
    try:
        return Grid(g["dim"], g["L"] / 2, g["h"], g.get("boundary", "periodic"))
    except ValueError as e:
        raise ConfigError(f"config field 'grid': {e}") from e


def build_weight(cfg: dict, name: str | None):
    from .weights import constant_weight, weight_from_dict
    if name is None:
        return constant_weight()
    table = cfg.get("weights", {})
    if name not in table:
        raise ConfigError(f"config field 'weights/{name}': weight not defined")
    try:
        return weight_from_dict(table[name])
    except (ValueError, KeyError) as e:
        raise ConfigError(f"config field 'weights/{name}': {e}") from e


def build_problem(cfg: dict, grid, seed: int):
    import numpy as np
    from .norms import NormSpec, ulocal_norm
    from .pde import make_problem
    from .random_fields import random_field
    p = dict(cfg.get("problem", {}))
    forcing = p.pop("forcing", None)
    g = None
    if forcing and forcing["kind"] != "none":
        rng = np.random.default_rng(forcing.get("seed", seed))
        f = random_field(grid, rng, forcing["kind"])
        size = ulocal_norm(f, NormSpec("Lp_b"))
        g = f.values * (forcing.get("amplitude", 1.0) / size) if size > 0 else f.values
    diffusion = p.pop("diffusion", "linear")
    reaction = p.pop("reaction", "cubic")
    try:
        return make_problem(diffusion, reaction, forcing=g, **p)
    except ValueError as e:
        raise ConfigError(f"config field 'problem': {e}") from e


def build_solver(cfg: dict, seed: int):
    from .pde import SolverConfig
    s = cfg.get("solver")
    if s is None:
        raise ConfigError("config field 'solver': required for this experiment")
    return SolverConfig(dt=s["dt"], T=s.get("T", 1.0), scheme=s.get("scheme", "imex"),
                        record_every=s.get("record_every", 1), seed=seed)


def build_normspec(cfg: dict, block: dict, grid):
    from .grid import Ball
    from .norms import NormSpec
    r = block.get("restriction")
    region = None if r is None else Ball(tuple(r["x0"]), r["R"])
    if region is not None and len(region.center) != grid.dim:
        raise ConfigError("config field 'norms/spec/restriction/x0': dimension mismatch")
    try:
        return NormSpec(block["family"], block.get("p", 2.0), build_weight(cfg, block.get("weight")), region)
    except ValueError as e:
        raise ConfigError(f"config field 'norms/spec': {e}") from e


# ------------------------------------------------------------ helpers

def version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        from importlib.metadata import version as v
        return v("artifact")
    except Exception:
        return "unknown"


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    import numpy as np
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _hypothesis_dict(report) -> dict:
    return {k: {"passed": v.passed, "worst_slack": v.worst_slack, "measured": v.measured}
            for k, v in report.items()}


# ------------------------------------------------------------ experiments

def run_simulate(cfg, out: Path, seed: int) -> dict:
    import numpy as np
    from .norms import NormSpec, ulocal_norm
    from .pde import solve, verify_hypotheses
    from .random_fields import random_field
    from .storage import write_field_csv, write_trajectory
    grid = build_grid(cfg)
    ps = build_problem(cfg, grid, seed)
    sc = build_solver(cfg, seed)
    sim = cfg.get("simulate", {})
    rng = np.random.default_rng(seed)
    u0 = random_field(grid, rng, sim.get("initial", "mixture"))
    if "amplitude" in sim:
        u0 = u0 * (sim["amplitude"] / ulocal_norm(u0, NormSpec("Lp_b")))
    hyp = verify_hypotheses(ps, dim=grid.dim, seed=seed)
    traj = solve(u0, ps, sc)
    files = write_trajectory(out / "snapshots", traj)
    if sim.get("csv", False):
        write_field_csv(out / "final.csv", traj.snapshot(len(traj) - 1))
    return {"hypotheses": _hypothesis_dict(hyp), "snapshots": len(files),
            "final_time": float(traj.times[-1])}


def run_norms(cfg, out: Path, seed: int) -> dict:
    from .norms import norm, equivalence_ratio
    from .random_fields import random_fields
    from .storage import read_snapshot, write_csv
    block = cfg["norms"]
    if "snapshot" in block:
        field, _ = read_snapshot(block["snapshot"])
        grid = field.grid
    else:
        _require(cfg, "grid")
        grid = build_grid(cfg)
        field = random_fields(grid, 1, seed)[0]
    spec = build_normspec(cfg, block["spec"], grid)
    record = dict(spec.to_dict(), value=norm(field, spec))
    print(json.dumps(record, sort_keys=True, default=_json_default))
    write_json(out / "norm.json", record)
    result = {"value": record["value"]}
    if "compare" in block:
        other = build_normspec(cfg, block["compare"], grid)
        fields = random_fields(grid, block.get("count", 20), seed)
        rep = equivalence_ratio(spec, other, fields)
        write_csv(out / "equivalence.csv", ["field_id", "norm_a", "norm_b", "ratio"], rep.rows)
        result.update(min_ratio=rep.min_ratio, max_ratio=rep.max_ratio)
    return result


def run_dissipation(cfg, out: Path, seed: int) -> dict:
    import numpy as np
    from .dynamics import estimate_dissipation, scaled_initial_data
    from .storage import write_csv
    grid = build_grid(cfg)
    ps = build_problem(cfg, grid, seed)
    sc = build_solver(cfg, seed)
    block = cfg.get("dissipation", {})
    lo, hi = block.get("norm_range", [0.5, 8.0])
    inits = scaled_initial_data(grid, np.linspace(lo, hi, block.get("ensemble", 16)), seed=seed)
    fit = estimate_dissipation(inits, ps, sc, build_weight(cfg, block.get("weight")), T=block.get("T"))
    write_json(out / "dissipation.json", fit.to_dict())
    rows = [[t] + list(col) for t, col in zip(fit.times, fit.norms_sq.T)]
    write_csv(out / "norms_sq.csv", ["t"] + [f"member_{i}" for i in range(len(inits))], rows)
    return fit.to_dict()


def run_sample(cfg, out: Path, seed: int) -> dict:
    from .dynamics import DEFAULT_ELL, sample_attractor
    from .storage import write_bundle
    grid = build_grid(cfg)
    ps = build_problem(cfg, grid, seed)
    sc = build_solver(cfg, seed)
    block = cfg.get("sample", {})
    s = sample_attractor(grid, ps, sc, block.get("ensemble_size", 64), block.get("radius", 3.0),
                         block.get("burn_in", 10.0), block.get("ell", DEFAULT_ELL), seed=seed)
    info = dict(s.to_dict(), problem=ps.digest(), solver=sc.to_dict(), seed=seed)
    write_bundle(out / "bundle", s.trajectories, info)
    return info


def _gnuplot(out: Path, R_list) -> None:
    eps_plot = ["set logscale x", "set xlabel 'epsilon'", "set ylabel 'H'",
                "set datafile separator ','", "plot \\"]
    eps_plot += [f"  'entropy.csv' every ::1 using ($2=={R} ? $1 : 1/0):4 with linespoints title 'R={R}'"
                 + (", \\" if i < len(R_list) - 1 else "") for i, R in enumerate(R_list)]
    (out / "H_vs_eps.gp").write_text("\n".join(eps_plot) + "\n")
    R_plot = ["set xlabel 'R'", "set ylabel 'H'", "set datafile separator ','",
              "plot 'entropy.csv' every ::1 using 2:4 with points title 'H'"]
    (out / "H_vs_R.gp").write_text("\n".join(R_plot) + "\n")


def run_entropy(cfg, out: Path, seed: int) -> dict:
    from .entropy import calibrate_c1_sweep, entropy_table, fit_scaling
    from .storage import read_bundle, write_csv
    block = cfg["entropy"]
    trajs, info = read_bundle(block["bundle"])
    if not trajs:
        raise ConfigError("config field 'entropy/bundle': bundle is empty")
    d = trajs[0].grid.dim
    x0 = block.get("x0", [0.0] * d)
    if len(x0) != d:
        raise ConfigError("config field 'entropy/x0': dimension mismatch")
    c1 = block.get("c1")
    if c1 is None:
        try:
            c1 = calibrate_c1_sweep(trajs, x0, block["R_list"], block["eps_list"])
        except ValueError as e:
            raise ConfigError(f"config field 'entropy': {e}") from e
    rows = entropy_table(trajs, x0, block["R_list"], block["eps_list"], c1)
    fit = fit_scaling(rows, c1, d, len(trajs), guard=False)
    write_csv(out / "entropy.csv", ENTROPY_COLUMNS, rows)
    rec = dict(fit.to_dict(), sample_size=len(trajs), bundle=str(block["bundle"]))
    write_json(out / "fit.json", rec)
    if block.get("plots", False):
        _gnuplot(out, block["R_list"])
    return rec


def run_aubin_lions(cfg, out: Path, seed: int) -> dict:
    from .entropy import aubin_lions_experiment, aubin_lions_samples
    from .storage import write_csv
    grid = build_grid(cfg)
    block = cfg.get("aubin-lions", {})
    weight = build_weight(cfg, block.get("weight"))
    reps, n = block.get("replicates", 1), block.get("n_samples", 200)
    trajs, ids = [], []
    for k in range(reps):
        trajs += aubin_lions_samples(grid, block.get("r", 1.0), n, weight, seed=seed + k)
        ids += [k] * n
    rep = aubin_lions_experiment(trajs, block.get("r", 1.0), block.get("theta", 0.5),
                                 block.get("x0", [0.0] * grid.dim), block.get("R_list", [1, 2, 4, 8]),
                                 weight, replicate_ids=ids)
    write_csv(out / "aubin_lions.csv", ["replicate", "R", "vol", "cubes", "N", "H"], rep.rows)
    res = {"slope": rep.slope, "quad_coef": rep.quad_coef, "quad_stderr": rep.quad_stderr,
           "linear_growth": rep.linear_growth(), "r": rep.r, "theta": rep.theta}
    write_json(out / "aubin_lions.json", res)
    return res


def run_verify(cfg, out: Path, seed: int) -> dict:
    from .pde import hypotheses_pass, verify_hypotheses
    dim = cfg.get("grid", {}).get("dim", 1)
    # forcing does not enter the structural hypotheses
    problem = {k: v for k, v in cfg.get("problem", {}).items() if k != "forcing"}
    ps = build_problem(dict(cfg, problem=problem), None, seed)
    rep = verify_hypotheses(ps, samples=cfg.get("verify-hypotheses", {}).get("samples", 5000),
                            dim=dim, seed=seed)
    res = {"passed": hypotheses_pass(rep), "checks": _hypothesis_dict(rep)}
    write_json(out / "hypotheses.json", res)
    return res


RUNNERS = {"simulate": run_simulate, "norms": run_norms, "dissipation": run_dissipation,
           "sample": run_sample, "entropy": run_entropy, "aubin-lions": run_aubin_lions,
           "verify-hypotheses": run_verify}
NEEDS = {"simulate": ("grid", "solver"), "dissipation": ("grid", "solver"), "sample": ("grid", "solver"),
         "entropy": ("entropy",), "norms": ("norms",), "aubin-lions": ("grid",), "verify-hypotheses": ()}


# ------------------------------------------------------------ entry point

def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ulocalrd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment configuration")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
        sp.add_argument("--threads", type=int, help="cap on worker threads")
    return ap


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def run(command: str, config_path, out=None, seed=None, threads=None) -> int:
    _limit_threads(threads)
    try:
        cfg = read_config(config_path)
        cfg.setdefault("experiment", command)
        validate_config(cfg)
        if cfg["experiment"] != command:
            raise ConfigError(f"config field 'experiment': '{cfg['experiment']}' does not match "
                              f"subcommand '{command}'")
        if seed is not None:
            if not 0 <= seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = seed
        if out is not None:
            cfg["output"] = str(out)
        _require(cfg, *NEEDS[command])
        seed = cfg.setdefault("seed", 0)
        outdir = Path(cfg.setdefault("output", "out"))
        outdir.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        result = RUNNERS[command](cfg, outdir, seed)
        manifest = {"command": command, "config": cfg, "version": version(), "result": result,
                    "timings": {"wall_seconds": time.perf_counter() - start}}
        write_json(outdir / "manifest.json", manifest)
        return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        # preconditions rejected by the library (step size, box size, ...) are configuration faults
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (RuntimeError, FloatingPointError) as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    level = os.environ.get("ULOCALRD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())

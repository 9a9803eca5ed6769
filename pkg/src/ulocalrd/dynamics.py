"""Semigroup, short-trajectory operators and the measured dynamical constants."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, Grid, Trajectory, gradient
from .norms import NormSpec, center_weights, kernel_integrals, norm, time_integrate
from .pde import BlowUpError, ProblemSpec, SolverConfig, integrate_batch
from .random_fields import random_field
from .weights import Weight, constant_weight

log = logging.getLogger(__name__)

DEFAULT_ELL = 1.0


def semigroup_apply(u0: Field, t: float, ps: ProblemSpec, cfg: SolverConfig) -> Field:
    """S(t) u0."""
    if t < 0:
        raise ValueError("t must be >= 0")
    n = cfg.steps_for(t)
    if n == 0:
        return Field(u0.grid, u0.values.copy())
    _, snaps = integrate_batch(u0.values, u0.grid, ps, cfg, n, record_every=n)
    return Field(u0.grid, snaps[-1])


def endpoint(chi: Trajectory) -> Field:
    return chi.snapshot(len(chi) - 1)


def trajectory_map(chi: Trajectory, t: float, ps: ProblemSpec, cfg: SolverConfig) -> Trajectory:
    """L(t) chi: continue the solution from chi's endpoint and re-window by t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    n = cfg.steps_for(t)
    if n == 0:
        return chi
    if n % cfg.record_every:
        raise ValueError("t must be a multiple of the recording interval")
    t_end = float(chi.times[-1])
    times, snaps = integrate_batch(chi.values[-1], chi.grid, ps, cfg, n, t0=t_end)
    all_t = np.concatenate([chi.times, times[1:]])
    all_v = np.concatenate([chi.values, snaps[1:]])
    start = float(chi.times[0]) + t
    full = Trajectory(chi.grid, all_t, all_v, dict(chi.meta))
    return full.window(start, start + chi.ell)


# ------------------------------------------------------------ dissipation

def weighted_l2_squares(values: np.ndarray, grid: Grid, weight: Weight) -> np.ndarray:
    """||u||^2 in L^2_{b,phi} for arrays with leading batch axes."""
    local = grid.tiling.cube_integrals(values ** 2)
    return np.max(local * center_weights(grid, weight), axis=-1)


def scaled_initial_data(grid: Grid, targets, seed: int = 0, kind: str = "mixture") -> list[Field]:
    """Random fields rescaled to the requested L^2_b norms."""
    rng = np.random.default_rng(seed)
    out = []
    for target in targets:
        f = random_field(grid, rng, kind)
        cur = np.sqrt(weighted_l2_squares(f.values, grid, constant_weight()))
        out.append(Field(grid, f.values * (target / cur)))
    return out


@dataclass
class DissipationFit:
    sigma: float
    c3: float
    worst_violation: float
    times: np.ndarray
    norms_sq: np.ndarray          # (members, nt)
    w12_window_sup: float
    lp_window_sup: float
    sigma_grid: np.ndarray = field(repr=False, default=None)
    c3_curve: np.ndarray = field(repr=False, default=None)

    @property
    def absorbing_radius(self) -> float:
        return absorbing_radius(self.sigma, self.c3)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "c3": self.c3, "K": self.absorbing_radius,
                "worst_violation": self.worst_violation,
                "w12_window_sup": self.w12_window_sup, "lp_window_sup": self.lp_window_sup}


def absorbing_radius(sigma: float, c3: float, margin: float = 1.1) -> float:
    return margin * float(np.sqrt(c3 / (1.0 - np.exp(-sigma))))


def envelope_violation(times: np.ndarray, norms_sq: np.ndarray, sigma: float, c3: float) -> float:
    """max over members and t of ||u(t)||^2 - ||u0||^2 e^{-sigma t} - c3."""
    env = norms_sq[:, :1] * np.exp(-sigma * (times - times[0]))[None, :] + c3
    return float(np.max(norms_sq - env))


def evolve_ensemble(fields, ps: ProblemSpec, cfg: SolverConfig, T: float | None = None,
                    t0: float = 0.0):
    """Advance a list of fields together; returns (times, snapshots[nt, members, ...])."""
    grid = fields[0].grid
    vals = np.stack([f.values for f in fields])
    n = cfg.steps_for(cfg.T if T is None else T)
    return integrate_batch(vals, grid, ps, cfg, n, t0=t0)


def _window_sups(times, local, phi, width=1.0):
    """sup over window starts s (at sample times) of sup_k phi_k int_s^{s+width} local dt."""
    best = 0.0
    tol = 1e-9
    for i, s in enumerate(times):
        j = np.searchsorted(times, s + width - tol)
        if j >= len(times) or times[j] > s + width + tol:
            break
        seg = time_integrate(local[i:j + 1], times[i:j + 1])
        best = max(best, float(np.max(seg * phi)))
    return best


def estimate_dissipation(ensemble, ps: ProblemSpec, cfg: SolverConfig, weight: Weight,
                         T: float | None = None, sigma_grid: np.ndarray | None = None,
                         floor_tol: float = 1e-3) -> DissipationFit:
    """Fit ||u(t)||^2 <= ||u0||^2 e^{-sigma t} + c3 over an ensemble.

    For each sigma on the grid the smallest feasible c3 is exact and
    nondecreasing in sigma.  The returned sigma is the smallest one whose c3
    reaches the long-time floor (the largest squared norm over the second
    half of the run) to relative ``floor_tol``; larger sigma would only be
    constrained by the sampled transients and does not carry over to new data.
    """
    if not ensemble:
        raise ValueError("ensemble must be nonempty")
    if weight.mu >= 1:
        raise ValueError("weight growth rate must be < 1")
    grid = ensemble[0].grid
    times, snaps = evolve_ensemble(ensemble, ps, cfg, T)
    norms_sq = weighted_l2_squares(snaps, grid, weight).T          # (members, nt)
    if sigma_grid is None:
        sigma_grid = np.geomspace(1e-3, 20.0, 400)
    rel = times - times[0]
    c3s = np.array([max(0.0, float(np.max(norms_sq - norms_sq[:, :1] * np.exp(-s * rel)[None, :])))
                    for s in sigma_grid])
    floor = float(norms_sq[:, rel >= 0.5 * rel[-1]].max())
    reach = np.flatnonzero(c3s >= (1 - floor_tol) * floor)
    best = int(reach[0]) if len(reach) else len(sigma_grid) - 1
    sigma, c3 = float(sigma_grid[best]), max(float(c3s[best]), floor)

    phi = center_weights(grid, weight)
    g = gradient(snaps, grid)
    w12_local = grid.tiling.cube_integrals(snaps ** 2 + (g ** 2).sum(axis=0))
    lp_local = grid.tiling.cube_integrals(np.abs(snaps) ** ps.p)
    w12 = max(_window_sups(times, w12_local[:, m], phi) for m in range(len(ensemble)))
    lp = max(_window_sups(times, lp_local[:, m], phi) for m in range(len(ensemble)))
    return DissipationFit(sigma, c3, envelope_violation(times, norms_sq, sigma, c3), times,
                          norms_sq, w12, lp, sigma_grid, c3s)


# ------------------------------------------------------------ contraction

@dataclass
class ContractionReport:
    times: np.ndarray
    c2: np.ndarray               # empirical constant as a function of T
    per_pair: np.ndarray         # (pairs, nt)

    def at(self, T: float) -> float:
        i = int(np.argmin(np.abs(self.times - self.times[0] - T)))
        return float(self.c2[i])


def _interior_centers(grid: Grid, margin: float) -> np.ndarray:
    c = grid.tiling.centers
    return np.flatnonzero(np.all(np.abs(c) <= grid.box_half_width - margin, axis=1))


def estimate_contraction(pairs, ps: ProblemSpec, cfg: SolverConfig, T: float,
                         margin: float = 4.0) -> ContractionReport:
    """Empirical Gronwall constant of the difference of two solutions.

    Reports, for every recorded time T', the sup over pairs and lattice points
    x_bar (kept ``margin`` away from the box edge) of

        [sup_{t<=T'} int |w(t)|^2 e^{-|x-x_bar|} + kappa int_0^T' int |grad w|^2 e^{-|x-x_bar|}]
        / int |w(0)|^2 e^{-|x-x_bar|}.
    """
    pairs = [(a, b) for a, b in pairs if np.any(a.values != b.values)]
    if not pairs:
        raise ValueError("all pairs are identical")
    grid = pairs[0][0].grid
    fields = [a for a, _ in pairs] + [b for _, b in pairs]
    times, snaps = evolve_ensemble(fields, ps, cfg, T)
    P = len(pairs)
    w = snaps[:, :P] - snaps[:, P:]
    sel = _interior_centers(grid, margin)
    if len(sel) == 0:
        raise ValueError("margin leaves no lattice point inside the box")
    I = kernel_integrals(w ** 2, grid)[..., sel]                      # (nt, P, k)
    G = kernel_integrals((gradient(w, grid) ** 2).sum(axis=0), grid)[..., sel]
    dt = np.diff(times)[:, None, None]
    cumG = np.concatenate([np.zeros_like(G[:1]), np.cumsum(0.5 * dt * (G[1:] + G[:-1]), axis=0)])
    run_max = np.maximum.accumulate(I, axis=0)
    ratio = (run_max + ps.kappa * cumG) / I[:1]
    per_pair = ratio.max(axis=-1).T
    return ContractionReport(times, per_pair.max(axis=0), per_pair)


# ------------------------------------------------------------ smoothing

@dataclass
class SmoothingReport:
    K1: float
    K2: float
    rows: list


def time_difference(traj: Trajectory) -> Trajectory:
    """Backward difference quotient, sampled at times[1:]."""
    if len(traj) < 3:
        raise ValueError("need at least 3 samples for a differenced trajectory")
    dv = np.diff(traj.values, axis=0) / np.diff(traj.times).reshape((-1,) + (1,) * traj.grid.dim)
    return Trajectory(traj.grid, traj.times[1:], dv)


def estimate_smoothing(pairs, weight: Weight, ell: float = DEFAULT_ELL) -> SmoothingReport:
    """K1, K2 from solution pairs recorded on [t0, t0 + 2 ell]."""
    rows = []
    for i, (a, b) in enumerate(pairs):
        t0 = float(a.times[0])
        d = a - b
        first = d.window(t0, t0 + ell)
        second = d.window(t0 + ell, t0 + 2 * ell)
        base = norm(first, NormSpec("traj_L2L2", weight=weight))
        if base == 0.0:
            continue
        k1 = norm(second, NormSpec("traj_L2W12", weight=weight)) / base
        k2 = norm(time_difference(second), NormSpec("traj_L2Wm12", weight=weight)) / base
        rows.append((i, base, k1, k2))
    if not rows:
        raise ValueError("all pairs are identical")
    return SmoothingReport(max(r[2] for r in rows), max(r[3] for r in rows), rows)


def solution_pairs(initial_pairs, ps: ProblemSpec, cfg: SolverConfig, ell: float = DEFAULT_ELL):
    """Evolve pairs of fields over [0, 2 ell] and return trajectory pairs."""
    fields = [a for a, _ in initial_pairs] + [b for _, b in initial_pairs]
    times, snaps = evolve_ensemble(fields, ps, cfg, 2 * ell)
    grid = fields[0].grid
    P = len(initial_pairs)
    meta = {"problem": ps.digest(), "config": cfg.to_dict()}
    return [(Trajectory(grid, times, snaps[:, i], meta), Trajectory(grid, times, snaps[:, P + i], meta))
            for i in range(P)]


# ------------------------------------------------------------ attractor sample

@dataclass
class AttractorSample:
    trajectories: list[Trajectory]
    dropped: list[int]
    radius: float
    burn_in: float
    ell: float
    max_l2b: float

    def to_dict(self) -> dict:
        return {"members": len(self.trajectories), "dropped": self.dropped, "K": self.radius,
                "burn_in": self.burn_in, "ell": self.ell, "max_l2b_after_burn_in": self.max_l2b,
                "note": "finite trajectory sample; covering numbers are lower bounds for the attractor"}


def _evolve_guarded(vals, grid, ps, cfg, n, t0, record_every):
    try:
        return integrate_batch(vals, grid, ps, cfg, n, t0=t0, record_every=record_every), []
    except (BlowUpError, RuntimeError):
        if len(vals) == 1:
            raise
    good, bad, runs = [], [], []
    for i in range(len(vals)):
        try:
            runs.append(integrate_batch(vals[i:i + 1], grid, ps, cfg, n, t0=t0, record_every=record_every))
            good.append(i)
        except (BlowUpError, RuntimeError):
            bad.append(i)
    times = runs[0][0] if runs else np.array([t0])
    snaps = np.concatenate([r[1] for r in runs], axis=1) if runs else np.zeros((1, 0) + grid.shape)
    return (times, snaps), bad


def sample_attractor(grid: Grid, ps: ProblemSpec, cfg: SolverConfig, ensemble_size: int,
                     radius: float, burn_in: float, ell: float = DEFAULT_ELL, seed: int = 0,
                     batch: int = 256, kind: str = "mixture") -> AttractorSample:
    """Finite sample of short trajectories on the attractor.

    Initial fields are drawn in the L^2_b ball of the given radius, evolved for
    ``burn_in`` and then recorded over a window of length ``ell``.
    """
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be >= 1")
    rng = np.random.default_rng(seed)
    inits = []
    for _ in range(ensemble_size):
        f = random_field(grid, rng, kind)
        cur = np.sqrt(weighted_l2_squares(f.values, grid, constant_weight()))
        inits.append(f.values * (radius * rng.uniform() / cur))
    inits = np.stack(inits)
    nb, nl = cfg.steps_for(burn_in), cfg.steps_for(ell)
    meta = {"problem": ps.digest(), "config": cfg.to_dict(), "burn_in": burn_in, "ell": ell}
    trajs, dropped = [], []
    max_norm = 0.0
    for s in range(0, ensemble_size, batch):
        chunk = inits[s:s + batch]
        (_, warm), bad = _evolve_guarded(chunk, grid, ps, cfg, nb, 0.0, max(nb, 1))
        alive = [i for i in range(len(chunk)) if i not in bad]
        (times, snaps), bad2 = _evolve_guarded(warm[-1], grid, ps, cfg, nl, burn_in, cfg.record_every)
        alive2 = [alive[j] for j in range(len(alive)) if j not in bad2]
        dropped += [s + i for i in bad] + [s + alive[j] for j in bad2]
        kept = [j for j in range(len(alive)) if j not in bad2]
        for col, j in enumerate(kept):
            v = snaps[:, col]
            max_norm = max(max_norm, float(np.sqrt(weighted_l2_squares(v, grid, constant_weight()).max())))
            trajs.append(Trajectory(grid, times, v, dict(meta, member=s + alive2[col])))
    if dropped:
        log.warning("dropped %d members after blow-up", len(dropped))
    return AttractorSample(trajs, sorted(dropped), radius, burn_in, ell, max_norm)

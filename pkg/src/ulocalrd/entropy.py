"""Coverings, epsilon-entropy and the localized entropy experiments.

Centres of every covering are taken from the input set.  For a set K the
in-set count at radius eps sits between the true minimal count at eps and at
eps/2, so all reported entropies are those of the finite sample.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .grid import Ball, Field, Grid, Trajectory, cubes_intersecting, cubes_outside
from .norms import NormSpec, center_weights, norm
from .weights import Weight, make_localized_weight

log = logging.getLogger(__name__)

MAX_SAMPLE = 4096
BRUTE_FORCE_CAP = 20
SAMPLE_CAVEAT = ("entropy of a finite trajectory sample: a lower bound for the covering "
                 "complexity of the attractor, not the attractor entropy itself")


# ------------------------------------------------------------ distances

def _quadrature_features(items: Sequence[Field | Trajectory]) -> tuple[np.ndarray, Grid]:
    """Per-cube feature vectors whose dot products are local L2 inner products.

    Returns an array (items, cubes, features) such that
    ``F[i, k] @ F[j, k] = int_{C_k} (int_t) a_i a_j``.
    """
    grid = items[0].grid
    tiling = grid.tiling
    d, m = grid.dim, grid.nodes_per_unit
    w1 = np.full(m + 1, grid.spacing)
    w1[0] = w1[-1] = 0.5 * grid.spacing
    wx = w1
    for _ in range(d - 1):
        wx = np.multiply.outer(wx, w1)
    if isinstance(items[0], Trajectory):
        t = items[0].times
        wt = np.zeros(len(t))
        wt[:-1] += 0.5 * np.diff(t)
        wt[1:] += 0.5 * np.diff(t)
        vals = np.stack([it.values for it in items])                    # (n, nt, ...)
        blocks = tiling.cube_blocks(vals)                               # (n, nt, K, ...)
        blocks = np.moveaxis(blocks, 2, 1)                              # (n, K, nt, ...)
        sw = np.sqrt(np.multiply.outer(wt, wx))
        F = blocks * sw
    else:
        vals = np.stack([it.values for it in items])
        F = tiling.cube_blocks(vals) * np.sqrt(wx)
    return F.reshape(F.shape[0], F.shape[1], -1), grid


def local_difference_squares(items, cubes=None):
    """Generator over cubes k of the matrix ``int_{C_k}|a_i - a_j|^2`` (time-integrated)."""
    F, grid = _quadrature_features(items)
    cubes = range(F.shape[1]) if cubes is None else cubes
    for k in cubes:
        Fk = F[:, k]
        s = (Fk * Fk).sum(axis=1)
        G = Fk @ Fk.T
        D = s[:, None] + s[None, :] - 2.0 * G
        np.maximum(D, 0.0, out=D)
        np.fill_diagonal(D, 0.0)
        yield k, D


def _fast_family(metric: NormSpec) -> bool:
    return metric.family in ("traj_L2L2",) or (metric.family == "Lp_b" and metric.p == 2.0)


def pairwise_distances(items, metric: NormSpec) -> np.ndarray:
    """Symmetric distance matrix in the given (semi)norm."""
    n = len(items)
    if n > MAX_SAMPLE:
        raise ValueError(f"sample of {n} exceeds the cap of {MAX_SAMPLE}")
    if _fast_family(metric):
        grid = items[0].grid
        tiling = grid.tiling
        sel = (np.arange(tiling.count) if metric.restriction is None
               else cubes_intersecting(tiling, metric.restriction))
        if len(sel) == 0:
            raise ValueError("restriction meets no cube")
        phi = center_weights(grid, metric.weight)
        best = np.zeros((n, n))
        for k, D in local_difference_squares(items, sel):
            np.maximum(best, phi[k] * D, out=best)
        return np.sqrt(best)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = norm(items[i] - items[j], metric)
    return out


def per_cube_max_difference(items) -> np.ndarray:
    """max over pairs of the local squared difference, per cube."""
    return np.array([D.max() for _, D in local_difference_squares(items)])


# ------------------------------------------------------------ coverings

@dataclass
class CoveringResult:
    epsilon: float
    centers: list[int]
    assignment: np.ndarray
    metric: dict
    region: dict | None = None
    verified: bool = False

    @property
    def count(self) -> int:
        return len(self.centers)

    @property
    def entropy(self) -> float:
        return math.log(self.count) if self.count else 0.0

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "N": self.count, "H": self.entropy,
                "centers": list(map(int, self.centers)), "metric": self.metric,
                "region": self.region, "verified": self.verified}


def verify_cover(dist: np.ndarray, centers, epsilon: float) -> bool:
    """Independent check that every item lies within epsilon of a centre."""
    if len(dist) == 0:
        return True
    if not len(centers):
        return False
    return bool(np.all(dist[:, list(centers)].min(axis=1) <= epsilon))


def _metric_info(metric: NormSpec | None):
    if metric is None:
        return {}, None
    info = metric.to_dict()
    return info, info.get("restriction")


def greedy_cover(items, metric: NormSpec | None, epsilon: float,
                 distances: np.ndarray | None = None,
                 norms: np.ndarray | None = None) -> CoveringResult:
    """Farthest-point-first epsilon-net with centres in the input set.

    Starts from the item of largest norm; ties go to the lowest index.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    dist = pairwise_distances(items, metric) if distances is None else distances
    n = len(dist)
    if n == 0:
        raise ValueError("items must be nonempty")
    if norms is None:
        norms = np.array([norm(it, metric) for it in items]) if items is not None else np.zeros(n)
    first = int(np.argmax(norms))
    centers = [first]
    mind = dist[first].copy()
    assign = np.zeros(n, dtype=int)
    while True:
        far = int(np.argmax(mind))
        if mind[far] <= epsilon:
            break
        centers.append(far)
        closer = dist[far] < mind
        assign[closer] = len(centers) - 1
        mind = np.minimum(mind, dist[far])
    info, region = _metric_info(metric)
    return CoveringResult(epsilon, centers, assign, info, region, verify_cover(dist, centers, epsilon))


def brute_force_cover(items, metric: NormSpec | None, epsilon: float,
                      distances: np.ndarray | None = None) -> CoveringResult:
    """Exact minimum in-set covering by exhaustive search (at most 20 items)."""
    n = len(items) if items is not None else len(distances)
    if n > BRUTE_FORCE_CAP:
        raise ValueError(f"brute force is capped at {BRUTE_FORCE_CAP} items, got {n}")
    dist = pairwise_distances(items, metric) if distances is None else distances
    masks = [sum(1 << j for j in range(n) if dist[i, j] <= epsilon) for i in range(n)]
    full = (1 << n) - 1
    for k in range(1, n + 1):
        for combo in itertools.combinations(range(n), k):
            acc = 0
            for i in combo:
                acc |= masks[i]
            if acc == full:
                centers = list(combo)
                assign = np.argmin(dist[:, centers], axis=1)
                info, region = _metric_info(metric)
                return CoveringResult(epsilon, centers, assign, info, region,
                                      verify_cover(dist, centers, epsilon))
    raise AssertionError("unreachable: every item covers itself")


def covering_numbers(dist: np.ndarray, epsilons, norms: np.ndarray | None = None) -> np.ndarray:
    """Greedy in-set covering counts for several radii from one distance matrix."""
    norms = np.zeros(len(dist)) if norms is None else norms
    return np.array([greedy_cover(None, None, e, distances=dist, norms=norms).count for e in epsilons])


# ------------------------------------------------------------ localization

def localization_radius(R: float, epsilon: float, c1: float, eps0: float | None = None) -> float:
    """R(eps) = R + c1 (1 + ln(1/eps))."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if eps0 is not None and epsilon >= eps0:
        warnings.warn(f"epsilon={epsilon} is outside the localization regime (eps0={eps0})")
    return R + c1 * (1.0 + math.log(1.0 / epsilon))


def analytic_c1_bound(M: float, ell: float, dim: int) -> float:
    """A c1 that provably suffices when all items satisfy sup_t ||chi(t)||_{L^2_b} <= M.

    Local differences obey ``int_0^ell ||chi_1 - chi_2||^2_{L^2(C_k)} <= 4 M^2 ell`` and the
    cut-off weight decays like ``exp(-(r - R - sqrt d)/2)``.
    """
    return max(4.0, math.sqrt(dim) + 2.0 * math.log(max(4.0 * M * M * ell, 1.0)))


def _center_radii(grid: Grid, x0) -> np.ndarray:
    return np.linalg.norm(grid.tiling.centers - np.asarray(x0, dtype=float), axis=1)


def tail_radius(local_max: np.ndarray, weight: Weight, grid: Grid, epsilon: float) -> float:
    """Smallest radius beyond which every cube's weighted local difference is <= eps^2."""
    x0 = weight.params["x0"]
    r = _center_radii(grid, x0)
    bad = weight(grid.tiling.centers) * local_max > epsilon ** 2
    return float(r[bad].max()) if bad.any() else 0.0


def calibrate_c1(sample, weight: Weight, epsilons, local_max: np.ndarray | None = None) -> float:
    """Smallest c1 making the weighted tail beyond R(eps) at most eps^2 for all pairs and eps."""
    if weight.kind != "localized":
        raise ValueError("calibration needs the localized cut-off weight")
    grid = sample[0].grid
    R = weight.params["R"]
    M = per_cube_max_difference(sample) if local_max is None else local_max
    c1 = 0.0
    for eps in epsilons:
        need = tail_radius(M, weight, grid, eps)
        c1 = max(c1, (need - R) / (1.0 + math.log(1.0 / eps)))
    reach = R + c1 * (1.0 + math.log(1.0 / min(epsilons)))
    if reach > grid.box_half_width - 1.0:
        raise ValueError(f"box half width {grid.box_half_width} cannot hold R(eps_min)={reach:.3g}; "
                         "use a larger box")
    return c1


def tail_seminorm_squares(sample, weight: Weight, outer: float) -> np.ndarray:
    """Per pair: sup over cubes with centre beyond ``outer`` of phi(x_k) * local difference."""
    grid = sample[0].grid
    x0 = weight.params["x0"]
    idx = cubes_outside(grid.tiling, Ball(tuple(x0), outer))
    phi = center_weights(grid, weight)
    best = np.zeros((len(sample), len(sample)))
    for k, D in local_difference_squares(sample, idx):
        np.maximum(best, phi[k] * D, out=best)
    return best


# ------------------------------------------------------------ recurrence

@dataclass
class RecurrenceRow:
    alpha: float
    H_alpha: float
    H_half: float
    increment: float
    base: float
    saturated: bool


def recurrence_check(sample, x0, R: float, alphas, c1: float,
                     distances: np.ndarray | None = None) -> tuple[float, list[RecurrenceRow]]:
    """Fit the smallest c0 with H(alpha/2) <= H(alpha) + c0 (R + c1 ln(1/alpha))^d."""
    weight = make_localized_weight(x0, R)
    metric = NormSpec("traj_L2L2", weight=weight)
    dist = pairwise_distances(sample, metric) if distances is None else distances
    n = len(dist)
    d = sample[0].grid.dim
    cap = math.log(n)
    rows = []
    for a in alphas:
        H1 = math.log(greedy_cover(None, None, a, distances=dist, norms=np.zeros(n)).count)
        H2 = math.log(greedy_cover(None, None, a / 2, distances=dist, norms=np.zeros(n)).count)
        base = (R + c1 * math.log(1.0 / a)) ** d
        rows.append(RecurrenceRow(a, H1, H2, H2 - H1, base, H2 >= cap - 1e-12))
    usable = [r for r in rows if not r.saturated and r.base > 0]
    c0 = max([r.increment / r.base for r in usable], default=0.0)
    c0 = max(c0, 0.0)
    return c0, rows


# ------------------------------------------------------------ scaling

@dataclass
class ScalingFit:
    c0: float
    c1: float
    d_hat: float
    c0_free: float
    rows: list[dict]
    majorizes: bool
    d_hat_onesided: float = float("nan")
    saturated: int = 0
    caveat: str = SAMPLE_CAVEAT

    def to_dict(self) -> dict:
        return {"c0": self.c0, "c1": self.c1, "d_hat": self.d_hat, "c0_free": self.c0_free,
                "d_hat_onesided": self.d_hat_onesided, "majorizes": self.majorizes,
                "saturated_rows": self.saturated, "caveat": self.caveat}


class SaturationError(ValueError):
    pass


def entropy_table(sample, x0, R_list, eps_list, c1: float) -> list[dict]:
    """H_eps of the sample under the cut-off-weighted trajectory norm over an (R, eps) sweep."""
    n = len(sample)
    d = sample[0].grid.dim
    rows = []
    for R in R_list:
        metric = NormSpec("traj_L2L2", weight=make_localized_weight(x0, R))
        dist = pairwise_distances(sample, metric)
        for eps in eps_list:
            cov = greedy_cover(None, metric, eps, distances=dist, norms=np.zeros(n))
            L = math.log(1.0 / eps)
            bound_base = (R + c1 * L) ** d * L
            rows.append({"epsilon": eps, "R": R, "N": cov.count, "H": cov.entropy,
                         "base": bound_base, "verified": cov.verified})
    return rows


def fit_scaling(rows: list[dict], c1: float, d: int, sample_size: int,
                guard: bool = True) -> ScalingFit:
    """Envelope constants for H <= c0 (R + c1 ln(1/eps))^d ln(1/eps).

    ``d_hat`` is the plain log-space least-squares exponent; ``d_hat_onesided``
    minimizes the total log gap of the tightest majorant instead.  Rows with
    H >= ln|sample| - 1 are flagged as saturated and left out of both exponent
    fits whenever at least three unsaturated rows remain.
    """
    cap = math.log(sample_size) - 1.0
    if guard and any(r["H"] >= cap for r in rows):
        raise SaturationError(f"entropy reached ln|sample| - 1 = {cap:.3g}; use a larger sample")
    if any(r["epsilon"] >= 1.0 for r in rows):
        raise ValueError("the scaling law needs epsilon < 1")
    for r in rows:
        r["saturated"] = bool(r["H"] >= cap)
    # fixed exponent: one-sided log fit is the tightest majorant
    c0 = max(r["H"] / r["base"] for r in rows)
    for r in rows:
        r["bound"] = c0 * r["base"]
        r["slack"] = r["bound"] - r["H"]
    majorizes = all(r["slack"] >= -1e-12 for r in rows)

    pos = [r for r in rows if r["H"] > 0 and not r["saturated"]]
    if len(pos) < 3:
        pos = [r for r in rows if r["H"] > 0]
    if len(pos) >= 3:
        x = np.array([math.log(r["R"] + c1 * math.log(1 / r["epsilon"])) for r in pos])
        y = np.array([math.log(r["H"]) - math.log(math.log(1 / r["epsilon"])) for r in pos])
        A = np.stack([x, np.ones_like(x)], axis=1)
        (d_hat, _), *_ = np.linalg.lstsq(A, y, rcond=None)
        c0_free = float(np.exp(np.max(y - d_hat * x)))
        gap = lambda e: float(np.sum(np.max(y - e * x) - (y - e * x)))
        d_one = float(minimize_scalar(gap, bounds=(-10.0, 10.0), method="bounded").x)
    else:
        d_hat = c0_free = d_one = float("nan")
    return ScalingFit(float(c0), float(c1), float(d_hat), c0_free, rows, majorizes, d_one,
                      sum(r["saturated"] for r in rows))


def calibrate_c1_sweep(sample, x0, R_list, epsilons) -> float:
    """One c1 valid for every cut-off radius of the sweep."""
    M = per_cube_max_difference(sample)
    return max(calibrate_c1(sample, make_localized_weight(x0, R), epsilons, local_max=M)
               for R in R_list)


def entropy_scaling_experiment(sample, x0, R_list, eps_list, c1: float | None = None,
                               guard: bool = True) -> ScalingFit:
    """Measure H over an (R, eps) sweep and fit c0 (R + c1 ln(1/eps))^d ln(1/eps)."""
    d = sample[0].grid.dim
    if c1 is None:
        c1 = calibrate_c1_sweep(sample, x0, R_list, eps_list)
    rows = entropy_table(sample, x0, R_list, eps_list, c1)
    return fit_scaling(rows, c1, d, len(sample), guard=guard)


# ------------------------------------------------------------ Aubin-Lions

def w_norm(traj: Trajectory, weight: Weight) -> float:
    """||chi||_{L^2_b(W^{1,2})} + ||d_t chi||_{L^2_b(W^{-1,2})}."""
    from .dynamics import time_difference
    return (norm(traj, NormSpec("traj_L2W12", weight=weight))
            + norm(time_difference(traj), NormSpec("traj_L2Wm12", weight=weight)))


def random_local_trajectory(grid: Grid, rng: np.random.Generator, ell: float = 1.0,
                            samples: int = 6, density: float = 1.0) -> Trajectory:
    """Independent localized bumps (about ``density`` per unit volume) with random time modulation."""
    hw = grid.box_half_width
    count = rng.poisson(density * grid.length ** grid.dim)
    x = grid.coords
    t = np.linspace(0.0, ell, samples)
    vals = np.zeros((samples,) + grid.shape)
    for _ in range(count):
        c = rng.uniform(-hw, hw, size=grid.dim)
        width = rng.uniform(0.2, 0.5)
        prof = np.exp(-((x - c) ** 2).sum(-1) / (2 * width ** 2))
        amp = rng.normal() + rng.normal() * np.cos(rng.uniform(0, np.pi / ell) * t + rng.uniform(0, 2 * np.pi))
        vals += amp.reshape((-1,) + (1,) * grid.dim) * prof
    return Trajectory(grid, t, vals)


@dataclass
class AubinLionsReport:
    rows: list[dict]
    slope: float
    quad_coef: float
    quad_stderr: float
    r: float
    theta: float

    def linear_growth(self, z: float = 2.0) -> bool:
        return self.slope > 0 and abs(self.quad_coef) <= z * self.quad_stderr


def ball_volume(dim: int, R: float) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * R ** dim


def aubin_lions_samples(grid: Grid, r: float, n_samples: int, weight: Weight,
                        ell: float = 1.0, seed: int = 0, samples: int = 6,
                        density: float = 1.0) -> list[Trajectory]:
    """Random trajectories in the W_{b,phi}(Q) ball of radius r (radius fraction uniform)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_samples):
        tr = random_local_trajectory(grid, rng, ell, samples, density)
        wn = w_norm(tr, weight)
        out.append(tr.scaled(r * rng.uniform() / wn) if wn > 0 else tr)
    return out


def aubin_lions_experiment(trajs, r: float, theta: float, x0, R_list, weight: Weight,
                           replicate_ids=None) -> AubinLionsReport:
    """H of theta*r coverings of the sample in the seminorm restricted to balls of radius R.

    ``replicate_ids`` splits the sample into independent replicates; the
    quadratic-coefficient standard error comes from their scatter.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    grid = trajs[0].grid
    groups = [list(range(len(trajs)))] if replicate_ids is None else [
        [i for i, g in enumerate(replicate_ids) if g == gid] for gid in sorted(set(replicate_ids))]
    rows = []
    for gid, members in enumerate(groups):
        sub = [trajs[i] for i in members]
        for R in R_list:
            region = Ball(tuple(float(c) for c in np.atleast_1d(x0)), float(R))
            metric = NormSpec("traj_L2L2", weight=weight, restriction=region)
            dist = pairwise_distances(sub, metric)
            cov = greedy_cover(None, metric, theta * r, distances=dist, norms=np.zeros(len(sub)))
            rows.append({"replicate": gid, "R": R, "vol": ball_volume(grid.dim, R),
                         "cubes": len(cubes_intersecting(grid.tiling, region)),
                         "N": cov.count, "H": cov.entropy, "verified": cov.verified})
    v = np.array([row["vol"] for row in rows])
    H = np.array([row["H"] for row in rows])
    slope = float(np.polyfit(v, H, 1)[0])
    A = np.stack([v ** 2, v, np.ones_like(v)], axis=1)
    coef, res, rank, _ = np.linalg.lstsq(A, H, rcond=None)
    dof = max(len(H) - 3, 1)
    resid = H - A @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv(A.T @ A)
    return AubinLionsReport(rows, slope, float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0))), r, theta)

"""Reaction-diffusion solver  u_t - div a(grad u) + f(u) + h(x, grad u) = g.

The linear part ``kappa_lin * Lap`` of the flux is treated implicitly (backward
Euler); the flux remainder, the reaction, the convection and the forcing are
explicit.  All array routines accept leading batch axes, so an ensemble is
advanced as one array.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .grid import Field, Grid, Trajectory, divergence, gradient, integrate, laplacian
from .norms import NormSpec, ulocal_norm

log = logging.getLogger(__name__)

GRAD_CLAMP = 1e6


class BlowUpError(RuntimeError):
    def __init__(self, time: float, msg: str = ""):
        super().__init__(msg or f"non-finite state at t={time:.6g}")
        self.time = time


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Nonlinearities with their declared structural constants.

    ``flux`` maps gradients of shape ``(d, ...)`` to the same shape;
    ``convection`` maps ``(coords, grad)`` to a scalar field;
    ``forcing`` is ``None``, a static array on the grid, or ``g(coords, t)``.
    """
    flux: Callable[[np.ndarray], np.ndarray]
    reaction: Callable[[np.ndarray], np.ndarray]
    kappa: float
    flux_lipschitz: float
    linear_coeff: float
    p: float
    constants: dict
    convection: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    convection_lipschitz: float = 0.0
    convection_bound: float = 0.0
    forcing: object = None
    description: dict = field(default_factory=dict)

    @property
    def flux_is_linear(self) -> bool:
        return self.description.get("diffusion") == "linear"

    def forcing_at(self, grid: Grid, t: float) -> np.ndarray | float:
        g = self.forcing
        if g is None:
            return 0.0
        if callable(g):
            return g(grid.coords, t)
        if isinstance(g, Field):
            return g.values
        return np.asarray(g)

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.description, sort_keys=True, default=str).encode())
        if isinstance(self.forcing, (np.ndarray, Field)):
            arr = self.forcing.values if isinstance(self.forcing, Field) else self.forcing
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()[:16]


def make_problem(diffusion: str = "linear", reaction: str = "cubic", *,
                 kappa: float = 1.0, beta: float = 0.5, gamma: float = 1.0,
                 lam: float = 1.0, velocity=None, forcing=None) -> ProblemSpec:
    """Build a problem from presets.

    diffusion: ``linear`` (a = kappa xi), ``nonlinear`` (kappa xi + beta xi/sqrt(1+|xi|^2)),
    ``saturating`` (xi/(1+|xi|), violates the coercivity bound).
    reaction: ``cubic`` (u^3 - gamma u), ``linear`` (lam u, test only), ``none``,
    ``negative_cubic`` (-u^3, violates the growth bound).
    """
    desc = {"diffusion": diffusion, "reaction": reaction}
    if diffusion == "linear":
        flux = lambda g: kappa * g
        kap, lip, lin = kappa, 1.0, kappa
        desc["kappa"] = kappa
    elif diffusion == "nonlinear":
        def flux(g):
            return kappa * g + beta * g / np.sqrt(1.0 + (g ** 2).sum(axis=0))
        kap, lin = kappa, kappa
        lip = (kappa + beta) / kappa
        desc.update(kappa=kappa, beta=beta)
    elif diffusion == "saturating":
        def flux(g):
            return g / (1.0 + np.sqrt((g ** 2).sum(axis=0)))
        kap, lip, lin = 1e-3, 1000.0, 0.0
    else:
        raise ValueError(f"unknown diffusion preset {diffusion!r}")

    if reaction == "cubic":
        react = lambda u: u ** 3 - gamma * u
        p = 4.0
        consts = {"c2": 1.0 + gamma, "C": gamma, "c4": 0.5, "c5": 0.5 * gamma ** 2 + 1e-12, "c6": 1.0}
        desc["gamma"] = gamma
    elif reaction == "linear":
        react = lambda u: lam * u
        p = 2.0
        consts = {"c2": abs(lam), "C": max(-lam, 0.0), "c4": 0.0, "c5": 0.0, "c6": abs(lam)}
        desc["lam"] = lam
    elif reaction == "none":
        react = lambda u: np.zeros_like(u)
        p = 2.0
        consts = {"c2": 0.0, "C": 0.0, "c4": 0.0, "c5": 0.0, "c6": 0.0}
    elif reaction == "negative_cubic":
        react = lambda u: -u ** 3
        p = 4.0
        consts = {"c2": 3.0, "C": 0.0, "c4": 0.5, "c5": 1.0, "c6": 1.0}
    else:
        raise ValueError(f"unknown reaction preset {reaction!r}")

    conv, clip = None, 0.0
    if velocity is not None:
        v = np.asarray(velocity, dtype=float)

        def advect(x, g):
            return np.tensordot(v, g, axes=(0, 0))
        conv = advect
        clip = float(np.linalg.norm(v))
        desc["velocity"] = v.tolist()

    if forcing is not None and not callable(forcing):
        desc["forcing"] = "array"
    elif callable(forcing):
        desc["forcing"] = getattr(forcing, "__name__", "callable")
    return ProblemSpec(flux, react, kap, lip, lin, p, consts, conv, clip, 0.0, forcing, desc)


# ------------------------------------------------------------ hypotheses

@dataclass
class HypothesisCheck:
    worst_slack: float
    measured: float | None = None

    @property
    def passed(self) -> bool:
        return self.worst_slack <= 1e-9


def _sample_vectors(rng, n, d, top):
    mag = np.exp(rng.uniform(np.log(1e-3), np.log(top), size=n))
    dirs = rng.normal(size=(n, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * mag[:, None]


def verify_hypotheses(ps: ProblemSpec, samples: int = 5000, dim: int = 1,
                      xi_range: float = 1e3, r_range: float = 50.0,
                      seed: int = 0) -> dict[str, HypothesisCheck]:
    """Worst slack per structural inequality by random sampling (<= 0 passes)."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    out: dict[str, HypothesisCheck] = {}

    xi = _sample_vectors(rng, samples, dim, xi_range)
    eta = _sample_vectors(rng, samples, dim, xi_range)
    a = lambda z: ps.flux(z.T).T
    diff = xi - eta
    n2 = (diff ** 2).sum(1)
    keep = n2 > 0
    da = a(xi) - a(eta)
    mono = (da * diff).sum(1)[keep] / n2[keep]
    out["hpa1_zero"] = HypothesisCheck(float(np.abs(a(np.zeros((1, dim)))).max()))
    out["hpa1_monotone"] = HypothesisCheck(float(np.max(ps.kappa - mono)), float(mono.min()))
    lipq = np.linalg.norm(da, axis=1)[keep] / np.sqrt(n2[keep])
    out["hpa2_lipschitz"] = HypothesisCheck(float(np.max(lipq - ps.flux_lipschitz * ps.kappa)),
                                            float(lipq.max() / ps.kappa))
    F = lambda z: (a(z) * z).sum(1)
    mid = F(0.5 * (xi + eta)) - 0.5 * (F(xi) + F(eta))
    scale = 1.0 + np.abs(F(xi)) + np.abs(F(eta))
    out["hpa3_convex"] = HypothesisCheck(float(np.max(mid / scale)))

    f = ps.reaction
    c = ps.constants
    # half the pairs near the origin, where the semi-monotone bound is tight
    near = samples // 2
    r = np.concatenate([rng.uniform(-1, 1, near), rng.uniform(-r_range, r_range, samples - near)])
    s = np.concatenate([rng.uniform(-1, 1, near), rng.uniform(-r_range, r_range, samples - near)])
    out["hpf0_zero"] = HypothesisCheck(float(abs(f(np.array(0.0)))))
    ok = r != s
    q = (f(r) - f(s))[ok] / (r - s)[ok]
    grow = (1.0 + np.abs(r) + np.abs(s))[ok] ** (ps.p - 2)
    out["hpf2_local_lipschitz"] = HypothesisCheck(float(np.max(np.abs(q) / grow - c["c2"])),
                                                  float(np.max(np.abs(q) / grow)))
    out["hpf3_semimonotone"] = HypothesisCheck(float(np.max(-q - c["C"])), float(max(np.max(-q), 0.0)))
    fr = f(r) * r
    rp = np.abs(r) ** ps.p
    lower = c["c4"] * rp - c["c5"] - fr
    upper = fr - c["c6"] * (rp + 1.0)
    out["hpf4_lower"] = HypothesisCheck(float(np.max(lower / (1 + rp))))
    out["hpf4_upper"] = HypothesisCheck(float(np.max(upper / (1 + rp))))

    if ps.convection is not None:
        x = np.zeros((dim, samples))
        hq = np.abs(ps.convection(x, xi.T) - ps.convection(x, eta.T))[keep] / np.sqrt(n2[keep])
        out["hph_lipschitz"] = HypothesisCheck(float(np.max(hq - ps.convection_lipschitz)), float(hq.max()))
        h0 = np.abs(ps.convection(x, np.zeros((dim, samples))))
        out["hph2_bounded"] = HypothesisCheck(float(np.max(h0) - ps.convection_bound), float(np.max(h0)))
    return out


def hypotheses_pass(report: dict[str, HypothesisCheck]) -> bool:
    return all(chk.passed for chk in report.values())


# ------------------------------------------------------------ solver

@dataclass(frozen=True)
class SolverConfig:
    dt: float
    T: float = 1.0
    scheme: str = "imex"
    record_every: int = 1
    seed: int = 0
    check_cfl: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("imex", "fully-explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    def steps_for(self, t: float) -> int:
        n = t / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"time {t} is not a multiple of dt={self.dt}")
        return int(round(n))

    def to_dict(self) -> dict:
        return asdict(self)


def reaction_cfl(ps: ProblemSpec, amplitude: float, samples: int = 2001) -> float:
    """dt bound 0.5 / max|f'| over [-amplitude, amplitude]."""
    amplitude = max(float(amplitude), 1e-3)
    r = np.linspace(-amplitude, amplitude, samples)
    fp = np.abs(np.gradient(ps.reaction(r), r))
    m = float(fp.max())
    return np.inf if m == 0 else 0.5 / m


def explicit_diffusion_bound(ps: ProblemSpec, grid: Grid) -> float:
    return grid.spacing ** 2 / (2 * grid.dim * ps.flux_lipschitz * ps.kappa)


def _batched_pcg(apply, b, diag, x0, dim, rtol=1e-10, maxiter=2000):
    """Jacobi-preconditioned CG on arrays with batch axes; the last ``dim`` axes are spatial."""
    axes = tuple(range(b.ndim - dim, b.ndim))
    x = x0.copy()
    r = b - apply(x)
    z = r / diag
    pdir = z.copy()
    rz = (r * z).sum(axis=axes, keepdims=True)
    bnorm = np.sqrt((b * b).sum(axis=axes, keepdims=True))
    bnorm = np.where(bnorm == 0, 1.0, bnorm)
    for it in range(maxiter):
        rn = np.sqrt((r * r).sum(axis=axes, keepdims=True))
        if np.all(rn <= rtol * bnorm):
            return x, it
        Ap = apply(pdir)
        pAp = (pdir * Ap).sum(axis=axes, keepdims=True)
        alpha = np.where(pAp > 0, rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        x = x + alpha * pdir
        r = r - alpha * Ap
        z = r / diag
        rz_new = (r * z).sum(axis=axes, keepdims=True)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        pdir = z + beta * pdir
        rz = rz_new
    raise SolverError(f"CG did not converge in {maxiter} iterations")


class Stepper:
    """One IMEX (or explicit) step, with the implicit operator factored once."""

    def __init__(self, grid: Grid, ps: ProblemSpec, cfg: SolverConfig):
        self.grid, self.ps, self.cfg = grid, ps, cfg
        self.clamp_events = 0
        self.cg_iterations = 0
        self._mask = grid.boundary_mask
        self._c = cfg.dt * ps.linear_coeff if cfg.scheme == "imex" else 0.0
        self._lu = None
        if self._c > 0 and grid.dim == 1:
            self._lu = scipy.sparse.linalg.splu(self._matrix().tocsc())

    def _matrix(self):
        g = self.grid
        n = g.points_per_axis
        c = self._c / g.spacing ** 2
        A = scipy.sparse.diags([-c * np.ones(n - 1), (1 + 2 * c) * np.ones(n), -c * np.ones(n - 1)],
                               [-1, 0, 1], format="lil")
        A[0, n - 1] = -c
        A[n - 1, 0] = -c
        A = A.tocsr()
        if g.boundary == "dirichlet-zero":
            P = scipy.sparse.diags((~self._mask).astype(float))
            A = P @ A @ P + scipy.sparse.diags(self._mask.astype(float))
        return A

    def _apply_implicit(self, x):
        if self.grid.boundary == "dirichlet-zero":
            # P (I - c Lap) P + (I - P) with P zeroing pinned nodes
            xi = np.where(self._mask, 0.0, x)
            return np.where(self._mask, x, xi - self._c * laplacian(xi, self.grid))
        return x - self._c * laplacian(x, self.grid)

    def _solve_implicit(self, rhs):
        if self._c == 0:
            return rhs
        if self._lu is not None:
            n = self.grid.points_per_axis
            flat = rhs.reshape(-1, n).T
            return self._lu.solve(np.ascontiguousarray(flat)).T.reshape(rhs.shape)
        diag = 1 + 2 * self.grid.dim * self._c / self.grid.spacing ** 2
        x, it = _batched_pcg(self._apply_implicit, rhs, diag, rhs, self.grid.dim)
        self.cg_iterations += it
        return x

    def explicit_terms(self, u: np.ndarray, t: float) -> np.ndarray:
        ps, grid = self.ps, self.grid
        rhs = -ps.reaction(u)
        need_grad = ps.convection is not None or not ps.flux_is_linear
        if need_grad:
            g = gradient(u, grid)
        if not ps.flux_is_linear:
            lin = ps.linear_coeff if self.cfg.scheme == "imex" else 0.0
            rhs = rhs + divergence(ps.flux(g) - lin * g, grid)
        elif self.cfg.scheme == "fully-explicit":
            rhs = rhs + ps.linear_coeff * laplacian(u, grid)
        if ps.convection is not None:
            mag = np.sqrt((g ** 2).sum(axis=0))
            over = mag > GRAD_CLAMP
            if np.any(over):
                self.clamp_events += int(over.sum())
                g = g * np.where(over, GRAD_CLAMP / np.where(over, mag, 1.0), 1.0)
            rhs = rhs - ps.convection(np.moveaxis(grid.coords, -1, 0), g)
        return rhs + ps.forcing_at(grid, t)

    def __call__(self, u: np.ndarray, t: float) -> np.ndarray:
        rhs = u + self.cfg.dt * self.explicit_terms(u, t)
        if self.grid.boundary == "dirichlet-zero":
            rhs = np.where(self._mask, 0.0, rhs)
        new = self._solve_implicit(rhs)
        if not np.all(np.isfinite(new)):
            raise BlowUpError(t + self.cfg.dt)
        return new


def step(u: Field, ps: ProblemSpec, cfg: SolverConfig, t: float = 0.0) -> Field:
    """Advance one time step."""
    if not u.is_finite():
        raise ValueError("initial field is not finite")
    return Field(u.grid, Stepper(u.grid, ps, cfg)(u.values, t))


def _check_stability(values: np.ndarray, grid: Grid, ps: ProblemSpec, cfg: SolverConfig):
    if not cfg.check_cfl:
        return
    bound = reaction_cfl(ps, float(np.max(np.abs(values))) if values.size else 0.0)
    if cfg.dt > bound:
        raise ValueError(f"dt={cfg.dt} exceeds the explicit reaction bound {bound:.3g}")
    if cfg.scheme == "fully-explicit":
        eb = explicit_diffusion_bound(ps, grid)
        if cfg.dt > eb:
            raise ValueError(f"dt={cfg.dt} exceeds the explicit diffusion bound {eb:.3g}")


def integrate_batch(values: np.ndarray, grid: Grid, ps: ProblemSpec, cfg: SolverConfig,
                    nsteps: int, t0: float = 0.0, record_every: int | None = None,
                    stepper: Stepper | None = None):
    """March ``nsteps`` steps; returns (times, snapshots) with snapshots along axis 0.

    ``values`` may carry leading batch axes.  Step 0 and every
    ``record_every``-th step are recorded, plus the final step.
    """
    record_every = record_every or cfg.record_every
    stepper = stepper or Stepper(grid, ps, cfg)
    _check_stability(values, grid, ps, cfg)
    u = np.array(values, dtype=float)
    times, snaps = [t0], [u.copy()]
    for n in range(1, nsteps + 1):
        t = t0 + (n - 1) * cfg.dt
        u = stepper(u, t)
        if n % record_every == 0 or n == nsteps:
            times.append(t0 + n * cfg.dt)
            snaps.append(u.copy())
    return np.array(times), np.stack(snaps)


def solve(u0: Field, ps: ProblemSpec, cfg: SolverConfig, t0: float = 0.0) -> Trajectory:
    """Solve on [t0, t0 + T], recording every ``cfg.record_every`` steps."""
    if not u0.is_finite():
        raise ValueError("initial field is not finite")
    nsteps = cfg.steps_for(cfg.T)
    times, snaps = integrate_batch(u0.values, u0.grid, ps, cfg, nsteps, t0)
    meta = {"problem": ps.digest(), "config": cfg.to_dict(), "t0": t0}
    return Trajectory(u0.grid, times, snaps, meta)


# ------------------------------------------------------------ diagnostics

def _unit_drift(grid: Grid, xbar) -> tuple[np.ndarray, np.ndarray]:
    """exp(-|x - xbar|) and the unit vector (x - xbar)/|x - xbar| (0 at x = xbar)."""
    diff = grid.coords - np.asarray(xbar, dtype=float)
    r = np.linalg.norm(diff, axis=-1)
    unit = np.where(r[..., None] > 0, diff / np.where(r > 0, r, 1.0)[..., None], 0.0)
    return np.exp(-r), np.moveaxis(unit, -1, 0)


def manufactured_problem(ps: ProblemSpec, u, u_t, grad_u, div_flux) -> ProblemSpec:
    """Same nonlinearities with g chosen so that u is an exact solution.

    All callables take ``(x, t)`` with ``x`` of shape ``(d, ...)``: ``u`` and
    ``u_t`` return fields, ``grad_u`` returns ``(d, ...)`` and ``div_flux``
    returns div a(grad u) evaluated analytically.
    """
    def forcing(coords, t):
        x = np.moveaxis(coords, -1, 0)
        g = u_t(x, t) - div_flux(x, t) + ps.reaction(u(x, t))
        if ps.convection is not None:
            g = g + ps.convection(x, grad_u(x, t))
        return g
    desc = dict(ps.description, forcing="manufactured")
    return replace(ps, forcing=forcing, description=desc)


def weak_residual(traj: Trajectory, ps: ProblemSpec, xbar, test_fn) -> float:
    """Magnitude of the space-time integral of the expanded weighted weak form.

    ``test_fn`` is an array shaped like ``traj.values`` or a callable ``t -> array``.
    The time derivative is differenced between snapshots; the remaining terms
    use the trapezoid rule in time.
    """
    grid = traj.grid
    t = traj.times
    if callable(test_fn):
        v = np.stack([np.asarray(test_fn(tt), dtype=float) for tt in t])
    else:
        v = np.asarray(test_fn, dtype=float)
    if v.shape != traj.values.shape:
        raise ValueError("test function must be sampled like the trajectory")
    w, unit = _unit_drift(grid, xbar)
    u = traj.values

    def spatial(k):
        gu = gradient(u[k], grid)
        gv = gradient(v[k], grid)
        flux = ps.flux(gu)
        term = (flux * (gv - v[k] * unit)).sum(axis=0)
        react = ps.reaction(u[k]) - ps.forcing_at(grid, t[k])
        if ps.convection is not None:
            coords = np.moveaxis(grid.coords, -1, 0)
            react = react + ps.convection(coords, gu)
        return float(integrate((term + react * v[k]) * w, grid))

    S = np.array([spatial(k) for k in range(len(t))])
    dt = np.diff(t)
    vm = 0.5 * (v[1:] + v[:-1])
    du = u[1:] - u[:-1]
    T1 = integrate(du * vm * w, grid)
    total = T1.sum() + (0.5 * dt * (S[1:] + S[:-1])).sum()
    return float(abs(total))


@dataclass
class LqMonitor:
    q: float
    series: np.ndarray
    post_transient_sup: float
    drift: bool


def monitor_lq_norms(traj: Trajectory, q_list, transient: float | None = None,
                     drift_tol: float = 0.05) -> dict[float, LqMonitor]:
    """L^q_b norms along a trajectory; flags growth in the second half of the post-transient window."""
    if traj.grid.dim > 3:
        raise ValueError("regularity monitoring needs d <= 3")
    t = traj.times
    transient = t[0] + 0.25 * (t[-1] - t[0]) if transient is None else transient
    out = {}
    for q in q_list:
        spec = NormSpec("Lp_b", p=float(q))
        s = np.array([ulocal_norm(traj.snapshot(i), spec) for i in range(len(t))])
        post = s[t >= transient]
        if len(post) == 0:
            post = s[-1:]
        half = len(post) // 2
        drift = bool(half > 0 and post[half:].max() > (1 + drift_tol) * post[:half].max() + 1e-14)
        out[q] = LqMonitor(float(q), s, float(post.max()), drift)
    return out

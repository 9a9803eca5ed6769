"""Admissible weight functions.

A weight is a positive bounded function phi with

    c^{-1} exp(-mu|x-y|) <= phi(x)/phi(y) <= c exp(mu|x-y|),   |grad phi| <= phi.

Weights are evaluated from closed forms on demand and never tabulated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grid import Grid

DEFAULT_SEED = 20240101


@dataclass(frozen=True, eq=False)
class Weight:
    kind: str
    mu: float
    growth_constant: float = 1.0
    params: dict = field(default_factory=dict)
    parts: tuple["Weight", ...] = ()
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], float(self.params.get("value", 1.0)))
        if self.kind == "exponential":
            r = np.linalg.norm(x - np.asarray(self.params["center"]), axis=-1)
            return np.exp(self.params["rate"] * r)
        if self.kind == "localized":
            x0 = np.asarray(self.params["x0"])
            r = np.linalg.norm(x - x0, axis=-1)
            edge = self.params["R"] + np.sqrt(x.shape[-1])
            return np.exp(np.minimum(edge - r, 0.0) / 2.0)
        if self.kind == "min":
            return np.minimum(self.parts[0](x), self.parts[1](x))
        if self.kind == "max":
            return np.maximum(self.parts[0](x), self.parts[1](x))
        if self.kind == "custom":
            return self.func(x)
        raise ValueError(f"unknown weight kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind in ("min", "max"):
            return {"kind": self.kind, "parts": [p.to_dict() for p in self.parts]}
        if self.kind == "custom":
            raise ValueError("custom weights are not serializable")
        return {"kind": self.kind, **{k: _listify(v) for k, v in self.params.items()}}


def _listify(v):
    return list(v) if isinstance(v, (tuple, list, np.ndarray)) else v


def constant_weight() -> Weight:
    return Weight("constant", 0.0, 1.0, {"value": 1.0})


def make_exponential_weight(center, m: float) -> Weight:
    """phi(x) = exp(m |x - center|) with m in [-1, 0]."""
    if abs(m) > 1 or m > 0:
        raise ValueError(f"rate m={m} outside [-1, 0]")
    return Weight("exponential", abs(m), 1.0,
                  {"center": tuple(float(c) for c in np.atleast_1d(center)), "rate": float(m)})


def make_localized_weight(x0, R: float) -> Weight:
    """The cut-off weight equal to 1 on the ball of radius R + sqrt(d)."""
    if R < 1:
        raise ValueError(f"R={R} < 1")
    return Weight("localized", 0.5, 1.0,
                  {"x0": tuple(float(c) for c in np.atleast_1d(x0)), "R": float(R)})


def pointwise_min(w1: Weight, w2: Weight) -> Weight:
    return Weight("min", max(w1.mu, w2.mu),
                  max(w1.growth_constant, w2.growth_constant), parts=(w1, w2))


def pointwise_max(w1: Weight, w2: Weight) -> Weight:
    return Weight("max", max(w1.mu, w2.mu),
                  max(w1.growth_constant, w2.growth_constant), parts=(w1, w2))


def custom_weight(func, mu: float, growth_constant: float = 1.0) -> Weight:
    return Weight("custom", mu, growth_constant, func=func)


def weight_from_dict(d: dict) -> Weight:
    kind = d["kind"]
    if kind == "constant":
        return constant_weight()
    if kind == "exponential":
        return make_exponential_weight(d["center"], d["rate"])
    if kind == "localized":
        return make_localized_weight(d["x0"], d["R"])
    if kind in ("min", "max"):
        a, b = (weight_from_dict(p) for p in d["parts"])
        return pointwise_min(a, b) if kind == "min" else pointwise_max(a, b)
    raise ValueError(f"unknown weight kind {kind!r}")


@dataclass
class AdmissibilityReport:
    max_ratio_violation: float
    max_gradient_violation: float
    gradient_tolerance: float
    seed: int
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_ratio_violation <= 1e-12 and self.max_gradient_violation <= self.gradient_tolerance


def check_admissibility(w: Weight, grid: Grid, samples: int = 2000,
                        seed: int = DEFAULT_SEED) -> AdmissibilityReport:
    """Worst slack of the growth bound (random pairs) and gradient bound (grid).

    The ratio slack is ``log(phi(x)/phi(y)) - mu|x-y| - log c`` in absolute
    value form; the gradient slack is ``|grad phi|/phi - 1`` with centred
    differences of step h.  Values <= 0 (resp. <= 10h) mean satisfied.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    d, hw = grid.dim, grid.box_half_width
    x = rng.uniform(-hw, hw, size=(samples, d))
    y = rng.uniform(-hw, hw, size=(samples, d))
    lr = np.log(w(x)) - np.log(w(y))
    bound = w.mu * np.linalg.norm(x - y, axis=1) + np.log(w.growth_constant)
    ratio_violation = float(np.max(np.abs(lr) - bound))

    pts = grid.coords.reshape(-1, d)
    h = grid.spacing
    phi = w(pts)
    g2 = np.zeros(len(pts))
    for a in range(d):
        e = np.zeros(d)
        e[a] = h
        g2 += ((w(pts + e) - w(pts - e)) / (2 * h)) ** 2
    grad_violation = float(np.max(np.sqrt(g2) / phi - 1.0))
    return AdmissibilityReport(ratio_violation, grad_violation, 10 * h, seed, samples)

"""Model primitives, closed-form constants and belief dynamics.

The hidden state is a two-state Markov chain (H: crime opportunities arrive,
L: none).  The planner's belief p = P(state H) drifts deterministically between
detections and jumps to 1 when a crime is detected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np


class DomainError(ValueError):
    """Input outside the domain where a formula is defined."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (no bracket, integrator stalled, ...)."""


@dataclass(frozen=True)
class ModelParams:
    lam: float          # crime-opportunity rate in state H
    x: float = 1.0      # probability an opportunity is taken
    c: float = 1.5      # enforcement cost per unit
    r: float = 2.0      # discount rate
    rho_L: float = 1.0  # L -> H switching rate
    rho_H: float = 1.0  # H -> L switching rate
    w: float = 0.0      # passive detection probability
    y_bar: float = 0.5  # deterrence threshold

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise DomainError(f"{f.name} must be a finite number, got {v!r}")
        for name in ("lam", "c", "r", "rho_L", "rho_H"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if not 0 < self.x <= 1:
            raise DomainError("x must lie in (0, 1]")
        if not 0 <= self.w < 1:
            raise DomainError("w must lie in [0, 1)")
        if not 0 < self.y_bar < 1:
            raise DomainError("y_bar must lie in (0, 1)")
        if self.lam * self.x <= self.c:
            raise DomainError("need lam * x > c (enforcement must be worth its cost at p = 1)")

    @property
    def lx(self) -> float:
        return self.lam * self.x

    @property
    def switch_rate(self) -> float:
        return self.rho_L + self.rho_H

    def replace(self, **kw) -> "ModelParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ModelParams(**d)

    def with_lx(self, lx: float) -> "ModelParams":
        """Same primitives with the effective crime rate lam*x set to `lx` (x kept)."""
        return self.replace(lam=lx / self.x)


@dataclass(frozen=True)
class DerivedQuantities:
    pi0: float
    pi1: float
    p_hat_M: float
    K_lin: float
    K_max: float
    lambda_bar: float   # math.inf when rho_L <= c: the high-crime case is then unreachable
    pi_w: float         # rest point of the belief without enforcement; equals pi0 when w = 0

    @property
    def high_crime_reachable(self) -> bool:
        return math.isfinite(self.lambda_bar)


def _small_root(a: float, b: float, c0: float) -> float:
    # smaller root of a p^2 - b p + c0 = 0 (a, b, c0 > 0), written without cancellation
    return 2.0 * c0 / (b + math.sqrt(b * b - 4.0 * a * c0))


def full_enforcement_rest_point(lx: float, rho_L: float, rho_H: float) -> float:
    """Root of f(., 1) in (0, pi0): lx p^2 - (rho_L + rho_H + lx) p + rho_L = 0."""
    return _small_root(lx, rho_L + rho_H + lx, rho_L)


def high_crime_threshold(c: float, rho_L: float, rho_H: float) -> float:
    if rho_L <= c:
        return math.inf
    return c * (rho_L + rho_H - c) / (rho_L - c)


@lru_cache(maxsize=4096)
def derived(params: ModelParams) -> DerivedQuantities:
    lx, c, r = params.lx, params.c, params.r
    rl, rh = params.rho_L, params.rho_H
    pi0 = rl / (rl + rh)
    pi1 = full_enforcement_rest_point(lx, rl, rh)
    k_lin = ((lx - c) * (r + rl) - c * rh) / (r * (r + rl + rh))
    k_max = (lx - c) / r
    if params.w > 0:
        lw = lx * params.w
        pi_w = _small_root(lw, rl + rh + lw, rl)
    else:
        pi_w = pi0
    return DerivedQuantities(pi0=pi0, pi1=pi1, p_hat_M=c / lx, K_lin=k_lin, K_max=k_max,
                             lambda_bar=high_crime_threshold(c, rl, rh), pi_w=pi_w)


def _check_unit(name, v):
    a = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0) or np.any(a > 1):
        raise DomainError(f"{name} must lie in [0, 1]")
    return a


def natural_drift(p, params: ModelParams):
    """h(p): belief drift with no enforcement and no passive detection."""
    return params.rho_L * (1 - p) - params.rho_H * p


def enforced_drift(p, params: ModelParams):
    """g(p): belief drift under full enforcement (passive detection is irrelevant at y = 1)."""
    return natural_drift(p, params) - p * (1 - p) * params.lx


def enforced_drift_slope(p, params: ModelParams):
    return -params.switch_rate - params.lx * (1 - 2 * p)


def drift(p, y, params: ModelParams):
    """Belief drift between detections under enforcement y."""
    p = _check_unit("p", p)
    y = _check_unit("y", y)
    detect = y + params.w - y * params.w
    out = natural_drift(p, params) - p * (1 - p) * params.lx * detect
    return out if out.ndim else float(out)


def holding_action(p, params: ModelParams):
    """Enforcement level that keeps the belief at p (zero drift).

    Defined on (pi1, pi_w); with w = 0 this is h(p) / (lx p (1-p)).
    """
    d = derived(params)
    a = np.asarray(p, dtype=float)
    if np.any(a <= d.pi1) or np.any(a >= d.pi_w):
        raise DomainError(f"holding level only exists for p in ({d.pi1:.6g}, {d.pi_w:.6g})")
    z = natural_drift(a, params) / (params.lx * a * (1 - a))
    if params.w > 0:
        z = (z - params.w) / (1 - params.w)
    return z if z.ndim else float(z)


def holding_ratio(p, params: ModelParams):
    """h(p) / (lx p (1-p)) with no domain check; the holding level for w = 0."""
    return natural_drift(p, params) / (params.lx * p * (1 - p))


def sigma(p, params: ModelParams):
    """Slope level at which the two one-sided optimality conditions at a cutoff coincide."""
    a = np.asarray(p, dtype=float)
    if np.any(a <= 0) or np.any(a > derived(params).pi0 + 1e-15):
        raise DomainError("sigma is defined on (0, pi0]")
    s = sigma_unchecked(a, params)
    return s if s.ndim else float(s)


def sigma_unchecked(p, params: ModelParams):
    lx = params.lx
    return natural_drift(p, params) * params.c / (p * p * (1 - p) * lx * (params.r + params.switch_rate))


def crime_stock_slope(params: ModelParams) -> float:
    return params.lx / (params.r + params.switch_rate)


def crime_stock(p, params: ModelParams):
    """Expected discounted number of crime opportunities taken, whatever the policy.

    Affine solution of r C = p lx + h(p) C'.
    """
    p = _check_unit("p", p)
    out = crime_stock_slope(params) * (p + params.rho_L / params.r)
    return out if out.ndim else float(out)

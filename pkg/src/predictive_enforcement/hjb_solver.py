"""Optimal cutoff policy for the planner's enforcement problem.

Above a cutoff the value function solves the boundary-value family

    r V = p lx - c + p lx (K - V) + g(p) V',    V(1) = K,

which is integrated backward from p = 1 (g(1) = -rho_H, so the right end is
regular; g vanishes at pi1).  The equation is linear in (V, K), hence

    V(p; K) = V_lin(p) + (K - K_lin) * B(p),

with V_lin the affine solution at K = K_lin and B the solution of
g B' = (r + p lx) B - p lx, B(1) = 1.  `ShootingFamily` integrates B once per
parameter set, after which every shooting evaluation is a lookup.
`integrate_D` integrates the family member for one K directly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model_core import (DomainError, ModelParams, NumericalError, crime_stock,
                         crime_stock_slope, derived, enforced_drift, natural_drift,
                         sigma_unchecked)

SINGULAR_GUARD = 1e-6
RTOL, ATOL = 1e-10, 1e-12
ROOT_XTOL = 1e-13
MAX_STEP = 0.01
CASE_TOL = 1e-9

HIGH_CRIME = "HighCrime"
INTERMEDIATE = "Intermediate"
LOW_CRIME = "LowCrime"


def bracketed_root(fn, a, b, xtol=ROOT_XTOL, what="root", ftol=1e-12):
    """Root of fn on [a, b] given a sign change.

    An endpoint with |fn| <= ftol is returned as the root (endpoints are often
    exact roots that rounding moves to the wrong side).
    """
    fa, fb = fn(a), fn(b)
    if abs(fa) <= ftol:
        return a
    if abs(fb) <= ftol:
        return b
    if fa * fb > 0:
        raise NumericalError(f"{what}: no sign change on [{a:.12g}, {b:.12g}] "
                             f"(f(a)={fa:.3e}, f(b)={fb:.3e})")
    return brentq(fn, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


def _ode_slope(p, V, K, params):
    lx = params.lx
    return ((params.r + p * lx) * V + params.c - p * lx * (1 + K)) / enforced_drift(p, params)


def _ode_curvature(p, Vp, K, params):
    lx, r, a = params.lx, params.r, params.switch_rate
    coef = r * r + r * (lx + a) + lx * params.rho_L
    return (coef * Vp - lx * (params.c + r + r * K)) / ((r + p * lx) * enforced_drift(p, params))


def linear_value(p, params):
    """Affine member of the family (K = K_lin)."""
    d = derived(params)
    return d.K_lin - crime_stock_slope(params) * (1 - np.asarray(p, dtype=float))


class ValueCurve:
    """V(.; K) on [p_lo, 1] with its first and second derivatives."""

    def __init__(self, K, p_lo, params, value_fn, slope_fn=None, grid_size=401):
        self.K = float(K)
        self.p_lo = float(p_lo)
        self.params = params
        self._value = value_fn
        self._slope = slope_fn
        self.grid = np.linspace(self.p_lo, 1.0, grid_size)
        self.V = self.value(self.grid)
        self.Vp = self.slope(self.grid)

    def _check(self, p):
        a = np.asarray(p, dtype=float)
        if np.any(a < self.p_lo - 1e-14) or np.any(a > 1 + 1e-14):
            raise DomainError(f"p outside curve domain [{self.p_lo:.6g}, 1]")
        return a

    def value(self, p):
        return self._value(self._check(p))

    def slope(self, p):
        a = self._check(p)
        if self._slope is not None:
            return self._slope(a)
        return _ode_slope(a, self._value(a), self.K, self.params)

    def curvature(self, p):
        return _ode_curvature(self._check(p), self.slope(p), self.K, self.params)

    def residual(self, p):
        a = self._check(p)
        prm = self.params
        V, Vp = self.value(a), self.slope(a)
        return prm.r * V - (a * prm.lx - prm.c) - a * prm.lx * (self.K - V) - enforced_drift(a, prm) * Vp


def _default_p_lo(params):
    return derived(params).pi1 + SINGULAR_GUARD


def _check_p_lo(p_lo, params):
    if p_lo is None:
        return _default_p_lo(params)
    if p_lo < derived(params).pi1 + SINGULAR_GUARD * 0.999 or p_lo >= 1:
        raise DomainError("p_lo must lie in [pi1 + 1e-6, 1)")
    return float(p_lo)


def _integrate_backward(rhs, y1, p_lo, what):
    sol = solve_ivp(rhs, (1.0, p_lo), [y1], method="DOP853", rtol=RTOL, atol=ATOL, max_step=MAX_STEP,
                    dense_output=True)
    if sol.status != 0:
        raise NumericalError(f"{what}: integration stopped at p={sol.t[-1]:.12g} ({sol.message})")
    return sol.sol


def integrate_D(K, p_lo=None, params: ModelParams = None) -> ValueCurve:
    """Integrate the family member with V(1) = K backward from 1 down to p_lo."""
    if params is None:
        raise DomainError("params required")
    if not math.isfinite(K):
        raise DomainError("K must be finite")
    p_lo = _check_p_lo(p_lo, params)
    dense = _integrate_backward(lambda p, v: _ode_slope(p, v, K, params), K, p_lo, "integrate_D")
    return ValueCurve(K, p_lo, params, lambda p: dense(p)[0])


class ShootingFamily:
    """All members V(.; K) for one parameter set, via V = V_lin + (K - K_lin) B."""

    def __init__(self, params: ModelParams, p_lo=None):
        self.params = params
        self.p_lo = _check_p_lo(p_lo, params)
        lx = params.lx

        def rhs(p, b):
            return ((params.r + p * lx) * b - p * lx) / enforced_drift(p, params)

        self._B = _integrate_backward(rhs, 1.0, self.p_lo, "sensitivity curve")
        self.K_lin = derived(params).K_lin
        self.beta = crime_stock_slope(params)

    def sensitivity(self, p):
        return self._B(np.asarray(p, dtype=float))[0]

    def sensitivity_slope(self, p):
        p = np.asarray(p, dtype=float)
        b = self.sensitivity(p)
        prm = self.params
        return ((prm.r + p * prm.lx) * b - p * prm.lx) / enforced_drift(p, prm)

    def value(self, p, K):
        return linear_value(p, self.params) + (K - self.K_lin) * self.sensitivity(p)

    def slope(self, p, K):
        return self.beta + (K - self.K_lin) * self.sensitivity_slope(p)

    def curve(self, K) -> ValueCurve:
        return ValueCurve(K, self.p_lo, self.params,
                          lambda p: self.value(p, K), lambda p: self.slope(p, K))


def delta_from(p, V, Vp, K, params):
    """Marginal value of enforcement per unit of crime probability."""
    p = np.asarray(p, dtype=float)
    return p * params.lam - params.c / params.x + p * params.lam * (K - V - (1 - p) * Vp)


def delta(p, curve: ValueCurve, params: ModelParams = None):
    params = params or curve.params
    return delta_from(p, curve.value(p), curve.slope(p), curve.K, params)


def lower_slope_point(params):
    """The belief below pi0 where sigma equals the affine slope (the lower end of the cutoff range)."""
    d = derived(params)
    beta = crime_stock_slope(params)
    return bracketed_root(lambda p: sigma_unchecked(p, params) - beta, 1e-12, d.pi0,
                          what="lower slope point")


def _require_below_high(params):
    d = derived(params)
    if d.high_crime_reachable and params.lx >= d.lambda_bar:
        raise DomainError("requires lam*x below the high-crime threshold")


def find_K0(params: ModelParams, family: ShootingFamily = None) -> float:
    """Boundary value whose curve is flat at pi0.

    V'(pi0; K) is affine in K, so the root is exact once the family is known;
    the bracket (positive at K_lin, negative at K_max) is still checked.
    """
    _require_below_high(params)
    fam = family or ShootingFamily(params)
    d = derived(params)
    lo, hi = fam.slope(d.pi0, d.K_lin), fam.slope(d.pi0, d.K_max)
    if not (lo > 0 > hi):
        raise NumericalError(f"K0 bracket invalid: V'(pi0;K_lin)={lo:.3e}, V'(pi0;K_max)={hi:.3e}")
    return float(d.K_lin - fam.beta / fam.sensitivity_slope(d.pi0))


MATCH_SIGMA = "match_sigma"
MATCH_ZERO = "match_zero"


def p_of_K(K, mode, params: ModelParams, family: ShootingFamily = None, K0=None, p_low=None):
    """Belief where V'(.; K) meets sigma (match_sigma) or zero (match_zero)."""
    fam = family or ShootingFamily(params)
    d = derived(params)
    K0 = find_K0(params, fam) if K0 is None else K0
    tol = 1e-12 * max(1.0, abs(K0))
    if mode == MATCH_SIGMA:
        if not d.K_lin - tol <= K <= K0 + tol:
            raise DomainError("match_sigma needs K in [K_lin, K0]")
        a = lower_slope_point(params) if p_low is None else p_low
        return bracketed_root(lambda p: fam.slope(p, K) - sigma_unchecked(p, params), a, d.pi0,
                              what="p(K) matching sigma")
    if mode == MATCH_ZERO:
        if not K0 - tol <= K <= d.K_max + tol:
            raise DomainError("match_zero needs K in [K0, K_max]")
        return bracketed_root(lambda p: fam.slope(p, K), d.pi0, 1.0, what="p(K) matching zero")
    raise DomainError(f"unknown mode {mode!r}")


def _flat_point_gap(lx, c, r, rho_L, rho_H):
    # sign of the marginal value at pi0 on the flat-at-pi0 curve; positive means
    # the intermediate case.  Delta(pi0; K0) = r V(pi0; K0) / x.
    prm = ModelParams(lam=lx, x=1.0, c=c, r=r, rho_L=rho_L, rho_H=rho_H)
    fam = ShootingFamily(prm)
    K0 = find_K0(prm, fam)
    pi0 = derived(prm).pi0
    return float(delta_from(pi0, fam.value(pi0, K0), fam.slope(pi0, K0), K0, prm))


@lru_cache(maxsize=256)
def _lambda_low_cached(c, r, rho_L, rho_H):
    pi0 = rho_L / (rho_L + rho_H)
    lo, hi = c * (1 + 1e-7), c / pi0
    return bracketed_root(lambda lx: _flat_point_gap(lx, c, r, rho_L, rho_H), lo, hi,
                          xtol=1e-12, what="lambda_low")


def lambda_low(params: ModelParams) -> float:
    """Threshold on lam*x below which the planner never enforces at pi0 (depends on c, r, rho's)."""
    return _lambda_low_cached(params.c, params.r, params.rho_L, params.rho_H)


def lambda_low_residual(params: ModelParams) -> float:
    p = params
    return _flat_point_gap(lambda_low(p), p.c, p.r, p.rho_L, p.rho_H)


@dataclass
class OptimalPolicy:
    params: ModelParams
    case_id: str
    p_hat: float
    K_hat: float
    lambda_low: float
    lambda_bar: float
    curve: ValueCurve | None = None   # None in the high-crime case (affine value)
    flags: list = field(default_factory=list)

    # pieces of the assembled value function
    def _above(self, p):
        if self.curve is None:
            return linear_value(p, self.params), np.full_like(p, crime_stock_slope(self.params))
        return self.curve.value(p), self.curve.slope(p)

    def _below(self, p):
        prm = self.params
        if self.p_hat >= derived(prm).pi0:
            return np.zeros_like(p), np.zeros_like(p)
        v_hat = self.value_at_cutoff
        h_hat = natural_drift(self.p_hat, prm)
        V = v_hat * (natural_drift(p, prm) / h_hat) ** (-prm.r / prm.switch_rate)
        return V, prm.r * V / natural_drift(p, prm)

    @property
    def value_at_cutoff(self) -> float:
        return float(self._above(np.array([self.p_hat]))[0][0])

    def _assemble(self, p):
        a = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any(a < 0) or np.any(a > 1):
            raise DomainError("p must lie in [0, 1]")
        V, Vp = np.empty_like(a), np.empty_like(a)
        up = a >= self.p_hat
        if up.any():
            V[up], Vp[up] = self._above(a[up])
        if (~up).any():
            V[~up], Vp[~up] = self._below(a[~up])
        return a, V, Vp

    @staticmethod
    def _shape(p, arr):
        return float(arr[0]) if np.ndim(p) == 0 else arr

    def value(self, p):
        _, V, _ = self._assemble(p)
        return self._shape(p, V)

    def slope(self, p):
        _, _, Vp = self._assemble(p)
        return self._shape(p, Vp)

    def curvature(self, p):
        a, V, Vp = self._assemble(p)
        prm = self.params
        out = np.empty_like(a)
        up = a >= self.p_hat
        out[up] = _ode_curvature(a[up], Vp[up], self.K_hat, prm)
        h = natural_drift(a[~up], prm)
        out[~up] = prm.r * (prm.r + prm.switch_rate) * V[~up] / h ** 2
        return self._shape(p, out)

    def loss(self, p):
        a, V, _ = self._assemble(p)
        return self._shape(p, crime_stock(a, self.params) - V)

    def delta(self, p):
        a, V, Vp = self._assemble(p)
        return self._shape(p, delta_from(a, V, Vp, self.K_hat, self.params))

    def action(self, p):
        """Optimal enforcement; at the cutoff the holding level in the intermediate case, else 1."""
        a = np.atleast_1d(np.asarray(p, dtype=float))
        y = (a >= self.p_hat).astype(float)
        if self.case_id == INTERMEDIATE:
            prm = self.params
            z_hat = natural_drift(self.p_hat, prm) / (prm.lx * self.p_hat * (1 - self.p_hat))
            y[a == self.p_hat] = z_hat
        return self._shape(p, y)

    def hjb_residual(self, p):
        """r V - h V' - max(0, x Delta); zero wherever V solves the planner's equation."""
        a, V, Vp = self._assemble(p)
        prm = self.params
        d = delta_from(a, V, Vp, self.K_hat, prm)
        return self._shape(p, prm.r * V - natural_drift(a, prm) * Vp - np.maximum(0.0, prm.x * d))

    def pasting_gaps(self):
        """(value gap, slope gap) between the two sides of the cutoff."""
        p = np.array([self.p_hat])
        Va, Vpa = self._above(p)
        Vb, Vpb = self._below(p)
        return abs(float(Va[0] - Vb[0])), abs(float(Vpa[0] - Vpb[0]))

    def cutoff_delta(self) -> float:
        return float(self.delta(self.p_hat))

    def summary(self) -> dict:
        d = derived(self.params)
        vgap, sgap = self.pasting_gaps()
        return {
            "case": self.case_id, "p_hat": self.p_hat, "K_hat": self.K_hat,
            "lambda_low": self.lambda_low, "lambda_bar": self.lambda_bar,
            "pi0": d.pi0, "pi1": d.pi1, "p_hat_M": d.p_hat_M,
            "loss_at_pi0": float(self.loss(d.pi0)),
            "delta_at_cutoff": self.cutoff_delta(),
            "value_gap": vgap, "slope_gap": sgap, "flags": list(self.flags),
        }


def solve_cutoff(params: ModelParams) -> OptimalPolicy:
    d = derived(params)
    lx = params.lx
    lam_low = lambda_low(params)
    flags = []

    if d.high_crime_reachable and lx >= d.lambda_bar - CASE_TOL:
        if abs(lx - d.lambda_bar) < CASE_TOL:
            flags.append("near_lambda_bar")
            warnings.warn("lam*x within tolerance of the high-crime threshold; using the affine solution")
        return OptimalPolicy(params, HIGH_CRIME, d.p_hat_M, d.K_lin, lam_low, d.lambda_bar, None, flags)

    fam = ShootingFamily(params)
    K0 = find_K0(params, fam)
    gap = float(delta_from(d.pi0, fam.value(d.pi0, K0), fam.slope(d.pi0, K0), K0, params))

    def pack(case, p_hat, K_hat):
        return OptimalPolicy(params, case, float(p_hat), float(K_hat), lam_low, d.lambda_bar,
                             fam.curve(K_hat), flags)

    if abs(lx - lam_low) < CASE_TOL:
        flags.append("near_lambda_low")
        warnings.warn("lam*x within tolerance of the low-crime threshold; cutoff set to pi0")
        return pack(LOW_CRIME, d.pi0, K0)

    if gap > 0:
        p_low = lower_slope_point(params)

        def shoot(K):
            p = p_of_K(K, MATCH_SIGMA, params, fam, K0, p_low)
            return float(delta_from(p, fam.value(p, K), fam.slope(p, K), K, params))

        K_hat = bracketed_root(shoot, d.K_lin, K0, what="intermediate cutoff")
        p_hat = p_of_K(K_hat, MATCH_SIGMA, params, fam, K0, p_low)
        return pack(INTERMEDIATE, p_hat, K_hat)

    def shoot(K):
        p = p_of_K(K, MATCH_ZERO, params, fam, K0)
        return float(delta_from(p, fam.value(p, K), fam.slope(p, K), K, params))

    K_hat = bracketed_root(shoot, K0, d.K_max, what="low-crime cutoff")
    p_hat = p_of_K(K_hat, MATCH_ZERO, params, fam, K0)
    return pack(LOW_CRIME, p_hat, K_hat)


def loss(p, policy: OptimalPolicy):
    return policy.loss(p)

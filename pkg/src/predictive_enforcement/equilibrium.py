"""Equilibria with endogenous crime under the three enforcement regimes.

Criminals in state H offend with probability x; they are deterred when the
long-run enforcement they expect reaches y_bar.  All thresholds here are on the
crime-opportunity rate lam at x = 1; a mixed equilibrium at lam above a
threshold T has x = T / lam, which puts the planner's problem back at lam*x = T.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hjb_solver import bracketed_root, lambda_low, solve_cutoff
from .model_core import ModelParams, NumericalError, derived, full_enforcement_rest_point
from .stationary import deterring_cutoff, stationary_distribution

NP, GP, OP, PREDICTIVE_CRIMINALS = "NP", "GP", "OP", "PredictiveCriminals"
SCAN_POINTS = 200


@dataclass
class EquilibriumOutcome:
    regime: str
    crime_x: float
    cutoff: float | None
    enforcement: str
    pm_loss: float
    threshold: float | None = None
    extra: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {"regime": self.regime, "crime_x": self.crime_x,
               "cutoff": math.nan if self.cutoff is None else self.cutoff,
               "enforcement": self.enforcement, "pm_loss": self.pm_loss,
               "threshold": math.nan if self.threshold is None else self.threshold}
        row.update(self.extra)
        return row


def _pi0(params):
    return params.rho_L / (params.rho_L + params.rho_H)


def _idle_loss(params):
    return min(_pi0(params) * params.lam, params.c) / params.r


def np_equilibrium(params: ModelParams) -> EquilibriumOutcome:
    pi0 = _pi0(params)
    lam, c = params.lam, params.c
    if lam < c / pi0:
        return EquilibriumOutcome(NP, 1.0, None, "0", pi0 * lam / params.r)
    # criminals mix so the planner is indifferent at pi0; she enforces at y_bar
    return EquilibriumOutcome(NP, c / (pi0 * lam), None, f"{params.y_bar:.17g}", c / params.r)


def _pbar_at(lam, params):
    return deterring_cutoff(lam, params.y_bar, params)


def _scan_first_root(fn, lo, hi, n=SCAN_POINTS, geometric=False, what="threshold"):
    """Smallest root of fn on [lo, hi]: walk a grid upward, bisect the first sign change."""
    grid = np.geomspace(lo, hi, n) if geometric else np.linspace(lo, hi, n)
    prev_x, prev_f = grid[0], fn(grid[0])
    visited = [(prev_x, prev_f)]
    for x in grid[1:]:
        f = fn(x)
        visited.append((x, f))
        if prev_f == 0:
            return float(prev_x)
        if prev_f * f < 0:
            return bracketed_root(fn, prev_x, x, xtol=1e-12, what=what)
        prev_x, prev_f = x, f
    raise NumericalError(f"{what}: no sign change on [{lo:.6g}, {hi:.6g}]; "
                         f"sampled values {visited[0][1]:.3e} ... {visited[-1][1]:.3e}")


def _template_key(params):
    return (params.c, params.r, params.rho_L, params.rho_H, params.y_bar)


_LAMBDA_M_CACHE: dict = {}
_LAMBDA_STAR_CACHE: dict = {}


def _lambda_M_upper(params):
    d = derived(params)
    if d.high_crime_reachable:
        return d.lambda_bar  # where c / lam meets pi1(lam)
    return 100.0 * params.c / d.pi0


def lambda_M(params: ModelParams) -> float:
    """Smallest lam at which the myopic cutoff c/lam delivers exactly y_bar in state H (x = 1)."""
    key = _template_key(params)
    if key not in _LAMBDA_M_CACHE:
        c = params.c
        lo = c / _pi0(params)
        hi = _lambda_M_upper(params)

        def gap(lam):
            q = c / lam
            pi1 = full_enforcement_rest_point(lam, params.rho_L, params.rho_H)
            if q <= pi1:
                return -1.0  # myopic cutoff at or below pi1 enforces in H almost always
            return q - _pbar_at(lam, params)

        _LAMBDA_M_CACHE[key] = _scan_first_root(gap, lo * (1 + 1e-9), hi * (1 - 1e-9),
                                                geometric=True, what="lambda_M")
    return _LAMBDA_M_CACHE[key]


def gp_equilibrium(params: ModelParams) -> EquilibriumOutcome:
    lm = lambda_M(params)
    lam = params.lam
    loss = _idle_loss(params)
    if lam <= lm:
        return EquilibriumOutcome(GP, 1.0, params.c / lam, "cutoff", loss, lm)
    return EquilibriumOutcome(GP, lm / lam, params.c / lm, "cutoff", loss, lm)


def _optimal_cutoff_at(lam, params):
    return solve_cutoff(params.replace(lam=lam, x=1.0)).p_hat


def lambda_star(params: ModelParams) -> float:
    """Smallest lam at which the optimal cutoff delivers exactly y_bar in state H (x = 1)."""
    key = _template_key(params)
    if key not in _LAMBDA_STAR_CACHE:
        lo = lambda_low(params) * (1 + 1e-7)
        hi = lambda_M(params)

        def gap(lam):
            return _optimal_cutoff_at(lam, params) - _pbar_at(lam, params)

        _LAMBDA_STAR_CACHE[key] = _scan_first_root(gap, lo, hi, what="lambda_star")
    return _LAMBDA_STAR_CACHE[key]


def op_equilibrium(params: ModelParams) -> EquilibriumOutcome:
    lam, c = params.lam, params.c
    pi0 = _pi0(params)
    if lam <= c:
        # enforcement never pays, even at belief 1
        return EquilibriumOutcome(OP, 1.0, 1.0, "none", pi0 * lam / params.r,
                                  extra={"loss_at_pi0": pi0 * lam / params.r})
    ls = lambda_star(params)
    x = 1.0 if lam <= ls else ls / lam
    policy = solve_cutoff(params.replace(x=x))
    extra = {"case": policy.case_id, "loss_at_pi0": float(policy.loss(pi0))}
    d = derived(policy.params)
    if d.pi1 < policy.p_hat < d.pi0:
        st = stationary_distribution(policy.p_hat, policy.params)
        extra["loss_stationary_avg"] = st.average(policy.loss)
        extra["enforcement_high"] = st.expected_enforcement_high()
    # the stationary mean belief is pi0 for every cutoff, so the long-run loss is read at pi0
    return EquilibriumOutcome(OP, x, policy.p_hat, "cutoff", extra["loss_at_pi0"], ls, extra)


def crime_schedule(p, params: ModelParams):
    """Belief-contingent crime level that keeps the planner indifferent above c / lam."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.minimum(1.0, params.c / (p * params.lam))
    return out if out.ndim else float(out)


def predictive_criminals_residual(p, params: ModelParams):
    """Planner's equation residual for V = 0 when criminals follow `crime_schedule`.

    With V = 0 the maximand over y is y (p lam x(p) - c), so the residual is
    -max(0, p lam x(p) - c).
    """
    p = np.asarray(p, dtype=float)
    gain = p * params.lam * crime_schedule(p, params) - params.c
    return 0.0 - np.maximum(0.0, gain)


def predictive_criminals(params: ModelParams) -> EquilibriumOutcome:
    cutoff = params.c / params.lam
    return EquilibriumOutcome(PREDICTIVE_CRIMINALS, float(crime_schedule(1.0, params)), cutoff,
                              f"{params.y_bar:.17g} above cutoff", _idle_loss(params))


def commitment_reference_loss(params: ModelParams) -> float:
    """Loss of always enforcing at y_bar with full deterrence (reference number only)."""
    return min(params.c * params.y_bar, _pi0(params) * params.lam) / params.r


def all_regimes(params: ModelParams) -> list[EquilibriumOutcome]:
    return [np_equilibrium(params), gp_equilibrium(params), op_equilibrium(params),
            predictive_criminals(params)]


def clear_caches():
    _LAMBDA_M_CACHE.clear()
    _LAMBDA_STAR_CACHE.clear()


def figure6_curves(params: ModelParams, xs) -> dict:
    """Myopic, optimal and deterring cutoffs as functions of x at fixed lam."""
    out = {"x": [], "p_hat_M": [], "p_hat": [], "p_bar": []}
    for x in xs:
        lx = params.lam * x
        out["x"].append(float(x))
        out["p_hat_M"].append(params.c / lx if lx > params.c else math.nan)
        if lx > params.c:
            out["p_hat"].append(solve_cutoff(params.replace(x=float(x))).p_hat)
        else:
            out["p_hat"].append(math.nan)
        out["p_bar"].append(deterring_cutoff(lx, params.y_bar, params))
    return out


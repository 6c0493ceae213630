"""End-to-end acceptance checks with measured values and tolerances.

Each check returns a `CriterionResult`; `run_all` runs the whole suite.  The
tolerances and Monte Carlo sizes live in `ValidationSettings` so that a config
file can tighten them (a tightened check is expected to fail, not crash).
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import equilibrium as eq
from .hjb_solver import INTERMEDIATE, integrate_D, lambda_low, solve_cutoff
from .mdp_oracle import solve_mdp
from .model_core import DomainError, ModelParams, NumericalError, crime_stock_slope, derived
from .simulator import (PolicySpec, empirical_stationary, estimate_loss, passive_learning_comparison,
                        set_threads)
from .stationary import deterring_cutoff, expected_enforcement_high, mps_check, stationary_distribution


def reference_params(**kw) -> ModelParams:
    base = dict(lam=4.0, x=1.0, c=1.5, r=2.0, rho_L=1.0, rho_H=1.0, w=0.0, y_bar=0.5)
    base.update(kw)
    return ModelParams(**base)


@dataclass
class ValidationSettings:
    seed: int = 20240607
    threads: int = 1
    # tolerances
    linear_slope_tol: float = 1e-8
    residual_tol: float = 1e-8
    mdp_loss_rel_tol: float = 5e-3
    gp_rel_tol: float = 1e-2
    n_se: float = 3.0
    ks_tol: float = 1e-2
    atom_tol: float = 1e-2
    mean_quad_tol: float = 1e-6
    mean_sim_tol: float = 5e-3
    mps_mean_tol: float = 1e-6
    limit_tol: float = 2e-2
    predictive_residual_tol: float = 1e-10
    ylimit_rel_tol: float = 5e-2
    # budgets (seconds)
    linear_time: float = 1.0
    regime_time: float = 120.0
    payoff_time: float = 300.0
    statics_time: float = 600.0
    # Monte Carlo sizes
    gp_paths: int = 100_000
    gp_dt: float = 1e-4
    op_paths: int = 20_000
    op_dt: float = 2.5e-4
    stationary_steps: int = 10_000_000
    stationary_paths: int = 64
    stationary_dt: float = 2.5e-4
    passive_paths: int = 20_000

    @classmethod
    def from_dict(cls, d: dict) -> "ValidationSettings":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise DomainError(f"unknown validation keys: {unknown}")
        out = cls()
        for k, v in d.items():
            default = getattr(out, k)
            if isinstance(default, bool) or not isinstance(v, (int, float)) or isinstance(v, bool):
                raise DomainError(f"validation key {k!r} must be a number")
            if isinstance(default, int) and float(v) != int(v):
                raise DomainError(f"validation key {k!r} must be an integer")
            setattr(out, k, type(default)(v))
        return out


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict
    tolerance: dict
    seconds: float
    error: str | None = None
    numerical_failure: bool = False

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        msg = f"[{tag}] {self.number:2d} {self.name}: {parts} ({self.seconds:.1f}s)"
        if self.error:
            msg += f" error: {self.error}"
        return msg

    def as_dict(self) -> dict:
        return asdict(self)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(u) for u in v) + "]"
    return str(v)


def _mc_budget(est, n_se):
    return n_se * est.se + est.tail_bound


# ---------------------------------------------------------------- criteria

def linear_oracle(s: ValidationSettings):
    P = reference_params()
    d = derived(P)
    t0 = time.perf_counter()
    curve = integrate_D(d.K_lin, params=P)
    p = np.linspace(d.pi1 + 0.01, 1.0, 2001)
    err = float(np.max(np.abs(curve.slope(p) - crime_stock_slope(P))))
    secs = time.perf_counter() - t0
    ok = err < s.linear_slope_tol and secs < s.linear_time
    return ok, {"K": d.K_lin, "sup_slope_error": err, "seconds": secs}, \
        {"sup_slope_error": s.linear_slope_tol, "seconds": s.linear_time}


def regime_classification(s: ValidationSettings):
    P = reference_params()
    d = derived(P)
    t0 = time.perf_counter()
    pol = solve_cutoff(P)
    vgap, sgap = pol.pasting_gaps()
    dlt = abs(pol.cutoff_delta())
    mdp = solve_mdp(P, n_grid=2000, dt=1e-3)
    switch = mdp.switch_point()
    # the analytic cutoff must sit in the grid cell where the MDP policy switches on
    cell_gap = abs(switch - pol.p_hat)
    loss_a = float(pol.loss(d.pi0))
    loss_m = float(mdp.loss(d.pi0))
    rel = abs(loss_m / loss_a - 1)
    secs = time.perf_counter() - t0
    ok = (pol.case_id == INTERMEDIATE and d.pi1 < pol.p_hat < d.p_hat_M and sgap < s.residual_tol
          and vgap < s.residual_tol and dlt < s.residual_tol and cell_gap <= mdp.spacing
          and rel < s.mdp_loss_rel_tol and secs < s.regime_time)
    return ok, {"case": pol.case_id, "p_hat": pol.p_hat, "slope_gap": sgap, "value_gap": vgap,
                "delta_at_cutoff": dlt, "mdp_switch": switch, "grid_spacing": mdp.spacing,
                "loss_pi0": loss_a, "mdp_loss_pi0": loss_m, "loss_rel_error": rel, "seconds": secs}, \
        {"p_hat_range": [d.pi1, d.p_hat_M], "residual": s.residual_tol,
         "mdp_switch_gap": "grid spacing", "loss_rel_error": s.mdp_loss_rel_tol, "seconds": s.regime_time}


def payoff_equivalence(s: ValidationSettings):
    P = reference_params()
    d = derived(P)
    target = P.c / P.r
    t0 = time.perf_counter()
    gp = PolicySpec.cutoff(d.p_hat_M, hold_at_cutoff=True)
    errs, errs_real = [], []
    starts = [d.p_hat_M, d.pi0, 1.0]
    for i, p0 in enumerate(starts):
        est = estimate_loss(gp, P, p0, s.gp_paths, s.gp_dt, seed=s.seed + i)
        errs.append(abs(est.mean / target - 1))
        errs_real.append(abs(est.mean_realized / target - 1))
    # the full-enforcement cost flow is deterministic, so a smaller ensemble suffices
    full = estimate_loss(PolicySpec.constant(1.0), P, d.pi0, s.op_paths, s.op_dt, seed=s.seed + 99)
    np_gap = abs(full.mean - target)
    secs = time.perf_counter() - t0
    ok = (max(errs) < s.gp_rel_tol and max(errs_real) < s.gp_rel_tol
          and np_gap <= _mc_budget(full, s.n_se) and secs < s.payoff_time)
    return ok, {"p0": starts, "gp_rel_error": errs, "gp_rel_error_realized": errs_real,
                "np_full_loss": full.mean, "np_full_se": full.se, "np_gap": np_gap,
                "tail_bound": full.tail_bound, "seconds": secs}, \
        {"gp_rel_error": s.gp_rel_tol, "np_gap": f"{s.n_se} SE + tail bound", "seconds": s.payoff_time}


def op_improvement(s: ValidationSettings):
    P = reference_params()
    d = derived(P)
    pol = solve_cutoff(P)
    analytic = float(pol.loss(d.pi0))
    est = estimate_loss(PolicySpec.cutoff(pol.p_hat, True), P, d.pi0, s.op_paths, s.op_dt, seed=s.seed)
    margin = P.c / P.r - analytic
    gap = abs(est.mean - analytic)
    ok = margin > s.n_se * est.se and gap <= _mc_budget(est, s.n_se)
    return ok, {"analytic_loss": analytic, "mc_loss": est.mean, "mc_se": est.se,
                "mc_loss_realized": est.mean_realized, "margin_below_np": margin, "gap": gap}, \
        {"margin": f"> {s.n_se} SE", "gap": f"{s.n_se} SE + tail bound"}


def stationary_check(s: ValidationSettings):
    P = reference_params()
    d = derived(P)
    pol = solve_cutoff(P)
    st = stationary_distribution(pol.p_hat, P)
    horizon = s.stationary_steps * s.stationary_dt
    emp = empirical_stationary(PolicySpec.cutoff(pol.p_hat), P, burn_in=100.0 / min(P.rho_L, P.rho_H),
                               horizon=horizon, dt=s.stationary_dt, seed=s.seed,
                               n_paths=s.stationary_paths)
    ks = emp.ks_distance(st.Phi)
    atom_err = abs(emp.atom - st.atom_m)
    mq = abs(st.mean - d.pi0)
    ms = abs(emp.mean_belief - d.pi0)
    ok = ks < s.ks_tol and atom_err < s.atom_tol and mq < s.mean_quad_tol and ms < s.mean_sim_tol
    return ok, {"p_hat": pol.p_hat, "ks": ks, "atom_analytic": st.atom_m, "atom_empirical": emp.atom,
                "mean_quadrature_error": mq, "mean_simulation_error": ms,
                "paths": s.stationary_paths, "steps_per_path": s.stationary_steps}, \
        {"ks": s.ks_tol, "atom": s.atom_tol, "mean_quadrature": s.mean_quad_tol,
         "mean_simulation": s.mean_sim_tol}


def mean_preserving_spread(s: ValidationSettings):
    P = reference_params()
    r = mps_check(0.25, 0.35, P, n=500)
    ok = r["ordered_above"] and r["mean_gap"] < s.mps_mean_tol
    return ok, {"ordered_above_upper_cutoff": r["ordered_above"], "max_violation": r["max_violation_above"],
                "reversed_between_cutoffs": r["reversed_below"], "mean_gap": r["mean_gap"]}, \
        {"mean_gap": s.mps_mean_tol, "ordering": "Phi(0.25) <= Phi(0.35) on 500 points of [0.35, 1]"}


def deterring_limits(s: ValidationSettings):
    P = reference_params()
    d = derived(P)
    lo = deterring_cutoff(P.lx, 0.01, P)
    hi = deterring_cutoff(P.lx, 0.99, P)
    res = max(abs(expected_enforcement_high(lo, P) - 0.01), abs(expected_enforcement_high(hi, P) - 0.99))
    ok = abs(lo - d.pi0) < s.limit_tol and abs(hi - d.pi1) < s.limit_tol and res < s.residual_tol
    return ok, {"p_bar_small_y": lo, "pi0": d.pi0, "p_bar_large_y": hi, "pi1": d.pi1, "residual": res}, \
        {"limit": s.limit_tol, "residual": s.residual_tol}


def equilibrium_ordering(s: ValidationSettings):
    P = reference_params()
    ll = lambda_low(P)
    ls = eq.lambda_star(P)
    lm = eq.lambda_M(P)
    x_op = ls / P.lam
    x_gp = min(lm / P.lam, 1.0)
    op = eq.op_equilibrium(P)
    gp = eq.gp_equilibrium(P)
    npe = eq.np_equilibrium(P)
    target = P.c / P.r
    ok = (ll < ls < lm and x_op < x_gp and math.isclose(op.crime_x, x_op, rel_tol=1e-12)
          and math.isclose(gp.crime_x, x_gp, rel_tol=1e-12) and op.pm_loss < gp.pm_loss
          and abs(gp.pm_loss - target) < 1e-12 and abs(npe.pm_loss - target) < 1e-12)
    return ok, {"lambda_low": ll, "lambda_star": ls, "lambda_M": lm, "x_OP": x_op, "x_GP": x_gp,
                "loss_OP": op.pm_loss, "loss_GP": gp.pm_loss, "loss_NP": npe.pm_loss}, \
        {"ordering": "lambda_low < lambda_star < lambda_M, x_OP < x_GP, OP < GP = NP = c/r"}


def beckerian_sweep(s: ValidationSettings):
    ys = [0.8, 0.5, 0.2, 0.05]
    op, gp, npl = [], [], []
    for y in ys:
        P = reference_params(y_bar=y)
        op.append(eq.op_equilibrium(P).pm_loss)
        gp.append(eq.gp_equilibrium(P).pm_loss)
        npl.append(eq.np_equilibrium(P).pm_loss)
    P = reference_params(y_bar=0.02)
    limit = derived(P).pi0 * lambda_low(P) / P.r
    last = eq.op_equilibrium(P).pm_loss
    rel = abs(last / limit - 1)
    monotone = all(b <= a for a, b in zip(op, op[1:]))
    flat = max(gp) - min(gp) == 0 and max(npl) - min(npl) == 0
    ok = monotone and rel < s.ylimit_rel_tol and flat
    return ok, {"y_bar": ys, "loss_OP": op, "loss_GP": gp, "loss_NP": npl, "loss_OP_y0.02": last,
                "limit": limit, "rel_gap": rel}, \
        {"monotone": "nonincreasing as y_bar falls", "rel_gap": s.ylimit_rel_tol}


def predictive_criminals_check(s: ValidationSettings):
    P = reference_params()
    p = np.linspace(0.0, 1.0, 500)
    res = float(np.max(np.abs(eq.predictive_criminals_residual(p, P))))
    # above c/lam the criminals' mixing makes the flow loss c whatever the enforcement level
    cut = P.c / P.lam
    above = p[p >= cut]
    flow_spread = max(float(np.max(np.abs(above * P.lam * eq.crime_schedule(above, P) * (1 - y) + P.c * y - P.c)))
                      for y in (0.0, P.y_bar, 1.0))
    target = min(P.c, derived(P).pi0 * P.lam) / P.r
    losses = {"NP": eq.np_equilibrium(P).pm_loss, "GP": eq.gp_equilibrium(P).pm_loss,
              "predictive": eq.predictive_criminals(P).pm_loss}
    gap = max(abs(v - target) for v in losses.values())
    ok = res < s.predictive_residual_tol and gap < 1e-12 and flow_spread < 1e-12
    return ok, {"hjb_residual": res, "flow_spread_above_cutoff": flow_spread, **losses, "target": target}, \
        {"hjb_residual": s.predictive_residual_tol, "loss_gap": 1e-12}


def passive_learning(s: ValidationSettings):
    win = reference_params(c=2.5)         # p_hat_M = 0.625 above pi_w for every w > 0
    tie = reference_params(c=1.2)         # p_hat_M = 0.3 below pi_w(0.3)
    adv, se, flags = [], [], []
    for i, w in enumerate((0.3, 0.1, 0.03)):
        rep = passive_learning_comparison(win.replace(w=w), n_paths=s.passive_paths, seed=s.seed + i)
        adv.append(rep.advantage)
        se.append(rep.advantage_se)
        flags.append(rep.gp_should_win)
    rep_tie = passive_learning_comparison(tie.replace(w=0.3), n_paths=s.passive_paths, seed=s.seed + 10)
    strict = flags[0] and adv[0] > s.n_se * se[0]
    indist = (not rep_tie.gp_should_win) and abs(rep_tie.advantage) <= s.n_se * rep_tie.advantage_se
    monotone = adv[0] > adv[1] > adv[2]
    ok = strict and indist and monotone
    return ok, {"w": [0.3, 0.1, 0.03], "advantage": adv, "advantage_se": se,
                "tie_advantage": rep_tie.advantage, "tie_se": rep_tie.advantage_se}, \
        {"strict": f"> {s.n_se} SE", "tie": f"<= {s.n_se} SE", "monotone": "decreasing as w falls"}


def comparative_statics(s: ValidationSettings):
    t0 = time.perf_counter()
    lxs = np.linspace(2.0, 8.0, 10)
    cs = np.linspace(0.5, 1.9, 10)
    ph = np.empty((10, 10))
    above_myopic, convex_bad, crossing_bad = 0, 0, 0
    p = np.linspace(0.0, 1.0, 500)
    tol = s.residual_tol
    for i, c in enumerate(cs):
        for j, lx in enumerate(lxs):
            P = reference_params(lam=float(lx), c=float(c))
            d = derived(P)
            pol = solve_cutoff(P)
            ph[i, j] = pol.p_hat
            above_myopic += pol.p_hat > d.p_hat_M + 1e-12
            mask = ((p <= pol.p_hat) & (pol.p_hat < d.pi0)) | ((p >= pol.p_hat) & (pol.p_hat > d.pi1))
            if mask.any():
                convex_bad += int(np.sum(pol.curvature(p[mask]) <= 0))
            dl = pol.delta(p)
            crossing_bad += int(np.sum(dl[p < pol.p_hat] > tol) + np.sum(dl[p > pol.p_hat] < -tol))
    dec_lx = bool(np.all(np.diff(ph, axis=1) < 0))
    inc_c = bool(np.all(np.diff(ph, axis=0) > 0))
    lows = [lambda_low(reference_params(c=float(c), lam=8.0)) for c in cs]
    bars = [derived(reference_params(c=float(c), lam=8.0)).lambda_bar for c in cs]
    lows_inc = all(b > a for a, b in zip(lows, lows[1:]))
    bars_inc = all(b > a or (math.isinf(a) and math.isinf(b)) for a, b in zip(bars, bars[1:]))
    secs = time.perf_counter() - t0
    ok = (dec_lx and inc_c and above_myopic == 0 and lows_inc and bars_inc and convex_bad == 0
          and crossing_bad == 0 and secs < s.statics_time)
    return ok, {"p_hat_decreasing_in_lx": dec_lx, "p_hat_increasing_in_c": inc_c,
                "cutoffs_above_myopic": above_myopic, "lambda_low_increasing": lows_inc,
                "lambda_bar_increasing": bars_inc, "nonconvex_points": convex_bad,
                "crossing_violations": crossing_bad, "seconds": secs}, \
        {"delta_tol": tol, "seconds": s.statics_time}


CRITERIA = [
    (1, "linear-solution oracle", linear_oracle),
    (2, "regime classification and MDP oracle", regime_classification),
    (3, "GP/NP payoff equivalence", payoff_equivalence),
    (4, "OP strict improvement", op_improvement),
    (5, "stationary distribution", stationary_check),
    (6, "mean-preserving spread", mean_preserving_spread),
    (7, "deterring cutoff limits", deterring_limits),
    (8, "equilibrium ordering", equilibrium_ordering),
    (9, "deterrence-threshold sweep", beckerian_sweep),
    (10, "predictive criminals", predictive_criminals_check),
    (11, "passive learning", passive_learning),
    (12, "comparative statics", comparative_statics),
]


def run_criterion(number: int, settings: ValidationSettings | None = None) -> CriterionResult:
    s = settings or ValidationSettings()
    set_threads(s.threads)
    num, name, fn = CRITERIA[number - 1]
    t0 = time.perf_counter()
    try:
        ok, measured, tol = fn(s)
        return CriterionResult(num, name, bool(ok), measured, tol, time.perf_counter() - t0)
    except (NumericalError, DomainError) as exc:
        return CriterionResult(num, name, False, {}, {}, time.perf_counter() - t0,
                               f"{type(exc).__name__}: {exc}", isinstance(exc, NumericalError))


def run_all(settings: ValidationSettings | None = None, numbers=None) -> list[CriterionResult]:
    numbers = numbers or [n for n, _, _ in CRITERIA]
    return [run_criterion(n, settings) for n in numbers]

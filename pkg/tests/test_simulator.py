import csv
import io

import numpy as np
import pytest

from predictive_enforcement.mdp_oracle import solve_mdp
from predictive_enforcement.model_core import DomainError, NumericalError, derived
from predictive_enforcement.simulator import (PolicySpec, empirical_stationary, estimate_loss, max_dt,
                                              passive_learning_comparison, simulate_path)
from predictive_enforcement.validation import reference_params

DT = 2.5e-4


def test_idle_from_long_run_prior_stays_put(ref):
    rec = simulate_path(PolicySpec.constant(0.0), ref, DT, seed=1)
    assert np.all(rec.beliefs == 0.5)
    assert not rec.detection_flags.any()


def test_full_enforcement_drifts_down_between_detections(ref):
    d = derived(ref)
    rec = simulate_path(PolicySpec.constant(1.0), ref, DT, seed=2, p0=1.0)
    b = rec.beliefs
    jumps = np.flatnonzero(rec.detection_flags)
    steps = np.diff(b)
    quiet = np.ones(len(steps), bool)
    quiet[jumps[jumps < len(steps)]] = False
    assert np.all(steps[quiet] <= 0)
    assert b.min() >= d.pi1 - 1e-12


def test_detection_resets_belief(ref, ref_policy):
    rec = simulate_path(PolicySpec.cutoff(ref_policy.p_hat), ref, DT, seed=3)
    jumps = np.flatnonzero(rec.detection_flags)
    assert jumps.size > 0
    assert np.all(rec.beliefs[jumps + 1] == 1.0)
    assert np.all(rec.states[jumps] == 1)           # crimes happen only in H
    assert np.allclose(rec.detections, rec.times[jumps + 1])


def test_holding_keeps_belief_at_cutoff(ref, ref_policy):
    q = ref_policy.p_hat
    rec = simulate_path(PolicySpec.cutoff(q), ref, DT, seed=4)
    assert rec.beliefs.min() >= q
    at = rec.beliefs == q
    assert at.any()
    z = (ref.rho_L * (1 - q) - ref.rho_H * q) / (ref.lx * q * (1 - q))
    assert rec.actions[at].mean() == pytest.approx(z, abs=2e-3)


def test_seeded_paths_are_bit_identical(ref, ref_policy):
    pol = PolicySpec.cutoff(ref_policy.p_hat)
    a = simulate_path(pol, ref, DT, seed=99)
    b = simulate_path(pol, ref, DT, seed=99)
    assert a.csv_text() == b.csv_text()
    assert a.discounted_loss == b.discounted_loss
    ea = estimate_loss(pol, ref, 0.5, 1200, DT, seed=5)
    eb = estimate_loss(pol, ref, 0.5, 1200, DT, seed=5)
    assert np.array_equal(ea.per_path, eb.per_path)
    assert ea.mean != estimate_loss(pol, ref, 0.5, 1200, DT, seed=6).mean


def test_loss_bounds(ref, ref_policy):
    est = estimate_loss(PolicySpec.cutoff(ref_policy.p_hat), ref, 1.0, 2000, DT, seed=7)
    assert np.all(est.per_path >= 0)
    assert np.all(est.per_path <= (ref.lx + ref.c) / ref.r)


def test_grid_preconditions(ref):
    pol = PolicySpec.constant(0.0)
    with pytest.raises(DomainError):
        simulate_path(pol, ref, 2 * max_dt(ref), seed=0)
    with pytest.raises(DomainError):
        simulate_path(pol, ref, DT, horizon=1.0, seed=0)
    with pytest.raises(DomainError):
        estimate_loss(pol, ref, 1.5, 100, DT)


def test_full_enforcement_costs_exactly_c_over_r(ref):
    est = estimate_loss(PolicySpec.constant(1.0), ref, 0.5, 2000, DT, seed=8)
    assert abs(est.mean - 0.75) <= 3 * est.se + est.tail_bound


def test_optimal_policy_loss_matches_solver(ref, ref_policy):
    est = estimate_loss(PolicySpec.cutoff(ref_policy.p_hat), ref, 0.5, 8000, DT, seed=9)
    assert abs(est.mean - ref_policy.loss(0.5)) <= 3 * est.se + est.tail_bound


def test_estimators_agree(ref, ref_policy):
    # belief-weighted harm and realized harm have the same expectation
    for pol in (PolicySpec.cutoff(ref_policy.p_hat), PolicySpec.constant(0.3)):
        est = estimate_loss(pol, ref, 0.5, 8000, DT, seed=10)
        se = np.hypot(est.se, est.se_realized)
        assert abs(est.mean - est.mean_realized) <= 3 * se


def test_martingale_mean_belief(ref):
    # flow is affine in p under a constant policy, so E p_t = pi0 pins the loss
    y = 0.5
    est = estimate_loss(PolicySpec.constant(y), ref, 0.5, 8000, DT, seed=11)
    exact = (0.5 * ref.lx * (1 - y) + ref.c * y) / ref.r
    assert abs(est.mean - exact) <= 3 * est.se + est.tail_bound


def test_halving_dt(ref):
    pol = PolicySpec.constant(0.5)
    a = estimate_loss(pol, ref, 0.5, 8000, DT, seed=12)
    b = estimate_loss(pol, ref, 0.5, 8000, DT / 2, seed=12)
    assert abs(a.mean - b.mean) < a.se


def test_filter_beats_constant_prediction(ref, ref_policy):
    rec = simulate_path(PolicySpec.cutoff(ref_policy.p_hat), ref, DT, horizon=50.0, seed=13)
    h = rec.states.astype(float)
    assert np.mean((rec.beliefs - h) ** 2) < np.mean((0.5 - h) ** 2)


def test_path_csv_round_trip(ref, ref_policy):
    rec = simulate_path(PolicySpec.cutoff(ref_policy.p_hat), ref, DT, seed=14)
    rows = list(csv.reader(io.StringIO(rec.csv_text())))
    assert rows[0] == ["time", "state", "belief", "action", "detection_flag", "instantaneous_loss"]
    body = rows[1:]
    assert len(body) == len(rec.times)
    assert np.array_equal(np.array([float(r[2]) for r in body]), rec.beliefs)
    assert np.array_equal(np.array([r[1] == "H" for r in body]), rec.states.astype(bool))


def test_stationary_state_ordering(ref, ref_policy):
    emp = empirical_stationary(PolicySpec.cutoff(ref_policy.p_hat), ref, 100.0, 500.0, DT, seed=15,
                               n_paths=4, n_bins=2000)
    qs = np.quantile(np.linspace(ref_policy.p_hat, 1, 1000), np.linspace(0.025, 0.975, 20))
    cH, c, cL = emp.cdf(qs, "H"), emp.cdf(qs), emp.cdf(qs, "L")
    assert np.all(cH <= c) and np.all(c <= cL)


def test_stationary_preconditions(ref):
    with pytest.raises(DomainError):
        empirical_stationary(PolicySpec.cutoff(0.6), ref, 100.0, 10.0, DT)
    with pytest.raises(DomainError):
        empirical_stationary(PolicySpec.cutoff(0.3), ref, 10.0, 10.0, DT)


def test_passive_learning_needs_w(ref):
    with pytest.raises(DomainError):
        passive_learning_comparison(ref)


def test_passive_learning_small():
    P = reference_params(c=2.5, w=0.3)
    rep = passive_learning_comparison(P, n_paths=2000, seed=16)
    assert rep.gp_should_win
    assert rep.advantage > 3 * rep.advantage_se


def test_mdp_high_crime_switch():
    P = reference_params(lam=1.0, c=0.3)
    sol = solve_mdp(P, n_grid=500)
    assert abs(sol.switch_point() - 0.3) <= sol.spacing


def test_mdp_gives_up_loudly(ref):
    with pytest.raises(NumericalError):
        solve_mdp(ref, n_grid=200, max_iter=3)

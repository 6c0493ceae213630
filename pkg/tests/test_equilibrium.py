import math

import numpy as np
import pytest

from predictive_enforcement import equilibrium as eq
from predictive_enforcement.hjb_solver import lambda_low, solve_cutoff
from predictive_enforcement.model_core import derived, full_enforcement_rest_point
from predictive_enforcement.stationary import deterring_cutoff
from predictive_enforcement.validation import reference_params


def test_np_mixed_branch(ref):
    out = eq.np_equilibrium(ref)
    assert out.crime_x == pytest.approx(0.75, abs=1e-15)
    assert out.enforcement == "0.5"
    assert out.pm_loss == pytest.approx(0.75, abs=1e-15)


def test_np_pure_branch():
    out = eq.np_equilibrium(reference_params(lam=2.0, c=1.5))
    assert (out.crime_x, out.enforcement) == (1.0, "0")
    assert out.pm_loss == pytest.approx(0.5, abs=1e-15)


def test_np_boundary_takes_mixed_branch():
    out = eq.np_equilibrium(reference_params(lam=3.0))   # lam = c / pi0
    assert out.crime_x == 1.0 and out.enforcement == "0.5"


def test_lambda_M_reference(ref):
    lm = eq.lambda_M(ref)
    assert lm == pytest.approx(3.627463425816452, abs=1e-9)
    assert ref.c / 0.5 < lm < ref.c / full_enforcement_rest_point(lm, 1.0, 1.0)
    assert abs(ref.c / lm - deterring_cutoff(lm, ref.y_bar, ref)) < 1e-8


def test_lambda_star_reference(ref):
    ls = eq.lambda_star(ref)
    assert ls == pytest.approx(2.9023809828016756, abs=1e-9)
    assert lambda_low(ref) < ls < eq.lambda_M(ref)
    p_hat = solve_cutoff(ref.replace(lam=ls)).p_hat
    assert abs(p_hat - deterring_cutoff(ls, ref.y_bar, ref)) < 1e-8


def test_lambda_star_falls_with_threshold(ref):
    lower = eq.lambda_star(ref.replace(y_bar=0.25))
    assert lower < eq.lambda_star(ref)
    assert lower == pytest.approx(2.6382033058087653, abs=1e-9)


def test_gp_branches_meet_at_lambda_M(ref):
    lm = eq.lambda_M(ref)
    pure = eq.gp_equilibrium(ref.replace(lam=lm))
    mixed = eq.gp_equilibrium(ref.replace(lam=lm * (1 + 1e-12)))
    assert pure.crime_x == 1.0
    assert mixed.crime_x == pytest.approx(1.0, abs=1e-11)
    assert mixed.cutoff == pytest.approx(pure.cutoff, abs=1e-11)


def test_gp_mixed_equilibrium_condition(ref):
    out = eq.gp_equilibrium(ref)
    lx = ref.lam * out.crime_x
    assert abs(ref.c / lx - deterring_cutoff(lx, ref.y_bar, ref)) < 1e-8
    assert out.crime_x == pytest.approx(0.906865856454113, abs=1e-9)


def test_op_equilibrium_reference(ref):
    out = eq.op_equilibrium(ref)
    assert out.crime_x == pytest.approx(2.9023809828016756 / 4, abs=1e-9)
    assert out.crime_x < eq.gp_equilibrium(ref).crime_x
    assert out.pm_loss == pytest.approx(0.6838879428513126, abs=1e-9)
    # the cutoff delivers exactly the deterrence threshold to criminals in H
    assert out.extra["enforcement_high"] == pytest.approx(0.5, abs=1e-9)
    assert out.extra["loss_stationary_avg"] < out.pm_loss


def test_all_idle_below_lambda_low(ref):
    lam = 0.9 * lambda_low(ref)
    P = ref.replace(lam=lam)
    idle = 0.5 * lam / ref.r
    for out in (eq.np_equilibrium(P), eq.gp_equilibrium(P), eq.op_equilibrium(P)):
        assert out.pm_loss == pytest.approx(idle, abs=1e-12)


@pytest.mark.parametrize("lam", [2.0, 2.6, 3.2, 4.0, 6.0])
def test_regime_ordering(lam):
    P = reference_params(lam=lam)
    npl = eq.np_equilibrium(P).pm_loss
    gpl = eq.gp_equilibrium(P).pm_loss
    opl = eq.op_equilibrium(P).pm_loss
    assert gpl == npl
    if lam > lambda_low(P):
        assert opl < gpl - 1e-6
    else:
        assert opl <= gpl + 1e-12


def test_threshold_irrelevance_for_np_and_gp():
    losses = {(eq.np_equilibrium(reference_params(y_bar=y)).pm_loss,
               eq.gp_equilibrium(reference_params(y_bar=y)).pm_loss) for y in (0.2, 0.5, 0.8)}
    assert len(losses) == 1


def test_predictive_criminals(ref):
    p = np.linspace(0, 1, 500)
    assert np.max(np.abs(eq.predictive_criminals_residual(p, ref))) < 1e-10
    out = eq.predictive_criminals(ref)
    assert out.crime_x == pytest.approx(ref.c / ref.lam, abs=1e-15)
    assert out.pm_loss == eq.np_equilibrium(ref).pm_loss


def test_commitment_reference(ref):
    assert eq.commitment_reference_loss(ref) == pytest.approx(min(1.5 * 0.5, 2.0) / 2)


def test_figure6_curves(ref):
    xs = np.linspace(0.05, 1.0, 20)
    cur = eq.figure6_curves(ref, xs)
    ph, pm = np.array(cur["p_hat"]), np.array(cur["p_hat_M"])
    ok = ~np.isnan(ph)
    assert ok.any() and np.all(ph[ok] < pm[ok])
    assert np.all(np.isnan(ph[xs * ref.lam <= ref.c]))
    assert not any(math.isnan(v) for v in cur["p_bar"])

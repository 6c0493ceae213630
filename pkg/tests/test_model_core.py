import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predictive_enforcement.model_core import (DomainError, ModelParams, crime_stock, derived, drift,
                                               enforced_drift, full_enforcement_rest_point,
                                               high_crime_threshold, holding_action, natural_drift,
                                               sigma)


def test_reference_constants(ref):
    d = derived(ref)
    assert d.pi0 == 0.5
    assert d.pi1 == pytest.approx((3 - math.sqrt(5)) / 4, abs=1e-15)   # root of 4p^2 - 6p + 1
    assert d.p_hat_M == 0.375
    assert d.K_lin == pytest.approx(0.75, abs=1e-15)
    assert d.K_max == pytest.approx(1.25, abs=1e-15)
    assert math.isinf(d.lambda_bar)
    assert d.pi_w == d.pi0


def test_high_crime_threshold_closed_form():
    assert high_crime_threshold(0.3, 1.0, 1.0) == pytest.approx(0.3 * 1.7 / 0.7, rel=1e-15)
    assert math.isinf(high_crime_threshold(1.0, 1.0, 1.0))


@pytest.mark.parametrize("bad", [dict(lam=1.0), dict(x=0.0), dict(x=1.2), dict(w=1.0), dict(y_bar=1.0),
                                 dict(r=-1.0), dict(c=float("nan")), dict(rho_H=0.0)])
def test_params_rejected(bad):
    kw = dict(lam=4.0)
    kw.update(bad)
    with pytest.raises(DomainError):
        ModelParams(**kw)


def test_drift_rejects_out_of_range(ref):
    with pytest.raises(DomainError):
        drift(1.2, 0.0, ref)
    with pytest.raises(DomainError):
        drift(0.5, -0.1, ref)


def test_rest_points(ref):
    d = derived(ref)
    assert drift(d.pi0, 0.0, ref) == pytest.approx(0.0, abs=1e-15)
    assert drift(d.pi1, 1.0, ref) == pytest.approx(0.0, abs=1e-15)


def test_small_root_is_accurate_for_tiny_rates():
    # the stable form avoids cancellation when lx is small
    lx, rl, rh = 1e-9, 1.0, 1.0
    p = full_enforcement_rest_point(lx, rl, rh)
    assert abs(lx * p * p - (rl + rh + lx) * p + rl) < 1e-15


def test_passive_rest_point_below_pi0(ref):
    P = ref.replace(w=0.3)
    d = derived(P)
    assert d.pi1 < d.pi_w < d.pi0
    assert drift(d.pi_w, 0.0, P) == pytest.approx(0.0, abs=1e-14)


lam_x = st.floats(1.6, 12.0)
rates = st.floats(0.2, 3.0)


@settings(max_examples=60, deadline=None)
@given(lx=lam_x, rl=rates, rh=rates, u=st.floats(0.02, 0.98), w=st.sampled_from([0.0, 0.1, 0.4]))
def test_holding_action_freezes_belief(lx, rl, rh, u, w):
    P = ModelParams(lam=lx, c=1.5, rho_L=rl, rho_H=rh, w=w)
    d = derived(P)
    p = d.pi1 + u * (d.pi_w - d.pi1)
    z = holding_action(p, P)
    assert 0 <= z <= 1
    assert abs(drift(p, z, P)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(lx=lam_x, rl=rates, rh=rates, p=st.floats(0.0, 1.0))
def test_drift_ordering(lx, rl, rh, p):
    # more enforcement means faster downward drift without detections
    P = ModelParams(lam=lx, c=1.5, rho_L=rl, rho_H=rh)
    assert enforced_drift(p, P) <= natural_drift(p, P) + 1e-15


def test_crime_stock_solves_its_equation(ref):
    p = np.linspace(0, 1, 101)
    C = crime_stock(p, ref)
    slope = ref.lx / (ref.r + ref.switch_rate)
    assert np.max(np.abs(ref.r * C - p * ref.lx - natural_drift(p, ref) * slope)) < 1e-14


def test_sigma_domain(ref):
    assert sigma(0.5, ref) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DomainError):
        sigma(0.6, ref)

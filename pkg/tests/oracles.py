"""Slow, independent reference computations used only by the tests.

The intermediate-case cutoff is recomputed by plain bisection on direct
integrations of the value ODE (one integration per trial K, no superposition,
no library root finder).
"""
import numpy as np

from predictive_enforcement.hjb_solver import delta_from, integrate_D, lower_slope_point
from predictive_enforcement.model_core import derived, sigma_unchecked


def bisect(fn, a, b, tol=1e-13, max_iter=200):
    fa = fn(a)
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = fn(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
        if b - a < tol:
            break
    return 0.5 * (a + b)


def intermediate_cutoff(params):
    d = derived(params)
    p_low = lower_slope_point(params)

    def trial(K):
        curve = integrate_D(K, p_lo=max(d.pi1 + 1e-6, p_low - 1e-3), params=params)

        def slope_gap(p):
            return float(curve.slope(p) - sigma_unchecked(p, params))

        p = bisect(slope_gap, p_low, d.pi0)
        return p, float(delta_from(p, curve.value(p), curve.slope(p), K, params))

    p_lo = max(d.pi1 + 1e-6, p_low - 1e-3)
    s0 = float(sigma_unchecked(d.pi0, params))
    # K0: the member whose slope meets sigma exactly at pi0
    K0 = bisect(lambda K: float(integrate_D(K, p_lo=p_lo, params=params).slope(d.pi0)) - s0,
                d.K_lin, d.K_max, tol=1e-13)
    K_hat = bisect(lambda K: trial(K)[1], d.K_lin + 1e-12, K0, tol=1e-12)
    return trial(K_hat)[0], K_hat


def cutoff_cdf_grid(st, n=2001):
    """Phi by trapezoid quadrature of the density on a fine grid (atom added at the cutoff)."""
    p = np.linspace(st.p_hat, 1.0, n)
    dens = st.density(p)
    dens[0] = st.phi_hat
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(p))])
    return p, st.atom_m + cum

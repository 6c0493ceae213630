"""Long-run belief distribution under a cutoff policy with the cutoff in (pi1, pi0).

Above the cutoff the planner enforces fully, so the belief drifts down along
g(p) = f(p, 1) until it is caught at the cutoff (an atom of mass m) or a
detection sends it back to 1.  Balancing the probability flux gives the density

    phi(p) = phi(p_hat) * exp(E(p)),   E(p) = int_{p_hat}^p kappa(s) ds,
    kappa(s) = -(s lx + g'(s)) / g(s).

E, int exp(E) and int s exp(E) are accumulated together in one adaptive
integration from the cutoff up to 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .hjb_solver import bracketed_root
from .model_core import (DomainError, ModelParams, NumericalError, derived, enforced_drift,
                         enforced_drift_slope, natural_drift)

CUTOFF_GUARD = 1e-6
CDF_GRID = 1000


def _check_cutoff(p_hat, params):
    d = derived(params)
    if params.w > 0:
        raise DomainError("stationary distribution implemented for w = 0 only")
    if not d.pi1 < p_hat < d.pi0:
        raise DomainError(f"cutoff must lie in ({d.pi1:.6g}, {d.pi0:.6g}); outside it the "
                          "long-run distribution is degenerate")
    return d


def _cycle_integrals(p_hat, params, dense=False):
    lx = params.lx

    def rhs(s, y):
        e = np.exp(y[0])
        k = -(s * lx + enforced_drift_slope(s, params)) / enforced_drift(s, params)
        return [k, e, s * e]

    sol = solve_ivp(rhs, (p_hat, 1.0), [0.0, 0.0, 0.0], method="DOP853", rtol=1e-12,
                    atol=1e-13, dense_output=dense)
    if sol.status != 0:
        raise NumericalError(f"density integration failed at p={sol.t[-1]:.6g}: {sol.message}")
    return sol


def _atom_ratio(p_hat, params):
    # -g(p_hat) / (p_hat lx z(p_hat)), using p_hat lx z(p_hat) = h(p_hat) / (1 - p_hat)
    return -enforced_drift(p_hat, params) * (1 - p_hat) / natural_drift(p_hat, params)


def atom_mass(p_hat, params: ModelParams) -> float:
    _check_cutoff(p_hat, params)
    eta = _cycle_integrals(p_hat, params).y[1, -1]
    R = _atom_ratio(p_hat, params)
    return float(R / (eta + R))


def expected_enforcement_high(p_hat, params: ModelParams) -> float:
    """Long-run enforcement faced by a criminal who knows the state is H."""
    d = _check_cutoff(p_hat, params)
    m = atom_mass(p_hat, params)
    z = natural_drift(p_hat, params) / (params.lx * p_hat * (1 - p_hat))
    return float(1 - m * p_hat * (1 - z) / d.pi0)


@dataclass
class StationaryBelief:
    params: ModelParams
    p_hat: float
    atom_m: float
    phi_hat: float
    grid: np.ndarray
    density_grid: np.ndarray
    mean: float
    cdf_Phi: PchipInterpolator
    cdf_Psi: PchipInterpolator
    cdf_Ups: PchipInterpolator
    _sol: object

    @property
    def mu(self) -> float:
        return self.atom_m * self.p_hat / derived(self.params).pi0

    def _integrals(self, p):
        a = np.clip(np.asarray(p, dtype=float), self.p_hat, 1.0)
        return self._sol.sol(a)

    def density(self, p):
        a = np.asarray(p, dtype=float)
        E = self._integrals(a)[0]
        out = np.where((a > self.p_hat) & (a <= 1), self.phi_hat * np.exp(E), 0.0)
        return out if out.ndim else float(out)

    def _cdf(self, p, which):
        a = np.asarray(p, dtype=float)
        _, I, J = self._integrals(a)
        pi0 = derived(self.params).pi0
        m, ph = self.atom_m, self.phi_hat
        if which == "Phi":
            v = m + ph * I
        elif which == "Psi":
            v = (m * self.p_hat + ph * J) / pi0
        else:
            v = (m * (1 - self.p_hat) + ph * (I - J)) / (1 - pi0)
        out = np.where(a < self.p_hat, 0.0, np.where(a >= 1, 1.0, v))
        return out if out.ndim else float(out)

    # exact evaluations from the dense integration (the Pchip fields are the cheap tabulated copies)
    def Phi(self, p):
        return self._cdf(p, "Phi")

    def Psi(self, p):
        return self._cdf(p, "Psi")

    def Ups(self, p):
        return self._cdf(p, "Ups")

    def balance_residual(self, p):
        """Flux into (p, 1] by detections minus drift flux across p from above."""
        a = np.asarray(p, dtype=float)
        prm = self.params
        E, _, J = self._integrals(a)
        atom_out = self.atom_m * natural_drift(self.p_hat, prm) / (1 - self.p_hat)
        lhs = atom_out + self.phi_hat * prm.lx * J
        rhs = -self.phi_hat * np.exp(E) * enforced_drift(a, prm)
        return lhs - rhs

    def expected_enforcement_high(self) -> float:
        z = natural_drift(self.p_hat, self.params) / (self.params.lx * self.p_hat * (1 - self.p_hat))
        return float(1 - self.mu * (1 - z))

    def average(self, fn):
        """E_Phi[fn(p)] using the atom plus Gauss-Legendre on the density."""
        nodes, weights = np.polynomial.legendre.leggauss(200)
        s = self.p_hat + (nodes + 1) * (1 - self.p_hat) / 2
        wts = weights * (1 - self.p_hat) / 2
        return float(self.atom_m * fn(np.array([self.p_hat]))[0] + np.sum(wts * self.density(s) * fn(s)))


def stationary_distribution(p_hat, params: ModelParams) -> StationaryBelief:
    d = _check_cutoff(p_hat, params)
    sol = _cycle_integrals(p_hat, params, dense=True)
    eta, J1 = sol.y[1, -1], sol.y[2, -1]
    R = _atom_ratio(p_hat, params)
    phi_hat = 1.0 / (eta + R)
    m = phi_hat * R
    grid = np.linspace(p_hat, 1.0, CDF_GRID)
    E, I, J = sol.sol(grid)
    density = phi_hat * np.exp(E)
    Phi = m + phi_hat * I
    Psi = (m * p_hat + phi_hat * J) / d.pi0
    Ups = (m * (1 - p_hat) + phi_hat * (I - J)) / (1 - d.pi0)
    return StationaryBelief(
        params=params, p_hat=float(p_hat), atom_m=float(m), phi_hat=float(phi_hat), grid=grid,
        density_grid=density, mean=float(m * p_hat + phi_hat * J1),
        cdf_Phi=PchipInterpolator(grid, Phi), cdf_Psi=PchipInterpolator(grid, Psi),
        cdf_Ups=PchipInterpolator(grid, Ups), _sol=sol)


def deterring_cutoff(lambda_x, y_bar, params: ModelParams) -> float:
    """Cutoff whose long-run enforcement in state H equals y_bar, at effective crime rate lambda_x.

    Enforcement in H falls from 1 to 0 as the cutoff moves from pi1 to pi0.
    """
    if not lambda_x > 0:
        raise DomainError("lambda_x must be positive")
    if not 0 < y_bar < 1:
        raise DomainError("y_bar must lie in (0, 1)")
    prm = _dynamics_only(lambda_x, params)
    d = derived(prm)
    return bracketed_root(lambda q: expected_enforcement_high(q, prm) - y_bar,
                          d.pi1 + CUTOFF_GUARD, d.pi0 - CUTOFF_GUARD, xtol=1e-13,
                          what="deterring cutoff")


def _dynamics_only(lambda_x, params):
    # the long-run law depends on (lx, rho_L, rho_H) only, so the cost is irrelevant here;
    # it is lowered when needed to keep the parameter set valid
    return params.replace(lam=lambda_x / params.x, c=min(params.c, 0.5 * lambda_x), w=0.0)


def mps_check(p_hat_1, p_hat_2, params: ModelParams, n=500, tol=1e-10) -> dict:
    """Compare the distributions for cutoffs p_hat_1 <= p_hat_2.

    The lower cutoff's CDF lies below the higher one's on [p_hat_2, 1] and the
    means coincide, so the lower cutoff yields a mean-preserving spread.
    """
    if p_hat_1 > p_hat_2:
        raise DomainError("need p_hat_1 <= p_hat_2")
    s1 = stationary_distribution(p_hat_1, params)
    s2 = stationary_distribution(p_hat_2, params)
    upper = np.linspace(p_hat_2, 1.0, n)
    lower = np.linspace(p_hat_1, p_hat_2, n, endpoint=False)
    gap_up = s1.Phi(upper) - s2.Phi(upper)
    gap_low = s1.Phi(lower) - s2.Phi(lower) if p_hat_2 > p_hat_1 else np.zeros(1)
    return {
        "ordered_above": bool(np.all(gap_up <= tol)),
        "max_violation_above": float(max(gap_up.max(), 0.0)),
        "reversed_below": bool(np.all(gap_low >= -tol)),
        "mean_1": s1.mean, "mean_2": s2.mean,
        "mean_gap": abs(s1.mean - s2.mean),
    }

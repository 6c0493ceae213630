"""Brute-force check of the optimal policy: value iteration on a discretized belief MDP.

Time is cut into steps of length dt and the belief into a uniform grid.  Each
step the planner picks no enforcement, full enforcement, or (where it exists)
the holding level; the flow loss accrues, a detection sends the belief to 1
and otherwise the belief moves along its drift (off-grid values interpolated
linearly).  Nothing here uses the ODE machinery, so agreement with
`hjb_solver` is an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import DomainError, ModelParams, NumericalError, crime_stock, derived, natural_drift

ACTION_NAMES = ("idle", "enforce", "hold")


@dataclass
class MDPSolution:
    grid: np.ndarray
    loss_grid: np.ndarray
    action: np.ndarray      # index into ACTION_NAMES per grid node
    iterations: int
    dt: float

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def loss(self, p):
        return np.interp(p, self.grid, self.loss_grid)

    def switch_point(self) -> float:
        """Smallest grid belief at which the planner does anything other than stay idle."""
        active = np.flatnonzero(self.action != 0)
        if active.size == 0:
            return float("nan")
        return float(self.grid[active[0]])


def solve_mdp(params: ModelParams, n_grid=2000, dt=1e-3, tol=1e-13, max_iter=200000) -> MDPSolution:
    if n_grid < 10 or not dt > 0:
        raise DomainError("need n_grid >= 10 and dt > 0")
    d = derived(params)
    lx, c, r, w = params.lx, params.c, params.r, params.w
    p = np.linspace(0.0, 1.0, n_grid)
    h = natural_drift(p, params)
    inside = (p > d.pi1) & (p < d.pi_w)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(inside, (h / (lx * p * (1 - p)) - w) / (1 - w), 0.0)

    steps = []
    for y, allowed in ((np.zeros(n_grid), None), (np.ones(n_grid), None), (z, inside)):
        det = y + w - y * w
        nxt = np.clip(p + (h - p * (1 - p) * lx * det) * dt, 0.0, 1.0)
        if allowed is not None:
            nxt = np.where(allowed, p, nxt)   # holding keeps the belief exactly in place
        steps.append((nxt, p * lx * det * dt, (p * lx * (1 - y) + c * y) * dt, allowed))

    disc = np.exp(-r * dt)
    L = crime_stock(p, params)   # loss of never enforcing, an upper bound
    cand = np.empty((3, n_grid))
    for it in range(1, max_iter + 1):
        for k, (nxt, q, flow, allowed) in enumerate(steps):
            v = flow + disc * (q * L[-1] + (1 - q) * np.interp(nxt, p, L))
            cand[k] = v if allowed is None else np.where(allowed, v, np.inf)
        new = cand.min(axis=0)
        diff = np.max(np.abs(new - L))
        L = new
        if diff < tol:
            return MDPSolution(p, L, cand.argmin(axis=0), it, dt)
    raise NumericalError(f"value iteration did not converge in {max_iter} sweeps (last change {diff:.3e})")

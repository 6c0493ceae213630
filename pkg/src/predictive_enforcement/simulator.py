"""Fixed-step Monte Carlo of the hidden state, crimes, detections and the planner's belief.

Each step of length dt: the state switches with probability rho*dt, a crime
happens in state H with probability lam*x*dt and is detected with probability
y + w - y*w.  A detection resets the belief to 1; otherwise the belief takes an
Euler step along its drift.  The per-step coin flips are drawn as geometric
waiting times (number of steps to the next success), which has exactly the
same law and needs far fewer random draws.  Each waiting time is
ceil(E / -log(1 - q)) with E a unit exponential, so runs at different dt on the
same seed see nearly the same event times.

Two loss estimators are accumulated per path: the belief-flow form
p*lam*x*(1-y) + c*y and the realized form (unintercepted crimes plus c*y).
The flow loss of a step uses the belief at the start of the step.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .model_core import DomainError, ModelParams, NumericalError, derived

# the bundled TBB is often too old; skip it rather than warn on every import
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

CHUNK = 500
TAIL_LEVEL = 1e-6

CONSTANT, CUTOFF = 0, 1


@dataclass(frozen=True)
class PolicySpec:
    kind: str                 # "constant" or "cutoff"
    y: float = 0.0            # level for constant policies
    p_hat: float = 0.5        # cutoff
    hold_at_cutoff: bool = True

    def __post_init__(self):
        if self.kind not in ("constant", "cutoff"):
            raise DomainError("policy kind must be 'constant' or 'cutoff'")
        if not 0 <= self.y <= 1 or not 0 <= self.p_hat <= 1:
            raise DomainError("policy levels must lie in [0, 1]")

    @staticmethod
    def constant(y):
        return PolicySpec("constant", y=float(y))

    @staticmethod
    def cutoff(p_hat, hold_at_cutoff=True):
        return PolicySpec("cutoff", p_hat=float(p_hat), hold_at_cutoff=hold_at_cutoff)


def _holding_level(policy, params):
    """Alternation frequency at the cutoff, or -1 when the belief cannot rest there."""
    if policy.kind != "cutoff" or not policy.hold_at_cutoff:
        return -1.0
    d = derived(params)
    q = policy.p_hat
    if not d.pi1 < q < d.pi_w:
        return -1.0
    z = (params.rho_L * (1 - q) - params.rho_H * q) / (params.lx * q * (1 - q))
    return (z - params.w) / (1 - params.w)


def default_horizon(params):
    return math.log(1 / TAIL_LEVEL) / params.r * (1 + 1e-9)


def max_dt(params):
    return 1e-3 * min(1 / params.lam, 1 / params.rho_L, 1 / params.rho_H)


def _check_grid(params, dt, horizon):
    if not dt > 0 or dt > max_dt(params) * (1 + 1e-12):
        raise DomainError(f"dt={dt} too coarse; need dt <= {max_dt(params):.3g}")
    if horizon < default_horizon(params) * (1 - 1e-6):
        raise DomainError(f"horizon too short; need exp(-r*horizon) <= {TAIL_LEVEL:g}")
    return int(round(horizon / dt))


def tail_bound(params, horizon):
    return (params.lx + params.c) * math.exp(-params.r * horizon) / params.r


# ---------------------------------------------------------------- kernels

@njit(inline="always")
def _wait(scale):
    # steps until the first success of a coin with -log(1 - q) = scale
    k = math.ceil(-math.log(1.0 - np.random.random()) / scale)
    return k if k >= 1 else 1


@njit(inline="always")
def _action(p, holding, acc, kind, y_const, p_hat, z_hold):
    if holding:
        acc += z_hold
        if acc >= 1.0:
            return 1.0, acc - 1.0
        return 0.0, acc
    if kind == CONSTANT:
        return y_const, acc
    return (1.0 if p >= p_hat else 0.0), acc


@njit(inline="always")
def _drift_step(p, y, holding, lx, rho_L, rho_H, w, p_hat, z_hold, dt):
    if holding:
        return p_hat, True
    eff = y + w - y * w
    q = p + (rho_L * (1.0 - p) - rho_H * p - p * (1.0 - p) * lx * eff) * dt
    if q < 0.0:
        q = 0.0
    elif q > 1.0:
        q = 1.0
    if z_hold >= 0.0 and ((p >= p_hat and q < p_hat) or (p < p_hat and q >= p_hat)):
        return p_hat, True
    return q, False


@njit(cache=True, parallel=True)
def _ensemble(seeds, n_paths, p0, lx, c, r, rho_L, rho_H, w, kind, y_const, p_hat, z_hold,
              dt, n_steps, out_flow, out_real, out_det, out_bad):
    n_chunks = (n_paths + CHUNK - 1) // CHUNK
    decay = math.exp(-r * dt)
    weight0 = (1.0 - decay) / r
    s_crime, s_H, s_L = -math.log1p(-lx * dt), -math.log1p(-rho_H * dt), -math.log1p(-rho_L * dt)
    for k in prange(n_chunks):
        start = k * CHUNK
        stop = min(n_paths, start + CHUNK)
        for i in range(start, stop):
            np.random.seed(seeds[i])
            high = np.random.random() < p0
            to_switch = _wait(s_H if high else s_L)
            to_crime = _wait(s_crime)
            p = p0
            holding = z_hold >= 0.0 and p0 == p_hat
            acc = 0.0
            disc = 1.0
            flow_loss = 0.0
            real_loss = 0.0
            n_det = 0
            for _ in range(n_steps):
                y, acc = _action(p, holding, acc, kind, y_const, p_hat, z_hold)
                flow_loss += disc * weight0 * (p * lx * (1.0 - y) + c * y)
                real_loss += disc * weight0 * c * y
                detected = False
                if high:
                    to_crime -= 1
                    if to_crime == 0:
                        u = np.random.random()
                        if u >= y:
                            real_loss += disc
                        if u < y + (1.0 - y) * w:
                            detected = True
                        to_crime = _wait(s_crime)
                to_switch -= 1
                if to_switch == 0:
                    high = not high
                    to_switch = _wait(s_H if high else s_L)
                    if high:
                        to_crime = _wait(s_crime)
                if detected:
                    p = 1.0
                    holding = False
                    n_det += 1
                else:
                    p, holding_new = _drift_step(p, y, holding, lx, rho_L, rho_H, w, p_hat,
                                                 z_hold, dt)
                    if holding_new and not holding:
                        acc = 0.0
                    holding = holding_new
                if not (p >= 0.0 and p <= 1.0):
                    out_bad[i] = 1
                    break
                disc *= decay
            out_flow[i] = flow_loss
            out_real[i] = real_loss
            out_det[i] = n_det


@njit(cache=True)
def _record(seed, p0, lx, c, r, rho_L, rho_H, w, kind, y_const, p_hat, z_hold, dt, n_steps,
            states, beliefs, actions, flags, inst):
    np.random.seed(seed)
    decay = math.exp(-r * dt)
    weight0 = (1.0 - decay) / r
    s_crime, s_H, s_L = -math.log1p(-lx * dt), -math.log1p(-rho_H * dt), -math.log1p(-rho_L * dt)
    high = np.random.random() < p0
    to_switch = _wait(s_H if high else s_L)
    to_crime = _wait(s_crime)
    p = p0
    holding = z_hold >= 0.0 and p0 == p_hat
    acc = 0.0
    disc = 1.0
    flow_loss = 0.0
    real_loss = 0.0
    for j in range(n_steps):
        y, acc = _action(p, holding, acc, kind, y_const, p_hat, z_hold)
        states[j] = 1 if high else 0
        beliefs[j] = p
        actions[j] = y
        inst[j] = p * lx * (1.0 - y) + c * y
        flow_loss += disc * weight0 * inst[j]
        real_loss += disc * weight0 * c * y
        detected = False
        if high:
            to_crime -= 1
            if to_crime == 0:
                u = np.random.random()
                if u >= y:
                    real_loss += disc
                if u < y + (1.0 - y) * w:
                    detected = True
                to_crime = _wait(s_crime)
        to_switch -= 1
        if to_switch == 0:
            high = not high
            to_switch = _wait(s_H if high else s_L)
            if high:
                to_crime = _wait(s_crime)
        if detected:
            flags[j] = 1
            p = 1.0
            holding = False
        else:
            p, holding_new = _drift_step(p, y, holding, lx, rho_L, rho_H, w, p_hat, z_hold, dt)
            if holding_new and not holding:
                acc = 0.0
            holding = holding_new
        if not (p >= 0.0 and p <= 1.0):
            return flow_loss, real_loss, j
        disc *= decay
    states[n_steps] = 1 if high else 0
    beliefs[n_steps] = p
    actions[n_steps], _ = _action(p, holding, acc, kind, y_const, p_hat, z_hold)
    inst[n_steps] = p * lx * (1.0 - actions[n_steps]) + c * actions[n_steps]
    return flow_loss, real_loss, -1


@njit(cache=True)
def _occupation(seed, p0, lx, rho_L, rho_H, p_hat, z_hold, dt, n_burn, n_steps, n_bins,
                hist_H, hist_L, atom):
    """Time spent by the belief in each bin (and exactly at the cutoff), split by state."""
    np.random.seed(seed)
    s_crime, s_H, s_L = -math.log1p(-lx * dt), -math.log1p(-rho_H * dt), -math.log1p(-rho_L * dt)
    high = np.random.random() < p0
    to_switch = _wait(s_H if high else s_L)
    to_crime = _wait(s_crime)
    p = p0
    holding = False
    acc = 0.0
    sum_p = 0.0
    for j in range(n_burn + n_steps):
        y, acc = _action(p, holding, acc, CUTOFF, 0.0, p_hat, z_hold)
        if j >= n_burn:
            s = 0 if high else 1
            if holding:
                atom[s] += 1
            else:
                b = int(p * n_bins)
                if b >= n_bins:
                    b = n_bins - 1
                if high:
                    hist_H[b] += 1
                else:
                    hist_L[b] += 1
            sum_p += p
        detected = False
        if high:
            to_crime -= 1
            if to_crime == 0:
                if np.random.random() < y:
                    detected = True
                to_crime = _wait(s_crime)
        to_switch -= 1
        if to_switch == 0:
            high = not high
            to_switch = _wait(s_H if high else s_L)
            if high:
                to_crime = _wait(s_crime)
        if detected:
            p = 1.0
            holding = False
        else:
            p, holding_new = _drift_step(p, y, holding, lx, rho_L, rho_H, 0.0, p_hat, z_hold, dt)
            if holding_new and not holding:
                acc = 0.0
            holding = holding_new
    return sum_p


# ---------------------------------------------------------------- public API

def _kernel_args(policy, params):
    kind = CONSTANT if policy.kind == "constant" else CUTOFF
    return (params.lx, params.c, params.r, params.rho_L, params.rho_H, params.w, kind,
            float(policy.y), float(policy.p_hat), float(_holding_level(policy, params)))


def _path_seeds(seed, n):
    # one stream per path, so a path's draws never depend on its neighbours; 32-bit words
    # can collide at large n, so repeats are dropped (order kept)
    words = np.random.SeedSequence(int(seed)).generate_state(2 * n + 16, np.uint32)
    _, first = np.unique(words, return_index=True)
    return words[np.sort(first)[:n]]


def set_threads(n):
    if n is not None and n > 0:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


@dataclass
class PathRecord:
    seed: int
    dt: float
    horizon: float
    times: np.ndarray
    states: np.ndarray          # 1 = H, 0 = L
    beliefs: np.ndarray
    actions: np.ndarray
    detection_flags: np.ndarray
    instantaneous_loss: np.ndarray
    discounted_loss: float
    discounted_loss_realized: float

    @property
    def detections(self) -> np.ndarray:
        return self.times[np.flatnonzero(self.detection_flags)] + self.dt

    def csv_text(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["time", "state", "belief", "action", "detection_flag", "instantaneous_loss"])
        for t, s, b, a, f, l in zip(self.times, self.states, self.beliefs, self.actions,
                                    self.detection_flags, self.instantaneous_loss):
            wr.writerow([repr(float(t)), "H" if s else "L", repr(float(b)), repr(float(a)), int(f),
                         repr(float(l))])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.csv_text())


def simulate_path(policy: PolicySpec, params: ModelParams, dt, horizon=None, seed=0, p0=None) -> PathRecord:
    horizon = default_horizon(params) if horizon is None else horizon
    n = _check_grid(params, dt, horizon)
    p0 = derived(params).pi0 if p0 is None else float(p0)
    states = np.zeros(n + 1, np.int8)
    beliefs = np.zeros(n + 1)
    actions = np.zeros(n + 1)
    flags = np.zeros(n + 1, np.int8)
    inst = np.zeros(n + 1)
    flow, real, bad = _record(np.uint32(_path_seeds(seed, 1)[0]), p0, *_kernel_args(policy, params),
                              dt, n, states, beliefs, actions, flags, inst)
    if bad >= 0:
        raise NumericalError(f"belief left [0, 1] at step {bad}")
    return PathRecord(int(seed), dt, horizon, np.arange(n + 1) * dt, states, beliefs, actions,
                      flags, inst, flow, real)


@dataclass
class LossEstimate:
    mean: float
    se: float
    mean_realized: float
    se_realized: float
    n_paths: int
    tail_bound: float
    per_path: np.ndarray = field(repr=False, default=None)
    mean_detections: float = 0.0


def estimate_loss(policy: PolicySpec, params: ModelParams, p0, n_paths, dt, horizon=None,
                  seed=0) -> LossEstimate:
    horizon = default_horizon(params) if horizon is None else horizon
    n = _check_grid(params, dt, horizon)
    if not 0 <= p0 <= 1:
        raise DomainError("p0 must lie in [0, 1]")
    if n_paths < 2:
        raise DomainError("need at least two paths")
    flow = np.zeros(n_paths)
    real = np.zeros(n_paths)
    det = np.zeros(n_paths, np.int64)
    bad = np.zeros(n_paths, np.int8)
    _ensemble(_path_seeds(seed, n_paths), n_paths, float(p0), *_kernel_args(policy, params),
              dt, n, flow, real, det, bad)
    if bad.any():
        raise NumericalError("belief left [0, 1] on some path")
    sq = math.sqrt(n_paths)
    return LossEstimate(float(np.sum(flow) / n_paths), float(np.std(flow, ddof=1) / sq),
                        float(np.sum(real) / n_paths), float(np.std(real, ddof=1) / sq),
                        n_paths, tail_bound(params, horizon), flow, float(det.mean()))


@dataclass
class EmpiricalStationary:
    p_hat: float
    edges: np.ndarray
    time_H: np.ndarray
    time_L: np.ndarray
    atom_H: int
    atom_L: int
    total: int
    mean_belief: float

    @property
    def atom(self) -> float:
        return (self.atom_H + self.atom_L) / self.total

    def cdf(self, p, which="all"):
        """Empirical CDF at p (right-continuous, bins attributed to their right edge)."""
        if which == "H":
            counts, atom, tot = self.time_H, self.atom_H, self.atom_H + self.time_H.sum()
        elif which == "L":
            counts, atom, tot = self.time_L, self.atom_L, self.atom_L + self.time_L.sum()
        else:
            counts = self.time_H + self.time_L
            atom, tot = self.atom_H + self.atom_L, self.total
        cum = np.concatenate([[0], np.cumsum(counts)])
        p = np.asarray(p, dtype=float)
        idx = np.clip(np.floor(p * len(counts) + 1e-9).astype(int), 0, len(counts))
        vals = cum[idx] + np.where(p >= self.p_hat, atom, 0)
        return vals / tot

    def ks_distance(self, cdf_fn):
        """Sup distance to a CDF, checked at every bin edge and on both sides of the cutoff."""
        pts = np.concatenate([self.edges, [self.p_hat]])
        d = np.max(np.abs(self.cdf(pts) - cdf_fn(pts)))
        below = np.nextafter(self.p_hat, 0)
        return float(max(d, abs(self.cdf(below) - cdf_fn(below))))


def empirical_stationary(policy: PolicySpec, params: ModelParams, burn_in, horizon, dt, seed=0,
                         n_paths=1, n_bins=20000) -> EmpiricalStationary:
    d = derived(params)
    if policy.kind != "cutoff" or not d.pi1 < policy.p_hat < d.pi0:
        raise DomainError("empirical_stationary needs a cutoff policy with cutoff in (pi1, pi0)")
    if params.w > 0:
        raise DomainError("empirical_stationary is for w = 0")
    if burn_in < 100 / min(params.rho_L, params.rho_H) * (1 - 1e-9):
        raise DomainError("burn_in must be at least 100 / min(rho_L, rho_H)")
    if not 0 < dt <= max_dt(params) * (1 + 1e-12):
        raise DomainError(f"dt too coarse; need dt <= {max_dt(params):.3g}")
    z = _holding_level(PolicySpec.cutoff(policy.p_hat, True), params)
    n_burn, n_steps = int(round(burn_in / dt)), int(round(horizon / dt))
    hist_H = np.zeros(n_bins, np.int64)
    hist_L = np.zeros(n_bins, np.int64)
    atom = np.zeros(2, np.int64)
    seeds = _path_seeds(seed, n_paths)
    sum_p = 0.0
    for s in seeds:
        sum_p += _occupation(np.uint32(s), d.pi0, params.lx, params.rho_L, params.rho_H,
                             policy.p_hat, z, dt, n_burn, n_steps, n_bins, hist_H, hist_L, atom)
    total = n_paths * n_steps
    return EmpiricalStationary(policy.p_hat, np.linspace(0, 1, n_bins + 1), hist_H, hist_L,
                               int(atom[0]), int(atom[1]), total, sum_p / total)


@dataclass
class PassiveReport:
    w: float
    pi_w: float
    p_hat_M: float
    gp_should_win: bool
    np_loss: LossEstimate
    gp_loss: LossEstimate
    advantage: float            # NP loss minus GP loss, paired over common random numbers
    advantage_se: float


def passive_learning_comparison(params: ModelParams, n_paths=20000, dt=None, horizon=None,
                                seed=0, p0=None) -> PassiveReport:
    """NP (constant) versus GP (myopic cutoff) under passive detection, on common random numbers."""
    if not 0 < params.w < 1:
        raise DomainError("passive learning comparison needs w in (0, 1)")
    d = derived(params)
    dt = max_dt(params) if dt is None else dt
    p0 = d.pi0 if p0 is None else p0
    y_np = 1.0 if d.pi0 > d.p_hat_M else 0.0
    est_np = estimate_loss(PolicySpec.constant(y_np), params, p0, n_paths, dt, horizon, seed)
    est_gp = estimate_loss(PolicySpec.cutoff(d.p_hat_M, True), params, p0, n_paths, dt, horizon, seed)
    diff = est_np.per_path - est_gp.per_path
    return PassiveReport(params.w, d.pi_w, d.p_hat_M, d.p_hat_M > d.pi_w, est_np, est_gp,
                         float(np.sum(diff) / n_paths), float(np.std(diff, ddof=1) / math.sqrt(n_paths)))

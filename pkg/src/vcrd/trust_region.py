"""Teacher-anchored KL trust region: exact exponential-tilt solution and checks.

    max_pi~  E_pi~[r]   s.t.  KL(pi~ || pi) <= delta

is solved by pi~(a) ∝ pi(a) exp(eta r(a)), with eta >= 0 set so the
constraint binds, unless even the eta -> inf limit stays inside the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .divergence import kl

ETA_CAP = 1e6


@dataclass(frozen=True)
class TiltSolution:
    eta: float
    tilted: np.ndarray
    achieved_kl: float
    expected_reward: float
    active: bool = True


def _check_pi(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or pi.size == 0:
        raise ValueError("pi must be a non-empty vector")
    if np.any(pi <= 0):
        raise ValueError("pi must be strictly positive")
    return pi


def _check_r(r, n: int) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (n,):
        raise ValueError(f"dimension mismatch: reward has shape {r.shape}, expected ({n},)")
    if not np.all(np.isfinite(r)):
        raise ValueError("reward must be finite")
    return r


def _log_tilt(pi: np.ndarray, r: np.ndarray, eta: float) -> np.ndarray:
    s = np.log(pi) + eta * r
    smax = s.max()
    return s - (smax + math.log(np.exp(s - smax).sum()))


def exp_tilt(pi, r, eta: float) -> np.ndarray:
    pi = _check_pi(pi)
    r = _check_r(r, pi.size)
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if eta == 0:
        return pi / pi.sum()
    return np.exp(_log_tilt(pi, r, eta))


def expected_reward(pi, r) -> float:
    pi = np.asarray(pi, dtype=float)
    r = np.asarray(r, dtype=float)
    if pi.shape != r.shape:
        raise ValueError("dimension mismatch")
    return float(np.dot(pi, r))


def tilt_kl(pi, r, eta: float) -> float:
    """KL(tilt || pi) = sum_a tilt(a) (log tilt(a) - log pi(a)), in log space."""
    pi = _check_pi(pi)
    r = _check_r(r, pi.size)
    if eta == 0:
        return 0.0
    lt = _log_tilt(pi, r, eta)
    return max(float(np.sum(np.exp(lt) * (lt - np.log(pi)))), 0.0)


def solve_trust_region(pi, r, delta: float, tol: float = 1e-9) -> TiltSolution:
    """Double eta until KL exceeds delta, then bisect to |KL - delta| <= tol."""
    pi = _check_pi(pi)
    r = _check_r(r, pi.size)
    if not delta > 0:
        raise ValueError("delta must be > 0")

    def solution(eta, active):
        t = exp_tilt(pi, r, eta)
        return TiltSolution(eta, t, tilt_kl(pi, r, eta), expected_reward(t, r), active)

    if np.ptp(r) == 0:
        return solution(0.0, False)
    # KL is bounded by -log pi(argmax set); a budget at or past that never binds
    sup_kl = -math.log(pi[r == r.max()].sum())
    if delta >= sup_kl:
        return solution(ETA_CAP, False)

    lo, hi = 0.0, 1.0
    while tilt_kl(pi, r, hi) < delta:
        lo, hi = hi, hi * 2.0
        if hi > ETA_CAP:
            return solution(ETA_CAP, False)
    eta = hi
    for _ in range(400):
        eta = 0.5 * (lo + hi)
        gap = tilt_kl(pi, r, eta) - delta
        if abs(gap) <= tol:
            break
        if gap < 0:
            lo = eta
        else:
            hi = eta
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    return solution(eta, True)


def first_order_residual(pi, r, eta: float) -> float:
    """max_a |log tilt(a) - log pi(a) - eta (r(a) - E_pi r)|: the O(eta^2) remainder."""
    pi = _check_pi(pi)
    r = _check_r(r, pi.size)
    if eta == 0:
        return 0.0
    lt = _log_tilt(pi, r, eta)
    lin = np.log(pi) + eta * (r - np.dot(pi, r))
    return float(np.max(np.abs(lt - lin)))


def stationarity_gap(pi, r, solution: TiltSolution) -> float:
    """Spread across actions of log pi~ - log pi - eta r; zero at a stationary point."""
    pi = _check_pi(pi)
    r = _check_r(r, pi.size)
    t = np.asarray(solution.tilted, dtype=float)
    # entries that underflowed at large eta are off the support
    support = t > np.finfo(float).tiny
    c = np.log(t[support]) - np.log(pi[support]) - solution.eta * r[support]
    return float(c.max() - c.min())


@dataclass
class OptimalityReport:
    passed: bool
    feasible: bool
    n_samples: int
    best_sampled_reward: float
    solution_reward: float
    margin: float
    tilt_family_ok: bool
    stationarity_gap: float
    notes: list = field(default_factory=list)


def _dirichlet_feasible(pi, delta, n, rng, max_batches=200):
    """Rejection sampling from Dirichlet(kappa * pi) with kappa log-uniform in [1, 1e5].

    Each rejected draw is also pulled back along the segment to pi until it
    sits on the KL boundary, so the sample set covers the binding surface.
    """
    V = pi.size
    out = []
    for _ in range(max_batches):
        kappa = np.exp(rng.uniform(0.0, math.log(1e5), size=n))
        x = rng.gamma(kappa[:, None] * pi[None, :])
        x = np.maximum(x, 1e-300)
        x /= x.sum(axis=1, keepdims=True)
        kls = np.sum(x * (np.log(np.maximum(x, 1e-300)) - np.log(pi)), axis=1)
        out.append(x[kls <= delta])
        far = x[kls > delta][: max(n // 4, 1)]
        if len(far):
            out.append(_pull_to_boundary(pi, far, delta))
        if sum(len(o) for o in out) >= n:
            break
    samples = np.concatenate(out, axis=0) if out else np.zeros((0, V))
    return samples[:n]


def _pull_to_boundary(pi, xs, delta, iters=60):
    lo = np.zeros(len(xs))
    hi = np.ones(len(xs))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        y = (1 - mid)[:, None] * pi[None, :] + mid[:, None] * xs
        k = np.sum(y * (np.log(np.maximum(y, 1e-300)) - np.log(pi)), axis=1)
        ok = k <= delta
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return (1 - lo)[:, None] * pi[None, :] + lo[:, None] * xs


def verify_optimality(pi, r, delta: float, solution: TiltSolution, n_samples: int = 10_000,
                      seed: int = 0, margin: float = 1e-6, kl_tol: float = 1e-9) -> OptimalityReport:
    """Brute-force check that no sampled feasible distribution beats ``solution``."""
    pi = _check_pi(pi)
    r = _check_r(r, pi.size)
    rng = np.random.default_rng(seed)
    notes = []
    sol_kl = kl(solution.tilted, pi)
    feasible = sol_kl <= delta + kl_tol
    if not feasible:
        notes.append(f"infeasible: KL {sol_kl:.3e} exceeds delta {delta:.3e}")
    sol_reward = expected_reward(solution.tilted, r)

    samples = _dirichlet_feasible(pi, delta, n_samples, rng)
    best = float((samples @ r).max()) if len(samples) else -math.inf
    dominated = best <= sol_reward + margin

    # along the tilt family, every feasible member earns no more than the solution
    grid_top = max(solution.eta * 1.5, 1e-3) if solution.eta < ETA_CAP else ETA_CAP
    etas = np.linspace(0.0, grid_top, 301)
    fam_ok = True
    for e in etas:
        if tilt_kl(pi, r, e) <= delta + kl_tol:
            if expected_reward(exp_tilt(pi, r, e), r) > sol_reward + 1e-12:
                fam_ok = False
                notes.append(f"tilt eta={e:.4g} beats the solution")
                break
    gap = stationarity_gap(pi, r, solution)
    return OptimalityReport(
        passed=feasible and dominated and fam_ok,
        feasible=feasible,
        n_samples=len(samples),
        best_sampled_reward=best,
        solution_reward=sol_reward,
        margin=best - sol_reward,
        tilt_family_ok=fam_ok,
        stationarity_gap=gap,
        notes=notes,
    )

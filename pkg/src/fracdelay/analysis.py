"""Stability diagnostics: contraction bound, Gronwall envelope, hypothesis probes,
and the ensemble harness for uniform asymptotic stability.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .model import SegmentView, ValidationError
from .solver import solve
from .specfun import gamma


def contraction_bound(l, alpha, beta, t0, h):
    """l [ (t0+h)^(alpha-1) e^{-beta (t0+h)} / (beta Gamma(alpha)) + (t0+h)^alpha / Gamma(alpha+1) ].

    Picard iteration is a sup-norm contraction when this is < 1.
    """
    if not l > 0:
        raise ValidationError(f"l must be positive (got {l})")
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1) (got {alpha})")
    if not beta > 0:
        raise ValidationError(f"beta must be positive (got {beta})")
    if not h > 0 or not t0 >= 0:
        raise ValidationError("need h > 0 and t0 >= 0")
    s = t0 + h
    far = s ** (alpha - 1.0) * math.exp(-beta * s) / (beta * gamma(alpha))
    near = s ** alpha / gamma(alpha + 1.0)
    return l * (far + near)


@dataclass(frozen=True)
class EnvelopeParams:
    x0_minus_y0: float
    l: float
    K: float
    alpha: float
    beta: float
    h: float
    t0: float = 0.0

    def __post_init__(self):
        if self.l < 0 or self.K < 0 or self.h <= 0 or self.beta <= 0 or self.t0 < 0:
            raise ValidationError("envelope parameters must be nonnegative with h, beta > 0")


def gronwall_envelope(params, t):
    """|x0 - y0| e^{-beta (t - h - t0)} (1 + K l e^{beta h} (t - t0)^alpha / Gamma(alpha + 1)).

    Valid for t >= t0 + h; accepts scalars or arrays.
    """
    p = params
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < p.t0 + p.h - 1e-12):
        raise ValidationError("envelope is only defined for t >= t0 + h")
    growth = 1.0 + p.K * p.l * math.exp(p.beta * p.h) * (t_arr - p.t0) ** p.alpha / gamma(p.alpha + 1.0)
    env = abs(p.x0_minus_y0) * np.exp(-p.beta * (t_arr - p.h - p.t0)) * growth
    return float(env) if np.ndim(env) == 0 else env


def _envelope_window(problem, traj_a, traj_b):
    ta, ya = traj_a.forward()
    tb, yb = traj_b.forward()
    if len(ta) != len(tb) or not np.allclose(ta, tb):
        raise ValidationError("trajectories must share the same grid")
    mask = ta >= problem.t0 + problem.h - 1e-12
    return ta[mask], np.abs(ya - yb)[mask], float(ya[0] - yb[0])


def fit_gronwall_K(problem, traj_a, traj_b, l=None):
    """Smallest K >= 0 for which the envelope dominates |x(t) - y(t)| on grid t >= t0 + h.

    Returns ``math.inf`` when no finite K works (e.g. equal initial values
    but distinct trajectories).
    """
    l = problem.rhs.lipschitz if l is None else l
    if l is None:
        raise ValidationError("a Lipschitz constant is required for the envelope fit")
    t, dist, d0 = _envelope_window(problem, traj_a, traj_b)
    if len(t) == 0:
        raise ValidationError("horizon ends before t0 + h")
    base = abs(d0) * np.exp(-problem.beta * (t - problem.h - problem.t0))
    excess = dist - base
    need = excess > 0
    if not np.any(need):
        return 0.0
    slope = base * l * math.exp(problem.beta * problem.h) * (t - problem.t0) ** problem.alpha \
        / gamma(problem.alpha + 1.0)
    if np.any(need & (slope <= 0)):
        return math.inf
    K = float(np.max(excess[need] / slope[need]))
    # nudge so the envelope dominates despite rounding
    return K * (1.0 + 1e-12)


@dataclass(frozen=True)
class LipschitzProbe:
    """Sampling ranges for :func:`estimate_lipschitz` and :func:`check_growth_bound`."""

    h: float = 1.0
    t_min: float = 0.0
    t_max: float = 10.0
    n_points: int = 11
    amplitude: float = 2.0
    n_probes: int = 10_000
    seed: int = 0


def _random_segments(rng, probe):
    dt = probe.h / (probe.n_points - 1)
    t = rng.uniform(probe.t_min, probe.t_max)
    u = rng.uniform(-probe.amplitude, probe.amplitude, probe.n_points)
    start = t - probe.h
    return t, u, start, dt


def estimate_lipschitz(rhs, probe=None):
    """Empirical lower bound for l: max |f(t,u) - f(t,v)| / ||u - v|| over random segments."""
    probe = probe or LipschitzProbe()
    rng = np.random.default_rng(probe.seed)
    best = 0.0
    for _ in range(probe.n_probes):
        t, u, start, dt = _random_segments(rng, probe)
        v = rng.uniform(-probe.amplitude, probe.amplitude, probe.n_points)
        norm = float(np.max(np.abs(u - v)))
        if norm == 0:
            continue
        fu = rhs(t, SegmentView(u, start, dt, probe.h, t))
        fv = rhs(t, SegmentView(v, start, dt, probe.h, t))
        best = max(best, abs(fu - fv) / norm)
    return best


def check_growth_bound(rhs, k1, k2, probe=None):
    """Largest observed |f(t,u)| - (k1(t) + k2(t) ||u||); <= 0 means no violation found."""
    probe = probe or LipschitzProbe()
    rng = np.random.default_rng(probe.seed)
    worst = -math.inf
    for _ in range(probe.n_probes):
        t, u, start, dt = _random_segments(rng, probe)
        val = abs(rhs(t, SegmentView(u, start, dt, probe.h, t)))
        worst = max(worst, val - (k1(t) + k2(t) * float(np.max(np.abs(u)))))
    return worst


@dataclass
class DecayFit:
    """Envelope C e^{-rho t} (1 + c t^alpha) fitted to log distances."""

    C: float
    rho: float
    c: float
    rms_log_error: float


@dataclass
class StabilityReport:
    ensemble_size: int
    names: list
    times: np.ndarray
    pairs: list
    pair_distances: np.ndarray
    max_pairwise: np.ndarray
    T_of_eps: dict
    decay_fit: Optional[DecayFit]
    trajectories: dict = field(default_factory=dict)


def stabilization_time(times, dist, eps):
    """Earliest grid time after which ``dist`` stays <= eps; inf if never."""
    above = np.nonzero(dist > eps)[0]
    if len(above) == 0:
        return float(times[0])
    last = above[-1]
    if last == len(times) - 1:
        return math.inf
    return float(times[last + 1])


def fit_decay(times, dist, alpha):
    """Least squares on log(dist) for C e^{-rho t}(1 + c t^alpha), c >= 0."""
    mask = dist > 0
    if np.count_nonzero(mask) < 3:
        return None
    t, logd = times[mask], np.log(dist[mask])

    def resid(p):
        logC, rho, c = p
        return logC - rho * t + np.log1p(c * t ** alpha) - logd

    slope, icept = np.polyfit(t, logd, 1)
    sol = least_squares(resid, x0=[icept, -slope, 0.0],
                        bounds=([-np.inf, -np.inf, 0.0], [np.inf, np.inf, np.inf]))
    logC, rho, c = sol.x
    return DecayFit(float(math.exp(logC)), float(rho), float(c),
                    float(np.sqrt(np.mean(sol.fun ** 2))))


def stability_harness(problem, phis, config, eps_list=(0.1, 0.05, 0.01), workers=1,
                      results=None):
    """Solve one member per initial function and measure pairwise |x(t) - y(t)| for t >= t0.

    ``results`` may carry already computed solves, one per entry of ``phis``.
    """
    phis = list(phis)
    if len(phis) < 2:
        raise ValidationError("stability harness needs at least two initial functions")
    members = [problem.with_phi(phi) for phi in phis]
    if results is not None:
        if len(results) != len(phis):
            raise ValidationError("need exactly one precomputed result per initial function")
    elif workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda p: solve(p, config), members))
    else:
        results = [solve(p, config) for p in members]

    names = [getattr(phi, "name", f"phi{i}") for i, phi in enumerate(phis)]
    trajs = [r.trajectory for r in results]
    times, _ = trajs[0].forward()
    fwd = np.array([tr.forward()[1] for tr in trajs])
    pairs = list(itertools.combinations(range(len(phis)), 2))
    dists = np.array([np.abs(fwd[i] - fwd[j]) for i, j in pairs])
    max_pw = dists.max(axis=0)
    T_eps = {float(e): stabilization_time(times, max_pw, e) for e in eps_list}
    tail = times >= problem.t0 + 0.5 * (times[-1] - problem.t0)
    fit = fit_decay(times[tail], max_pw[tail], problem.alpha)
    return StabilityReport(len(phis), names, times, [(names[i], names[j]) for i, j in pairs],
                           dists, max_pw, T_eps, fit, dict(zip(names, trajs)))

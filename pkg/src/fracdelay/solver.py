"""Solvers for the integral form of the IVP.

Both methods discretize

    y(t) = y(t0) e^{-beta (t - t0)}
           + 1/Gamma(alpha) int_{t0}^t (t-s)^(alpha-1) e^{-beta (t-s)} f(s, y_s) ds

on the uniform grid t_n = t0 + n*dt, with y = phi on [t0 - h, t0].
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .model import SegmentView, Trajectory, ValidationError, grid_steps
from .quad import ConvolutionKernel

METHODS = ("predictor_corrector", "picard")


class SolverError(RuntimeError):
    """A right-hand side evaluation produced a non-finite value."""

    def __init__(self, t, value):
        super().__init__(f"non-finite right-hand side f={value!r} at t={t!r}")
        self.t = t
        self.value = value


class ContractionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    method: str = "predictor_corrector"
    dt: float = 2.0 ** -6
    T: float = 10.0
    picard_tol: float = 1e-10
    picard_max_iter: int = 200
    corrector_sweeps: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive (got {self.dt})")
        if not self.picard_tol > 0:
            raise ValidationError("picard_tol must be positive")
        if int(self.picard_max_iter) < 1:
            raise ValidationError("picard_max_iter must be >= 1")
        if int(self.corrector_sweeps) < 1:
            raise ValidationError("corrector_sweeps must be >= 1")

    def steps(self, problem):
        """(m, N): history steps h/dt and forward steps (T - t0)/dt, validated."""
        if not self.T > problem.t0:
            raise ValidationError(f"final time T={self.T} must exceed t0={problem.t0}")
        m = grid_steps(problem.h, self.dt, "h")
        n = grid_steps(self.T - problem.t0, self.dt, "T - t0")
        return m, n


@dataclass
class SolveResult:
    trajectory: Trajectory
    method: str
    iterations: int = 0
    converged: bool = True
    picard_residual: float = float("nan")
    diff_norms: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)


def _eval_rhs(rhs, t, seg):
    v = rhs(t, seg)
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise SolverError(t, v) from None
    if not math.isfinite(v):
        raise SolverError(t, v)
    return v


def _initial_buffer(problem, m, n):
    start = problem.t0 - problem.h
    dt = problem.h / m
    buf = np.empty(m + n + 1)
    for j in range(m):
        buf[j] = problem.phi(start + j * dt)
    buf[m] = problem.phi(problem.t0)
    if not np.all(np.isfinite(buf[:m + 1])):
        raise ValidationError("history function must be finite on [t0 - h, t0]")
    return buf


def _rhs_samples(problem, values, m, n, dt, out=None):
    """f(t_j, y_{t_j}) for j = 0..n from a full-grid value array."""
    start = problem.t0 - problem.h
    out = np.empty(n + 1) if out is None else out
    for j in range(n + 1):
        t = problem.t0 + j * dt
        out[j] = _eval_rhs(problem.rhs, t, SegmentView(values, start, dt, problem.h, t))
    return out


def solve_predictor_corrector(problem, config):
    """Fractional predictor-corrector: product-rectangle predictor, product-trapezoid corrector."""
    if config.method != "predictor_corrector":
        config = replace(config, method="predictor_corrector")
    m, n_steps = config.steps(problem)
    dt = config.dt
    beta, t0 = problem.beta, problem.t0
    start = t0 - problem.h
    kern = ConvolutionKernel.build(problem.alpha, beta, dt, n_steps)

    y = _initial_buffer(problem, m, n_steps)
    y0 = y[m]
    fvals = np.empty(n_steps + 1)
    fvals[0] = _eval_rhs(problem.rhs, t0, SegmentView(y, start, dt, problem.h, t0))
    c_self = float(kern.interior[0])

    for n in range(1, n_steps + 1):
        t = t0 + n * dt
        free = y0 * math.exp(-beta * n * dt)
        # predictor
        y[m + n] = free + kern.rectangle(n, fvals)
        base = free + kern.trapezoid_history(n, fvals)
        seg = SegmentView(y, start, dt, problem.h, t)
        for _ in range(config.corrector_sweeps):
            fn = _eval_rhs(problem.rhs, t, seg)
            y[m + n] = base + c_self * fn
        fvals[n] = _eval_rhs(problem.rhs, t, seg)

    return SolveResult(Trajectory(t0, problem.h, dt, y), "predictor_corrector")


def solve_picard(problem, config, y_init=None):
    """Global Picard iteration y^{k+1} = P(y^k) on the grid over [t0 - h, T].

    The default starting iterate extends phi by phi(t0) e^{-beta (t - t0)}.
    Stops when the sup-norm of successive iterates is at most
    ``config.picard_tol``; otherwise returns the last iterate flagged as not
    converged.
    """
    if config.method != "picard":
        config = replace(config, method="picard")
    m, n_steps = config.steps(problem)
    dt = config.dt
    beta, t0 = problem.beta, problem.t0

    l = problem.rhs.lipschitz
    if l is not None and l > 0:
        from .analysis import contraction_bound

        q = contraction_bound(l, problem.alpha, beta, t0, problem.h)
        if q >= 1:
            warnings.warn(f"contraction condition fails (bound {q:.4g} >= 1); "
                          "Picard iteration may not converge", ContractionWarning, stacklevel=2)

    y = _initial_buffer(problem, m, n_steps)
    y0 = y[m]
    free = y0 * np.exp(-beta * dt * np.arange(n_steps + 1))
    if y_init is None:
        y[m:] = free
    else:
        y_init = np.asarray(y_init, dtype=float)
        if y_init.shape != (n_steps + 1,):
            raise ValidationError("y_init must hold one value per forward grid point")
        y[m:] = y_init
        y[m] = y0
    M = ConvolutionKernel.build(problem.alpha, beta, dt, n_steps).matrix()

    fvals = np.empty(n_steps + 1)
    diffs, ratios = [], []
    converged = False
    k = 0
    for k in range(1, int(config.picard_max_iter) + 1):
        _rhs_samples(problem, y, m, n_steps, dt, out=fvals)
        new = free + M @ fvals
        d = float(np.max(np.abs(new - y[m:])))
        y[m:] = new
        if diffs:
            ratios.append(d / diffs[-1] if diffs[-1] > 0 else 0.0)
        diffs.append(d)
        if d <= config.picard_tol:
            converged = True
            break

    traj = Trajectory(t0, problem.h, dt, y)
    res = SolveResult(traj, "picard", iterations=k, converged=converged,
                      picard_residual=diffs[-1] if diffs else float("nan"),
                      diff_norms=diffs, contraction_ratios=ratios)
    if not converged:
        warnings.warn(f"Picard iteration did not converge in {k} iterations "
                      f"(last difference {diffs[-1]:.3g})", ContractionWarning, stacklevel=2)
    return res


def solve(problem, config):
    if config.method == "picard":
        return solve_picard(problem, config)
    return solve_predictor_corrector(problem, config)


def _check_grid(problem, traj):
    if abs(traj.t0 - problem.t0) > 1e-12 or abs(traj.h - problem.h) > 1e-12:
        raise ValidationError("trajectory grid does not match the problem (t0, h)")


def integral_residuals(problem, traj):
    """Pointwise residuals r_n = y_n - [y_0 e^{-beta t_n} + conv(f)_n] for t_n >= t0."""
    _check_grid(problem, traj)
    m = traj.history_steps
    n_steps = len(traj.values) - 1 - m
    dt = traj.dt
    fvals = _rhs_samples(problem, traj.values, m, n_steps, dt)
    kern = ConvolutionKernel.build(problem.alpha, problem.beta, dt, n_steps)
    y = traj.values[m:]
    free = y[0] * np.exp(-problem.beta * dt * np.arange(n_steps + 1))
    conv = kern.matrix() @ fvals if n_steps <= 4096 else np.array(
        [kern.trapezoid(n, fvals) for n in range(n_steps + 1)])
    return y - free - conv


def residual(problem, traj):
    """Max over t_n >= t0 of the discrete integral-equation residual."""
    return float(np.max(np.abs(integral_residuals(problem, traj))))


def caputo_residuals(problem, traj):
    """Residual of the rescaled problem D^alpha z = f e^{beta t}, z = y e^{beta t}.

    Uses the same product-trapezoid discretization of the Caputo integral form
    z(t) = z(t0) + 1/Gamma(alpha) int (t-s)^(alpha-1) f(s, y_s) e^{beta s} ds.
    """
    _check_grid(problem, traj)
    m = traj.history_steps
    n_steps = len(traj.values) - 1 - m
    dt = traj.dt
    beta = problem.beta
    t = problem.t0 + dt * np.arange(n_steps + 1)
    fvals = _rhs_samples(problem, traj.values, m, n_steps, dt)
    # beta = 0 kernel: plain product weights, scaled by 1/Gamma(alpha)
    kern = ConvolutionKernel.build(problem.alpha, 0.0, dt, n_steps)
    forcing = fvals * np.exp(beta * t)
    z = traj.values[m:] * np.exp(beta * t)
    conv = np.array([kern.trapezoid(n, forcing) for n in range(n_steps + 1)])
    return z - z[0] - conv

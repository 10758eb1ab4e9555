"""Problem definition, history functions, gridded trajectories and segment views.

The IVP is

    D^alpha [y(t) e^{beta t}] = f(t, y_t) e^{beta t},   t >= t0,
    y(t) = phi(t),                                     t0 - h <= t <= t0,

with the Caputo derivative D^alpha, 0 < alpha < 1, beta > 0 and the history
segment y_t(theta) = y(t + theta) for theta in [-h, 0].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

# relative slack when deciding whether a time sits on a grid node
_GRID_RTOL = 1e-9


class ValidationError(ValueError):
    """Raised when a problem, grid or configuration violates its invariants."""


def grid_steps(length, dt, what="length"):
    """Return ``length / dt`` as an int, or raise if it is not (nearly) integral."""
    if not dt > 0:
        raise ValidationError(f"step size must be positive (got dt={dt})")
    ratio = length / dt
    k = int(round(ratio))
    if abs(ratio - k) > _GRID_RTOL * max(1.0, abs(ratio)):
        raise ValidationError(f"{what}={length} is not an integer multiple of dt={dt}")
    return k


class History:
    """Initial data phi on [t0 - h, t0], closed form or gridded samples.

    Gridded samples are linearly interpolated.
    """

    def __init__(self, fn: Callable[[float], float], name: str = "phi"):
        self._fn = fn
        self.name = name

    @classmethod
    def from_samples(cls, times, values, name="sampled"):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape or times.ndim != 1 or len(times) < 2:
            raise ValidationError("history samples need matching 1-d times and values (>= 2 points)")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("history sample times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValidationError("history samples must be finite")
        lo, hi = times[0], times[-1]

        def fn(t):
            if t < lo - 1e-12 or t > hi + 1e-12:
                raise ValidationError(f"history evaluated outside its samples at t={t}")
            return float(np.interp(t, times, values))

        return cls(fn, name)

    def __call__(self, t):
        return float(self._fn(t))

    def __repr__(self):
        return f"History({self.name!r})"


class RhsField:
    """The functional f(t, y_t), evaluated on a :class:`SegmentView`.

    ``lipschitz`` is a known Lipschitz constant l with
    |f(t,u) - f(t,v)| <= l ||u - v||, if one is available. ``growth`` is an
    optional pair (k1, k2) of callables with |f(t,u)| <= k1(t) + k2(t) ||u||.
    """

    def __init__(self, fn, name="rhs", lipschitz=None, growth=None):
        self._fn = fn
        self.name = name
        self.lipschitz = lipschitz
        self.growth = growth

    def __call__(self, t, seg):
        return self._fn(t, seg)

    def __repr__(self):
        return f"RhsField({self.name!r})"


@dataclass(frozen=True)
class FdeProblem:
    alpha: float
    beta: float
    t0: float
    h: float
    rhs: RhsField
    phi: History

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha out of range: need 0 < alpha < 1 (got {self.alpha})")
        if not self.beta > 0.0:
            raise ValidationError(f"beta must be positive (got {self.beta})")
        if not self.h > 0.0:
            raise ValidationError(f"delay h must be positive (got {self.h})")
        if not self.t0 >= 0.0:
            raise ValidationError(f"t0 must be nonnegative (got {self.t0})")
        for name in ("alpha", "beta", "t0", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    def with_phi(self, phi):
        return FdeProblem(self.alpha, self.beta, self.t0, self.h, self.rhs, phi)


def make_problem(alpha, beta, t0, h, rhs, phi):
    """Build a validated :class:`FdeProblem`; plain callables are wrapped."""
    if not isinstance(rhs, RhsField):
        rhs = RhsField(rhs, getattr(rhs, "__name__", "rhs"))
    if not isinstance(phi, History):
        phi = History(phi, getattr(phi, "__name__", "phi"))
    return FdeProblem(float(alpha), float(beta), float(t0), float(h), rhs, phi)


class SegmentView:
    """Read-only view of y_t(theta) = y(t + theta), theta in [-h, 0].

    ``values`` holds samples on the uniform grid ``start + j*dt``. The view
    never writes to it.
    """

    __slots__ = ("_values", "_start", "_dt", "_h", "t")

    def __init__(self, values, start, dt, h, t):
        self._values = values
        self._start = start
        self._dt = dt
        self._h = h
        self.t = t

    @property
    def h(self):
        return self._h

    def value_at(self, theta):
        if theta < -self._h * (1 + _GRID_RTOL) - 1e-12 or theta > 1e-12:
            raise ValidationError(f"theta={theta} outside [-h, 0]")
        x = (self.t + theta - self._start) / self._dt
        i = int(round(x))
        if abs(x - i) <= _GRID_RTOL * max(1.0, abs(x)):
            return float(self._values[i])
        i = int(math.floor(x))
        w = x - i
        return float((1.0 - w) * self._values[i] + w * self._values[i + 1])

    def grid_values(self):
        """Samples at the grid nodes inside [t - h, t]."""
        lo = (self.t - self._h - self._start) / self._dt
        hi = (self.t - self._start) / self._dt
        i0 = int(math.ceil(lo - _GRID_RTOL * max(1.0, abs(lo))))
        i1 = int(math.floor(hi + _GRID_RTOL * max(1.0, abs(hi))))
        return self._values[max(i0, 0):i1 + 1]

    def sup_norm(self):
        return float(np.max(np.abs(self.grid_values())))


@dataclass(frozen=True)
class Trajectory:
    """Samples of y on the uniform grid t_j = t0 - h + j*dt, j = 0..len-1."""

    t0: float
    h: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        m = grid_steps(self.h, self.dt, "h")
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) < m + 1:
            raise ValidationError("trajectory must cover at least [t0 - h, t0]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def history_steps(self):
        """Number of steps m = h / dt in the history window."""
        return int(round(self.h / self.dt))

    @property
    def start(self):
        return self.t0 - self.h

    @property
    def times(self):
        return self.start + self.dt * np.arange(len(self.values))

    @property
    def T(self):
        return self.start + self.dt * (len(self.values) - 1)

    def forward(self):
        """(times, values) restricted to t >= t0."""
        m = self.history_steps
        return self.times[m:], self.values[m:]

    def index_of(self, t):
        x = (t - self.start) / self.dt
        i = int(round(x))
        if abs(x - i) > _GRID_RTOL * max(1.0, abs(x)) or not 0 <= i < len(self.values):
            raise ValidationError(f"t={t} is not a grid point of this trajectory")
        return i

    def value_at(self, t):
        x = (t - self.start) / self.dt
        n = len(self.values) - 1
        if x < -_GRID_RTOL or x > n * (1 + _GRID_RTOL) + _GRID_RTOL:
            raise ValidationError(f"t={t} outside trajectory range [{self.start}, {self.T}]")
        return float(np.interp(x, np.arange(n + 1), self.values))

    @classmethod
    def from_history(cls, phi, t0, h, dt, tail=None):
        """Sample phi on [t0 - h, t0]; optionally append forward values ``tail``."""
        m = grid_steps(h, dt, "h")
        start = t0 - h
        hist = np.array([phi(start + j * dt) for j in range(m)] + [phi(t0)], dtype=float)
        if not np.all(np.isfinite(hist)):
            raise ValidationError("history function must be finite on [t0 - h, t0]")
        if tail is not None:
            hist = np.concatenate([hist, np.asarray(tail, dtype=float)])
        return cls(t0, h, dt, hist)


def segment_at(traj, t):
    """Segment view y_t of ``traj`` for t0 <= t <= T."""
    if t < traj.t0 - _GRID_RTOL * max(1.0, abs(traj.t0)) or t > traj.T + _GRID_RTOL * max(1.0, abs(traj.T)):
        raise ValidationError(f"segment time t={t} outside [{traj.t0}, {traj.T}]")
    return SegmentView(traj.values, traj.start, traj.dt, traj.h, float(t))


# ---------------------------------------------------------------------------
# built-in right-hand sides
# ---------------------------------------------------------------------------

def example_4_1_rhs(delay=1.0):
    """f(t, y_t) = e^t / (8 (e^t + e^{-t})) sin^4(y(t-1)) + 1, Lipschitz with l = 1/2."""

    def f(t, seg):
        u = seg.value_at(-delay)
        # e^t / (e^t + e^{-t}) written to stay finite for large t
        return 0.125 / (1.0 + math.exp(-2.0 * t)) * math.sin(u) ** 4 + 1.0

    return RhsField(f, "example_4_1", lipschitz=0.5,
                    growth=(lambda t: 1.125, lambda t: 0.0))


def example_4_2_rhs(delay=1.0):
    """f(t, y_t) = 10 (t+1)^{-3/4} y(t-1) / (1 + |y(t-1)|)."""

    def f(t, seg):
        u = seg.value_at(-delay)
        return 10.0 * (t + 1.0) ** -0.75 * u / (1.0 + abs(u))

    return RhsField(f, "example_4_2", lipschitz=None,
                    growth=(lambda t: 0.0, lambda t: 10.0 * (t + 1.0) ** -0.75))


def constant_rhs(c):
    c = float(c)
    return RhsField(lambda t, seg: c, f"constant:{c!r}", lipschitz=0.0,
                    growth=(lambda t: abs(c), lambda t: 0.0))


def linear_time_rhs(a, b):
    """f(t, y_t) = a + b t, independent of the state."""
    a, b = float(a), float(b)
    return RhsField(lambda t, seg: a + b * t, f"linear:{a!r},{b!r}", lipschitz=0.0)


def delay_linear_rhs(a, delay=None):
    """f(t, y_t) = a y(t - delay); ``delay`` defaults to the full horizon h."""
    a = float(a)

    def f(t, seg):
        return a * seg.value_at(-seg.h if delay is None else -delay)

    return RhsField(f, f"delay_linear:{a!r}", lipschitz=abs(a),
                    growth=(lambda t: 0.0, lambda t: abs(a)))


# ---------------------------------------------------------------------------
# built-in initial functions
# ---------------------------------------------------------------------------

def history_from_name(name):
    """Resolve the names sin, cos, neg_cos, linear and const:<c>."""
    if name == "sin":
        return History(math.sin, "sin")
    if name == "cos":
        return History(math.cos, "cos")
    if name == "neg_cos":
        return History(lambda t: -math.cos(t), "neg_cos")
    if name == "linear":
        return History(lambda t: float(t), "linear")
    if name.startswith("const:"):
        try:
            c = float(name.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad constant history {name!r}") from None
        if not math.isfinite(c):
            raise ValidationError(f"constant history must be finite ({name!r})")
        return History(lambda t: c, name)
    raise ValidationError(f"unknown initial function {name!r}; "
                          "expected sin, cos, neg_cos, linear or const:<c>")

"""Product-integration quadrature for the kernel (t - s)^(alpha-1) e^{-beta (t-s)}.

The singular factor (t - s)^(alpha-1) is integrated exactly against a
piecewise linear (trapezoid) or piecewise constant (rectangle) interpolant
of the smooth remainder. The exponential factor is part of the smooth
remainder, so the weights depend only on (alpha, dt, n).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .specfun import gamma


def _check(alpha, dt):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1) (got {alpha})")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive (got {dt})")


def _first_differences(p, kmax):
    """D_k = (k+1)^p - k^p for k = 0..kmax, without cancellation."""
    k = np.arange(kmax + 1, dtype=float)
    d = np.empty(kmax + 1)
    d[0] = 1.0
    kk = k[1:]
    d[1:] = kk ** p * np.expm1(p * np.log1p(1.0 / kk))
    return d


class ProductWeights:
    """Cached product-rule coefficients for fixed (alpha, dt).

    Trapezoid row n (j = 0..n), scale c = dt^alpha / (alpha (alpha + 1)):

        w[n, n] = c
        w[n, j] = c (D_{n-j} - D_{n-j-1}),      0 < j < n
        w[n, 0] = c ((alpha + 1) n^alpha - D_{n-1})

    with D_k = (k+1)^(alpha+1) - k^(alpha+1). Rectangle row n (j = 0..n-1):
    b[n, j] = dt^alpha / alpha ((n-j)^alpha - (n-j-1)^alpha).
    """

    def __init__(self, alpha, dt):
        _check(alpha, dt)
        self.alpha = float(alpha)
        self.dt = float(dt)
        self._lock = threading.Lock()
        self._n = -1
        self._interior = np.empty(0)
        self._endpoint = np.empty(0)
        self._rect = np.empty(0)

    def prefill(self, n):
        """Make rows up to n available. Cached arrays are replaced, never mutated."""
        with self._lock:
            if n <= self._n:
                return
            a = self.alpha
            p = a + 1.0
            c = self.dt ** a / (a * p)
            d = _first_differences(p, n)
            interior = np.empty(n + 1)
            interior[0] = c
            interior[1:] = c * (d[1:] - d[:-1])
            k = np.arange(n + 1, dtype=float)
            endpoint = np.empty(n + 1)
            endpoint[0] = np.nan
            endpoint[1:] = c * (p * k[1:] ** a - d[:-1])
            rect = np.empty(n + 1)
            rect[0] = np.nan
            rect[1] = 1.0
            kk = k[2:]
            rect[2:] = -(kk ** a) * np.expm1(a * np.log1p(-1.0 / kk))
            rect *= self.dt ** a / a
            self._interior, self._endpoint, self._rect = interior, endpoint, rect
            self._n = n

    def coefficients(self, n):
        """(interior, endpoint, rectangle) arrays indexed by lag k = n - j, valid up to n."""
        self.prefill(n)
        return self._interior, self._endpoint, self._rect

    def trapezoid_row(self, n):
        if n < 1:
            raise ValueError("n must be >= 1")
        interior, endpoint, _ = self.coefficients(n)
        row = interior[n::-1].copy()
        row[0] = endpoint[n]
        return row

    def rectangle_row(self, n):
        if n < 1:
            raise ValueError("n must be >= 1")
        _, _, rect = self.coefficients(n)
        return rect[n:0:-1].copy()


def product_trapezoid_weights(alpha, dt, n):
    """Weights w_{n,0..n} with sum_j w_{n,j} g(t_j) ~ int_{t0}^{t_n} (t_n - s)^(alpha-1) g(s) ds."""
    return ProductWeights(alpha, dt).trapezoid_row(n)


def product_rectangle_weights(alpha, dt, n):
    """Left-endpoint product weights b_{n,0..n-1}."""
    return ProductWeights(alpha, dt).rectangle_row(n)


@dataclass(frozen=True)
class ConvolutionKernel:
    """Lag-indexed coefficients with the exponential factor and 1/Gamma(alpha) folded in.

    For step n, the trapezoid convolution of samples g_0..g_n is
    ``endpoint[n] g_0 + sum_{j=1}^{n} interior[n-j] g_j`` and the rectangle
    convolution is ``sum_{j=0}^{n-1} rect[n-j] g_j``.
    """

    alpha: float
    beta: float
    dt: float
    interior: np.ndarray
    endpoint: np.ndarray
    rect: np.ndarray

    @classmethod
    def build(cls, alpha, beta, dt, n, weights=None):
        weights = weights or ProductWeights(alpha, dt)
        interior, endpoint, rect = weights.coefficients(n)
        decay = np.exp(-beta * dt * np.arange(n + 1)) / gamma(alpha)
        return cls(alpha, beta, dt, interior[:n + 1] * decay, endpoint[:n + 1] * decay,
                   rect[:n + 1] * decay)

    @property
    def size(self):
        return len(self.interior) - 1

    def trapezoid_history(self, n, g):
        """Trapezoid sum for step n excluding the j = n term."""
        if n == 0:
            return 0.0
        s = self.endpoint[n] * g[0]
        if n > 1:
            s += np.dot(self.interior[n - 1:0:-1], g[1:n])
        return float(s)

    def trapezoid(self, n, g):
        if n == 0:
            return 0.0
        return self.trapezoid_history(n, g) + float(self.interior[0] * g[n])

    def rectangle(self, n, g):
        if n == 0:
            return 0.0
        return float(np.dot(self.rect[n:0:-1], g[:n]))

    def matrix(self):
        """Dense lower-triangular operator M with (M g)_n = trapezoid(n, g)."""
        n = self.size
        lag = np.arange(n + 1)[:, None] - np.arange(n + 1)[None, :]
        m = np.where(lag >= 0, self.interior[np.clip(lag, 0, n)], 0.0)
        m[1:, 0] = self.endpoint[1:]
        m[0, :] = 0.0
        return m


def weighted_convolution(alpha, beta, t0, dt, n, g):
    """(1/Gamma(alpha)) sum_j w_{n,j} e^{-beta (t_n - t_j)} g(t_j), with t_j = t0 + j dt."""
    g = np.asarray(g, dtype=float)
    if len(g) < n + 1:
        raise ValueError(f"need {n + 1} samples of g, got {len(g)}")
    if n == 0:
        return 0.0
    return ConvolutionKernel.build(alpha, beta, dt, n).trapezoid(n, g)


@dataclass
class DecayCheck:
    times: np.ndarray
    values: np.ndarray
    tail_monotone: bool
    tail_slope: float
    decaying: bool


def kernel_decay_check(alpha, beta, t0, k, t_grid, dt, threshold=None, min_slope=0.05):
    """Evaluate (1/Gamma(alpha)) int_{t0}^t (t-s)^(alpha-1) e^{-beta(t-s)} k(s) ds on ``t_grid``.

    ``k`` is either a callable or samples at t0 + j*dt covering max(t_grid).
    The tail (last half of ``t_grid``) counts as decaying when it is
    nonincreasing, its log-log slope is below ``-min_slope``, and (if given)
    the final value is at most ``threshold``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    n_max = int(round((t_grid.max() - t0) / dt))
    if callable(k):
        samples = np.array([k(t0 + j * dt) for j in range(n_max + 1)], dtype=float)
    else:
        samples = np.asarray(k, dtype=float)
        if len(samples) < n_max + 1:
            raise ValueError("k samples do not cover the requested times")
    kern = ConvolutionKernel.build(alpha, beta, dt, n_max)
    values = np.empty(len(t_grid))
    for i, t in enumerate(t_grid):
        n = int(round((t - t0) / dt))
        if abs(t0 + n * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the dt grid")
        values[i] = kern.trapezoid(n, samples)

    tail = slice(len(t_grid) // 2, None)
    tv, tt = values[tail], t_grid[tail]
    scale = max(float(np.max(np.abs(tv))), 1e-300) if len(tv) else 1.0
    monotone = bool(np.all(np.diff(tv) <= 1e-12 * scale))
    slope = float("nan")
    positive = (tv > 0) & (tt > 0)
    if np.count_nonzero(positive) >= 2:
        slope = float(np.polyfit(np.log(tt[positive]), np.log(tv[positive]), 1)[0])
    if np.all(tv == 0):
        decaying = True
    else:
        decaying = monotone and slope < -min_slope
        if threshold is not None:
            decaying = decaying and abs(tv[-1]) <= threshold
    return DecayCheck(t_grid, values, monotone, slope, decaying)

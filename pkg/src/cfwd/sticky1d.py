"""One-dimensional sticky-reflected Brownian motion by a change of clock.

The path solves ``y = y0 + int rho I{y>0} dB + xi0 int I{y=0} ds``.  It is
built in the clock ``s`` of the time spent away from zero, where the driving
martingale ``N'`` is a Brownian motion with rate ``rho**2``.  The reflection
term is ``L_s = max(0, -y0 - inf_{r<=s} N'_r)`` and real time is
``A_s = s + L_s / xi0``; the time above zero is the inverse ``R_t``.

``N'`` is sampled on the walk grid ``i * dt``.  Its infimum over each step is
drawn exactly from the Brownian-bridge minimum law, so ``L`` and ``A`` are
exact at grid points and only the within-step layout is approximate (an
``O(dt)`` error on ``R``, not the ``O(sqrt(dt))`` of grid-only minima).
In real time a step whose reflection term grows by ``dL`` is laid out as
motion down to zero, a hold of ``dL / xi0`` at an exact zero, and motion
back up.  For ``xi0 = 0`` the path is absorbed at its first hit of zero.

Clamping an Euler scheme at zero instead would give a sitting time that
vanishes as ``dt -> 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .noise import DOMAIN_STICKY, NoiseStream

Rho = Union[float, Callable[[float], float]]


@dataclass(frozen=True, eq=False)
class StickyPath:
    """Sticky path sampled on the real-time grid ``j * dt``.

    ``R[j]`` is the time spent above zero up to ``t_j`` and ``R0[j]`` the
    time spent at zero.
    """

    times: np.ndarray
    y: np.ndarray
    R: np.ndarray
    R0: np.ndarray
    y0: float
    xi0: float
    rho: Rho

    @property
    def at_zero(self) -> np.ndarray:
        return self.y == 0.0


def sitting_bound(xi0: float, y0: float, t: float) -> float:
    """``sqrt(2 t / pi) * (xi0 t + y0)``."""
    if xi0 < 0 or y0 < 0 or t < 0:
        raise ValueError("sitting_bound arguments must be non-negative")
    return math.sqrt(2.0 * t / math.pi) * (xi0 * t + y0)


def positive_time_mean(y0: float, xi0: float, t: float) -> float:
    """Exact ``E R_t`` for ``rho = 1``.

    ``R_t > s`` iff ``A_s < t``, i.e. iff ``inf_{r<=s} N'_r > -y0 - xi0 (t - s)``,
    so ``E R_t = int_0^t [2 Phi((y0 + xi0 (t - s)) / sqrt(s)) - 1] ds``.
    """
    if xi0 < 0 or y0 < 0 or t < 0:
        raise ValueError("positive_time_mean arguments must be non-negative")
    if t == 0.0 or (y0 == 0.0 and xi0 == 0.0):
        return 0.0

    def f(s):
        return 1.0 if s <= 0.0 else 2.0 * ndtr((y0 + xi0 * (t - s)) / math.sqrt(s)) - 1.0

    return float(quad(f, 0.0, t, limit=200, epsabs=1e-12)[0])


def _check(y0, xi0, T, dt):
    if y0 < 0.0:
        raise ValueError(f"y0 must be >= 0, got {y0!r}")
    if xi0 < 0.0:
        raise ValueError(f"xi0 must be >= 0, got {xi0!r}")
    if not T > 0.0:
        raise ValueError(f"T must be positive, got {T!r}")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")


def _check_rho(rho: float) -> None:
    if not (1.0 <= rho < math.inf):
        raise ValueError(f"rho must lie in [1, C] for a finite C, got {rho!r}")


def _walk_steps(T: float, dt: float) -> int:
    return int(math.ceil(T / dt - 1e-9))


def bridge_minimum(a, b, var, u):
    """Exact draw of the minimum of a Brownian bridge from ``a`` to ``b``.

    ``var`` is the variance of the unconditioned increment and ``u`` a
    uniform variate in (0, 1).
    """
    return 0.5 * (a + b - np.sqrt((b - a) ** 2 - 2.0 * var * np.log(u)))


@dataclass(frozen=True, eq=False)
class _Layout:
    """Per-walk-step quantities; all arrays have a leading replica axis."""

    start: np.ndarray  # (R, S+1) real time A_i at the start of step i
    y: np.ndarray  # (R, S+1) position at walk grid points
    touch: np.ndarray  # (R, S) the step reaches zero
    down: np.ndarray  # (R, S) motion time before reaching zero
    hold: np.ndarray  # (R, S) time held at zero, inf once absorbed
    dt: float


def _layout(N, mins, y0, xi0, dt) -> _Layout:
    reps, S = mins.shape
    lo = np.minimum.accumulate(np.minimum(np.minimum(N[:, :-1], 0.0), mins), axis=1)
    L = np.maximum(0.0, -y0 - np.concatenate((np.zeros((reps, 1)), lo), axis=1))
    y = y0 + N + L
    low = y0 + mins + L[:, :-1]
    touch = low <= 0.0
    if xi0 > 0.0:
        hold = np.diff(L, axis=1) / xi0
    else:
        dead = np.cumsum(touch, axis=1) > 0
        hold = np.where(dead, np.inf, 0.0)
        y[:, 1:] = np.where(dead, 0.0, y[:, 1:])
    ys = y[:, :-1]
    span = ys - low
    frac = np.divide(ys, span, out=np.zeros_like(ys), where=span > 0.0)
    down = np.where(touch, np.clip(frac, 0.0, 1.0) * dt, dt)
    finite = np.where(np.isfinite(hold), hold, 0.0)
    start = np.concatenate((np.zeros((reps, 1)), np.cumsum(dt + finite, axis=1)), axis=1)
    # steps after an absorbing hold never begin
    gone = np.concatenate((np.zeros((reps, 1), bool), np.cumsum(np.isinf(hold), axis=1) > 0), axis=1)
    start[gone] = np.inf
    return _Layout(start, y, touch, down, hold, dt)


def _sample_at(lay: _Layout, t: float):
    """Position and time above zero at real time ``t`` for every replica."""
    rows = np.arange(lay.start.shape[0])
    S = lay.down.shape[1]
    i = np.minimum(np.sum(lay.start <= t, axis=1) - 1, S - 1)
    tau = t - lay.start[rows, i]
    down = lay.down[rows, i]
    hold = lay.hold[rows, i]
    touch = lay.touch[rows, i]
    ys = lay.y[rows, i]
    ye = lay.y[rows, i + 1]
    dt = lay.dt
    base = i * dt
    first = tau <= down
    held = ~first & (tau <= down + hold)
    rest = tau - down - np.where(held, 0.0, hold)
    R = np.minimum(np.where(first, base + tau, base + down + np.where(held, 0.0, rest)), base + dt)

    def ratio(a, b):
        # a zero-length phase is complete once any time has passed
        return np.divide(a, b, out=(a > 0.0).astype(float), where=b > 0.0)

    y1 = np.where(touch, ys * (1.0 - ratio(tau, down)), ys + (ye - ys) * tau / dt)
    y3 = ye * np.clip(ratio(rest, dt - down), 0.0, 1.0)
    y = np.where(first, y1, np.where(held, 0.0, y3))
    return np.maximum(y, 0.0), R


def _walks(y0, xi0, rho, T, dt, seed, replicas):
    S = _walk_steps(T, dt)
    var = rho * rho * dt
    N = np.zeros((len(replicas), S + 1))
    mins = np.empty((len(replicas), S))
    for row, r in enumerate(replicas):
        z, u = NoiseStream(seed, r, DOMAIN_STICKY).draw(S, 1, 1)
        N[row, 1:] = np.cumsum(math.sqrt(var) * z[:, 0])
        mins[row] = bridge_minimum(N[row, :-1], N[row, 1:], var, u[:, 0])
    return N, mins


def simulate_sticky(
    y0: float,
    xi0: float,
    rho: Rho = 1.0,
    T: float = 1.0,
    dt: float = 1e-3,
    seed: int = 0,
    replica: int = 0,
) -> StickyPath:
    """Simulate one sticky path on ``0, dt, ..., T``.

    ``rho`` may also be a callable of the current position; this hook is
    evaluated at the start of each walk step and is not used by the bound
    checks.  ``R + R0 = t`` holds exactly in floating point.
    """
    _check(y0, xi0, T, dt)
    if callable(rho):
        S = _walk_steps(T, dt)
        z, u = NoiseStream(seed, replica, DOMAIN_STICKY).draw(S, 1, 1)
        N = np.zeros(S + 1)
        mins = np.empty(S)
        lo = 0.0
        for i in range(S):
            r_i = float(rho(max(0.0, y0 + N[i] + max(0.0, -y0 - lo))))
            _check_rho(r_i)
            var = r_i * r_i * dt
            N[i + 1] = N[i] + math.sqrt(var) * z[i, 0]
            mins[i] = bridge_minimum(N[i], N[i + 1], var, u[i, 0])
            lo = min(lo, mins[i])
        N, mins = N[None, :], mins[None, :]
    else:
        _check_rho(rho)
        N, mins = _walks(y0, xi0, rho, T, dt, seed, [replica])
    lay = _layout(N, mins, y0, xi0, dt)
    times = np.arange(_walk_steps(T, dt) + 1) * dt
    y = np.empty(times.size)
    R = np.empty(times.size)
    for j, t in enumerate(times):
        yj, Rj = _sample_at(lay, t)
        y[j], R[j] = yj[0], Rj[0]
    R, R0 = _split(times, R)
    return StickyPath(times, y, R, R0, float(y0), float(xi0), rho)


def _split(t, R):
    """``(R, t - R)`` adjusted by at most one ulp so that the sum is exactly ``t``.

    The larger part is kept and the smaller one recomputed from it; the
    subtraction is then exact (Sterbenz), hence so is the sum.
    """
    R0 = t - R
    small = R < R0
    R = np.where(small, t - R0, R)
    R0 = np.where(small, R0, t - R)
    return R, R0


def sticky_positive_times(
    y0: float, xi0: float, T: float, dt: float, replicas: int, seed: int, rho: float = 1.0
) -> np.ndarray:
    """``R_T`` for ``replicas`` independent paths (replica ``r`` uses stream ``r``)."""
    _check(y0, xi0, T, dt)
    _check_rho(rho)
    out = np.empty(replicas)
    chunk = 256
    for lo in range(0, replicas, chunk):
        hi = min(lo + chunk, replicas)
        N, mins = _walks(y0, xi0, rho, T, dt, seed, range(lo, hi))
        out[lo:hi] = _sample_at(_layout(N, mins, y0, xi0, dt), T)[1]
    return out

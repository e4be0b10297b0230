"""Non-decreasing right-continuous step functions on [0, 1].

A :class:`StepFunction` is the common currency of the package: it is used for
initial conditions ``g``, interaction potentials ``xi`` and snapshots of the
particle configuration.  Piece ``k`` (0-based) carries the value
``values[k]`` on ``[breakpoints[k], breakpoints[k + 1])``; the value at the
label ``1`` is the left limit ``values[-1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

BREAKPOINT_TOL = 1e-12

LabelFunction = Union["StepFunction", Callable[[float], float]]


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Element of the cone of non-decreasing step functions.

    Parameters
    ----------
    breakpoints : array_like
        ``0 = u_0 < u_1 < ... < u_n = 1``.  A last breakpoint within
        ``1e-12`` of one is snapped to exactly ``1.0``.
    values : array_like
        ``n`` non-decreasing reals.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __init__(self, breakpoints, values):
        bp = np.array(breakpoints, dtype=float).ravel()
        vals = np.array(values, dtype=float).ravel()
        if bp.size < 2:
            raise ValueError("a step function needs at least two breakpoints")
        if vals.size != bp.size - 1:
            raise ValueError(
                f"expected {bp.size - 1} values for {bp.size} breakpoints, got {vals.size}"
            )
        if bp[0] != 0.0:
            raise ValueError(f"first breakpoint must be 0, got {bp[0]!r}")
        if abs(bp[-1] - 1.0) > BREAKPOINT_TOL:
            raise ValueError(f"last breakpoint must be 1, got {bp[-1]!r}")
        bp[-1] = 1.0
        if np.any(np.diff(bp) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        if np.any(np.diff(vals) < 0.0):
            raise ValueError("values must be non-decreasing (monotonicity violated)")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    # -- basic structure -------------------------------------------------
    @property
    def n(self) -> int:
        return self.values.size

    @property
    def masses(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])

    def piece_index(self, u: float) -> int:
        """0-based index of the piece holding label ``u`` (the last piece at 1)."""
        _check_label(u)
        if u == 1.0:
            return self.n - 1
        return int(np.searchsorted(self.breakpoints, u, side="right") - 1)

    def __call__(self, u):
        return eval_step(self, u)

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        return np.array_equal(self.breakpoints, other.breakpoints) and np.array_equal(
            self.values, other.values
        )

    __hash__ = None

    def __repr__(self):
        return f"StepFunction(breakpoints={self.breakpoints.tolist()}, values={self.values.tolist()})"

    # -- conversions -----------------------------------------------------
    def to_record(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_record(cls, record: dict) -> "StepFunction":
        extra = set(record) - {"breakpoints", "values"}
        if extra:
            raise ValueError(f"unknown step-function fields: {sorted(extra)}")
        return cls(record["breakpoints"], record["values"])

    def refine(self, breakpoints) -> "StepFunction":
        """Same function on a finer partition (must contain our breakpoints)."""
        bp = np.asarray(breakpoints, dtype=float)
        if not np.all(np.isin(self.breakpoints, bp)):
            raise ValueError("target partition does not refine the breakpoints")
        idx = np.searchsorted(self.breakpoints, bp[:-1], side="right") - 1
        return StepFunction(bp, self.values[idx])

    def merged(self) -> "StepFunction":
        """Canonical form: adjacent pieces with equal values merged."""
        keep = np.concatenate(([True], self.values[1:] != self.values[:-1]))
        bp = np.concatenate((self.breakpoints[:-1][keep], [1.0]))
        return StepFunction(bp, self.values[keep])


def _check_label(u: float) -> None:
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"label {u!r} outside [0, 1]")


def constant(c: float) -> StepFunction:
    return StepFunction([0.0, 1.0], [c])


def common_breakpoints(*fs: StepFunction) -> np.ndarray:
    bp = fs[0].breakpoints
    for f in fs[1:]:
        bp = np.union1d(bp, f.breakpoints)
    return bp


def refine_common(*fs: StepFunction) -> tuple:
    """Rewrite all arguments on the union of their breakpoints."""
    bp = common_breakpoints(*fs)
    return tuple(f.refine(bp) for f in fs)


def eval_step(f: StepFunction, u):
    """Right-continuous evaluation; the left limit is returned at ``u = 1``.

    Accepts scalars or arrays of labels.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr < 0.0) | (u_arr > 1.0)) or np.any(np.isnan(u_arr)):
        raise ValueError(f"label(s) outside [0, 1]: {u!r}")
    idx = np.searchsorted(f.breakpoints, u_arr, side="right") - 1
    idx = np.minimum(idx, f.n - 1)
    out = f.values[idx]
    return float(out) if out.ndim == 0 else out


def integral(f: StepFunction, a: float = 0.0, b: float = 1.0) -> float:
    """Exact integral of ``f`` over ``[a, b]``."""
    lo = np.clip(f.breakpoints[:-1], a, b)
    hi = np.clip(f.breakpoints[1:], a, b)
    return float(np.sum((hi - lo) * f.values))


def block_average(f: StepFunction, a: float, b: float) -> float:
    """Mean value of ``f`` over ``[a, b)``, computed exactly from the pieces."""
    if not (0.0 <= a < b <= 1.0):
        raise ValueError(f"need 0 <= a < b <= 1, got a={a!r}, b={b!r}")
    return integral(f, a, b) / (b - a)


def _sample(fn: LabelFunction, u: float) -> float:
    if isinstance(fn, StepFunction):
        return eval_step(fn, u)
    return float(fn(u))


def dyadic_discretize_xi(xi: LabelFunction, level: int) -> StepFunction:
    """Strictly increasing dyadic staircase approximating a potential.

    Piece ``k = 1..2**level`` gets ``k / 4**level + xi((k - 1) / 2**level)``;
    the ``k / 4**level`` term makes the result strictly increasing even where
    ``xi`` is flat.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    size = 2**level
    bp = np.arange(size + 1) / size
    vals = np.array(
        [k / 4.0**level + _sample(xi, (k - 1) / size) for k in range(1, size + 1)]
    )
    return StepFunction(bp, vals)


def dyadic_discretize_g(g: LabelFunction, xi_n: StepFunction) -> StepFunction:
    """Block means of ``g`` over the uniform dyadic blocks of ``xi_n``.

    For a step function ``g`` the means are exact; a callable is integrated
    with composite Gauss-Legendre quadrature on each block.
    """
    size = xi_n.n
    if size & (size - 1) or not np.allclose(xi_n.breakpoints, np.arange(size + 1) / size):
        raise ValueError("xi_n must be a uniform dyadic staircase")
    bp = xi_n.breakpoints
    if isinstance(g, StepFunction):
        vals = [block_average(g, bp[k], bp[k + 1]) for k in range(size)]
    else:
        nodes, weights = np.polynomial.legendre.leggauss(16)
        vals = []
        for k in range(size):
            a, b = bp[k], bp[k + 1]
            pts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            vals.append(0.5 * float(np.dot(weights, [g(p) for p in pts])))
    return StepFunction(bp, np.maximum.accumulate(vals))


def identity_staircase(level: int) -> StepFunction:
    """Block means of the identity on ``2**level`` equal blocks."""
    size = 2**level
    bp = np.arange(size + 1) / size
    return StepFunction(bp, (2 * np.arange(size) + 1) / (2.0 * size))


def l2_inner(f: StepFunction, h: StepFunction) -> float:
    f, h = refine_common(f, h)
    return float(np.sum(f.masses * f.values * h.values))


def l2_norm(f: StepFunction) -> float:
    return float(np.sqrt(np.sum(f.masses * f.values**2)))


def lp_norm(f: StepFunction, p: float) -> float:
    return float(np.sum(f.masses * np.abs(f.values) ** p) ** (1.0 / p))

"""Projection onto sigma(g)-measurable functions and the monotone cone."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .step_functions import StepFunction, eval_step, refine_common


@dataclass(frozen=True)
class LevelSetPartition:
    """Maximal runs of equal values of a step function.

    ``starts[b]:stops[b]`` are the (0-based, half-open) piece ranges of
    block ``b``.
    """

    starts: np.ndarray
    stops: np.ndarray
    masses: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.starts.size

    def block_of(self, k: int) -> int:
        return int(np.searchsorted(self.stops, k, side="right"))


def level_sets(g: StepFunction) -> LevelSetPartition:
    # exact equality: clusters are never detected with a tolerance
    new_block = np.concatenate(([True], g.values[1:] != g.values[:-1]))
    starts = np.flatnonzero(new_block)
    stops = np.append(starts[1:], g.n)
    masses = np.add.reduceat(g.masses, starts)
    return LevelSetPartition(starts, stops, masses, g.values[starts])


def project(g: StepFunction, h: StepFunction) -> StepFunction:
    """``pr_g h``: mass-weighted mean of ``h`` on every level set of ``g``.

    Both arguments are first rewritten on their common refinement, so the
    result lives on the merged breakpoints.
    """
    g, h = refine_common(g, h)
    ls = level_sets(g)
    sums = np.add.reduceat(g.masses * h.values, ls.starts)
    # rounding could push a mean past its block's range and break monotonicity
    lo = h.values[ls.starts]
    hi = h.values[ls.stops - 1]
    means = np.clip(sums / ls.masses, lo, hi)
    counts = ls.stops - ls.starts
    return StepFunction(g.breakpoints, np.repeat(means, counts))


def mass(g: StepFunction, u: float) -> float:
    """Lebesgue measure of ``{v : g(v) = g(u)}``."""
    if not (0.0 < u < 1.0):
        raise ValueError(f"label {u!r} outside (0, 1)")
    ls = level_sets(g)
    return float(ls.masses[ls.block_of(g.piece_index(u))])


def hs_norm_sq(g: StepFunction) -> int:
    """Squared Hilbert-Schmidt norm of ``pr_g``: the number of distinct values."""
    return len(level_sets(g))


def hs_norm_sq_integral(g: StepFunction) -> float:
    """``int_0^1 du / m_g(u)`` evaluated piecewise (cross-check of :func:`hs_norm_sq`)."""
    return float(sum(m / mass(g, u) for m, u in zip(g.masses, g.midpoints)))


def isotonic(values, weights) -> np.ndarray:
    """Weighted least-squares projection onto non-decreasing sequences.

    Pool-adjacent-violators with a back-merging stack.  Pools whose means
    tie are merged as well, so the returned blocks are strictly increasing.

    Parameters
    ----------
    values : array_like
        Points to project.
    weights : array_like
        Strictly positive weights (piece masses).

    Returns
    -------
    numpy.ndarray
        Minimiser of ``sum(w * (x - values)**2)`` over non-decreasing ``x``.
    """
    y = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if y.size != w.size:
        raise ValueError(f"length mismatch: {y.size} values, {w.size} weights")
    if np.any(w <= 0.0):
        raise ValueError("weights must be strictly positive")
    means, wsum, sizes = [], [], []
    for v, wt in zip(y.tolist(), w.tolist()):
        means.append(v)
        wsum.append(wt)
        sizes.append(1)
        while len(means) > 1 and means[-2] >= means[-1]:
            wt2 = wsum.pop()
            v2 = means.pop()
            n2 = sizes.pop()
            tot = wsum[-1] + wt2
            means[-1] = (wsum[-1] * means[-1] + wt2 * v2) / tot
            wsum[-1] = tot
            sizes[-1] += n2
    return np.repeat(np.array(means), sizes)


def inner_pr_h_eps(f: StepFunction, u: float, v: float, eps: float) -> float:
    """``(pr_f h_eps^u, pr_f h_eps^v)`` for normalised indicators.

    ``h_eps^u`` is the indicator of ``[u, (u + eps) ^ 1)`` divided by its
    length.  Only level sets of ``f`` meeting both windows contribute.
    """
    if not (0.0 <= u < v < 1.0):
        raise ValueError(f"need 0 <= u < v < 1, got u={u!r}, v={v!r}")
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    ls = level_sets(f)
    lo = f.breakpoints[ls.starts]
    hi = f.breakpoints[ls.stops]

    def overlap(a):
        b = min(a + eps, 1.0)
        return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None), b - a

    ou, lu = overlap(u)
    ov, lv = overlap(v)
    return float(np.sum(ou * ov / ls.masses) / (lu * lv))


def pointwise_limit_pr_h(f: StepFunction, u: float, v: float) -> float:
    """The eps -> 0+ limit ``I{f(u) = f(v)} / m_f(u)``."""
    if eval_step(f, u) != eval_step(f, v):
        return 0.0
    return 1.0 / mass(f, u)

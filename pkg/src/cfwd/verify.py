"""Monte Carlo checks of the explicit-constant bounds and of the martingale structure.

Every check returns a :class:`VerificationReport`.  Three kinds exist:

``bound``
    One-sided inequality ``E[LHS] <= RHS``.  Verdict ``pass`` iff
    ``lhs <= rhs + 3 * se``.
``statistical``
    Two-sided agreement tests (z-tests, variance windows, scheme-exact
    identities); the verdict rule is stated in each docstring and the
    ingredients are kept in ``extra``.
``report-only``
    Inequalities whose constants are not explicit.  They carry estimates and
    structural factors but no verdict.

Replicas are simulated independently (replica ``r`` uses noise stream
``(seed, r)``) and per-replica samples are stacked in replica order before
any reduction, so a report does not depend on the worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .dynamics import System, Trajectory, n_steps, simulate_system
from .step_functions import StepFunction, eval_step, lp_norm
from .sticky1d import positive_time_mean, sitting_bound, sticky_positive_times

PASS = "pass"
FAIL = "fail"
REPORT_ONLY = "report-only"

BOUND = "bound"
STATISTICAL = "statistical"

SE_MARGIN = 3.0


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of one check.

    Attributes
    ----------
    name : str
        Check identifier, e.g. ``"mass_lemma"``.
    params : dict
        Parameters the check was run with.
    lhs, rhs : float or None
        Estimated left-hand side and bound; ``rhs`` is None for report-only
        checks.
    se : float
        Monte Carlo standard error of ``lhs``.
    replicas : int
    verdict : str
        ``"pass"``, ``"fail"`` or ``"report-only"``.
    seed : int
    kind : str
        ``"bound"``, ``"statistical"`` or ``"report-only"``.
    extra : dict
        Auxiliary numbers (structural factors, component statistics).
    """

    name: str
    params: dict
    lhs: float
    rhs: Optional[float]
    se: float
    replicas: int
    verdict: str
    seed: int
    kind: str = BOUND
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    @property
    def has_verdict(self) -> bool:
        return self.verdict != REPORT_ONLY

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "params": _plain(self.params),
            "lhs": _plain(self.lhs),
            "rhs": _plain(self.rhs),
            "se": _plain(self.se),
            "replicas": int(self.replicas),
            "verdict": self.verdict,
            "seed": int(self.seed),
            "kind": self.kind,
            "extra": _plain(self.extra),
        }


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def bound_report(name, params, lhs, rhs, se, replicas, seed, extra=None) -> VerificationReport:
    verdict = PASS if lhs <= rhs + SE_MARGIN * se else FAIL
    return VerificationReport(name, params, float(lhs), float(rhs), float(se), replicas, verdict, seed, BOUND, extra or {})


def report_only(name, params, lhs, se, replicas, seed, extra=None) -> VerificationReport:
    return VerificationReport(name, params, float(lhs), None, float(se), replicas, REPORT_ONLY, seed, REPORT_ONLY, extra or {})


def mean_se(samples) -> tuple:
    """Sample mean and its standard error (``ddof=1``; 0 for one sample)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


# -- ensembles ---------------------------------------------------------------


def ensemble_map(fn: Callable[[int], object], replicas: Iterable[int], workers: int = 1) -> list:
    """``[fn(r) for r in replicas]``, optionally on a thread pool.

    Results are returned in replica order whatever the worker count.
    """
    replicas = list(replicas)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers!r}")
    if workers == 1:
        return [fn(r) for r in replicas]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, replicas))


@dataclass(frozen=True)
class Ensemble:
    """Replicas ``0 .. replicas - 1`` of one system on ``[0, T]``.

    Trajectories are generated on demand and never stored together.
    """

    system: System
    T: float
    dt: float
    replicas: int
    seed: int
    scheme: str = "sticky"
    zero_noise: bool = False
    workers: int = 1

    @classmethod
    def from_functions(cls, g: StepFunction, xi: StepFunction, T, dt, replicas, seed, **kw) -> "Ensemble":
        return cls(System.from_functions(g, xi), T, dt, replicas, seed, **kw)

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas!r}")
        n_steps(self.T, self.dt)

    def trajectory(self, replica: int) -> Trajectory:
        return simulate_system(self.system, self.T, self.dt, self.seed, replica, self.scheme, self.zero_noise)

    def map(self, fn: Callable[[Trajectory], object]) -> np.ndarray:
        """Stack ``fn(trajectory)`` over replicas into an array."""
        out = ensemble_map(lambda r: fn(self.trajectory(r)), range(self.replicas), self.workers)
        return np.asarray(out, dtype=float)

    def describe(self) -> dict:
        return {"T": self.T, "dt": self.dt, "n": self.system.n, "scheme": self.scheme}


# -- G functions ---------------------------------------------------------------


class GFunction:
    """Evaluates ``G``, ``G0`` and ``G1`` for a pair ``(g, xi)``.

    Point evaluations of ``g`` and ``xi`` are cached.
    """

    def __init__(self, g: StepFunction, xi: StepFunction):
        self.g = g
        self.xi = xi
        self._cache = {}

    def _at(self, which: str, u: float) -> float:
        key = (which, u)
        if key not in self._cache:
            f = self.g if which == "g" else self.xi
            self._cache[key] = float(eval_step(f, min(max(u, 0.0), 1.0)))
        return self._cache[key]

    def G(self, r1: float, r2: float, u: float, t: float) -> float:
        if r1 < 0.0 or r2 < 0.0:
            raise ValueError("r1 and r2 must be non-negative")
        if u - r1 < -1e-12 or u + r2 > 1.0 + 1e-12:
            raise ValueError(f"need u - r1 >= 0 and u + r2 <= 1, got u={u!r}, r1={r1!r}, r2={r2!r}")
        if t < 0.0:
            raise ValueError(f"t must be >= 0, got {t!r}")
        gp = self._at("g", u + r2) - self._at("g", u)
        gm = self._at("g", u) - self._at("g", u - r1)
        xp = self._at("xi", u + r2) - self._at("xi", u)
        xm = self._at("xi", u) - self._at("xi", u - r1)
        return (
            2.0 * gp * gm
            + 2.0 * xm * (t * gp + 0.5 * t * t * xp)
            + 2.0 * xp * (t * gm + 0.5 * t * t * xm)
        )

    def G0(self, r: float, u: float, t: float) -> float:
        if r <= 0.0 or u < 0.0 or u + r > 1.0 + 1e-12 or t < 0.0:
            raise ValueError(f"G0 needs r > 0, u >= 0, u + r <= 1, t >= 0; got r={r!r}, u={u!r}, t={t!r}")
        return (self._at("xi", u + r) - self._at("xi", u)) * t + self._at("g", u + r) - self._at("g", u)

    def G1(self, r: float, u: float, t: float) -> float:
        if r <= 0.0 or u > 1.0 or u - r < -1e-12 or t < 0.0:
            raise ValueError(f"G1 needs r > 0, u <= 1, u - r >= 0, t >= 0; got r={r!r}, u={u!r}, t={t!r}")
        return (self._at("xi", u) - self._at("xi", u - r)) * t + self._at("g", u) - self._at("g", u - r)


def eval_G(gf: GFunction, r1: float, r2: float, u: float, t: float) -> float:
    return gf.G(r1, r2, u, t)


def eval_G0(gf: GFunction, r: float, u: float, t: float) -> float:
    return gf.G0(r, u, t)


def eval_G1(gf: GFunction, r: float, u: float, t: float) -> float:
    return gf.G1(r, u, t)


# -- mass estimates ------------------------------------------------------------


def _small_mass_time(ens: Ensemble, queries: Sequence[tuple]) -> np.ndarray:
    """Per replica and query ``(u, r, t)``: ``dt * #{j < t/dt : m(u, t_j) < r}``."""
    sysm = ens.system
    cols = [(sysm.piece_of(u), r, n_steps(t, ens.dt)) for u, r, t in queries]

    def one(tr: Trajectory):
        return [ens.dt * np.count_nonzero(tr.cluster_mass[:s, k] < r) for k, r, s in cols]

    return ens.map(one).reshape(ens.replicas, len(cols))


def _check_mass_range(u, r):
    if not (0.0 < u < 1.0):
        raise ValueError(f"u must lie in (0, 1), got {u!r}")
    if not (0.0 < r <= min(u, 1.0 - u)):
        raise ValueError(f"need 0 < r <= min(u, 1 - u), got r={r!r} for u={u!r}")


def check_mass_lemma_grid(g, xi, points, dt, replicas, seed, workers=1, scheme="sticky") -> list:
    """:func:`check_mass_lemma` for many ``(u, r, t)`` on one shared ensemble."""
    points = [tuple(map(float, p)) for p in points]
    for u, r, t in points:
        _check_mass_range(u, r)
        if t < 0.0:
            raise ValueError(f"t must be >= 0, got {t!r}")
    T = max(t for _, _, t in points)
    gf = GFunction(g, xi)
    if T == 0.0:
        return [bound_report("mass_lemma", {"u": u, "r": r, "t": t, "dt": dt}, 0.0, r * gf.G(r, r, u, t), 0.0,
                             replicas, seed) for u, r, t in points]
    ens = Ensemble.from_functions(g, xi, T, dt, replicas, seed, scheme=scheme, workers=workers)
    samples = _small_mass_time(ens, points)
    out = []
    for q, (u, r, t) in enumerate(points):
        lhs, se = mean_se(samples[:, q])
        out.append(bound_report(
            "mass_lemma", {"u": u, "r": r, "t": t, "dt": dt, "scheme": scheme},
            lhs, r * gf.G(r, r, u, t), se, replicas, seed,
        ))
    return out


def check_mass_lemma(g, xi, u, r, t, dt, replicas, seed, workers=1, scheme="sticky") -> VerificationReport:
    """``int_0^t P{m(u, s) < r} ds <= r G(r, r, u, t)`` for ``0 < r <= u ^ (1 - u)``.

    The integral is a left-point sum over the grid.
    """
    return check_mass_lemma_grid(g, xi, [(u, r, t)], dt, replicas, seed, workers, scheme)[0]


def check_mass_near_boundary(g, xi, side, u, r, t, alpha, dt, replicas, seed, workers=1) -> VerificationReport:
    """Small-mass time near an endpoint, reported next to its structural factor.

    ``side=0`` needs ``0 <= u < r`` and ``u + r <= 1``; the factor is
    ``sqrt(u + r)**alpha * G0(r, u, t)**alpha``.  ``side=1`` needs
    ``1 - r < u <= 1`` and ``u - r >= 0``; the factor is
    ``sqrt(1 - u + r)**alpha * G1(r, u, t)**alpha``.
    """
    if side not in (0, 1):
        raise ValueError(f"side must be 0 or 1, got {side!r}")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not (0.0 < r < 1.0):
        raise ValueError(f"r must lie in (0, 1), got {r!r}")
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    gf = GFunction(g, xi)
    if side == 0:
        if not (0.0 <= u < r and u + r <= 1.0):
            raise ValueError(f"side 0 needs 0 <= u < r and u + r <= 1, got u={u!r}, r={r!r}")
        factor = math.sqrt(u + r) ** alpha * gf.G0(r, u, t) ** alpha
    else:
        if not (1.0 - r < u <= 1.0 and u - r >= 0.0):
            raise ValueError(f"side 1 needs 1 - r < u <= 1 and u - r >= 0, got u={u!r}, r={r!r}")
        factor = math.sqrt(1.0 - u + r) ** alpha * gf.G1(r, u, t) ** alpha
    params = {"side": side, "u": u, "r": r, "t": t, "alpha": alpha, "dt": dt}
    if t == 0.0:
        return report_only("mass_near_boundary", params, 0.0, 0.0, replicas, seed, {"structural_factor": factor})
    ens = Ensemble.from_functions(g, xi, t, dt, replicas, seed, workers=workers)
    lhs, se = mean_se(_small_mass_time(ens, [(u, r, t)])[:, 0])
    spread = float(eval_step(xi, 1.0) - eval_step(xi, 0.0))
    return report_only(
        "mass_near_boundary", params, lhs, se, replicas, seed,
        {"structural_factor": factor, "xi_spread_sq": spread * spread},
    )


def check_three_points(g, xi, u, r1, r2, lam, T, dt, replicas, seed, workers=1) -> VerificationReport:
    """``P{sup gap right > lam, sup gap left > lam} <= G(r1, r2, u, T) / (2 lam^2)``.

    The gaps are ``X(u + r2) - X(u)`` and ``X(u) - X(u - r1)`` and the
    suprema run over the grid on ``[0, T]``.
    """
    if not (0.0 < u < 1.0):
        raise ValueError(f"u must lie in (0, 1), got {u!r}")
    if not (0.0 < r1 <= u):
        raise ValueError(f"need 0 < r1 <= u, got r1={r1!r}")
    if not (0.0 < r2 <= 1.0 - u):
        raise ValueError(f"need 0 < r2 <= 1 - u, got r2={r2!r}")
    if not lam > 0.0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    if not T > 0.0:
        raise ValueError(f"T must be positive, got {T!r}")
    rhs = GFunction(g, xi).G(r1, r2, u, T) / (2.0 * lam * lam)
    ens = Ensemble.from_functions(g, xi, T, dt, replicas, seed, workers=workers)
    a, b, c = (ens.system.piece_of(v) for v in (u - r1, u, u + r2))

    def one(tr: Trajectory):
        right = np.max(tr.X[:, c] - tr.X[:, b])
        left = np.max(tr.X[:, b] - tr.X[:, a])
        return float(right > lam and left > lam)

    lhs, se = mean_se(ens.map(one))
    params = {"u": u, "r1": r1, "r2": r2, "lambda": lam, "T": T, "dt": dt}
    return bound_report("three_points", params, lhs, rhs, se, replicas, seed)


def check_dispersion_moment(g, xi, beta, p, t, dt, replicas, seed, delta=0.5, workers=1) -> VerificationReport:
    """``E int_0^1 int_0^t m(u, s)^-beta ds du`` with its structural factor.

    Valid for ``p > 2`` and ``0 < beta < 3/2 - 1/p``.  The estimate is
    ``sum_k m_k sum_{j < t/dt} dt / M_C(k, t_j)**beta``.  ``extra`` also
    carries the sup-norm moment ``E sup_s ||X_s - g||_{L_{2+delta}}^{2+delta}``.
    """
    if not p > 2.0:
        raise ValueError(f"p must exceed 2, got {p!r}")
    if not (0.0 < beta < 1.5 - 1.0 / p):
        raise ValueError(f"need 0 < beta < 3/2 - 1/p = {1.5 - 1.0 / p!r}, got beta={beta!r}")
    if not (0.0 <= delta < 1.0):
        raise ValueError(f"delta must lie in [0, 1), got {delta!r}")
    if not t > 0.0:
        raise ValueError(f"t must be positive, got {t!r}")
    ens = Ensemble.from_functions(g, xi, t, dt, replicas, seed, workers=workers)
    sysm = ens.system
    q = 2.0 + delta

    def one(tr: Trajectory):
        cm = tr.cluster_mass[:-1]
        integral = dt * float(np.sum(cm ** -beta @ sysm.masses))
        sup = float(np.max(np.abs(tr.X - sysm.g) ** q @ sysm.masses))
        return integral, sup

    s = ens.map(one)
    lhs, se = mean_se(s[:, 0])
    sup, sup_se = mean_se(s[:, 1])
    factor = 1.0 + lp_norm(g, p) ** 3 + lp_norm(xi, p)
    params = {"beta": beta, "p": p, "t": t, "dt": dt, "delta": delta}
    extra = {"structural_factor": factor, "sup_moment": sup, "sup_moment_se": sup_se}
    return report_only("dispersion_moment", params, lhs, se, replicas, seed, extra)


# -- martingale structure -------------------------------------------------------


def _z(mean: float, se: float) -> float:
    if se == 0.0:
        return 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    return mean / se


def martingale_test(ens: Ensemble, k: int, lag: Optional[float] = None, starts=None, min_replicas: int = 1000):
    """z-tests that ``M_k`` has centred increments uncorrelated with the past.

    For every start ``t`` the increment ``D = M_k(t + lag) - M_k(t)`` must
    have ``|mean / se| <= 3``, and for ``t > 0`` the least-squares slope of
    ``D`` on ``M_k(t)`` must satisfy ``|slope / se| <= 3``.
    """
    if ens.replicas < min_replicas:
        raise ValueError(f"martingale_test needs at least {min_replicas} replicas, got {ens.replicas}")
    if not 0 <= k < ens.system.n:
        raise ValueError(f"piece index {k!r} out of range")
    lag = ens.T / 2.0 if lag is None else float(lag)
    starts = [0.0, ens.T / 4.0, ens.T / 2.0] if starts is None else list(starts)
    probes = [(t, lag) for t in starts if t + lag <= ens.T + 1e-12]
    if not probes or lag <= 0.0:
        raise ValueError("no admissible (t, lag) probe inside [0, T]")
    idx = sorted({n_steps(t, ens.dt) for t, _ in probes} | {n_steps(t + s, ens.dt) for t, s in probes})
    pos = {j: i for i, j in enumerate(idx)}
    Mv = ens.map(lambda tr: tr.M[idx, k])
    zs = []
    detail = []
    for t, s in probes:
        m0 = Mv[:, pos[n_steps(t, ens.dt)]]
        d = Mv[:, pos[n_steps(t + s, ens.dt)]] - m0
        mean, se = mean_se(d)
        z_mean = _z(mean, se)
        z_slope = 0.0
        if t > 0.0 and np.var(m0) > 0.0:
            xc = m0 - m0.mean()
            slope = float(np.dot(xc, d - d.mean()) / np.dot(xc, xc))
            resid = d - d.mean() - slope * xc
            s2 = float(np.dot(resid, resid)) / max(d.size - 2, 1)
            z_slope = _z(slope, math.sqrt(s2 / float(np.dot(xc, xc))))
        zs += [abs(z_mean), abs(z_slope)]
        detail.append({"t": t, "lag": s, "mean": mean, "se": se, "z_mean": z_mean, "z_slope": z_slope})
    worst = max(zs)
    verdict = PASS if worst <= SE_MARGIN else FAIL
    return VerificationReport(
        "martingale", {"piece": k, **ens.describe()}, worst, SE_MARGIN, 0.0, ens.replicas, verdict,
        ens.seed, STATISTICAL, {"probes": detail},
    )


def qv_consistency(ens: Ensemble, k: int, l: int) -> VerificationReport:
    """Realized (cross-)variation of ``M`` against ``sum dt I{same cluster} / M_C``.

    Paired per replica; verdict ``pass`` iff ``|mean difference| <= 3 se``.
    """
    from .dynamics import qv_compensator, realized_cross_qv, realized_qv

    for i in (k, l):
        if not 0 <= i < ens.system.n:
            raise ValueError(f"piece index {i!r} out of range")

    def one(tr: Trajectory):
        rq = realized_qv(tr, k) if k == l else realized_cross_qv(tr, k, l)
        return rq, qv_compensator(tr, k, l)

    s = ens.map(one)
    diff, se = mean_se(s[:, 0] - s[:, 1])
    verdict = PASS if abs(diff) <= SE_MARGIN * se else FAIL
    extra = {"realized_mean": float(s[:, 0].mean()), "compensator_mean": float(s[:, 1].mean()), "difference": diff}
    return VerificationReport(
        "qv_consistency", {"k": k, "l": l, **ens.describe()}, abs(diff), 0.0, se, ens.replicas, verdict,
        ens.seed, STATISTICAL, extra,
    )


def wiener_center_test(ens: Ensemble, min_replicas: int = 10_000, tol: float = 1e-9) -> VerificationReport:
    """Centre of mass ``(X_t, 1)`` as a standard Wiener process.

    Passes iff the terminal mean is within 4 se of the start, the terminal
    variance lies in ``[0.9 T, 1.1 T]``, every path's per-step conditional
    variances sum to ``T`` within ``tol`` and every path satisfies
    ``c_T - c_0 = sum of centre-of-mass noise increments`` within ``tol``.
    """
    if ens.replicas < min_replicas:
        raise ValueError(f"wiener_center_test needs at least {min_replicas} replicas, got {ens.replicas}")
    T_grid = n_steps(ens.T, ens.dt) * ens.dt

    def one(tr: Trajectory):
        c = tr.center_of_mass
        inc = c[-1] - c[0]
        dc = np.diff(c)
        return inc, abs(float(np.sum(tr.com_step_variance)) - T_grid), abs(inc - float(np.sum(tr.com_increments))), float(dc @ dc)

    s = ens.map(one)
    mean, se = mean_se(s[:, 0])
    var = float(s[:, 0].var(ddof=1))
    qv_err = float(s[:, 1].max())
    book_err = float(s[:, 2].max())
    ok = abs(mean) <= 4.0 * se and 0.9 * T_grid <= var <= 1.1 * T_grid and qv_err <= tol and book_err <= tol
    extra = {
        "terminal_variance": var,
        "variance_ratio": var / T_grid,
        "max_compensator_error": qv_err,
        "max_bookkeeping_error": book_err,
        "realized_qv_mean": float(s[:, 3].mean()),
    }
    return VerificationReport(
        "wiener_center", ens.describe(), abs(mean), 4.0 * se, se, ens.replicas, PASS if ok else FAIL,
        ens.seed, STATISTICAL, extra,
    )


def check_merged_time(g, xi, T, dts, replicas, seed, workers=1) -> list:
    """Report-only: mean fraction of time each adjacent pair spends merged, per ``dt``."""
    out = []
    for dt in dts:
        ens = Ensemble.from_functions(g, xi, T, dt, replicas, seed, workers=workers)
        f = ens.map(lambda tr: tr.bonds[:-1].mean(axis=0) if tr.n > 1 else np.zeros(0))
        mean, se = mean_se(f.mean(axis=1)) if f.size else (0.0, 0.0)
        out.append(report_only("merged_time", {"T": T, "dt": dt}, mean, se, replicas, seed,
                               {"per_bond": f.mean(axis=0).tolist() if f.size else []}))
    return out


# -- sticky sitting time -----------------------------------------------------------


def check_sitting_time(xi0, y0, T, dt, replicas, seed, rho=1.0) -> VerificationReport:
    """``E R_T <= sqrt(2 T / pi) (xi0 T + y0)`` for the sticky 1-D path.

    ``extra["exact_mean"]`` is the quadrature value of ``E R_T``.
    """
    R = sticky_positive_times(y0, xi0, T, dt, replicas, seed, rho)
    lhs, se = mean_se(R)
    params = {"xi0": xi0, "y0": y0, "T": T, "dt": dt, "rho": rho}
    extra = {"exact_mean": positive_time_mean(y0 / rho, xi0 / rho, T), "max_R": float(R.max())}
    return bound_report("sitting_time", params, lhs, sitting_bound(xi0, y0, T), se, replicas, seed, extra)

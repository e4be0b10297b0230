"""Time stepping for the finite sticky-reflected particle system.

Each piece ``k`` of the common refinement of ``g`` and ``xi`` is a particle
with mass ``m_k``, potential ``xi_k`` and position ``x_k``.  Clusters are
contiguous runs of pieces glued by structural bonds; they are never inferred
from floating-point equality.

One step of size ``dt`` does the following:

1. every piece gets the intra-cluster drift ``d_k = xi_k - <xi>_C``
   (mass-weighted mean over its cluster ``C``);
2. each internal bond ``j`` of a cluster with ``xi_{j+1} > xi_j`` is released
   with probability ``min(1, (xi_{j+1} - xi_j) * sqrt(2 dt) / sigma_j)``,
   where ``sigma_j**2 = 1/M_left + 1/M_right`` for the two sides of the bond
   inside the cluster.  Bonds between equal potentials are never released;
3. the blocks left after releasing draw one Gaussian ``Z_b`` each and move to
   ``x_b + sqrt(dt / M_b) Z_b + (mass-weighted block drift) dt``.  An
   unreleased cluster is a single block, so its pieces share one noise;
4. a mass-weighted pool-adjacent-violators pass restores the order; pooled
   blocks form the new clusters and share one position exactly.

The release probability makes a pair spend, on average, ``1 / (xi_{j+1} -
xi_j)`` units of merged time per unit of boundary local time: after a
release the gap performs a free Gaussian walk with step ``sigma sqrt(dt)``,
whose first descending ladder height has mean ``sigma sqrt(dt / 2)``.
Without the gate (``scheme="naive"``) clusters split on every step and the
merged-time fraction vanishes as ``dt -> 0``.

Gaussian slot ``b`` of a step belongs to the ``b``-th block in label order and
uniform slot ``j`` to bond ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .noise import NoiseStream
from .step_functions import StepFunction, refine_common

SCHEMES = ("sticky", "naive")


class OrderViolation(RuntimeError):
    """Monotonicity post-check failed after a step."""


@dataclass(frozen=True, eq=False)
class System:
    """Particles of the common refinement of ``g`` and ``xi``."""

    breakpoints: np.ndarray
    masses: np.ndarray
    g: np.ndarray
    xi: np.ndarray

    @classmethod
    def from_functions(cls, g: StepFunction, xi: StepFunction) -> "System":
        g, xi = refine_common(g, xi)
        return cls(g.breakpoints, g.masses, g.values.copy(), xi.values.copy())

    @property
    def n(self) -> int:
        return self.masses.size

    def piece_of(self, u: float) -> int:
        if not (0.0 <= u <= 1.0):
            raise ValueError(f"label {u!r} outside [0, 1]")
        if u == 1.0:
            return self.n - 1
        return int(np.searchsorted(self.breakpoints, u, side="right") - 1)


@dataclass(frozen=True, eq=False)
class ParticleState:
    """Snapshot of the particle system.

    ``bonds[j]`` is True when pieces ``j`` and ``j + 1`` share a cluster.
    """

    masses: np.ndarray
    positions: np.ndarray
    xi: np.ndarray
    bonds: np.ndarray
    time: float = 0.0

    @property
    def n(self) -> int:
        return self.masses.size

    @property
    def partition(self) -> list:
        """Clusters as ``(start, stop)`` half-open piece ranges."""
        cuts = np.flatnonzero(~self.bonds) + 1
        starts = np.concatenate(([0], cuts))
        stops = np.concatenate((cuts, [self.n]))
        return list(zip(starts.tolist(), stops.tolist()))

    def cluster_masses(self) -> np.ndarray:
        """Per piece, the mass of its cluster."""
        out = np.empty(self.n)
        for a, b in self.partition:
            out[a:b] = self.masses[a:b].sum()
        return out

    def as_step_function(self) -> StepFunction:
        bp = np.concatenate(([0.0], np.cumsum(self.masses)))
        return StepFunction(bp, self.positions)


def init(g: StepFunction, xi: StepFunction) -> ParticleState:
    """State at time 0: positions ``g``, clusters = level sets of ``g``."""
    sysm = System.from_functions(g, xi)
    return _initial_state(sysm)


def _initial_state(sysm: System) -> ParticleState:
    bonds = sysm.g[1:] == sysm.g[:-1]
    return ParticleState(sysm.masses, sysm.g.copy(), sysm.xi, bonds, 0.0)


def cluster_drifts(state: ParticleState) -> np.ndarray:
    """``xi_k`` minus the mass-weighted mean of ``xi`` over ``k``'s cluster."""
    d = np.empty(state.n)
    for a, b in state.partition:
        m = state.masses[a:b]
        d[a:b] = state.xi[a:b] - np.dot(m, state.xi[a:b]) / m.sum()
    return d


def center_of_mass(state: ParticleState) -> float:
    return float(np.dot(state.masses, state.positions))


def _check_scheme(scheme: str) -> bool:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return scheme == "sticky"


def _run(masses, xi, x0, bonds0, Z, U, dt, sticky, A0=None, qv0=None):
    n = masses.size
    steps = Z.shape[0]
    X = np.empty((steps + 1, n))
    B = np.zeros((steps + 1, max(n - 1, 0)), dtype=np.bool_)
    A = np.zeros((steps + 1, n))
    QV = np.zeros((steps + 1, n))
    if A0 is not None:
        A[0] = A0
    if qv0 is not None:
        QV[0] = qv0
    CM = np.empty((steps + 1, n))
    com_inc = np.empty(steps)
    com_var = np.empty(steps)
    code = _kernels.advance(
        np.ascontiguousarray(x0, dtype=float),
        np.ascontiguousarray(bonds0, dtype=np.bool_),
        masses, xi, np.ascontiguousarray(Z), np.ascontiguousarray(U), float(dt), sticky,
        X, B, A, QV, CM, com_inc, com_var,
    )
    if code != _kernels.OK:
        raise OrderViolation("positions lost monotonic order after a step")
    return X, B, A, QV, CM, com_inc, com_var


def step(state: ParticleState, dt: float, noise: NoiseStream, scheme: str = "sticky") -> ParticleState:
    """Advance ``state`` by one step of size ``dt``."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    sticky = _check_scheme(scheme)
    n = state.n
    Z, U = noise.draw(1, n, n - 1)
    X, B, *_ = _run(state.masses, state.xi, state.positions, state.bonds, Z, U, dt, sticky)
    return ParticleState(state.masses, X[1].copy(), state.xi, B[1].copy(), state.time + dt)


def n_steps(T: float, dt: float) -> int:
    if T < 0.0:
        raise ValueError(f"horizon must be non-negative, got {T!r}")
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if T > 0.0 and dt > T:
        raise ValueError(f"dt={dt!r} exceeds horizon T={T!r}")
    ratio = T / dt
    near = round(ratio)
    return int(near) if abs(ratio - near) < 1e-9 * max(1.0, ratio) else math.ceil(ratio)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Grid record of one replica.

    Attributes
    ----------
    times : (S + 1,) grid ``j * dt``.
    X, A, qv, cluster_mass : (S + 1, n) positions, accumulated drift,
        accumulated ``dt / M_C`` and cluster mass per piece.
    bonds : (S + 1, n - 1) structural bonds.
    com_increments : (S,) centre-of-mass noise ``sum_b sqrt(M_b dt) Z_b``.
    com_step_variance : (S,) conditional variance ``sum_b M_b dt`` per step.
    """

    system: System
    dt: float
    times: np.ndarray
    X: np.ndarray
    bonds: np.ndarray
    A: np.ndarray
    qv: np.ndarray
    cluster_mass: np.ndarray
    com_increments: np.ndarray
    com_step_variance: np.ndarray
    seed: int
    replica: int

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @cached_property
    def M(self) -> np.ndarray:
        """Martingale part ``X - g - A``."""
        return self.X - self.system.g - self.A

    @cached_property
    def cluster_ids(self) -> np.ndarray:
        """Index of each piece's cluster in the ordered partition."""
        ids = np.zeros(self.X.shape, dtype=np.int64)
        if self.n > 1:
            ids[:, 1:] = np.cumsum(~self.bonds, axis=1)
        return ids

    def state(self, j: int) -> ParticleState:
        return ParticleState(
            self.system.masses, self.X[j].copy(), self.system.xi, self.bonds[j].copy(), float(self.times[j])
        )

    @property
    def center_of_mass(self) -> np.ndarray:
        return self.X @ self.system.masses

    def same_cluster(self, k: int, l: int) -> np.ndarray:
        """Per grid point, whether pieces ``k`` and ``l`` share a cluster."""
        if k == l:
            return np.ones(self.times.size, dtype=bool)
        a, b = min(k, l), max(k, l)
        return np.all(self.bonds[:, a:b], axis=1)

    def cluster_count(self) -> np.ndarray:
        return self.cluster_ids[:, -1] + 1


def simulate(
    g: StepFunction,
    xi: StepFunction,
    T: float,
    dt: float,
    seed: int = 0,
    replica: int = 0,
    scheme: str = "sticky",
    zero_noise: bool = False,
) -> Trajectory:
    """Simulate one replica on the grid ``0, dt, ..., ceil(T / dt) dt``."""
    return simulate_system(System.from_functions(g, xi), T, dt, seed, replica, scheme, zero_noise)


def simulate_system(sysm: System, T, dt, seed=0, replica=0, scheme="sticky", zero_noise=False) -> Trajectory:
    sticky = _check_scheme(scheme)
    steps = n_steps(T, dt)
    noise = NoiseStream(seed, replica, zero=zero_noise)
    Z, U = noise.draw(steps, sysm.n, sysm.n - 1)
    s0 = _initial_state(sysm)
    X, B, A, QV, CM, com_inc, com_var = _run(sysm.masses, sysm.xi, s0.positions, s0.bonds, Z, U, dt, sticky)
    return Trajectory(
        system=sysm,
        dt=float(dt),
        times=np.arange(steps + 1) * float(dt),
        X=X,
        bonds=B,
        A=A,
        qv=QV,
        cluster_mass=CM,
        com_increments=com_inc,
        com_step_variance=com_var,
        seed=seed,
        replica=replica,
    )


def realized_qv(traj: Trajectory, k: int) -> float:
    """``sum_j (Delta M_k)^2`` over the grid."""
    dm = np.diff(traj.M[:, k])
    return float(np.dot(dm, dm))


def realized_cross_qv(traj: Trajectory, k: int, l: int) -> float:
    """``sum_j Delta M_k Delta M_l`` over the grid."""
    if k == l:
        raise ValueError("use realized_qv for the diagonal")
    return float(np.dot(np.diff(traj.M[:, k]), np.diff(traj.M[:, l])))


def qv_compensator(traj: Trajectory, k: int, l: int) -> float:
    """``sum_j dt I{k, l same cluster at t_j} / M_C(t_j)`` (left-point rule)."""
    same = traj.same_cluster(k, l)[:-1]
    return float(np.sum(traj.dt * same / traj.cluster_mass[:-1, k]))

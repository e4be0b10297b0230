import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfwd.dynamics import (
    OrderViolation,
    ParticleState,
    center_of_mass,
    cluster_drifts,
    init,
    n_steps,
    qv_compensator,
    realized_cross_qv,
    realized_qv,
    simulate,
    step,
)
from cfwd.noise import NoiseStream
from cfwd.sticky1d import positive_time_mean
from cfwd.step_functions import StepFunction, constant, dyadic_discretize_g, dyadic_discretize_xi, identity_staircase
from cfwd.verify import mean_se

from strategies import step_functions


class FixedNoise:
    """Stand-in stream returning prescribed variates for one step."""

    def __init__(self, z, u):
        self.z = np.asarray(z, dtype=float)[None, :]
        self.u = np.asarray(u, dtype=float)[None, :]

    def draw(self, steps, n_normal, n_uniform):
        assert steps == 1 and self.z.shape[1] == n_normal and self.u.shape[1] == n_uniform
        return self.z, self.u


def staircase(level):
    xi = dyadic_discretize_xi(lambda u: u, level)
    return dyadic_discretize_g(lambda u: u, xi), xi


def state(masses, positions, xi, bonds):
    return ParticleState(np.asarray(masses, float), np.asarray(positions, float), np.asarray(xi, float), np.asarray(bonds, bool))


# -- init -------------------------------------------------------------------------


def test_init_partitions():
    assert len(init(identity_staircase(3), constant(0.0)).partition) == 8
    s = init(constant(1.0), identity_staircase(2))
    assert s.partition == [(0, 4)]
    s = init(StepFunction([0, 0.2, 0.5, 1], [0, 0, 1]), StepFunction([0, 0.2, 0.5, 1], [0, 1, 2]))
    assert s.partition == [(0, 2), (2, 3)]
    assert s.time == 0.0


def test_init_refines_to_common_breakpoints():
    s = init(StepFunction([0, 0.5, 1], [0, 1]), StepFunction([0, 0.25, 1], [0, 1]))
    assert s.masses.tolist() == [0.25, 0.25, 0.5]
    assert s.positions.tolist() == [0.0, 0.0, 1.0]
    assert s.xi.tolist() == [0.0, 1.0, 1.0]


# -- drifts -----------------------------------------------------------------------------


def test_cluster_drift_examples():
    assert cluster_drifts(state([0.5, 0.5], [0, 1], [3, 4], [False])).tolist() == [0.0, 0.0]
    assert cluster_drifts(state([0.5, 0.5], [0, 0], [0, 1], [True])).tolist() == [-0.5, 0.5]
    d = cluster_drifts(state([0.25, 0.75], [0, 0], [0, 1], [True]))
    weighted_mean = math.fsum([0.25 * 0.0, 0.75 * 1.0])
    assert d.tolist() == [0.0 - weighted_mean, 1.0 - weighted_mean] == [-0.75, 0.25]


@given(step_functions(), step_functions(), st.lists(st.booleans(), min_size=40, max_size=40))
def test_drifts_cancel_in_every_cluster(g, xi, bonds):
    s0 = init(g, xi)
    s = ParticleState(s0.masses, np.full(s0.n, 0.0), s0.xi, np.array(bonds[: s0.n - 1], bool))
    d = cluster_drifts(s)
    for a, b in s.partition:
        assert abs(np.dot(s.masses[a:b], d[a:b])) <= 1e-12 * (1 + np.max(np.abs(s.xi)))


# -- one step ---------------------------------------------------------------------------


def test_two_piece_crossing_is_pooled():
    dt = 1e-3
    s = init(StepFunction([0, 0.5, 1], [0.0, 1e-9]), constant(0.0))
    z = np.array([3.0, -3.0])
    new = step(s, dt, FixedNoise(z, [0.5]))
    tentative = s.positions + np.sqrt(dt / 0.5) * z
    pooled = 0.5 * tentative[0] + 0.5 * tentative[1]
    assert new.bonds.tolist() == [True]
    assert new.positions[0] == new.positions[1]
    assert new.positions[0] == pytest.approx(pooled, abs=1e-15)
    assert new.time == dt


def test_single_cluster_moves_rigidly():
    dt = 0.01
    s = init(constant(0.3), constant(1.0).refine([0, 0.5, 1]))
    new = step(s, dt, FixedNoise([1.7, 0.0], [0.5]))
    assert new.partition == [(0, 2)]
    assert new.positions.tolist() == [0.3 + math.sqrt(dt) * 1.7] * 2


def test_equal_potential_pair_never_splits():
    s = init(constant(0.0).refine([0, 0.3, 1]), constant(2.0).refine([0, 0.3, 1]))
    for u in (0.0, 1e-12, 0.999):
        assert step(s, 0.1, FixedNoise([2.0, -2.0], [u])).bonds.tolist() == [True]


def test_step_rejects_bad_arguments():
    s = init(identity_staircase(1), constant(0.0))
    with pytest.raises(ValueError):
        step(s, 0.0, NoiseStream(0))
    with pytest.raises(ValueError, match="scheme"):
        step(s, 0.1, NoiseStream(0), scheme="euler")


def test_order_violation_is_an_error_type():
    assert issubclass(OrderViolation, RuntimeError)


# -- simulate -----------------------------------------------------------------------------


def test_zero_horizon_is_initial_state():
    g, xi = staircase(2)
    tr = simulate(g, xi, 0.0, 1e-3)
    assert tr.n_steps == 0
    assert np.array_equal(tr.X[0], g.values)


def test_dt_equal_T_is_one_step():
    g, xi = staircase(2)
    tr = simulate(g, xi, 0.25, 0.25, seed=9, replica=4)
    new = step(init(g, xi), 0.25, NoiseStream(9, 4))
    assert tr.n_steps == 1
    assert np.array_equal(tr.X[1], new.positions)
    assert np.array_equal(tr.bonds[1], new.bonds)


def test_steps_chain_like_simulate():
    g, xi = staircase(3)
    tr = simulate(g, xi, 0.05, 0.01, seed=3, replica=2)
    s, noise = init(g, xi), NoiseStream(3, 2)
    for j in range(1, 6):
        s = step(s, 0.01, noise)
        assert np.array_equal(tr.X[j], s.positions)


def test_n_steps():
    assert n_steps(1.0, 1e-3) == 1000
    assert n_steps(0.3, 0.1) == 3
    assert n_steps(0.35, 0.1) == 4
    for T, dt in [(-1.0, 0.1), (1.0, 0.0), (0.1, 0.2)]:
        with pytest.raises(ValueError):
            n_steps(T, dt)


def test_zero_noise_mode():
    g, xi = staircase(3)
    tr = simulate(g, xi, 0.2, 1e-3, zero_noise=True)
    assert not np.any(tr.M)
    for k in range(tr.n):
        assert realized_qv(tr, k) == 0.0
    # singletons carry no drift, so without noise nothing moves
    assert np.all(tr.X == g.values)


def test_reproducible():
    g, xi = staircase(3)
    a = simulate(g, xi, 0.3, 1e-3, seed=11, replica=5)
    b = simulate(g, xi, 0.3, 1e-3, seed=11, replica=5)
    c = simulate(g, xi, 0.3, 1e-3, seed=11, replica=6)
    for field in ("X", "bonds", "A", "qv", "cluster_mass", "com_increments"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert not np.array_equal(a.X, c.X)


def test_constant_potential_only_coalesces():
    g = StepFunction(np.linspace(0, 1, 9), [0.0, 0.1, 0.1, 0.3, 0.35, 0.6, 0.6, 0.9])
    for r in range(20):
        tr = simulate(g, constant(0.0), 1.0, 1e-3, seed=5, replica=r)
        assert np.all(np.diff(tr.cluster_count()) <= 0)
        assert not np.any(tr.bonds[:-1] & ~tr.bonds[1:])


def test_center_of_mass_examples():
    assert center_of_mass(init(identity_staircase(1), constant(0.0))) == 0.5
    tr = simulate(constant(0.2).refine([0, 0.3, 1]), constant(1.0).refine([0, 0.3, 1]), 0.1, 1e-3, seed=1)
    assert np.all(tr.bonds)
    assert np.allclose(tr.center_of_mass, tr.X[:, 0], rtol=0, atol=1e-15)


def test_qv_pair_examples():
    # far-apart pieces of an eternal two-cluster system are never merged
    g = StepFunction([0, 0.5, 1], [0.0, 100.0])
    tr = simulate(g, constant(0.0), 0.1, 1e-3, seed=2)
    assert qv_compensator(tr, 0, 1) == 0.0
    # pieces with equal g and xi share every increment
    tr = simulate(constant(0.0).refine([0, 0.4, 1]), identity_staircase(1).refine([0, 0.4, 0.5, 1]), 0.2, 1e-3, seed=2)
    assert np.all(tr.same_cluster(0, 1))
    assert realized_cross_qv(tr, 0, 1) == realized_qv(tr, 0)
    with pytest.raises(ValueError):
        realized_cross_qv(tr, 0, 0)


def test_single_piece_is_brownian():
    samples = np.array([realized_qv(simulate(constant(0.0), constant(0.0), 1.0, 1e-2, seed=4, replica=r), 0) for r in range(2000)])
    mean, se = mean_se(samples)
    assert abs(mean - 1.0) <= 3 * se
    tr = simulate(constant(0.0), constant(0.0), 1.0, 1e-2, seed=4)
    assert qv_compensator(tr, 0, 0) == pytest.approx(1.0, abs=1e-12)


# -- structural invariants on random systems ---------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(step_functions(6), step_functions(6), st.integers(0, 2**32 - 1), st.sampled_from(["sticky", "naive"]))
def test_structural_invariants(g, xi, seed, scheme):
    tr = simulate(g, xi, 0.05, 1e-3, seed=seed, scheme=scheme)
    sysm = tr.system
    # order and cluster structure
    assert np.all(np.diff(tr.X, axis=1) >= 0.0)
    assert np.all((np.diff(tr.X, axis=1) == 0.0) == tr.bonds)
    assert sysm.masses.sum() == pytest.approx(1.0, abs=1e-12)
    # bookkeeping identity and monotone quadratic variation
    assert np.max(np.abs(tr.X - (sysm.g + tr.A + tr.M))) <= 1e-9
    assert np.all(np.diff(tr.qv, axis=0) > 0.0)
    # left-point drift accumulation and cluster masses
    for j in (0, tr.n_steps // 2, tr.n_steps - 1):
        s = tr.state(j)
        np.testing.assert_allclose(tr.A[j + 1] - tr.A[j], 1e-3 * cluster_drifts(s), rtol=0, atol=1e-12)
        np.testing.assert_allclose(tr.cluster_mass[j], s.cluster_masses(), rtol=0, atol=1e-15)
    # coalescence permanence for equal potentials and the mass lower bound
    same_xi = sysm.xi[1:] == sysm.xi[:-1]
    assert not np.any(tr.bonds[:-1] & ~tr.bonds[1:] & same_xi)
    tied = (sysm.g[1:] == sysm.g[:-1]) & same_xi
    floor = np.array(sysm.masses)
    for k in range(sysm.n):
        a = k
        while a > 0 and tied[a - 1]:
            a -= 1
        b = k
        while b < sysm.n - 1 and tied[b]:
            b += 1
        floor[k] = sysm.masses[a : b + 1].sum()
    assert np.all(tr.cluster_mass >= floor - 1e-15)
    # scheme-exact centre of mass
    c = tr.center_of_mass
    assert abs(c[-1] - c[0] - tr.com_increments.sum()) <= 1e-9
    assert abs(tr.com_step_variance.sum() - 0.05) <= 1e-12


# -- two-piece system against the exact sticky law ----------------------------------------------


def test_two_piece_gap_matches_sticky_law():
    """The gap of a two-piece system is a sticky Brownian motion.

    With masses (1/2, 1/2) the free gap has variance rate 4 and, when merged,
    opens at rate theta.  The time spent apart therefore has mean
    ``E R_1`` of the standard sticky path with ``xi0 = theta / 2``.  The
    scheme resolves the boundary behaviour only up to an O(sqrt(dt)) bias of
    a few percent, so the comparison allows 5% plus 3 standard errors.
    """
    theta = 1.0
    g = constant(0.0).refine([0, 0.5, 1])
    xi = StepFunction([0, 0.5, 1], [0.0, theta])
    apart = [1e-3 * np.count_nonzero(~simulate(g, xi, 1.0, 1e-3, seed=77, replica=r).bonds[:-1, 0]) for r in range(4000)]
    mean, se = mean_se(apart)
    exact = positive_time_mean(0.0, theta / 2.0, 1.0)
    assert abs(mean - exact) <= 0.05 * exact + 3 * se

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from cfwd.projection import (
    hs_norm_sq,
    hs_norm_sq_integral,
    inner_pr_h_eps,
    isotonic,
    level_sets,
    mass,
    pointwise_limit_pr_h,
    project,
)
from cfwd.step_functions import (
    StepFunction,
    constant,
    eval_step,
    identity_staircase,
    integral,
    l2_inner,
    l2_norm,
    refine_common,
)

from oracles import brute_conditional_expectation, isotonic_exhaustive
from strategies import step_functions

HALF = StepFunction([0.0, 0.5, 1.0], [0.0, 1.0])
TIED = StepFunction([0.0, 0.2, 0.5, 1.0], [0.0, 0.0, 1.0])
QUARTERS = StepFunction([0.0, 0.25, 0.5, 0.75, 1.0], [1.0, 2.0, 3.0, 4.0])


# -- level_sets ------------------------------------------------------------------


def test_level_sets_with_ties():
    ls = level_sets(TIED)
    assert ls.starts.tolist() == [0, 2]
    assert ls.stops.tolist() == [2, 3]
    np.testing.assert_allclose(ls.masses, [0.5, 0.5], atol=1e-15)
    assert ls.values.tolist() == [0.0, 1.0]


def test_level_sets_strict_and_constant():
    assert len(level_sets(QUARTERS)) == 4
    ls = level_sets(constant(3.0))
    assert len(ls) == 1 and ls.masses.tolist() == [1.0]


# -- project ------------------------------------------------------------------------


def test_project_constant_g_gives_mean():
    p = project(constant(0.0), QUARTERS)
    assert np.all(p.values == integral(QUARTERS))


def test_project_strict_g_is_identity():
    assert project(QUARTERS, identity_staircase(2)) == identity_staircase(2)


def test_project_half_examples():
    h = StepFunction([0.0, 0.5, 1.0], [0.25, 0.75])
    assert project(HALF, h) == h
    p = project(HALF, QUARTERS)
    assert p.values.tolist() == [1.5, 1.5, 3.5, 3.5]


def test_project_matches_brute_conditional_expectation():
    p = project(HALF, QUARTERS)
    u, ref = brute_conditional_expectation(lambda x: eval_step(HALF, x), lambda x: eval_step(QUARTERS, x))
    assert np.max(np.abs(eval_step(p, u) - ref)) < 1e-12


# -- mass and HS norm ----------------------------------------------------------------


def test_mass_examples():
    assert mass(constant(1.0), 0.3) == 1.0
    assert mass(HALF, 0.25) == 0.5
    assert mass(TIED, 0.1) == pytest.approx(0.5, abs=1e-15)
    for u in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            mass(HALF, u)


def test_hs_norm_examples():
    assert hs_norm_sq(constant(2.0)) == 1
    assert hs_norm_sq(StepFunction([0.0, 0.1, 0.2, 0.6, 1.0], [0.0, 1.0, 1.0, 2.0])) == 3
    distinct = StepFunction([0.0, 0.2, 0.5, 1.0], [0.0, 1.0, 2.0])
    assert hs_norm_sq(distinct) == 3
    assert hs_norm_sq_integral(distinct) == pytest.approx(3.0, abs=1e-12)


# -- isotonic --------------------------------------------------------------------------


def test_isotonic_examples():
    v = np.array([0.0, 1.0, 1.0, 3.0])
    assert isotonic(v, np.ones(4)).tolist() == v.tolist()
    np.testing.assert_allclose(isotonic([1.0, 0.0], [0.5, 0.5]), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(isotonic([1.0, 0.0], [0.25, 0.75]), [0.25, 0.25], atol=1e-15)
    np.testing.assert_allclose(isotonic_exhaustive([1.0, 0.0], [0.25, 0.75]), [0.25, 0.25], atol=1e-15)


def test_isotonic_errors():
    with pytest.raises(ValueError, match="length"):
        isotonic([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        isotonic([1.0, 2.0], [1.0, 0.0])


# -- inner products of projected indicators -------------------------------------------------


def test_inner_pr_h_eps_examples():
    assert inner_pr_h_eps(constant(0.0), 0.2, 0.7, 0.01) == pytest.approx(1.0, abs=1e-12)
    assert inner_pr_h_eps(HALF, 0.1, 0.7, 1e-3) == 0.0
    val = inner_pr_h_eps(HALF, 0.1, 0.3, 1e-4)
    assert abs(val - pointwise_limit_pr_h(HALF, 0.1, 0.3)) <= 1e-2
    assert pointwise_limit_pr_h(HALF, 0.1, 0.3) == 2.0
    assert pointwise_limit_pr_h(HALF, 0.1, 0.7) == 0.0


@pytest.mark.parametrize("u,v,eps", [(0.5, 0.5, 0.1), (0.6, 0.5, 0.1), (0.1, 0.3, 0.0), (-0.1, 0.3, 0.1)])
def test_inner_pr_h_eps_domain(u, v, eps):
    with pytest.raises(ValueError):
        inner_pr_h_eps(HALF, u, v, eps)


def test_inner_pr_h_eps_converges():
    f = StepFunction([0.0, 0.3, 0.6, 1.0], [0.0, 1.0, 1.0])
    limit = pointwise_limit_pr_h(f, 0.35, 0.8)
    errs = [abs(inner_pr_h_eps(f, 0.35, 0.8, e) - limit) for e in (0.1, 0.01, 0.001)]
    assert limit == pytest.approx(1.0 / 0.7)
    assert errs[-1] < 1e-12


# -- properties -------------------------------------------------------------------------------------


def _max_diff(f, h):
    f, h = refine_common(f, h)
    return float(np.max(np.abs(f.values - h.values)))


@given(step_functions(), step_functions())
def test_idempotent(g, h):
    p = project(g, h)
    assert _max_diff(project(g, p), p) <= 1e-12


@given(step_functions(), step_functions())
def test_contraction(g, h):
    assert l2_norm(project(g, h)) <= l2_norm(h) + 1e-12


@given(step_functions(), step_functions(), step_functions())
def test_self_adjoint(g, h1, h2):
    assert abs(l2_inner(project(g, h1), h2) - l2_inner(h1, project(g, h2))) <= 1e-12 * (1 + l2_norm(h1) * l2_norm(h2))


@given(step_functions(), step_functions())
def test_monotone_preservation(g, h):
    assert np.all(np.diff(project(g, h).values) >= 0.0)


@given(step_functions())
def test_hs_norm_counts_distinct_values(g):
    k = hs_norm_sq(g)
    assert isinstance(k, int)
    assert k == len(set(g.values.tolist()))
    assert abs(hs_norm_sq_integral(g) - k) <= 1e-12


weights = st.floats(0.01, 10.0)
reals = st.floats(-100.0, 100.0)


@given(st.lists(st.tuples(reals, weights), min_size=1, max_size=9))
def test_isotonic_matches_exhaustive(pairs):
    v, w = map(np.array, zip(*pairs))
    np.testing.assert_allclose(isotonic(v, w), isotonic_exhaustive(v, w), rtol=0, atol=1e-9)


@given(st.lists(st.tuples(reals, weights), min_size=1, max_size=30))
def test_isotonic_conserves_weighted_mean(pairs):
    v, w = map(np.array, zip(*pairs))
    x = isotonic(v, w)
    assert np.all(np.diff(x) >= 0.0)
    assert abs(np.dot(w, x) - np.dot(w, v)) <= 1e-12 * max(1.0, np.dot(w, np.abs(v)))


@given(step_functions(), step_functions(), st.floats(1e-6, 10.0))
def test_lower_semicontinuity_family(g, h, eps):
    # g + eps * identity is strictly increasing, so its projection fixes h
    bp = np.union1d(np.union1d(g.breakpoints, h.breakpoints), np.linspace(0, 1, 65))
    g_r = g.refine(bp)
    # the perturbation must survive rounding next to g's values
    assume(eps * np.min(np.diff(bp)) > 1e-9 * (1.0 + np.max(np.abs(g_r.values))))
    g_eps = StepFunction(bp, g_r.values + eps * g_r.breakpoints[:-1])
    assert hs_norm_sq(g_eps) == g_eps.n
    assert l2_norm(project(g_eps, h)) == pytest.approx(l2_norm(h), rel=1e-12)
    assert l2_norm(project(g_eps, h)) >= l2_norm(project(g, h)) - 1e-12

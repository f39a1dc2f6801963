import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calmech.disclosure import concavify_at_prior, optimal_two_stage, upper_envelope_1d
from calmech.errors import PriorOutsideHull, WrongDimension
from calmech.instances import cml_problem, horizontal_problem, ranking_reversal_spec
from calmech.model import default_grid, simplex_grid
from calmech.stage_design import ValueCurve, discretize_screening, value_curve

from support import random_problem


def test_cml_full_disclosure():
    p = cml_problem()
    ts = optimal_two_stage(p)
    assert ts.value == pytest.approx(7 / 12, abs=1e-9)
    np.testing.assert_allclose(sorted(ts.split.atoms[:, 1]), [0, 1])
    np.testing.assert_allclose(ts.split.weights, [0.5, 0.5])
    prices = sorted(m.posted_price(p) for m in ts.mechanisms)
    np.testing.assert_allclose(prices, [0.5, 1.0])


def test_horizontal_partial_disclosure():
    p = horizontal_problem()
    ts = optimal_two_stage(p)
    assert ts.value == pytest.approx(19 / 12, abs=1e-9)
    order = np.argsort(ts.split.atoms[:, 1])
    np.testing.assert_allclose(ts.split.atoms[order, 1], [0, 2 / 3], atol=1e-12)
    np.testing.assert_allclose(ts.split.weights[order], [0.25, 0.75], atol=1e-12)
    np.testing.assert_allclose([ts.mechanisms[i].posted_price(p) for i in order], [2, 5 / 3], atol=1e-9)


def test_linear_curve_single_atom():
    grid = default_grid(cml_problem(), 11)
    curve = ValueCurve(grid, 1 + grid[:, 1], [None] * 11, np.zeros(11, dtype=int))
    split, value = concavify_at_prior(curve, [0.5, 0.5])
    assert len(split) == 1
    assert value == pytest.approx(1.5)


def test_prior_outside_hull():
    grid = np.array([[1.0, 0.0], [0.8, 0.2]])
    curve = ValueCurve(grid, np.zeros(2), [None] * 2, np.zeros(2, dtype=int))
    with pytest.raises(PriorOutsideHull):
        concavify_at_prior(curve, [0.5, 0.5])


def test_envelope_cml_is_chord():
    p = cml_problem()
    env = upper_envelope_1d(value_curve(p, default_grid(p, 61)))
    np.testing.assert_allclose(env.x, [0, 1])
    np.testing.assert_allclose(env.y, [0.5, 2 / 3])


def test_envelope_horizontal_kink():
    p = horizontal_problem()
    env = upper_envelope_1d(value_curve(p, default_grid(p, 61)))
    assert np.any(np.isclose(env.x, 2 / 3))
    assert env(2 / 3) == pytest.approx(5 / 3)


def test_envelope_of_concave_input():
    grid = default_grid(cml_problem(), 21)
    vals = -((grid[:, 1] - 0.3) ** 2)
    env = upper_envelope_1d(ValueCurve(grid, vals, [None] * 21, np.zeros(21, dtype=int)))
    np.testing.assert_allclose(env(grid[:, 1]), vals, atol=1e-12)


def test_envelope_needs_two_states():
    curve = ValueCurve(simplex_grid(3, 2), np.zeros(6), [None] * 6, np.zeros(6, dtype=int))
    with pytest.raises(WrongDimension):
        upper_envelope_1d(curve)


def test_ranking_reversal_support():
    p = discretize_screening(ranking_reversal_spec(prior_high=0.3), 100)
    ts = optimal_two_stage(p, default_grid(p, 201))
    for x in ts.split.atoms[:, 1]:
        assert min(abs(x - t) for t in (0, 0.5, 1)) <= 1 / 200 + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), ql=st.booleans())
def test_two_algorithms_agree_and_dominate(seed, ql):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, 2, int(rng.integers(2, 4)), int(rng.integers(2, 4)), quasilinear=ql)
    x = round(float(p.prior[1]) * 40) / 40
    if 0 < x < 1:
        p = dataclasses.replace(p, prior=np.array([1 - x, x]))
    grid = np.vstack([default_grid(p, 41), p.prior])
    ts = optimal_two_stage(p, grid)
    env = upper_envelope_1d(ts.curve)
    assert ts.value == pytest.approx(float(env(p.prior[1])), abs=1e-9)
    no_info = ts.curve.values[-1]
    full = p.prior @ ts.curve.values[[0, 40]]
    assert ts.value >= max(no_info, full) - 1e-9
    assert len(ts.split) <= p.n_states
    assert ts.split.plausibility_residual(p.prior) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_three_state_support_bound(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, 3, 2, 3)
    grid = np.vstack([simplex_grid(3, 6), p.prior])
    ts = optimal_two_stage(p, grid)
    assert len(ts.split) <= 3
    assert ts.split.plausibility_residual(p.prior) <= 1e-10

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calmech.errors import DimensionMismatch
from calmech.lp import LinearProgram, LpStatus, solve_lp, solve_lp_basic_support

from support import random_small_lp, vertex_enumeration


def test_single_variable():
    s = solve_lp(LinearProgram([1.0], A_ub=[[1.0]], b_ub=[1.0]))
    assert s.status is LpStatus.OPTIMAL
    assert s.values[0] == pytest.approx(1.0)


def test_degenerate_optimum_is_basic():
    s = solve_lp(LinearProgram([1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[1.0]))
    assert s.objective_value == pytest.approx(1.0)
    assert np.count_nonzero(s.values > 1e-12) == 1


def test_posted_price_toy():
    # variables (q, t): max t s.t. t - q <= 0, q <= 1
    s = solve_lp(LinearProgram([0.0, 1.0], A_ub=[[-1.0, 1.0], [1.0, 0.0]], b_ub=[0.0, 1.0]))
    assert s.values[1] == pytest.approx(1.0)


def test_beale_cycling_instance_terminates():
    c = [0, 0, 0, 0.75, -20, 0.5, -6.0]
    A = [[1, 0, 0, 0.25, -8, -1, 9], [0, 1, 0, 0.5, -12, -0.5, 3], [0, 0, 1, 0, 0, 1, 0.0]]
    s = solve_lp(LinearProgram(c, A_eq=A, b_eq=[0, 0, 1.0]))
    assert s.status is LpStatus.OPTIMAL
    assert s.objective_value == pytest.approx(1.25)
    assert s.pivots < 100


def test_infeasible_with_certificate():
    s = solve_lp(LinearProgram([1.0], A_ub=[[1.0]], b_ub=[-1.0]))
    assert s.status is LpStatus.INFEASIBLE
    assert s.certificate


def test_unbounded_with_ray():
    s = solve_lp(LinearProgram([1.0, 0.0], A_ub=[[0.0, 1.0]], b_ub=[1.0]))
    assert s.status is LpStatus.UNBOUNDED
    ray = np.asarray(s.certificate["ray"])
    assert ray[0] > 0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        LinearProgram([1.0, 2.0], A_ub=[[1.0]], b_ub=[1.0])


def test_free_and_boxed_bounds():
    # max x - y with x in [-1, 2], y free but y >= x - 1 / 2
    lp = LinearProgram([1.0, -1.0], A_ub=[[1.0, -1.0]], b_ub=[0.5], bounds=[[-1, 2], [-np.inf, np.inf]])
    s = solve_lp(lp)
    assert s.objective_value == pytest.approx(0.5)
    assert s.residual <= 1e-9


def test_highs_path_agrees():
    rng = np.random.default_rng(3)
    A = rng.uniform(0, 1, (6, 5))
    lp = LinearProgram(rng.normal(size=5), A_ub=A, b_ub=np.ones(6))
    a, b = solve_lp(lp, "tableau"), solve_lp(lp, "highs")
    assert a.objective_value == pytest.approx(b.objective_value, abs=1e-9)


def test_basic_support_bound_on_concavification():
    grid = np.linspace(0, 1, 11)
    W = np.maximum(0.5, (1 + grid) / 3)
    A_eq = np.vstack([np.ones(11), 1 - grid])
    s = solve_lp_basic_support(LinearProgram(W, A_eq=A_eq, b_eq=[1.0, 0.5]))
    assert np.count_nonzero(s.values > 1e-10) <= 2
    assert s.objective_value == pytest.approx(7 / 12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_matches_vertex_enumeration(seed):
    c, A, b, A_eq, b_eq = random_small_lp(np.random.default_rng(seed))
    best, _ = vertex_enumeration(c, A, b, A_eq, b_eq)
    s = solve_lp(LinearProgram(c, A_eq=A_eq, b_eq=b_eq, A_ub=A, b_ub=b), "tableau")
    if best is None:
        assert s.status is LpStatus.INFEASIBLE
    else:
        assert s.status is LpStatus.OPTIMAL
        assert s.objective_value == pytest.approx(best, abs=1e-7)
        assert s.residual <= 1e-9
        assert s.max_reduced_cost <= 1e-9

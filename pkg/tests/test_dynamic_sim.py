import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calmech.disclosure import TwoStageMechanism, optimal_two_stage
from calmech.dynamic_sim import (
    DeviationMatrix,
    UndetectableDeviator,
    adjustment_plan,
    best_undetectable_deviation,
    build_block_mechanism,
    check_ex_ante_ir,
    expected_block_frequency,
    find_profitable_undetectable_deviation,
    prefix_length,
    encode_atom,
    simulate_dynamic,
    weighted_payoffs,
)
from calmech.errors import ConfigError
from calmech.instances import cml_problem, surplus_extraction_mechanism
from calmech.model import BeliefSplit, blackwell_from_split
from calmech.repeated_sim import SimConfig
from calmech.stage_design import DirectMechanism, check_ic_ir, solve_at_belief

from support import permutation_oracle, random_problem

HIGH = np.array([0.0, 1.0])


def test_identity_deviation_has_zero_gain():
    rng = np.random.default_rng(0)
    for _ in range(20):
        G = rng.uniform(-1, 1, (3, 3))
        f = rng.dirichlet(np.ones(3))
        base = float(np.trace(G))
        assert float(np.sum(G * np.eye(3))) - base == pytest.approx(0.0, abs=1e-12)
        assert DeviationMatrix.identity(3).is_undetectable(f)
        _, gain = best_undetectable_deviation(G, f)
        assert gain >= -1e-12


def test_swap_instance():
    f = np.array([0.5, 0.5])
    U = np.array([[0.0, 1.0], [1.0, 0.0]])  # payoff of the true type (row) from each report
    sigma, gain = best_undetectable_deviation(f[:, None] * U, f)
    assert gain == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(sigma.sigma, [[0, 1], [1, 0]], atol=1e-9)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_uniform_weights_match_permutation_enumeration(n):
    rng = np.random.default_rng(n)
    f = np.full(n, 1 / n)
    for _ in range(25):
        G = rng.uniform(-1, 1, (n, n))
        sigma, gain = best_undetectable_deviation(G, f)
        assert gain == pytest.approx(max(permutation_oracle(G), 0.0), abs=1e-8)
        assert sigma.is_undetectable(f)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4), st.integers(2, 3))
def test_ic_mechanisms_admit_no_profitable_deviation(seed, n_types, n_alloc):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, 2, n_types, n_alloc, quasilinear=bool(seed % 2))
    mu = rng.dirichlet(np.ones(2))
    mech, _ = solve_at_belief(p, mu)
    assert not check_ic_ir(p, mech, mu)
    assert find_profitable_undetectable_deviation(p, mech, mu) is None


def test_cml_optimal_mechanism_has_no_deviation():
    p = cml_problem()
    mech, _ = solve_at_belief(p, HIGH)
    assert find_profitable_undetectable_deviation(p, mech, HIGH) is None


def test_weighted_payoffs_by_hand():
    p = cml_problem()
    mech = DirectMechanism([[0, 1], [0, 1]], [1.5, 1.5])
    G = weighted_payoffs(p, mech, HIGH)
    # f(.|H) = (1/3, 2/3), values 1/2 and 1, everyone buys at 3/2
    np.testing.assert_allclose(G, [[-1 / 3, -1 / 3], [-1 / 3, -1 / 3]], atol=1e-12)


def test_ex_ante_ir_examples():
    p = cml_problem()
    high_branch = DirectMechanism(surplus_extraction_mechanism().table[:, 1, 0], surplus_extraction_mechanism().transfers[:, 1, 0])
    ir = check_ex_ante_ir(p, high_branch, HIGH)
    assert not ir.holds and ir.slack == pytest.approx(-2 / 3, abs=1e-12)
    outside = DirectMechanism([[1, 0], [1, 0]], [0, 0])
    assert check_ex_ante_ir(p, outside, HIGH).slack == pytest.approx(0.0, abs=1e-12)
    price_one = DirectMechanism([[1, 0], [0, 1]], [0, 1])
    ir = check_ex_ante_ir(p, price_one, HIGH)
    assert ir.holds and ir.slack == pytest.approx(0.0, abs=1e-12)


def test_adjustment_plan_examples():
    f = np.array([0.5, 0.5])
    N, fa = adjustment_plan(f, np.array([1.0, 0.0]), 2)
    assert N == 2
    np.testing.assert_allclose(fa, [0, 1])
    N, fa = adjustment_plan(f, f.copy(), 1)
    assert N == 0
    with pytest.raises(ConfigError):
        adjustment_plan(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.integers(1, 60))
def test_block_expectation_identity(seed, n_types, L):
    rng = np.random.default_rng(seed)
    f = np.clip(rng.dirichlet(np.ones(n_types)), 0.01, None)
    f /= f.sum()
    freq1 = rng.multinomial(L, f) / L
    N, fa = adjustment_plan(f, freq1, L)
    assert np.all(fa >= 0) and fa.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(expected_block_frequency(freq1, fa, L, N), f, atol=1e-12)


def test_block_frequency_monte_carlo():
    rng = np.random.default_rng(5)
    f = np.array([0.2, 0.3, 0.5])
    L, reps = 7, 20000
    freq2 = np.empty((reps, 3))
    for r in range(reps):
        freq1 = rng.multinomial(L, f) / L
        N, fa = adjustment_plan(f, freq1, L)
        extra = rng.multinomial(N, fa) if N else np.zeros(3)
        freq2[r] = (L * freq1 + extra) / (L + N)
    se = freq2.std(axis=0) / np.sqrt(reps)
    assert np.all(np.abs(freq2.mean(axis=0) - f) <= 3 * se)


def test_build_block_mechanism_warns_on_bad_mechanism():
    p = cml_problem()
    bad = DirectMechanism([[0, 1], [0, 1]], [1.5, 1.5])
    with pytest.warns(UserWarning):
        build_block_mechanism(p, bad, HIGH)


def test_prefix_encoding():
    assert prefix_length(1, 2) == 0
    assert prefix_length(2, 2) == 1
    assert prefix_length(3, 2) == 2
    assert prefix_length(9, 3) == 2
    codes = {tuple(encode_atom(m, 3, 2)) for m in range(8)}
    assert len(codes) == 8


def test_truthful_run_tracks_type_distribution():
    p = cml_problem()
    ts = optimal_two_stage(p)
    res = simulate_dynamic(p, ts, SimConfig(20000, 3))
    w = res.trace.state
    assert np.max(np.abs(res.report_frequency() - p.type_pmf[w])) <= 0.03
    shares = res.adjustment_share()
    assert shares[:20].mean() > shares[-50:].mean()
    assert res.occupation.pmf.sum() == pytest.approx(1.0)


def test_deviator_keeps_report_frequency():
    p = cml_problem()
    ts = optimal_two_stage(p)
    sig = tuple(np.eye(2) for _ in ts.mechanisms)
    a = simulate_dynamic(p, ts, SimConfig(2000, 1), UndetectableDeviator(sig), hidden=(0, 0))
    b = simulate_dynamic(p, ts, SimConfig(2000, 1), hidden=(0, 0))
    np.testing.assert_array_equal(a.trace.types, b.trace.types)


def test_short_horizon_is_flagged():
    p = cml_problem()
    atoms = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    split = BeliefSplit(atoms, [0.25, 0.5, 0.25])
    mechs = tuple(solve_at_belief(p, a)[0] for a in atoms)
    ts = TwoStageMechanism(split, blackwell_from_split(p, split), mechs, 0.0)
    res = simulate_dynamic(p, ts, SimConfig(1, 0), hidden=(0, 2))
    assert res.prefix_length == 2 and res.flags
    assert res.trace.allocations.tolist() == [1]
    assert res.occupation.pmf.sum() == pytest.approx(1.0)
    assert not res.blocks

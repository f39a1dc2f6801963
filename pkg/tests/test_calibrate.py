import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calmech.calibrate import (
    StateMechanism,
    audit_ic_ir,
    calibrated_structure,
    load_mechanism,
    outcome_distribution,
    state_mechanism_from_structure,
    state_outcome_distribution,
    two_stage_to_calibrated,
)
from calmech.disclosure import optimal_two_stage
from calmech.errors import ValidationError
from calmech.instances import (
    cml_optimal_mechanism,
    cml_problem,
    horizontal_myerson_mechanism,
    horizontal_problem,
    surplus_extraction_mechanism,
)
from calmech.model import default_grid, simplex_grid

from support import random_problem


def test_surplus_extraction_structure_and_audit():
    p = cml_problem()
    mech = surplus_extraction_mechanism()
    s = calibrated_structure(p, mech)
    np.testing.assert_allclose([sig.posterior for sig in s.signals], [[1, 0], [0, 1]])
    rep = audit_ic_ir(p, mech, s)
    assert rep.count("IR", signal=1) == 2 and len(rep.violations) == 2
    assert sorted(v.gap for v in rep.violations) == pytest.approx([0.5, 1.0])


def test_optimal_mechanism_is_clean():
    p = cml_problem()
    s = calibrated_structure(p, cml_optimal_mechanism())
    assert len(s) == 2
    assert audit_ic_ir(p, cml_optimal_mechanism(), s).clean


def test_horizontal_myerson_violations():
    p = horizontal_problem()
    mech = horizontal_myerson_mechanism()
    s = calibrated_structure(p, mech)
    rep = audit_ic_ir(p, mech, s)
    left = [i for i, sig in enumerate(s.signals) if sig.posterior[0] == 1][0]
    right = 1 - left
    assert {(v.kind, p.types[v.type_index]) for v in rep.violations if v.signal == left} == {("IR", "theta1")}
    at_right = {(v.kind, p.types[v.type_index], v.target) for v in rep.violations if v.signal == right}
    assert at_right == {("IC", "theta2", 0), ("IC", "theta3", 0), ("IR", "theta3", None)}


def test_state_independent_mechanism_has_one_signal():
    p = cml_problem()
    table = np.zeros((2, 2, 1, 2))
    table[..., 0] = 1.0
    s = calibrated_structure(p, StateMechanism(["e"], [1.0], table, np.zeros((2, 2, 1))))
    assert len(s) == 1
    np.testing.assert_allclose(s.signals[0].posterior, p.prior)


def test_cml_conversion_matches_table():
    p = cml_problem()
    sm = two_stage_to_calibrated(p, optimal_two_stage(p))
    ref = cml_optimal_mechanism()
    assert sm.n_device == 1
    np.testing.assert_allclose(sm.table, ref.table, atol=1e-12)
    np.testing.assert_allclose(sm.transfers, ref.transfers, atol=1e-9)


def test_horizontal_conversion_device():
    p = horizontal_problem()
    sm = two_stage_to_calibrated(p, optimal_two_stage(p))
    assert sm.n_device == 2
    np.testing.assert_allclose(sm.weights, [0.5, 0.5])
    assert audit_ic_ir(p, sm).clean


def test_no_disclosure_conversion_has_one_label():
    p = random_problem(np.random.default_rng(0), 2, 2, 2, private_values=False)
    ts = optimal_two_stage(p, p.prior[None, :])
    assert two_stage_to_calibrated(p, ts).n_device == 1


def test_outcome_distribution_cml():
    p = cml_problem()
    ts = optimal_two_stage(p)
    occ = outcome_distribution(p, ts)
    np.testing.assert_allclose(occ.pmf[1, :, 0], 0.5 * p.type_pmf[0])
    assert occ.pmf[1, 1, 1] == pytest.approx(0.5 * 2 / 3)
    assert occ.designer_payoff(p) == pytest.approx(7 / 12)
    assert occ.pmf.sum() == pytest.approx(1.0, abs=1e-12)


def test_mechanism_json_round_trip(tmp_path):
    m = horizontal_myerson_mechanism()
    m2 = load_mechanism(m.to_dict())
    np.testing.assert_array_equal(m.table, m2.table)


def test_bad_device_weights():
    with pytest.raises(ValidationError):
        StateMechanism(["a"], [0.5], np.ones((1, 1, 1, 1)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), ns=st.sampled_from([2, 3]), ql=st.booleans())
def test_round_trip_random(seed, ns, ql):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, ns, int(rng.integers(2, 4)), int(rng.integers(2, 4)), quasilinear=ql)
    grid = default_grid(p, 21) if ns == 2 else simplex_grid(3, 5)
    ts = optimal_two_stage(p, np.vstack([grid, p.prior]))
    sm = two_stage_to_calibrated(p, ts)
    assert audit_ic_ir(p, sm).clean
    a, b = state_outcome_distribution(p, sm), outcome_distribution(p, ts)
    assert np.max(np.abs(a.pmf - b.pmf)) <= 1e-10
    np.testing.assert_allclose(b.marginal_type_state(), (p.prior[:, None] * p.type_pmf).T, atol=1e-12)
    # regrouping a mechanism rebuilt from its own structure changes nothing
    s1 = calibrated_structure(p, sm)
    s2 = calibrated_structure(p, state_mechanism_from_structure(p, s1))
    assert len(s1) == len(s2)
    for x, y in zip(s1.signals, s2.signals):
        np.testing.assert_allclose(x.posterior, y.posterior, atol=1e-9)

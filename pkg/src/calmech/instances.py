"""Ready-made problems and mechanisms used by the tests, the CLI and the docs.

Two-state problems order their states so that the second coordinate of a
belief is the probability of the "high" or "right" state.
"""

from __future__ import annotations

import numpy as np

from .calibrate import StateMechanism
from .model import ProblemSpec, QuasilinearBlock
from .stage_design import ScreeningSpec, discretize_screening


def _selling(states, prior, types, type_pmf, values, name="") -> ProblemSpec:
    """One good, trade or not, seller keeps the transfer.

    ``values[type][state]`` is the buyer's value for the good.
    """
    values = np.asarray(values, dtype=float)
    nt, nw = values.shape
    v = np.zeros((2, nt, nw))
    v[1] = values
    return ProblemSpec(
        states=states,
        prior=np.asarray(prior, dtype=float),
        types=types,
        type_pmf=np.asarray(type_pmf, dtype=float),
        allocations=("0", "1"),
        outside_option=0,
        agent_utility=v,
        designer_utility=np.zeros_like(v),
        quasilinear=QuasilinearBlock(np.array([0.0, 1.0]), 10.0 * float(np.max(np.abs(values)))),
        name=name,
    )


def cml_problem() -> ProblemSpec:
    """Demand uncertainty with buyer values correlated with the state."""
    return _selling(
        ("L", "H"),
        [0.5, 0.5],
        ("1/2", "1"),
        [[2 / 3, 1 / 3], [1 / 3, 2 / 3]],
        [[0.5, 0.5], [1.0, 1.0]],
        name="cml",
    )


def horizontal_problem() -> ProblemSpec:
    """Good of unknown kind; three independent, equally likely buyer types."""
    return _selling(
        ("L", "R"),
        [0.5, 0.5],
        ("theta1", "theta2", "theta3"),
        [[1 / 3] * 3, [1 / 3] * 3],
        [[1, 2], [2, 2], [3, 1]],
        name="horizontal",
    )


def _deterministic(problem: ProblemSpec, q, t) -> StateMechanism:
    """Single-cell device; ``q[type][state]`` trade flags and ``t[type][state]`` transfers."""
    q = np.asarray(q, dtype=float)
    nt, nw = q.shape
    table = np.zeros((nt, nw, 1, 2))
    table[:, :, 0, 1] = q
    table[:, :, 0, 0] = 1 - q
    return StateMechanism(("e0",), np.array([1.0]), table, np.asarray(t, dtype=float)[:, :, None])


def surplus_extraction_mechanism() -> StateMechanism:
    """Always trade; price 0 when demand is low and 3/2 when it is high."""
    return _deterministic(cml_problem(), [[1, 1], [1, 1]], [[0, 1.5], [0, 1.5]])


def cml_optimal_mechanism() -> StateMechanism:
    """Price 1/2 in the low state; menu {no trade, trade at 1} in the high state."""
    return _deterministic(cml_problem(), [[1, 0], [1, 1]], [[0.5, 0], [0.5, 1]])


def horizontal_myerson_mechanism() -> StateMechanism:
    """Types 2 and 3 always pay 2 and trade; type 1 pays 1 and trades only at R."""
    return _deterministic(horizontal_problem(), [[0, 1], [1, 1], [1, 1]], [[1, 1], [2, 2], [2, 2]])


def uniform_density(_: float) -> float:
    return 1.0


def leakage_gap_spec() -> ScreeningSpec:
    """States 1 and 3, ``u = q theta w`` and designer payoff ``2 (1 - 2 theta) q``."""
    return ScreeningSpec(
        type_interval=(0.0, 1.0),
        density=uniform_density,
        physical_grid=[0.0, 1.0],
        agent_value=lambda q, th, w: q * th * float(w),
        designer_value=lambda q, th, w: 2.0 * (1.0 - 2.0 * th) * q,
        states=[1, 3],
        prior=[0.5, 0.5],
        name="leakage-gap",
    )


def supermodular_spec() -> ScreeningSpec:
    """Revenue maximization with ``u = q theta w``; no conflict between states."""
    return ScreeningSpec(
        type_interval=(0.0, 1.0),
        density=uniform_density,
        physical_grid=[0.0, 1.0],
        agent_value=lambda q, th, w: q * th * float(w),
        designer_value=lambda q, th, w: 0.0,
        states=[1, 3],
        prior=[0.5, 0.5],
        name="supermodular",
    )


def ranking_reversal_spec(b: float = 1.0, c: float = 1.0, prior_high: float = 0.5) -> ScreeningSpec:
    """Revenue maximization where ``u = q theta`` in state w2 and ``q (c - b theta)`` in w1.

    The state order is (w1, w2), so beliefs are indexed by the probability of w2.
    """
    return ScreeningSpec(
        type_interval=(0.0, 1.0),
        density=uniform_density,
        physical_grid=[0.0, 1.0],
        agent_value=lambda q, th, w: q * th if w == "w2" else q * (c - b * th),
        designer_value=lambda q, th, w: 0.0,
        states=["w1", "w2"],
        prior=[1.0 - prior_high, prior_high],
        name="ranking-reversal",
    )


def leakage_gap_problem(n: int = 200) -> ProblemSpec:
    return discretize_screening(leakage_gap_spec(), n)


__all__ = [
    "cml_problem",
    "horizontal_problem",
    "surplus_extraction_mechanism",
    "cml_optimal_mechanism",
    "horizontal_myerson_mechanism",
    "leakage_gap_spec",
    "supermodular_spec",
    "ranking_reversal_spec",
    "leakage_gap_problem",
]

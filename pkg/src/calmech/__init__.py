"""Mechanism design under information leakage: disclosure, calibration, benchmarks and simulation."""

from .benchmark import AuctionSpec, GapReport, MyersonSolution, gap_report, myerson_auction, solve_myerson, virtual_surplus
from .calibrate import (
    AuditReport,
    CalibratedStructure,
    OccupationMeasure,
    StateMechanism,
    audit_ic_ir,
    calibrated_structure,
    outcome_distribution,
    two_stage_to_calibrated,
)
from .disclosure import TwoStageMechanism, concavify_at_prior, optimal_two_stage, upper_envelope_1d
from .dynamic_sim import (
    DeviationMatrix,
    build_block_mechanism,
    check_ex_ante_ir,
    find_profitable_undetectable_deviation,
    simulate_dynamic,
)
from .lp import LinearProgram, LpSolution, LpStatus, solve_lp
from .model import BeliefSplit, BlackwellExperiment, ProblemSpec, load_problem
from .repeated_sim import SimConfig, SimTrace, martingale_diagnostic, occupation, simulate
from .stage_design import DirectMechanism, check_ic_ir, solve_at_belief, value_curve

__all__ = [
    "AuctionSpec",
    "AuditReport",
    "BeliefSplit",
    "BlackwellExperiment",
    "CalibratedStructure",
    "DeviationMatrix",
    "DirectMechanism",
    "GapReport",
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "MyersonSolution",
    "OccupationMeasure",
    "ProblemSpec",
    "SimConfig",
    "SimTrace",
    "StateMechanism",
    "TwoStageMechanism",
    "audit_ic_ir",
    "build_block_mechanism",
    "calibrated_structure",
    "check_ex_ante_ir",
    "check_ic_ir",
    "concavify_at_prior",
    "find_profitable_undetectable_deviation",
    "gap_report",
    "load_problem",
    "martingale_diagnostic",
    "myerson_auction",
    "occupation",
    "optimal_two_stage",
    "outcome_distribution",
    "simulate",
    "simulate_dynamic",
    "solve_at_belief",
    "solve_lp",
    "solve_myerson",
    "two_stage_to_calibrated",
    "upper_envelope_1d",
    "value_curve",
    "virtual_surplus",
]

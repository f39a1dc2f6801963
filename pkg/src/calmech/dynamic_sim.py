"""Frequency-monitored dynamic implementation of a two-stage mechanism.

Checks for profitable undetectable deviations and ex ante participation, the
communication/adjustment block mechanism that pins report frequencies to the
type distribution, and a simulator that first encodes the disclosed atom in
the allocation sequence and then runs the block mechanism for that atom.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .calibrate import OccupationMeasure
from .disclosure import TwoStageMechanism
from .errors import ConfigError, ValidationError
from .lp import LinearProgram, LpStatus, solve_lp
from .model import ProblemSpec, as_belief
from .repeated_sim import SimConfig, SimTrace, Truthful
from .stage_design import DirectMechanism

GAIN_TOL = 1e-8
STOCH_TOL = 1e-10
CEIL_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class DeviationMatrix:
    """Row-stochastic ``sigma[true type, report]``."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.array(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValidationError("deviation must be a square matrix", "sigma")
        if np.any(s < -STOCH_TOL) or np.any(np.abs(s.sum(axis=1) - 1) > STOCH_TOL):
            raise ValidationError("rows must be probability vectors", "sigma")
        object.__setattr__(self, "sigma", np.clip(s, 0.0, None))

    def report_distribution(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f) @ self.sigma

    def is_undetectable(self, f: np.ndarray, tol: float = STOCH_TOL) -> bool:
        return bool(np.max(np.abs(self.report_distribution(f) - f)) <= tol)

    @classmethod
    def identity(cls, n: int) -> "DeviationMatrix":
        return cls(np.eye(n))


def weighted_payoffs(problem: ProblemSpec, mech: DirectMechanism, belief: np.ndarray) -> np.ndarray:
    """``G[k, j] = sum_w mu(w) f(k|w) * (payoff of type k reporting j in state w)``."""
    J = problem.joint_weights(belief)  # [w, k]
    U = np.einsum("wk,akw->ka", J, problem.agent_utility)
    return U @ mech.alloc.T - J.sum(axis=0)[:, None] * mech.transfer_vector()[None, :]


def best_undetectable_deviation(G: np.ndarray, f: np.ndarray) -> tuple[DeviationMatrix, float]:
    """Maximize ``sum_k sum_j sigma[k, j] G[k, j]`` over frequency-preserving ``sigma``.

    ``G`` must already carry the type weights. Returns the maximizer and its
    gain over truth-telling.
    """
    n = f.size
    c = G.ravel()
    rows = np.zeros((2 * n, n * n))
    for k in range(n):
        rows[k, k * n : (k + 1) * n] = 1.0
    for j in range(n):
        rows[n + j, j::n] = f
    rhs = np.concatenate([np.ones(n), f])
    sol = solve_lp(LinearProgram(c, A_eq=rows, b_eq=rhs))
    if sol.status is not LpStatus.OPTIMAL:
        raise ValidationError(f"deviation LP is {sol.status.value}", "mechanism")
    sigma = sol.values.reshape(n, n)
    sigma = np.clip(sigma, 0.0, None)
    sigma /= sigma.sum(axis=1, keepdims=True)
    gain = float(sol.objective_value - np.trace(G))
    return DeviationMatrix(sigma), gain


def find_profitable_undetectable_deviation(
    problem: ProblemSpec, mech: DirectMechanism, belief
) -> tuple[DeviationMatrix, float] | None:
    mu = as_belief(belief, problem.n_states)
    G = weighted_payoffs(problem, mech, mu)
    sigma, gain = best_undetectable_deviation(G, problem.type_weights(mu))
    return (sigma, gain) if gain > GAIN_TOL else None


@dataclass(frozen=True)
class ExAnteIR:
    holds: bool
    slack: float


def check_ex_ante_ir(problem: ProblemSpec, mech: DirectMechanism, belief) -> ExAnteIR:
    mu = as_belief(belief, problem.n_states)
    J = problem.joint_weights(mu)
    out = float(np.einsum("wk,kw->", J, problem.agent_utility[problem.outside_option]))
    slack = float(np.trace(weighted_payoffs(problem, mech, mu))) - out
    return ExAnteIR(slack >= -GAIN_TOL, slack)


# ------------------------------------------------------------ block mechanism


@dataclass(frozen=True, eq=False)
class BlockMechanismState:
    n: int
    phase: str  # "communication" or "adjustment"
    L: int
    N: int
    freq1: np.ndarray
    f_adjust: np.ndarray
    eta: float


def adjustment_plan(f: np.ndarray, freq1: np.ndarray, L: int) -> tuple[int, np.ndarray]:
    """Adjustment length and synthetic-report pmf after a communication phase of length ``L``."""
    eta = float(f.min())
    if eta <= 0:
        raise ConfigError("the type distribution has a zero atom", "type_pmf")
    dev = float(np.max(np.abs(freq1 - f)))
    N = math.ceil(L * dev / eta - CEIL_SLACK) if dev > 0 else 0
    if N == 0:
        return 0, f.copy()
    fa = f - (freq1 - f) * L / N
    fa = np.clip(fa, 0.0, None)
    return N, fa / fa.sum()


def expected_block_frequency(freq1: np.ndarray, f_adjust: np.ndarray, L: int, N: int) -> np.ndarray:
    return (L * np.asarray(freq1) + N * np.asarray(f_adjust)) / (L + N)


class BlockMechanism:
    """Communication phases of length ``n`` in block ``n``, each followed by an adjustment phase."""

    def __init__(self, problem: ProblemSpec, mech: DirectMechanism, belief):
        self.problem = problem
        self.mech = mech
        self.belief = as_belief(belief, problem.n_states)
        self.f = problem.type_weights(self.belief)
        self.eta = float(self.f.min())
        if self.eta <= 0:
            raise ConfigError("the type distribution has a zero atom", "type_pmf")
        self.cum = np.cumsum(mech.alloc, axis=1)
        self.cum[:, -1] = 1.0
        self.transfers = mech.transfer_vector()

    def state(self, n: int, freq1: np.ndarray) -> BlockMechanismState:
        N, fa = adjustment_plan(self.f, freq1, n)
        return BlockMechanismState(n, "adjustment" if N else "communication", n, N, np.asarray(freq1), fa, self.eta)

    def allocate(self, reports: np.ndarray, u: np.ndarray) -> np.ndarray:
        c = self.cum[reports]
        return (u[:, None] >= c).sum(axis=1).clip(max=self.mech.alloc.shape[1] - 1)


def build_block_mechanism(problem: ProblemSpec, mech: DirectMechanism, belief) -> BlockMechanism:
    found = find_profitable_undetectable_deviation(problem, mech, belief)
    if found is not None:
        warnings.warn(f"mechanism admits an undetectable deviation with gain {found[1]:.3g}")
    ir = check_ex_ante_ir(problem, mech, belief)
    if not ir.holds:
        warnings.warn(f"mechanism is not ex ante individually rational (slack {ir.slack:.3g})")
    return BlockMechanism(problem, mech, belief)


# ------------------------------------------------------------ simulation


@dataclass(frozen=True)
class UndetectableDeviator:
    """Report ``j`` with probability ``sigmas[atom][k, j]`` when the type is ``k``."""

    sigmas: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class BlockSummary:
    n: int
    L: int
    N: int
    freq1: np.ndarray
    freq2: np.ndarray


@dataclass(eq=False)
class DynamicResult:
    trace: SimTrace
    occupation: OccupationMeasure
    report_occupation: np.ndarray  # [a, report, state]
    blocks: list[BlockSummary]
    prefix_length: int
    phases: np.ndarray  # 0 prefix, 1 communication, 2 adjustment
    flags: list[str] = field(default_factory=list)

    def report_frequency(self) -> np.ndarray:
        keep = self.phases > 0
        msgs = self.trace.messages[keep]
        return np.bincount(msgs, minlength=self.trace.n_types) / max(msgs.size, 1)

    def adjustment_share(self) -> np.ndarray:
        return np.array([b.N / (b.L + b.N) for b in self.blocks])


def prefix_length(n_atoms: int, n_alloc: int) -> int:
    if n_atoms <= 1:
        return 0
    if n_alloc < 2:
        raise ConfigError("cannot encode the disclosed atom with a single allocation", "allocations")
    P, cap = 0, 1
    while cap < n_atoms:
        cap *= n_alloc
        P += 1
    return P


def encode_atom(m: int, P: int, base: int) -> list[int]:
    digits = []
    for _ in range(P):
        digits.append(m % base)
        m //= base
    return digits[::-1]


def _reports(rng: np.random.Generator, types: np.ndarray, sigma: np.ndarray | None) -> np.ndarray:
    if sigma is None:
        return types
    cum = np.cumsum(sigma, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(types.size)
    return (u[:, None] >= cum[types]).sum(axis=1)


def simulate_dynamic(
    problem: ProblemSpec,
    ts: TwoStageMechanism,
    cfg: SimConfig,
    policy: Truthful | UndetectableDeviator | None = None,
    hidden: tuple[int, int] | None = None,
) -> DynamicResult:
    """Run the disclosure prefix and then the block mechanism of the drawn atom.

    ``hidden`` fixes ``(state, atom)``; otherwise both are drawn from the
    prior and the experiment.
    """
    policy = policy if policy is not None else (cfg.policy if isinstance(cfg.policy, UndetectableDeviator) else Truthful())
    if not isinstance(cfg.horizon, (int, np.integer)) or cfg.horizon < 1:
        raise ConfigError("horizon must be a positive integer", "horizon")
    rng = np.random.default_rng(int(cfg.seed))
    M = len(ts.mechanisms)
    u0 = rng.random(2)
    if hidden is None:
        w = int(min(np.searchsorted(np.cumsum(problem.prior), u0[0], side="right"), problem.n_states - 1))
        m = int(min(np.searchsorted(np.cumsum(ts.experiment.rows[w]), u0[1], side="right"), M - 1))
    else:
        w, m = hidden
    sigma = None
    if isinstance(policy, UndetectableDeviator):
        sigma = np.asarray(policy.sigmas[m], dtype=float)

    T = int(cfg.horizon)
    P = prefix_length(M, problem.n_alloc)
    type_cdf = np.cumsum(problem.type_pmf[w])
    types = np.minimum(np.searchsorted(type_cdf, rng.random(T), side="right"), problem.n_types - 1)
    messages = np.empty(T, dtype=int)
    allocs = np.empty(T, dtype=int)
    transfers = np.zeros(T)
    phases = np.zeros(T, dtype=int)
    flags = []

    head = min(P, T)
    messages[:head] = _reports(rng, types[:head], sigma)
    allocs[:head] = encode_atom(m, P, problem.n_alloc)[:head]
    if T < P:
        flags.append("horizon shorter than the disclosure prefix")

    block = BlockMechanism(problem, ts.mechanisms[m], ts.split.atoms[m])
    blocks: list[BlockSummary] = []
    t, n = head, 1
    while t < T:
        L = min(n, T - t)
        sl = slice(t, t + L)
        rep = _reports(rng, types[sl], sigma)
        messages[sl] = rep
        allocs[sl] = block.allocate(rep, rng.random(L))
        transfers[sl] = block.transfers[rep]
        phases[sl] = 1
        t += L
        freq1 = np.bincount(rep, minlength=problem.n_types) / L
        N, fa = adjustment_plan(block.f, freq1, L)
        N_run = min(N, T - t)
        if N_run:
            sl = slice(t, t + N_run)
            cum = np.cumsum(fa)
            cum[-1] = 1.0
            syn = np.searchsorted(cum, rng.random(N_run), side="right").clip(max=problem.n_types - 1)
            messages[sl] = syn
            allocs[sl] = block.allocate(syn, rng.random(N_run))
            transfers[sl] = block.transfers[syn]
            phases[sl] = 2
            t += N_run
        all_rep = messages[t - L - N_run : t]
        freq2 = np.bincount(all_rep, minlength=problem.n_types) / (L + N_run)
        blocks.append(BlockSummary(n, L, N_run, freq1, freq2))
        n += 1

    trace = SimTrace(w, m, types, messages, allocs, transfers, None, problem.n_alloc, problem.n_types, problem.n_states)
    pmf = np.zeros((problem.n_alloc, problem.n_types, problem.n_states))
    np.add.at(pmf, (allocs, types, w), 1.0 / T)
    tr = np.zeros((problem.n_types, problem.n_states))
    np.add.at(tr, (types, w), transfers / T)
    rocc = np.zeros((problem.n_alloc, problem.n_types, problem.n_states))
    np.add.at(rocc, (allocs, messages, w), 1.0 / T)
    return DynamicResult(trace, OccupationMeasure(pmf, tr), rocc, blocks, P, phases, flags)


def expected_dynamic_occupation(
    problem: ProblemSpec,
    ts: TwoStageMechanism,
    cfg: SimConfig,
    policy: Truthful | UndetectableDeviator | None = None,
) -> tuple[OccupationMeasure, np.ndarray, list[DynamicResult]]:
    """Mix one run per (state, atom) cell, weighted by prior times disclosure probability."""
    M = len(ts.mechanisms)
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(problem.n_states * M)
    pmf = np.zeros((problem.n_alloc, problem.n_types, problem.n_states))
    tr = np.zeros((problem.n_types, problem.n_states))
    rocc = np.zeros_like(pmf)
    runs = []
    for w in range(problem.n_states):
        for m in range(M):
            wt = problem.prior[w] * ts.experiment.rows[w, m]
            if wt <= 0:
                continue
            seed = int(seeds[w * M + m].generate_state(1, dtype=np.uint64)[0])
            res = simulate_dynamic(problem, ts, SimConfig(cfg.horizon, seed), policy, hidden=(w, m))
            pmf += wt * res.occupation.pmf
            tr += wt * res.occupation.transfer
            rocc += wt * res.report_occupation
            runs.append(res)
    return OccupationMeasure(pmf, tr), rocc, runs


def analytic_report_occupation(problem: ProblemSpec, ts: TwoStageMechanism) -> np.ndarray:
    """Limit of the ``[a, report, state]`` occupation: reports follow each atom's type distribution."""
    out = np.zeros((problem.n_alloc, problem.n_types, problem.n_states))
    for m, mech in enumerate(ts.mechanisms):
        f = problem.type_weights(ts.split.atoms[m])
        for w in range(problem.n_states):
            out += problem.prior[w] * ts.experiment.rows[w, m] * (mech.alloc.T * f[None, :])[:, :, None] * np.eye(problem.n_states)[w][None, None, :]
    return out


__all__ = [
    "DeviationMatrix",
    "ExAnteIR",
    "BlockMechanismState",
    "BlockMechanism",
    "BlockSummary",
    "DynamicResult",
    "UndetectableDeviator",
    "weighted_payoffs",
    "best_undetectable_deviation",
    "find_profitable_undetectable_deviation",
    "check_ex_ante_ir",
    "adjustment_plan",
    "expected_block_frequency",
    "build_block_mechanism",
    "prefix_length",
    "encode_atom",
    "simulate_dynamic",
    "expected_dynamic_occupation",
    "analytic_report_occupation",
]

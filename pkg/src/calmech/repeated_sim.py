"""Repeated play of a fixed state mechanism by an infinitely patient Bayesian agent.

The hidden cell ``(state, device label)`` is drawn once. Each period the agent
sees a fresh type, sends a report or quits, and observes the allocation and
transfer. Beliefs are joint over cells; ``-1`` encodes the quit message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .calibrate import OccupationMeasure, StateMechanism
from .errors import ConfigError, InsufficientData, ZeroEvidence
from .model import ProblemSpec

QUIT = -1
TIE_TOL = 1e-9
TRANSFER_MATCH_TOL = 1e-9
BUCKET_RES = 1e-6
MIN_BUCKET = 30

Updater = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Learning:
    """Explore every message (quit first, then reports in order) for ``n`` rounds, then best-respond."""

    n: int


@dataclass(frozen=True)
class Myopic:
    pass


@dataclass(frozen=True)
class Truthful:
    pass


Policy = Learning | Myopic | Truthful


def parse_policy(text: str) -> Policy:
    """``"truthful"``, ``"myopic"`` or ``"learning:N"``."""
    name, _, arg = text.strip().lower().partition(":")
    if name == "truthful":
        return Truthful()
    if name == "myopic":
        return Myopic()
    if name == "learning":
        try:
            return Learning(int(arg or 100))
        except ValueError:
            raise ConfigError(f"bad exploration length {arg!r}", "policy") from None
    raise ConfigError(f"unknown policy {text!r}", "policy")


@dataclass(frozen=True)
class SimConfig:
    horizon: int
    seed: int = 0
    policy: Policy = Truthful()
    record_beliefs: bool = False
    # fix the hidden (state, device) draw instead of sampling it
    hidden: tuple[int, int] | None = None

    def validate(self, n_types: int) -> None:
        if not isinstance(self.horizon, (int, np.integer)) or self.horizon < 1:
            raise ConfigError("horizon must be a positive integer", "horizon")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits", "seed")
        if isinstance(self.policy, Learning):
            if self.policy.n < 1:
                raise ConfigError("exploration length must be at least 1", "policy")
            if self.policy.n * (n_types + 1) > self.horizon:
                raise ConfigError("exploration does not fit in the horizon", "policy")


@dataclass(frozen=True, eq=False)
class SimTrace:
    state: int
    device: int
    types: np.ndarray
    messages: np.ndarray
    allocations: np.ndarray
    transfers: np.ndarray
    beliefs: np.ndarray | None  # [T + 1, cells], belief before each period's type
    n_alloc: int
    n_types: int
    n_states: int

    def __len__(self) -> int:
        return self.types.size

    @property
    def participated(self) -> np.ndarray:
        return self.messages != QUIT

    def average_payoff(self, problem: ProblemSpec) -> float:
        u = problem.agent_utility[self.allocations, self.types, self.state]
        return float(np.mean(u - self.transfers))


class BeliefModel:
    """Precomputed payoffs and likelihoods of one state mechanism, as seen by the agent."""

    def __init__(self, problem: ProblemSpec, mech: StateMechanism):
        mech.check_against(problem)
        self.problem = problem
        self.mech = mech
        nk, nw, ne, na = mech.table.shape
        self.n_cells = nw * ne
        self.cell_state = np.repeat(np.arange(nw), ne)
        self.cell_device = np.tile(np.arange(ne), nw)
        self.prior = (problem.prior[:, None] * mech.weights[None, :]).ravel()
        trans = mech.transfers if mech.transfers is not None else np.zeros((nk, nw, ne))
        # tables by [cell, message]; message column 0 is quit
        lot = np.zeros((self.n_cells, nk + 1, na))
        lot[:, 0, problem.outside_option] = 1.0
        lot[:, 1:, :] = mech.table[:, self.cell_state, self.cell_device, :].transpose(1, 0, 2)
        tr = np.zeros((self.n_cells, nk + 1))
        tr[:, 1:] = trans[:, self.cell_state, self.cell_device].T
        self.lottery, self.transfer = lot, tr
        self.cum = np.cumsum(lot, axis=2)
        self.cum[..., -1] = 1.0
        # payoff[cell, message, type]
        u = problem.agent_utility[:, :, self.cell_state]  # [a, k, c]
        self.payoff = np.einsum("cma,akc->cmk", lot, u) - tr[:, :, None]
        self.type_lik = problem.type_pmf[self.cell_state].T  # [k, c]
        self._choice: dict[tuple[bytes, int], int] = {}

    def likelihood(self, message: int, allocation: int, transfer: float) -> np.ndarray:
        col = message + 1
        match = np.abs(self.transfer[:, col] - transfer) <= TRANSFER_MATCH_TOL
        return self.lottery[:, col, allocation] * match

    def best_message(self, belief: np.ndarray, theta: int) -> int:
        key = (belief.tobytes(), theta)
        hit = self._choice.get(key)
        if hit is not None:
            return hit
        b = belief * self.type_lik[theta]
        scores = b @ self.payoff[:, :, theta]
        top = scores.max()
        # ties: truth first, then message order (quit, then reports)
        if scores[theta + 1] >= top - TIE_TOL:
            msg = theta
        else:
            msg = int(np.flatnonzero(scores >= top - TIE_TOL)[0]) - 1
        self._choice[key] = msg
        return msg


def bayes_update(belief: np.ndarray, likelihood: np.ndarray) -> np.ndarray:
    post = belief * likelihood
    z = post.sum()
    if z <= 0:
        raise ZeroEvidence("observation has zero probability under the agent's belief")
    return post / z


def learning_policy_step(model: BeliefModel, belief: np.ndarray, period: int, theta: int, n: int) -> int:
    """Report for period ``period`` (0-based) under exploration length ``n``."""
    n_msg = model.problem.n_types + 1
    if period < n * n_msg:
        return period // n - 1
    return model.best_message(belief, theta)


def _draw_cell(rng: np.random.Generator, model: BeliefModel) -> int:
    cdf = np.cumsum(model.prior)
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), model.n_cells - 1))


def simulate(
    problem: ProblemSpec,
    mech: StateMechanism,
    cfg: SimConfig,
    updater: Updater = bayes_update,
    model: BeliefModel | None = None,
) -> SimTrace:
    cfg.validate(problem.n_types)
    model = model or BeliefModel(problem, mech)
    rng = np.random.default_rng(int(cfg.seed))
    ne = mech.n_device
    if cfg.hidden is None:
        cell = _draw_cell(rng, model)
    else:
        w, e = cfg.hidden
        if not (0 <= w < problem.n_states and 0 <= e < ne):
            raise ConfigError("hidden cell out of range", "hidden")
        cell = w * ne + e
        rng.random()  # keep the stream aligned with the sampled case
    state, device = int(model.cell_state[cell]), int(model.cell_device[cell])

    T = int(cfg.horizon)
    type_cdf = np.cumsum(problem.type_pmf[state])
    types = np.minimum(np.searchsorted(type_cdf, rng.random(T), side="right"), problem.n_types - 1)
    u_alloc = rng.random(T)

    messages = np.empty(T, dtype=int)
    allocs = np.empty(T, dtype=int)
    transfers = np.empty(T)
    beliefs = np.empty((T + 1, model.n_cells)) if cfg.record_beliefs else None
    belief = model.prior.copy()
    cache: dict[tuple, np.ndarray] = {}
    policy = cfg.policy
    cum_cell = model.cum[cell]

    for t in range(T):
        if beliefs is not None:
            beliefs[t] = belief
        k = int(types[t])
        if isinstance(policy, Truthful):
            m = k
        elif isinstance(policy, Learning):
            m = learning_policy_step(model, belief, t, k, policy.n)
        else:
            m = model.best_message(belief, k)
        a = int(np.searchsorted(cum_cell[m + 1], u_alloc[t], side="right"))
        tr = float(model.transfer[cell, m + 1])
        messages[t], allocs[t], transfers[t] = m, a, tr
        key = (belief.tobytes(), k, m, a, tr)
        nxt = cache.get(key)
        if nxt is None:
            lik = model.type_lik[k] * model.likelihood(m, a, tr)
            nxt = updater(belief, lik)
            cache[key] = nxt
        belief = nxt
    if beliefs is not None:
        beliefs[T] = belief
    return SimTrace(state, device, types, messages, allocs, transfers, beliefs, problem.n_alloc, problem.n_types, problem.n_states)


def occupation(trace: SimTrace, with_messages: bool = False) -> OccupationMeasure | np.ndarray:
    """Empirical frequency of ``(allocation, type, state)``.

    With ``with_messages`` returns a ``[message + 1, allocation, type, state]``
    array instead, where slot 0 is quit.
    """
    T = len(trace)
    if with_messages:
        out = np.zeros((trace.n_types + 1, trace.n_alloc, trace.n_types, trace.n_states))
        np.add.at(out, (trace.messages + 1, trace.allocations, trace.types, trace.state), 1.0 / T)
        return out
    pmf = np.zeros((trace.n_alloc, trace.n_types, trace.n_states))
    np.add.at(pmf, (trace.allocations, trace.types, trace.state), 1.0 / T)
    transfer = np.zeros((trace.n_types, trace.n_states))
    np.add.at(transfer, (trace.types, trace.state), trace.transfers / T)
    return OccupationMeasure(pmf, transfer)


def expected_occupation(
    problem: ProblemSpec, mech: StateMechanism, cfg: SimConfig
) -> tuple[OccupationMeasure, list[SimTrace]]:
    """Mix one trace per hidden cell with weights prior(state) * device weight.

    A single trace only ever sees one state, so comparing to an ex ante outcome
    distribution needs this mixture.
    """
    model = BeliefModel(problem, mech)
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(model.n_cells)
    pmf = np.zeros((problem.n_alloc, problem.n_types, problem.n_states))
    transfer = np.zeros((problem.n_types, problem.n_states))
    traces = []
    for c in range(model.n_cells):
        wt = model.prior[c]
        if wt <= 0:
            continue
        sub = SimConfig(
            cfg.horizon,
            int(seeds[c].generate_state(1, dtype=np.uint64)[0]),
            cfg.policy,
            cfg.record_beliefs,
            (int(model.cell_state[c]), int(model.cell_device[c])),
        )
        tr = simulate(problem, mech, sub, model=model)
        occ = occupation(tr)
        pmf += wt * occ.pmf
        transfer += wt * occ.transfer
        traces.append(tr)
    return OccupationMeasure(pmf, transfer), traces


@dataclass(frozen=True)
class MartingaleReport:
    max_deviation: float
    max_z: float
    buckets_used: int
    buckets_skipped: int
    deviations: dict[tuple, tuple[float, float, int]]  # bucket -> (|mean dev|, standard error, count)

    @property
    def within(self) -> float:
        return self.max_z


def martingale_diagnostic(traces: Sequence[SimTrace], min_count: int = MIN_BUCKET) -> MartingaleReport:
    """One-step conditional mean of the belief process, bucketed by current belief."""
    groups: dict[tuple, list[np.ndarray]] = {}
    for tr in traces:
        if tr.beliefs is None:
            raise InsufficientData("traces must be recorded with beliefs")
        b = tr.beliefs
        keys = np.round(b[:-1] / BUCKET_RES).astype(np.int64)
        delta = b[1:] - b[:-1]
        for key, d in zip(map(tuple, keys), delta):
            groups.setdefault(key, []).append(d)
    devs = {}
    skipped = 0
    max_dev = 0.0
    max_z = 0.0
    for key, rows in groups.items():
        if len(rows) < min_count:
            skipped += 1
            continue
        d = np.array(rows)
        mean = d.mean(axis=0)
        se = d.std(axis=0, ddof=1) / np.sqrt(len(rows))
        dev = np.abs(mean)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(dev > 0, dev / se, 0.0)
        i = int(np.argmax(z))
        devs[key] = (float(dev.max()), float(se[i]), len(rows))
        max_dev = max(max_dev, float(dev.max()))
        max_z = max(max_z, float(z[i]))
    return MartingaleReport(max_dev, max_z, len(devs), skipped, devs)


def write_trace(trace: SimTrace, path: str | Path, problem: ProblemSpec) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"state": problem.states[trace.state], "device": trace.device}) + "\n")
        for t in range(len(trace)):
            m = int(trace.messages[t])
            rec = {
                "period": t + 1,
                "type": problem.types[trace.types[t]],
                "message": "quit" if m == QUIT else problem.types[m],
                "allocation": problem.allocations[trace.allocations[t]],
                "transfer": float(trace.transfers[t]),
            }
            if trace.beliefs is not None:
                rec["belief"] = trace.beliefs[t].tolist()
            fh.write(json.dumps(rec) + "\n")
        if trace.beliefs is not None:
            fh.write(json.dumps({"final_belief": trace.beliefs[-1].tolist()}) + "\n")


def read_trace(path: str | Path, problem: ProblemSpec) -> SimTrace:
    with open(path) as fh:
        lines = [json.loads(x) for x in fh if x.strip()]
    head, rows = lines[0], lines[1:]
    final = None
    if rows and "final_belief" in rows[-1]:
        final = rows.pop()["final_belief"]
    tix = {t: i for i, t in enumerate(problem.types)}
    aix = {a: i for i, a in enumerate(problem.allocations)}
    msgs = np.array([QUIT if r["message"] == "quit" else tix[r["message"]] for r in rows], dtype=int)
    beliefs = None
    if final is not None:
        beliefs = np.array([r["belief"] for r in rows] + [final])
    return SimTrace(
        problem.states.index(head["state"]),
        int(head["device"]),
        np.array([tix[r["type"]] for r in rows], dtype=int),
        msgs,
        np.array([aix[r["allocation"]] for r in rows], dtype=int),
        np.array([r["transfer"] for r in rows], dtype=float),
        beliefs,
        problem.n_alloc,
        problem.n_types,
        problem.n_states,
    )


__all__ = [
    "QUIT",
    "Learning",
    "Myopic",
    "Truthful",
    "parse_policy",
    "SimConfig",
    "SimTrace",
    "BeliefModel",
    "OccupationMeasure",
    "MartingaleReport",
    "bayes_update",
    "learning_policy_step",
    "simulate",
    "occupation",
    "expected_occupation",
    "martingale_diagnostic",
    "write_trace",
    "read_trace",
]

"""Calibrated information structures, signal-by-signal audits, and the two-stage round trip."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .disclosure import TwoStageMechanism
from .errors import SchemaError, ValidationError
from .model import DERIVED_TOL, INPUT_TOL, ProblemSpec, posterior_from_likelihood
from .stage_design import DirectMechanism, Violation, check_ic_ir

GROUP_TOL = 1e-9
AUDIT_TOL = 1e-8

# The interim rule an agent learns is a direct mechanism over her own reports.
InterimRule = DirectMechanism


@dataclass(frozen=True, eq=False)
class StateMechanism:
    """``table[type, state, device, allocation]`` plus optional ``transfers[type, state, device]``."""

    device: tuple[str, ...]
    weights: np.ndarray
    table: np.ndarray
    transfers: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "device", tuple(str(d) for d in self.device))
        object.__setattr__(self, "weights", np.array(self.weights, dtype=float).ravel())
        object.__setattr__(self, "table", np.array(self.table, dtype=float))
        if self.transfers is not None:
            object.__setattr__(self, "transfers", np.array(self.transfers, dtype=float))
        w, t = self.weights, self.table
        if len(self.device) != w.size or len(set(self.device)) != w.size:
            raise ValidationError("device labels must be distinct and match the weights", "device")
        if np.any(w < -INPUT_TOL) or abs(float(w.sum()) - 1) > INPUT_TOL:
            raise ValidationError("device weights must be a probability vector", "device_weights")
        if t.ndim != 4 or t.shape[2] != w.size:
            raise ValidationError("table must be [type][state][device][allocation]", "table")
        if np.any(t < -DERIVED_TOL) or np.any(np.abs(t.sum(axis=3) - 1) > DERIVED_TOL):
            raise ValidationError("every table entry must be a lottery", "table")
        if self.transfers is not None and self.transfers.shape != t.shape[:3]:
            raise ValidationError("transfers must be [type][state][device]", "transfers")

    @property
    def n_device(self) -> int:
        return self.weights.size

    def rule(self, state: int, eps: int) -> DirectMechanism:
        tr = None if self.transfers is None else self.transfers[:, state, eps]
        return DirectMechanism(self.table[:, state, eps, :], tr)

    def check_against(self, problem: ProblemSpec) -> None:
        want = (problem.n_types, problem.n_states, self.n_device, problem.n_alloc)
        if self.table.shape != want:
            raise ValidationError(f"table shape {self.table.shape} does not match the problem {want}", "table")
        if problem.has_transfers and self.transfers is None:
            raise ValidationError("a quasilinear problem needs transfers", "transfers")
        if not problem.has_transfers and self.transfers is not None:
            raise ValidationError("transfers given for a problem without a quasilinear block", "transfers")

    def to_dict(self) -> dict:
        d = {"device": list(self.device), "device_weights": self.weights.tolist(), "table": self.table.tolist()}
        if self.transfers is not None:
            d["transfers"] = self.transfers.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StateMechanism":
        for key in ("table",):
            if key not in d:
                raise SchemaError("missing field", key)
        table = np.array(d["table"], dtype=float)
        if table.ndim != 4:
            raise SchemaError("must be a 4-D array [type][state][device][allocation]", "table")
        ne = table.shape[2]
        device = d.get("device", [str(i) for i in range(ne)])
        weights = d.get("device_weights", [1.0 / ne] * ne)
        return cls(tuple(device), np.array(weights, dtype=float), table, d.get("transfers"))


def load_mechanism(source: str | Path | dict) -> StateMechanism:
    if isinstance(source, dict):
        return StateMechanism.from_dict(source)
    try:
        doc = json.loads(Path(source).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read mechanism: {exc}", str(source)) from None
    return StateMechanism.from_dict(doc)


@dataclass(frozen=True, eq=False)
class Signal:
    rule: DirectMechanism
    emission: np.ndarray  # Pr(signal | state)
    posterior: np.ndarray
    cells: tuple[tuple[int, int], ...]  # (state, device) pairs that emit it


@dataclass(frozen=True, eq=False)
class CalibratedStructure:
    prior: np.ndarray
    signals: tuple[Signal, ...]

    def __len__(self) -> int:
        return len(self.signals)

    def to_dict(self, problem: ProblemSpec | None = None) -> dict:
        out = []
        for s in self.signals:
            out.append(
                {
                    "rule": s.rule.to_dict(),
                    "emission": s.emission.tolist(),
                    "posterior": s.posterior.tolist(),
                    "cells": [list(c) for c in s.cells],
                }
            )
        d = {"prior": self.prior.tolist(), "signals": out}
        if problem is not None:
            d["states"] = list(problem.states)
        return d


def calibrated_structure(problem: ProblemSpec, mech: StateMechanism) -> CalibratedStructure:
    """Group (state, device) cells by the interim rule they reveal."""
    mech.check_against(problem)
    keys: list[np.ndarray] = []
    cells: list[list[tuple[int, int]]] = []
    for w in range(problem.n_states):
        for e in range(mech.n_device):
            if mech.weights[e] <= 0:
                continue
            k = mech.rule(w, e).key()
            for g, rep in enumerate(keys):
                if float(np.max(np.abs(rep - k))) <= GROUP_TOL:
                    cells[g].append((w, e))
                    break
            else:
                keys.append(k)
                cells.append([(w, e)])
    signals = []
    for group in cells:
        emission = np.zeros(problem.n_states)
        for w, e in group:
            emission[w] += mech.weights[e]
        w0, e0 = group[0]
        signals.append(
            Signal(mech.rule(w0, e0), emission, posterior_from_likelihood(problem.prior, emission), tuple(group))
        )
    return CalibratedStructure(problem.prior.copy(), tuple(signals))


@dataclass(frozen=True)
class AuditReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def clean(self) -> bool:
        return not self.violations

    def count(self, kind: str | None = None, signal: int | None = None) -> int:
        return sum(1 for v in self.violations if (kind is None or v.kind == kind) and (signal is None or v.signal == signal))

    def render(self, problem: ProblemSpec, structure: CalibratedStructure) -> str:
        lines = []
        for i, s in enumerate(structure.signals):
            post = ", ".join(f"{st}={p:.6g}" for st, p in zip(problem.states, s.posterior))
            lines.append(f"signal {i}: posterior ({post})")
            rows = [v for v in self.violations if v.signal == i]
            if not rows:
                lines.append("  no violations")
            for v in rows:
                who = problem.types[v.type_index]
                if v.kind == "IC":
                    lines.append(f"  IC  type {who} prefers reporting {problem.types[v.target]}  gap {v.gap:.6g}")
                else:
                    lines.append(f"  IR  type {who} prefers the outside option  gap {v.gap:.6g}")
        lines.append(f"total violations: {len(self.violations)}")
        return "\n".join(lines) + "\n"


def audit_ic_ir(problem: ProblemSpec, mech: StateMechanism, structure: CalibratedStructure | None = None) -> AuditReport:
    if structure is None:
        structure = calibrated_structure(problem, mech)
    found: list[Violation] = []
    for i, s in enumerate(structure.signals):
        found.extend(check_ic_ir(problem, s.rule, s.posterior, tol=AUDIT_TOL, signal=i))
    return AuditReport(tuple(found))


def two_stage_to_calibrated(problem: ProblemSpec, ts: TwoStageMechanism) -> StateMechanism:
    """Realize the experiment with one uniform device shared by every state.

    For each state the unit interval is cut into consecutive pieces of length
    ``beta(m|w)``. The device cells are the pieces of the common refinement of
    those partitions. On each cell the state's own piece decides which atom's
    mechanism runs.
    """
    rows = ts.experiment.rows  # [state, atom]
    cuts = np.cumsum(rows, axis=1)
    cuts[:, -1] = 1.0
    points = np.unique(np.concatenate([[0.0], cuts.ravel()]))
    # merge breakpoints closer than the derived tolerance
    merged = [points[0]]
    for x in points[1:]:
        if x - merged[-1] > DERIVED_TOL:
            merged.append(x)
    merged[-1] = 1.0
    points = np.array(merged)
    lengths = np.diff(points)
    mids = 0.5 * (points[:-1] + points[1:])
    na = problem.n_alloc
    ne = lengths.size
    table = np.zeros((problem.n_types, problem.n_states, ne, na))
    transfers = np.zeros((problem.n_types, problem.n_states, ne)) if problem.has_transfers else None
    for w in range(problem.n_states):
        atom_of = np.searchsorted(cuts[w], mids, side="right")
        atom_of = np.minimum(atom_of, rows.shape[1] - 1)
        for e, m in enumerate(atom_of):
            table[:, w, e, :] = ts.mechanisms[m].alloc
            if transfers is not None:
                transfers[:, w, e] = ts.mechanisms[m].transfer_vector()
    device = tuple(f"e{i}" for i in range(ne))
    return StateMechanism(device, lengths / lengths.sum(), table, transfers)


def state_mechanism_from_structure(problem: ProblemSpec, structure: CalibratedStructure) -> StateMechanism:
    """Rebuild a state mechanism that emits each signal with its recorded probabilities."""
    from .model import BeliefSplit, BlackwellExperiment

    emissions = np.array([s.emission for s in structure.signals]).T  # [state, signal]
    weights = structure.prior @ emissions
    split = BeliefSplit(np.array([s.posterior for s in structure.signals]), weights / weights.sum())
    ts = TwoStageMechanism(split, BlackwellExperiment(emissions), tuple(s.rule for s in structure.signals), float("nan"))
    return two_stage_to_calibrated(problem, ts)


@dataclass(frozen=True, eq=False)
class OccupationMeasure:
    """``pmf[a, type, state]``, optionally with expected transfer mass ``transfer[type, state]``."""

    pmf: np.ndarray
    transfer: np.ndarray | None = None

    def tv(self, other: "OccupationMeasure") -> float:
        return 0.5 * float(np.abs(self.pmf - other.pmf).sum())

    def designer_payoff(self, problem: ProblemSpec) -> float:
        v = float(np.einsum("akw,akw->", self.pmf, problem.designer_utility))
        return v + (0.0 if self.transfer is None else float(self.transfer.sum()))

    def agent_payoff(self, problem: ProblemSpec) -> float:
        v = float(np.einsum("akw,akw->", self.pmf, problem.agent_utility))
        return v - (0.0 if self.transfer is None else float(self.transfer.sum()))

    def marginal_type_state(self) -> np.ndarray:
        return self.pmf.sum(axis=0)

    def to_csv(self, path: str | Path, problem: ProblemSpec) -> None:
        from .stage_design import fmt

        with open(path, "w") as fh:
            fh.write("allocation,type,state,probability\n")
            for a in range(self.pmf.shape[0]):
                for k in range(self.pmf.shape[1]):
                    for w in range(self.pmf.shape[2]):
                        fh.write(f"{problem.allocations[a]},{problem.types[k]},{problem.states[w]},{fmt(self.pmf[a, k, w])}\n")


def outcome_distribution(problem: ProblemSpec, ts: TwoStageMechanism) -> OccupationMeasure:
    joint = problem.joint_weights(problem.prior)  # [w, k]
    alloc = np.array([m.alloc for m in ts.mechanisms])  # [m, k, a]
    lottery = np.einsum("mka,wm->akw", alloc, ts.experiment.rows)
    pmf = lottery * joint.T[None, :, :]
    transfer = None
    if problem.has_transfers:
        t = np.array([m.transfer_vector() for m in ts.mechanisms])  # [m, k]
        transfer = np.einsum("mk,wm->kw", t, ts.experiment.rows) * joint.T
    return OccupationMeasure(pmf, transfer)


def state_outcome_distribution(problem: ProblemSpec, mech: StateMechanism) -> OccupationMeasure:
    """Outcome distribution of a state mechanism under truthful full participation."""
    joint = problem.joint_weights(problem.prior)
    lottery = np.einsum("kwea,e->akw", mech.table, mech.weights)
    pmf = lottery * joint.T[None, :, :]
    transfer = None
    if mech.transfers is not None:
        transfer = np.einsum("kwe,e->kw", mech.transfers, mech.weights) * joint.T
    return OccupationMeasure(pmf, transfer)


__all__ = [
    "StateMechanism",
    "InterimRule",
    "Signal",
    "CalibratedStructure",
    "AuditReport",
    "OccupationMeasure",
    "calibrated_structure",
    "audit_ic_ir",
    "two_stage_to_calibrated",
    "state_mechanism_from_structure",
    "outcome_distribution",
    "state_outcome_distribution",
    "load_mechanism",
]

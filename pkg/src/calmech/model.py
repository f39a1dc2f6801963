"""Problem primitives, validation and belief algebra.

Arrays follow one index convention throughout the package:

* utilities are indexed ``[allocation, type, state]``;
* ``type_pmf`` is indexed ``[state, type]`` (one row per state);
* beliefs are plain 1-D float arrays over states.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import NotBayesPlausible, SchemaError, ValidationError, ZeroEvidence

INPUT_TOL = 1e-12
DERIVED_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class QuasilinearBlock:
    """Physical allocation grid plus the bound on expected transfers.

    In quasilinear mode the allocation labels of the enclosing problem are the
    physical grid points and the utility tables hold ``v`` and ``w~``; payoffs
    are ``v - t`` for the agent and ``w~ + t`` for the designer.
    """

    physical_grid: np.ndarray
    transfer_bound: float


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    states: tuple[str, ...]
    prior: np.ndarray
    types: tuple[str, ...]
    type_pmf: np.ndarray
    allocations: tuple[str, ...]
    outside_option: int
    agent_utility: np.ndarray
    designer_utility: np.ndarray
    quasilinear: QuasilinearBlock | None = None
    type_values: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        for name in ("prior", "type_pmf", "agent_utility", "designer_utility"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        for name in ("states", "types", "allocations"):
            object.__setattr__(self, name, tuple(str(v) for v in getattr(self, name)))
        if self.type_values is not None:
            object.__setattr__(self, "type_values", np.array(self.type_values, dtype=float))
        _validate(self)
        for arr in (self.prior, self.type_pmf, self.agent_utility, self.designer_utility):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_alloc(self) -> int:
        return len(self.allocations)

    @property
    def has_transfers(self) -> bool:
        return self.quasilinear is not None

    @property
    def transfer_bound(self) -> float:
        return self.quasilinear.transfer_bound if self.quasilinear else 0.0

    @property
    def independent_types(self) -> bool:
        return bool(np.all(np.abs(self.type_pmf - self.type_pmf[0]) <= INPUT_TOL))

    @property
    def private_values(self) -> bool:
        u = self.agent_utility
        return bool(np.all(np.abs(u - u[:, :, :1]) <= INPUT_TOL))

    def joint_weights(self, belief: np.ndarray) -> np.ndarray:
        """Joint weight ``mu(w) f(theta|w)`` indexed [state, type]."""
        return np.asarray(belief, dtype=float)[:, None] * self.type_pmf

    def type_weights(self, belief: np.ndarray) -> np.ndarray:
        """Marginal type distribution when the state is distributed as ``belief``."""
        return self.joint_weights(belief).sum(axis=0)

    def type_index(self, t: int | str) -> int:
        if isinstance(t, (int, np.integer)):
            if not 0 <= t < self.n_types:
                raise IndexError(f"type index {t} out of range")
            return int(t)
        try:
            return self.types.index(str(t))
        except ValueError:
            raise KeyError(f"unknown type label {t!r}") from None

    def numeric_types(self) -> np.ndarray:
        """Numeric type values, falling back to parsing the labels."""
        if self.type_values is not None:
            return self.type_values
        try:
            return np.array([float(_num(lbl)) for lbl in self.types])
        except (TypeError, ValueError):
            raise ValidationError("type labels are not numeric and no type_values given", "types") from None


def _num(label: str) -> float:
    if "/" in label:
        a, b = label.split("/")
        return float(a) / float(b)
    return float(label)


def _check_labels(labels: Sequence[str], name: str) -> None:
    if len(labels) == 0:
        raise ValidationError("must be nonempty", name)
    if len(set(labels)) != len(labels):
        raise ValidationError("labels must be distinct", name)


def _check_simplex(v: np.ndarray, name: str, tol: float = INPUT_TOL) -> None:
    if not np.all(np.isfinite(v)):
        raise ValidationError("entries must be finite", name)
    if np.any(v < -tol):
        raise ValidationError("entries must be nonnegative", name)
    if abs(float(v.sum()) - 1.0) > tol:
        raise ValidationError(f"must sum to 1 (got {float(v.sum()):.15g})", name)


def _validate(p: ProblemSpec) -> None:
    _check_labels(p.states, "states")
    _check_labels(p.types, "types")
    _check_labels(p.allocations, "allocations")
    nw, nt, na = len(p.states), len(p.types), len(p.allocations)
    if p.prior.shape != (nw,):
        raise ValidationError(f"expected {nw} entries", "prior")
    _check_simplex(p.prior, "prior")
    if np.any(p.prior <= 0):
        raise ValidationError("every state needs positive prior probability", "prior")
    if p.type_pmf.shape != (nw, nt):
        raise ValidationError(f"expected shape ({nw}, {nt})", "type_pmf")
    for k in range(nw):
        _check_simplex(p.type_pmf[k], f"type_pmf[{k}]")
    if not 0 <= p.outside_option < na:
        raise ValidationError("not a valid allocation index", "outside_option")
    for name in ("agent_utility", "designer_utility"):
        arr = getattr(p, name)
        if arr.shape != (na, nt, nw):
            raise ValidationError(f"expected shape ({na}, {nt}, {nw}) [allocation][type][state]", name)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("entries must be finite", name)
    if p.quasilinear is not None:
        q = p.quasilinear
        if q.physical_grid.shape != (na,):
            raise ValidationError("physical grid must match the allocation list", "quasilinear.physical_grid")
        if not (math.isfinite(q.transfer_bound) and q.transfer_bound > 0):
            raise ValidationError("must be a positive finite number", "quasilinear.transfer_bound")
    if p.type_values is not None and p.type_values.shape != (nt,):
        raise ValidationError(f"expected {nt} entries", "type_values")


def _array(doc: Mapping[str, Any], key: str, prefix: str = "") -> np.ndarray:
    if key not in doc:
        raise SchemaError("missing field", prefix + key)
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError):
        raise SchemaError("must be a (nested) array of numbers", prefix + key) from None
    return arr


def _labels(doc: Mapping[str, Any], key: str) -> tuple[str, ...]:
    if key not in doc:
        raise SchemaError("missing field", key)
    val = doc[key]
    if not isinstance(val, list):
        raise SchemaError("must be a list of labels", key)
    return tuple(str(v) for v in val)


def problem_from_dict(doc: Mapping[str, Any]) -> ProblemSpec:
    if not isinstance(doc, Mapping):
        raise SchemaError("top level must be an object", "<root>")
    states = _labels(doc, "states")
    types = _labels(doc, "types")
    prior = _array(doc, "prior")
    type_pmf = _array(doc, "type_pmf")
    if "outside_option" not in doc:
        raise SchemaError("missing field", "outside_option")
    outside = doc["outside_option"]
    if not isinstance(outside, int) or isinstance(outside, bool):
        raise SchemaError("must be an integer index", "outside_option")

    ql = None
    if doc.get("quasilinear") is not None:
        block = doc["quasilinear"]
        if not isinstance(block, Mapping):
            raise SchemaError("must be an object", "quasilinear")
        grid = _array(block, "physical_grid", "quasilinear.")
        if grid.ndim != 1:
            raise SchemaError("must be a flat list", "quasilinear.physical_grid")
        agent = _array(block, "agent_value", "quasilinear.")
        designer = _array(block, "designer_value", "quasilinear.")
        if not np.all(np.isfinite(agent)):
            raise ValidationError("entries must be finite", "quasilinear.agent_value")
        bound = block.get("transfer_bound")
        if bound is None:
            bound = 10.0 * float(np.max(np.abs(agent))) if agent.size else 1.0
            bound = bound if bound > 0 else 1.0
        ql = QuasilinearBlock(physical_grid=grid, transfer_bound=float(bound))
        allocations = _labels(doc, "allocations") if "allocations" in doc else tuple(f"{g:g}" for g in grid)
    else:
        allocations = _labels(doc, "allocations")
        agent = _array(doc, "agent_utility")
        designer = _array(doc, "designer_utility")

    tv = doc.get("type_values")
    return ProblemSpec(
        states=states,
        prior=prior,
        types=types,
        type_pmf=type_pmf,
        allocations=allocations,
        outside_option=outside,
        agent_utility=agent,
        designer_utility=designer,
        quasilinear=ql,
        type_values=None if tv is None else np.array(tv, dtype=float),
        name=str(doc.get("name", "")),
    )


def load_problem(source: str | Path | Mapping[str, Any]) -> ProblemSpec:
    """Load a problem document from a path, a JSON string or a parsed mapping."""
    if isinstance(source, Mapping):
        return problem_from_dict(source)
    text = str(source)
    if isinstance(source, Path) or not text.lstrip().startswith("{"):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise SchemaError(f"cannot read file: {exc}", str(source)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", "<root>") from None
    return problem_from_dict(doc)


def problem_to_dict(p: ProblemSpec) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "states": list(p.states),
        "prior": p.prior.tolist(),
        "types": list(p.types),
        "type_pmf": p.type_pmf.tolist(),
        "allocations": list(p.allocations),
        "outside_option": p.outside_option,
    }
    if p.name:
        doc["name"] = p.name
    if p.type_values is not None:
        doc["type_values"] = p.type_values.tolist()
    if p.quasilinear is not None:
        doc["quasilinear"] = {
            "physical_grid": p.quasilinear.physical_grid.tolist(),
            "agent_value": p.agent_utility.tolist(),
            "designer_value": p.designer_utility.tolist(),
            "transfer_bound": p.quasilinear.transfer_bound,
        }
    else:
        doc["agent_utility"] = p.agent_utility.tolist()
        doc["designer_utility"] = p.designer_utility.tolist()
    return doc


# ---------------------------------------------------------------- beliefs


def as_belief(weights: Sequence[float] | np.ndarray, n: int | None = None, tol: float = INPUT_TOL) -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    mu = np.array(weights, dtype=float).ravel()
    if n is not None and mu.shape != (n,):
        raise ValidationError(f"expected {n} entries, got {mu.size}", "belief")
    _check_simplex(mu, "belief", tol)
    return mu


@dataclass(frozen=True, eq=False)
class BeliefSplit:
    """Distribution over posteriors: row ``m`` of ``atoms`` has weight ``weights[m]``."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atoms", np.atleast_2d(np.array(self.atoms, dtype=float)))
        object.__setattr__(self, "weights", np.array(self.weights, dtype=float).ravel())
        if self.atoms.ndim != 2 or self.atoms.shape[0] != self.weights.shape[0]:
            raise ValidationError("atoms and weights disagree in length", "split")
        if np.any(self.weights <= 0):
            raise ValidationError("weights must be positive", "split.weights")
        if abs(float(self.weights.sum()) - 1.0) > INPUT_TOL:
            raise ValidationError("weights must sum to 1", "split.weights")
        for m, atom in enumerate(self.atoms):
            _check_simplex(atom, f"split.atoms[{m}]", DERIVED_TOL)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def barycenter(self) -> np.ndarray:
        return self.weights @ self.atoms

    def plausibility_residual(self, prior: np.ndarray) -> float:
        return float(np.max(np.abs(self.barycenter() - prior)))


@dataclass(frozen=True, eq=False)
class BlackwellExperiment:
    """``rows[w, m]`` is the probability of disclosing atom ``m`` in state ``w``."""

    rows: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", np.array(self.rows, dtype=float))
        sums = self.rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > DERIVED_TOL) or np.any(self.rows < -DERIVED_TOL):
            raise ValidationError("each row must be a probability vector", "experiment")


def posterior_from_likelihood(prior: np.ndarray, likelihood: np.ndarray) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    lik = np.asarray(likelihood, dtype=float)
    if np.any(lik < 0):
        raise ValidationError("likelihood must be nonnegative", "likelihood")
    joint = prior * lik
    z = joint.sum()
    if not z > 0:
        raise ZeroEvidence("observation has zero probability under the prior")
    return joint / z


def type_conditioned_belief(problem: ProblemSpec, disclosed: np.ndarray, type_: int | str) -> np.ndarray:
    """Belief of an agent of the given type after the designer discloses ``disclosed``.

    The agent's prior conditioned on her type is ``mu0(w) f(theta|w)`` normalized;
    rescaling it by ``disclosed / mu0`` leaves ``disclosed(w) f(theta|w)`` up to a
    constant, which is what gets normalized here.
    """
    k = problem.type_index(type_)
    return posterior_from_likelihood(np.asarray(disclosed, dtype=float), problem.type_pmf[:, k])


def type_conditioned_beliefs(problem: ProblemSpec, disclosed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All type-conditioned beliefs at once.

    Returns ``(beliefs, ok)`` where ``beliefs[k]`` is the belief of type ``k``
    and ``ok[k]`` is False for types that have zero probability under
    ``disclosed`` (their row is left as ``disclosed``).
    """
    joint = problem.joint_weights(disclosed).T  # [type, state]
    z = joint.sum(axis=1)
    ok = z > 0
    out = np.tile(np.asarray(disclosed, dtype=float), (problem.n_types, 1))
    out[ok] = joint[ok] / z[ok, None]
    return out, ok


def blackwell_from_split(problem: ProblemSpec, split: BeliefSplit, tol: float = DERIVED_TOL) -> BlackwellExperiment:
    prior = problem.prior
    resid = split.plausibility_residual(prior)
    if resid > tol:
        raise NotBayesPlausible(f"barycenter differs from the prior by {resid:.3g}")
    nw = problem.n_states
    rows = np.empty((nw, len(split)))
    for w in range(nw):
        if prior[w] <= 0:
            warnings.warn(f"state {problem.states[w]!r} has zero prior; its row is set to the split weights")
            rows[w] = split.weights
            continue
        rows[w] = split.weights * split.atoms[:, w] / prior[w]
    rows = np.clip(rows, 0.0, None)
    sums = rows.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > tol):
        raise NotBayesPlausible("experiment rows do not sum to one")
    return BlackwellExperiment(rows / sums)


def split_from_experiment(prior: np.ndarray, experiment: BlackwellExperiment) -> BeliefSplit:
    """Inverse of :func:`blackwell_from_split`: recover weights and posteriors."""
    rows = experiment.rows
    weights = prior @ rows
    keep = weights > 0
    atoms = np.array([posterior_from_likelihood(prior, rows[:, m]) for m in np.flatnonzero(keep)])
    w = weights[keep]
    return BeliefSplit(atoms=atoms, weights=w / w.sum())


def default_grid(problem: ProblemSpec, n: int = 601) -> np.ndarray:
    """Equally spaced beliefs ``(1 - x, x)`` for two-state problems."""
    if problem.n_states != 2:
        raise ValidationError("a default grid exists only for two states; supply atoms", "grid")
    if n < 2:
        raise ValidationError("need at least 2 grid points", "grid")
    x = np.linspace(0.0, 1.0, n)
    return np.column_stack([1.0 - x, x])


def simplex_grid(n_states: int, steps: int) -> np.ndarray:
    """All beliefs whose coordinates are multiples of ``1 / steps``."""
    if steps < 1:
        raise ValidationError("need at least one step per axis", "grid")
    rows = [c for c in itertools.product(range(steps + 1), repeat=n_states - 1) if sum(c) <= steps]
    pts = np.array([[steps - sum(c), *c] for c in rows], dtype=float) / steps
    return pts


__all__ = [
    "ProblemSpec",
    "QuasilinearBlock",
    "BeliefSplit",
    "BlackwellExperiment",
    "load_problem",
    "problem_from_dict",
    "problem_to_dict",
    "as_belief",
    "posterior_from_likelihood",
    "type_conditioned_belief",
    "type_conditioned_beliefs",
    "blackwell_from_split",
    "split_from_experiment",
    "default_grid",
    "simplex_grid",
]

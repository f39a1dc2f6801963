"""Concavification at the prior and assembly of two-stage mechanisms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import PriorOutsideHull, WrongDimension
from .lp import LinearProgram, LpStatus, solve_lp_basic_support
from .model import BeliefSplit, BlackwellExperiment, ProblemSpec, blackwell_from_split, default_grid
from .stage_design import DirectMechanism, ValueCurve, fmt, value_curve

PRUNE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TwoStageMechanism:
    split: BeliefSplit
    experiment: BlackwellExperiment
    mechanisms: tuple[DirectMechanism, ...]
    value: float
    curve: ValueCurve | None = None
    grid_indices: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "atoms": self.split.atoms.tolist(),
            "weights": self.split.weights.tolist(),
            "experiment": self.experiment.rows.tolist(),
            "mechanisms": [m.to_dict() for m in self.mechanisms],
            "value": self.value,
        }

    @classmethod
    def from_dict(cls, d: dict, problem: ProblemSpec) -> "TwoStageMechanism":
        split = BeliefSplit(np.array(d["atoms"], dtype=float), np.array(d["weights"], dtype=float))
        mechs = tuple(DirectMechanism.from_dict(m) for m in d["mechanisms"])
        exp = blackwell_from_split(problem, split)
        value = d.get("value")
        if value is None:
            from .stage_design import designer_value

            value = float(sum(w * designer_value(problem, m, a) for w, m, a in zip(split.weights, mechs, split.atoms)))
        return cls(split, exp, mechs, float(value))


def concavify_at_prior(curve: ValueCurve, prior: Sequence[float] | np.ndarray) -> tuple[BeliefSplit, float]:
    split, value, _ = _concavify(curve, np.asarray(prior, dtype=float))
    return split, value


def _concavify(curve: ValueCurve, prior: np.ndarray) -> tuple[BeliefSplit, float, np.ndarray]:
    atoms = curve.grid
    nw = atoms.shape[1]
    # the last state's row is implied by sum(lambda) = 1
    A_eq = np.vstack([np.ones(len(curve)), atoms[:, : nw - 1].T])
    b_eq = np.concatenate([[1.0], prior[: nw - 1]])
    sol = solve_lp_basic_support(LinearProgram(curve.values, A_eq=A_eq, b_eq=b_eq))
    if sol.status is LpStatus.INFEASIBLE:
        raise PriorOutsideHull("the prior is not a convex combination of grid atoms")
    if sol.status is not LpStatus.OPTIMAL:
        raise PriorOutsideHull(f"concavification LP is {sol.status.value}")
    lam = sol.values
    idx = np.flatnonzero(lam > PRUNE_TOL)
    w = lam[idx] / lam[idx].sum()
    # re-solve the weights on the kept atoms so pruning cannot cost plausibility
    refit, *_ = np.linalg.lstsq(A_eq[:, idx], b_eq, rcond=None)
    if np.all(refit > 0) and np.max(np.abs(A_eq[:, idx] @ refit - b_eq)) < np.max(np.abs(A_eq[:, idx] @ w - b_eq)):
        w = refit / refit.sum()
    split = BeliefSplit(atoms[idx].copy(), w)
    value = float(w @ curve.values[idx])
    return split, value, idx


@dataclass(frozen=True)
class Envelope:
    """Upper concave envelope of a two-state value curve, by breakpoints in ``x = mu(second state)``."""

    x: np.ndarray
    y: np.ndarray

    def __call__(self, x: float | np.ndarray) -> float | np.ndarray:
        return np.interp(x, self.x, self.y)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "cav_W"])
            for a, b in zip(self.x, self.y):
                w.writerow([fmt(a), fmt(b)])


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def upper_envelope_1d(curve: ValueCurve) -> Envelope:
    """Monotone-chain upper hull of the points ``(mu(second state), W)``."""
    if curve.grid.shape[1] != 2:
        raise WrongDimension("the 1-D envelope needs exactly two states")
    pts: dict[float, float] = {}
    for x, y in zip(curve.grid[:, 1], curve.values):
        x = float(x)
        pts[x] = max(pts.get(x, -np.inf), float(y))
    hull: list[tuple[float, float]] = []
    for p in sorted(pts.items()):
        # pop while the last turn is not strictly clockwise (keeps the hull concave)
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) >= -1e-15:
            hull.pop()
        hull.append(p)
    xs, ys = zip(*hull)
    return Envelope(np.array(xs), np.array(ys))


def optimal_two_stage(problem: ProblemSpec, grid: Sequence[Sequence[float]] | np.ndarray | None = None) -> TwoStageMechanism:
    """Value curve, concavification and Blackwell experiment in one call."""
    if grid is None:
        grid = default_grid(problem)
    curve = value_curve(problem, grid)
    split, value, idx = _concavify(curve, problem.prior)
    experiment = blackwell_from_split(problem, split)
    mechs = tuple(curve.mechanisms[i] for i in idx)
    return TwoStageMechanism(split, experiment, mechs, value, curve, tuple(int(i) for i in idx))


def split_to_csv(ts: TwoStageMechanism, path: str | Path, states: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"mu_{s}" for s in states] + ["weight", "W"])
        vals = ts.curve.values[list(ts.grid_indices)] if ts.curve is not None else [np.nan] * len(ts.split)
        for atom, wt, v in zip(ts.split.atoms, ts.split.weights, vals):
            w.writerow([fmt(x) for x in atom] + [fmt(wt), fmt(v)])


__all__ = [
    "TwoStageMechanism",
    "Envelope",
    "concavify_at_prior",
    "upper_envelope_1d",
    "optimal_two_stage",
    "split_to_csv",
]

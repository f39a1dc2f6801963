"""Fixed-belief mechanism design and the designer's value curve."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDensity, InfeasibleProblem, ValidationError
from .lp import LinearProgram, LpStatus, solve_lp
from .model import DERIVED_TOL, ProblemSpec, QuasilinearBlock, as_belief, type_conditioned_beliefs

# Above this many types the IC constraints are generated lazily.
FULL_IC_MAX_TYPES = 12
VERIFY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class DirectMechanism:
    """Per-type lotteries ``alloc[type, allocation]`` and optional transfers ``transfers[type]``."""

    alloc: np.ndarray
    transfers: np.ndarray | None = None

    def __post_init__(self):
        a = np.array(self.alloc, dtype=float)
        object.__setattr__(self, "alloc", a)
        if self.transfers is not None:
            object.__setattr__(self, "transfers", np.array(self.transfers, dtype=float).ravel())
        if a.ndim != 2:
            raise ValidationError("allocation table must be [type][allocation]", "alloc")
        if np.any(a < -DERIVED_TOL) or np.any(np.abs(a.sum(axis=1) - 1) > DERIVED_TOL):
            raise ValidationError("each row must be a lottery", "alloc")
        if self.transfers is not None and self.transfers.shape != (a.shape[0],):
            raise ValidationError("one transfer per type", "transfers")

    @property
    def n_types(self) -> int:
        return self.alloc.shape[0]

    def transfer_vector(self) -> np.ndarray:
        return np.zeros(self.n_types) if self.transfers is None else self.transfers

    def key(self) -> np.ndarray:
        return np.concatenate([self.alloc.ravel(), self.transfer_vector()])

    def close_to(self, other: "DirectMechanism", tol: float = 1e-9) -> bool:
        return self.alloc.shape == other.alloc.shape and float(np.max(np.abs(self.key() - other.key()))) <= tol

    def posted_price(self, problem: ProblemSpec, tol: float = 1e-7) -> float | None:
        """The price if this is a deterministic take-it-or-leave-it offer, else None.

        Requires a quasilinear problem. Types that receive the outside option must
        pay nothing; all other types must get the same allocation and transfer.
        """
        if self.transfers is None:
            return None
        a0 = problem.outside_option
        price = None
        for k in range(self.n_types):
            row = self.alloc[k]
            j = int(np.argmax(row))
            if row[j] < 1 - tol:
                return None
            if j == a0:
                if abs(self.transfers[k]) > tol:
                    return None
                continue
            if price is None:
                price = (j, self.transfers[k])
            elif price[0] != j or abs(price[1] - self.transfers[k]) > tol:
                return None
        return None if price is None else float(price[1])

    def to_dict(self) -> dict:
        d = {"alloc": self.alloc.tolist()}
        if self.transfers is not None:
            d["transfers"] = self.transfers.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DirectMechanism":
        return cls(np.array(d["alloc"], dtype=float), None if d.get("transfers") is None else d["transfers"])


def _clean(alloc: np.ndarray) -> np.ndarray:
    alloc = np.where(alloc < 1e-12, 0.0, alloc)
    return alloc / alloc.sum(axis=1, keepdims=True)


def payoff_matrix(problem: ProblemSpec, mech: DirectMechanism, beliefs: np.ndarray) -> np.ndarray:
    """``P[k, j]``: expected payoff of type ``k`` reporting ``j``.

    ``beliefs[k]`` is the belief type ``k`` evaluates payoffs with.
    """
    # U[k, a] = sum_w beliefs[k, w] u(a, k, w)
    U = np.einsum("kw,akw->ka", beliefs, problem.agent_utility)
    return U @ mech.alloc.T - mech.transfer_vector()[None, :]


@dataclass(frozen=True)
class Violation:
    kind: str  # "IC" or "IR"
    type_index: int
    gap: float
    target: int | None = None
    signal: int | None = None


def check_ic_ir(
    problem: ProblemSpec,
    mech: DirectMechanism,
    belief: np.ndarray,
    tol: float = VERIFY_TOL,
    signal: int | None = None,
) -> list[Violation]:
    """Re-evaluate every IC and IR constraint of ``mech`` at ``belief``.

    Each type uses its own type-conditioned belief. Types with zero
    probability under ``belief`` are skipped.
    """
    beliefs, ok = type_conditioned_beliefs(problem, np.asarray(belief, dtype=float))
    P = payoff_matrix(problem, mech, beliefs)
    outside = np.einsum("kw,kw->k", beliefs, problem.agent_utility[problem.outside_option])
    out = []
    for k in range(problem.n_types):
        if not ok[k]:
            continue
        truth = P[k, k]
        ir_gap = outside[k] - truth
        if ir_gap > tol:
            out.append(Violation("IR", k, float(ir_gap), None, signal))
        for j in range(problem.n_types):
            gap = P[k, j] - truth
            if j != k and gap > tol:
                out.append(Violation("IC", k, float(gap), j, signal))
    return out


# ------------------------------------------------------------------ the LP


class _ScreeningLP:
    """Variables: ``alloc[type, a]`` (type-major) then ``transfers[type]``."""

    def __init__(self, problem: ProblemSpec, belief: np.ndarray):
        self.p = problem
        nt, na = problem.n_types, problem.n_alloc
        self.nt, self.na = nt, na
        self.nvar = nt * na + (nt if problem.has_transfers else 0)
        self.beliefs, self.ok = type_conditioned_beliefs(problem, belief)
        self.U = np.einsum("kw,akw->ka", self.beliefs, problem.agent_utility)
        self.outside = self.U[np.arange(nt), problem.outside_option] if nt else np.zeros(0)
        joint = problem.joint_weights(belief)  # [w, k]
        c = np.einsum("wk,akw->ka", joint, problem.designer_utility).ravel()
        if problem.has_transfers:
            c = np.concatenate([c, joint.sum(axis=0)])
        self.c = c
        A_eq = np.zeros((nt, self.nvar))
        for k in range(nt):
            A_eq[k, k * na : (k + 1) * na] = 1.0
        self.A_eq, self.b_eq = A_eq, np.ones(nt)
        bounds = np.zeros((self.nvar, 2))
        bounds[:, 1] = np.inf
        if problem.has_transfers:
            K = problem.transfer_bound
            bounds[nt * na :] = (-K, K)
        self.bounds = bounds
        ir = []
        for k in range(nt):
            if self.ok[k]:
                ir.append(self._row(k, k, -self.outside[k]))
        self.ir_rows = ir

    def _row(self, k: int, j: int, rhs: float) -> tuple[np.ndarray, float]:
        """Row ``<= rhs`` saying type k's truthful payoff beats report j (or the outside option)."""
        na = self.na
        row = np.zeros(self.nvar)
        row[k * na : (k + 1) * na] -= self.U[k]
        if j != k:
            row[j * na : (j + 1) * na] += self.U[k]
        if self.p.has_transfers:
            off = self.nt * na
            row[off + k] += 1.0
            if j != k:
                row[off + j] -= 1.0
        return row, rhs

    def ic_row(self, k: int, j: int):
        return self._row(k, j, 0.0)

    def solve(self, pairs: set[tuple[int, int]]) -> tuple[np.ndarray, float]:
        rows = self.ir_rows + [self.ic_row(k, j) for k, j in sorted(pairs)]
        A_ub = np.array([r for r, _ in rows]) if rows else None
        b_ub = np.array([b for _, b in rows]) if rows else None
        lp = LinearProgram(self.c, A_eq=self.A_eq, b_eq=self.b_eq, A_ub=A_ub, b_ub=b_ub, bounds=self.bounds)
        sol = solve_lp(lp)
        if sol.status is not LpStatus.OPTIMAL:
            raise InfeasibleProblem(f"screening LP is {sol.status.value}")
        return sol.values, sol.objective_value

    def violated_pairs(self, x: np.ndarray, tol: float) -> set[tuple[int, int]]:
        na, nt = self.na, self.nt
        alloc = x[: nt * na].reshape(nt, na)
        t = x[nt * na :] if self.p.has_transfers else np.zeros(nt)
        P = self.U @ alloc.T - t[None, :]
        gain = P - np.diag(P)[:, None]
        gain[~self.ok] = 0.0
        np.fill_diagonal(gain, 0.0)
        ks, js = np.nonzero(gain > tol)
        return set(zip(ks.tolist(), js.tolist()))


def solve_at_belief(problem: ProblemSpec, belief: Sequence[float] | np.ndarray) -> tuple[DirectMechanism, float]:
    """Designer-optimal IC/IR direct mechanism when the state is believed to be ``belief``."""
    mu = as_belief(belief, problem.n_states, tol=DERIVED_TOL)
    lp = _ScreeningLP(problem, mu)
    nt = problem.n_types
    active = [k for k in range(nt) if lp.ok[k]]
    if nt <= FULL_IC_MAX_TYPES:
        pairs = {(k, j) for k in active for j in range(nt) if j != k}
    else:
        # adjacent constraints first; add whatever the solution violates
        pairs = {(k, j) for k in active for j in (k - 1, k + 1) if 0 <= j < nt}
    for _ in range(4 * nt + 10):
        x, value = lp.solve(pairs)
        missing = lp.violated_pairs(x, 1e-10) - pairs
        if not missing:
            break
        pairs |= missing
    else:
        raise InfeasibleProblem("constraint generation did not settle")
    na = problem.n_alloc
    alloc = _clean(x[: nt * na].reshape(nt, na))
    transfers = None
    if problem.has_transfers:
        transfers = x[nt * na :].copy()
        transfers[np.abs(transfers) < 1e-13] = 0.0
    return DirectMechanism(alloc, transfers), float(value)


def designer_value(problem: ProblemSpec, mech: DirectMechanism, belief: np.ndarray) -> float:
    joint = problem.joint_weights(belief)
    v = float(np.einsum("wk,akw,ka->", joint, problem.designer_utility, mech.alloc))
    return v + float(joint.sum(axis=0) @ mech.transfer_vector())


# ------------------------------------------------------------ value curve


@dataclass(frozen=True, eq=False)
class ValueCurve:
    grid: np.ndarray  # [atom, state]
    values: np.ndarray
    mechanisms: tuple[DirectMechanism, ...]
    mechanism_ids: np.ndarray

    def __len__(self) -> int:
        return self.values.size

    def to_csv(self, path: str | Path, states: Sequence[str]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"mu_{s}" for s in states] + ["W", "mechanism_id"])
            for atom, val, mid in zip(self.grid, self.values, self.mechanism_ids):
                w.writerow([fmt(x) for x in atom] + [fmt(val), int(mid)])


def fmt(x: float) -> str:
    """Twelve significant digits, the package-wide CSV float format."""
    x = float(x)
    if x == 0:
        return "0"
    return f"{x:.12g}"


def _dedupe_ids(mechs: Sequence[DirectMechanism]) -> np.ndarray:
    reps: list[DirectMechanism] = []
    ids = np.empty(len(mechs), dtype=int)
    for i, m in enumerate(mechs):
        for r, rep in enumerate(reps):
            if rep.close_to(m):
                ids[i] = r
                break
        else:
            ids[i] = len(reps)
            reps.append(m)
    return ids


def value_curve(problem: ProblemSpec, grid: Sequence[Sequence[float]] | np.ndarray) -> ValueCurve:
    grid = np.atleast_2d(np.array(grid, dtype=float))
    if grid.shape[0] == 0:
        raise ValidationError("grid must be nonempty", "grid")
    mechs, vals = [], []
    for i, atom in enumerate(grid):
        try:
            m, v = solve_at_belief(problem, atom)
        except Exception as exc:
            exc.args = (f"grid atom {i}: {exc}",)
            raise
        mechs.append(m)
        vals.append(v)
    return ValueCurve(grid, np.array(vals), tuple(mechs), _dedupe_ids(mechs))


# ----------------------------------------------------- screening discretization


@dataclass
class ScreeningSpec:
    """Continuous one-dimensional screening problem with quasilinear utilities.

    ``agent_value(q, theta, state)`` and ``designer_value(q, theta, state)`` receive
    the physical allocation, the type value, and the state label.
    """

    type_interval: tuple[float, float]
    density: Callable[[float], float]
    physical_grid: Sequence[float]
    agent_value: Callable[[float, float, object], float]
    designer_value: Callable[[float, float, object], float]
    states: Sequence[object]
    prior: Sequence[float]
    outside_index: int = 0
    transfer_bound: float | None = None
    name: str = ""


def discretize_screening(spec: ScreeningSpec, n: int) -> ProblemSpec:
    """Midpoint discretization with masses proportional to the density."""
    if n < 2:
        raise ValidationError("need at least two types", "n")
    lo, hi = spec.type_interval
    if not hi > lo:
        raise ValidationError("empty type interval", "type_interval")
    h = (hi - lo) / n
    thetas = lo + h * (np.arange(n) + 0.5)
    mass = np.array([max(float(spec.density(t)), 0.0) for t in thetas])
    if not mass.sum() > 0:
        raise DegenerateDensity("density vanishes at every midpoint", "density")
    mass /= mass.sum()
    q = np.array(spec.physical_grid, dtype=float)
    v = np.array([[[spec.agent_value(qq, t, w) for w in spec.states] for t in thetas] for qq in q], dtype=float)
    wd = np.array([[[spec.designer_value(qq, t, w) for w in spec.states] for t in thetas] for qq in q], dtype=float)
    bound = spec.transfer_bound
    if bound is None:
        bound = 10.0 * float(np.max(np.abs(v)))
        if not bound > 0:
            bound = 1.0
    nw = len(spec.states)
    return ProblemSpec(
        states=tuple(str(s) for s in spec.states),
        prior=np.array(spec.prior, dtype=float),
        types=tuple(f"{t:.10g}" for t in thetas),
        type_pmf=np.tile(mass, (nw, 1)),
        allocations=tuple(f"{x:g}" for x in q),
        outside_option=spec.outside_index,
        agent_utility=v,
        designer_utility=wd,
        quasilinear=QuasilinearBlock(q, float(bound)),
        type_values=thetas,
        name=spec.name,
    )


def all_outside_value(problem: ProblemSpec, belief: np.ndarray) -> float:
    joint = problem.joint_weights(belief)
    return float(np.einsum("wk,kw->", joint, problem.designer_utility[problem.outside_option]))


__all__ = [
    "DirectMechanism",
    "ValueCurve",
    "ScreeningSpec",
    "Violation",
    "solve_at_belief",
    "value_curve",
    "discretize_screening",
    "check_ic_ir",
    "payoff_matrix",
    "designer_value",
    "all_outside_value",
    "fmt",
]

"""Myersonian benchmark: IC/IR only on average over the prior.

Also holds the virtual-surplus helpers for discretized one-dimensional
screening and the per-state optimal auction with full disclosure.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .disclosure import optimal_two_stage
from .errors import InfeasibleProblem, IrregularDistribution, ValidationError, ZeroDensity
from .lp import LinearProgram, LpStatus, solve_lp
from .model import ProblemSpec
from .stage_design import FULL_IC_MAX_TYPES

AVG_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MyersonSolution:
    """``alloc[type, state, a]`` and ``transfers[type, state]`` (quasilinear mode only)."""

    alloc: np.ndarray
    transfers: np.ndarray | None
    value: float

    def expected_quantity(self, problem: ProblemSpec) -> np.ndarray:
        """Expected physical quantity ``[type, state]`` (quasilinear mode)."""
        if problem.quasilinear is None:
            raise ValidationError("needs a physical grid", "quasilinear")
        return self.alloc @ problem.quasilinear.physical_grid


def _type_priors(problem: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    joint = problem.joint_weights(problem.prior).T  # [k, w]
    z = joint.sum(axis=1)
    ok = z > 0
    b = np.zeros_like(joint)
    b[ok] = joint[ok] / z[ok, None]
    return b, ok


def average_payoffs(problem: ProblemSpec, alloc: np.ndarray, transfers: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Payoff matrix ``P[k, j]`` and outside values, averaged with each type's prior belief."""
    b, _ = _type_priors(problem)
    # G[k, j] = sum_w b[k,w] sum_a alloc[j,w,a] u(a,k,w)
    G = np.einsum("kw,jwa,akw->kj", b, alloc, problem.agent_utility)
    if transfers is not None:
        G = G - (b @ transfers.T)
    outside = np.einsum("kw,kw->k", b, problem.agent_utility[problem.outside_option])
    return G, outside


def verify_average_ic_ir(problem: ProblemSpec, sol: MyersonSolution, tol: float = AVG_TOL) -> list[tuple[str, int, int | None, float]]:
    G, outside = average_payoffs(problem, sol.alloc, sol.transfers)
    _, ok = _type_priors(problem)
    bad = []
    for k in np.flatnonzero(ok):
        if outside[k] - G[k, k] > tol:
            bad.append(("IR", int(k), None, float(outside[k] - G[k, k])))
        for j in range(problem.n_types):
            if j != k and G[k, j] - G[k, k] > tol:
                bad.append(("IC", int(k), j, float(G[k, j] - G[k, k])))
    return bad


def solve_myerson(problem: ProblemSpec) -> MyersonSolution:
    nt, nw, na = problem.n_types, problem.n_states, problem.n_alloc
    n_alloc_vars = nt * nw * na
    nvar = n_alloc_vars + (nt * nw if problem.has_transfers else 0)
    b, ok = _type_priors(problem)
    joint = problem.joint_weights(problem.prior)  # [w, k]
    c = np.einsum("wk,akw->kwa", joint, problem.designer_utility).ravel()
    if problem.has_transfers:
        c = np.concatenate([c, joint.T.ravel()])
    # Ub[k, w, a] = b[k, w] u(a, k, w): type k's averaged payoff weights
    Ub = np.einsum("kw,akw->kwa", b, problem.agent_utility)
    outside = np.einsum("kw,kw->k", b, problem.agent_utility[problem.outside_option])

    A_eq = np.zeros((nt * nw, nvar))
    for r in range(nt * nw):
        A_eq[r, r * na : (r + 1) * na] = 1.0
    b_eq = np.ones(nt * nw)
    bounds = np.zeros((nvar, 2))
    bounds[:, 1] = np.inf
    if problem.has_transfers:
        K = problem.transfer_bound
        bounds[n_alloc_vars:] = (-K, K)

    def row(k: int, j: int | None) -> np.ndarray:
        r = np.zeros(nvar)
        r[k * nw * na : (k + 1) * nw * na] -= Ub[k].ravel()
        if j is not None:
            r[j * nw * na : (j + 1) * nw * na] += Ub[k].ravel()
        if problem.has_transfers:
            off = n_alloc_vars
            r[off + k * nw : off + (k + 1) * nw] += b[k]
            if j is not None:
                r[off + j * nw : off + (j + 1) * nw] -= b[k]
        return r

    ir_rows = [(row(k, None), -outside[k]) for k in range(nt) if ok[k]]
    active = [k for k in range(nt) if ok[k]]
    if nt <= FULL_IC_MAX_TYPES:
        pairs = {(k, j) for k in active for j in range(nt) if j != k}
    else:
        pairs = {(k, j) for k in active for j in (k - 1, k + 1) if 0 <= j < nt}

    for _ in range(4 * nt + 10):
        rows = ir_rows + [(row(k, j), 0.0) for k, j in sorted(pairs)]
        A_ub = np.array([r for r, _ in rows]) if rows else None
        b_ub = np.array([v for _, v in rows]) if rows else None
        sol = solve_lp(LinearProgram(c, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, bounds=bounds))
        if sol.status is not LpStatus.OPTIMAL:
            raise InfeasibleProblem(f"Myersonian LP is {sol.status.value}")
        x = sol.values
        alloc = x[:n_alloc_vars].reshape(nt, nw, na)
        transfers = x[n_alloc_vars:].reshape(nt, nw) if problem.has_transfers else None
        G, _ = average_payoffs(problem, alloc, transfers)
        gain = G - np.diag(G)[:, None]
        gain[~ok] = 0.0
        np.fill_diagonal(gain, 0.0)
        ks, js = np.nonzero(gain > 1e-10)
        missing = set(zip(ks.tolist(), js.tolist())) - pairs
        if not missing:
            break
        pairs |= missing
    else:
        raise InfeasibleProblem("constraint generation did not settle")
    alloc = np.where(alloc < 1e-12, 0.0, alloc)
    alloc /= alloc.sum(axis=2, keepdims=True)
    return MyersonSolution(alloc, transfers, float(sol.objective_value))


# ------------------------------------------------------------ virtual surplus


def _type_order(problem: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    """Type values and their sort order; non-numeric labels keep their declared order."""
    try:
        theta = problem.numeric_types()
    except ValidationError:
        theta = np.arange(problem.n_types, dtype=float)
    order = np.argsort(theta, kind="stable")
    return theta, order


def virtual_surplus(problem: ProblemSpec, q: int, type_index: int, state: int) -> float:
    """``w~ + v - dv/dtheta * (1 - F) / f`` on the discrete type grid.

    ``q`` is an index into the physical grid. The hazard term uses the mass of
    strictly higher types times the gap to the next type, divided by this
    type's mass; the derivative is the forward difference to the next type.
    """
    theta, order = _type_order(problem)
    pos = int(np.flatnonzero(order == type_index)[0])
    pmf = problem.type_pmf[state][order]
    if pmf[pos] <= 0:
        raise ZeroDensity(f"type {problem.types[type_index]} has zero mass in state {problem.states[state]}")
    v = problem.agent_utility[q][order, state]
    wt = problem.designer_utility[q][order, state]
    tail = float(pmf[pos + 1 :].sum())
    if pos + 1 < len(order):
        dv = v[pos + 1] - v[pos]
    else:
        dv = 0.0  # nobody above the top type collects rent
    return float(wt[pos] + v[pos] - dv * tail / pmf[pos])


def virtual_types(types: np.ndarray, pmf: np.ndarray) -> np.ndarray:
    """Discrete ``theta - (1 - F) / f`` with the right-tail convention of :func:`virtual_surplus`."""
    types = np.asarray(types, dtype=float)
    pmf = np.asarray(pmf, dtype=float)
    if np.any(pmf <= 0):
        raise ZeroDensity("every grid type needs positive mass")
    tail = pmf[::-1].cumsum()[::-1] - pmf
    gaps = np.diff(types, append=types[-1])
    return types - tail * gaps / pmf


# ------------------------------------------------------------ gap report


@dataclass(frozen=True)
class GapReport:
    w_my: float
    w_cal: float
    gap: float
    state_by_state_monotone: bool | None
    notes: tuple[str, ...] = ()

    def render(self) -> str:
        lines = [
            f"W_My  = {self.w_my:.12g}",
            f"W_cal = {self.w_cal:.12g}",
            f"gap   = {self.gap:.12g}",
            f"Myersonian allocation monotone state by state: {self.state_by_state_monotone}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def state_by_state_monotone(problem: ProblemSpec, sol: MyersonSolution, tol: float = 1e-9) -> bool:
    Q = sol.expected_quantity(problem)
    theta, order = _type_order(problem)
    Q = Q[order]
    return bool(np.all(np.diff(Q, axis=0) >= -tol))


def gap_report(problem: ProblemSpec, grid: Sequence[Sequence[float]] | np.ndarray | None = None) -> GapReport:
    ts = optimal_two_stage(problem, grid)
    my = solve_myerson(problem)
    notes = ["W_cal is computed on a fixed belief grid and is a lower bound when the grid misses optimal atoms"]
    flag = state_by_state_monotone(problem, my) if problem.has_transfers else None
    gap = my.value - ts.value
    if gap < -AVG_TOL:
        notes.append("negative gap: check the LP tolerances")
    return GapReport(my.value, ts.value, gap, flag, tuple(notes))


# ------------------------------------------------------------ auctions


@dataclass
class AuctionSpec:
    """``N`` bidders with independent discrete types and payoff ``q_i (omega_i theta_i + omega_0i)``.

    ``slope[w, i]`` and ``shift[w, i]`` hold the state coefficients. Optional
    ``designer_weights[i]`` is an array ``[state, type]`` with the designer's
    non-monetary value of allocating to bidder ``i``.
    """

    types: list[np.ndarray]
    pmfs: list[np.ndarray]
    prior: np.ndarray
    slope: np.ndarray
    shift: np.ndarray
    designer_weights: list[np.ndarray] | None = None
    states: tuple[str, ...] = ()

    def __post_init__(self):
        self.types = [np.asarray(t, dtype=float) for t in self.types]
        self.pmfs = [np.asarray(p, dtype=float) for p in self.pmfs]
        self.prior = np.asarray(self.prior, dtype=float)
        nw = self.prior.size
        self.slope = np.asarray(self.slope, dtype=float).reshape(nw, self.n)
        self.shift = np.asarray(self.shift, dtype=float).reshape(nw, self.n)
        if not self.states:
            self.states = tuple(f"s{i}" for i in range(nw))
        if len(self.types) != len(self.pmfs):
            raise ValidationError("one pmf per bidder", "pmfs")
        for i, (t, p) in enumerate(zip(self.types, self.pmfs)):
            if t.shape != p.shape or np.any(np.diff(t) <= 0):
                raise ValidationError("types must be increasing and match the pmf", f"types[{i}]")
            if np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ValidationError("must be a probability vector", f"pmfs[{i}]")
        if np.any(self.prior <= 0) or abs(self.prior.sum() - 1) > 1e-12:
            raise ValidationError("must be a full-support probability vector", "prior")
        if not (np.all(np.isfinite(self.slope)) and np.all(np.isfinite(self.shift))):
            raise ValidationError("coefficients must be finite", "slope/shift")
        if self.designer_weights is None:
            self.designer_weights = [np.zeros((nw, t.size)) for t in self.types]
        else:
            self.designer_weights = [np.asarray(w, dtype=float).reshape(nw, t.size) for w, t in zip(self.designer_weights, self.types)]

    @property
    def n(self) -> int:
        return len(self.types)


@dataclass
class AuctionResult:
    allocation: np.ndarray  # [state, bidder or outside (last), *profile]
    interim: list[np.ndarray]  # per bidder [state, type]
    virtual_types: list[np.ndarray]
    revenue_full: float
    revenue_none: float
    designer_payoff: float
    interim_monotone: bool
    reserve: list[list[float | None]] = field(default_factory=list)  # [state][bidder]


def _profile_scores(spec: AuctionSpec, J: list[np.ndarray], w: int) -> np.ndarray:
    """Scores on the full type grid, shape ``[bidder, *profile]``."""
    shape = tuple(t.size for t in spec.types)
    out = np.empty((spec.n,) + shape)
    for i in range(spec.n):
        s = spec.designer_weights[i][w] + J[i] * spec.slope[w, i] + spec.shift[w, i]
        view = [1] * spec.n
        view[i] = shape[i]
        out[i] = np.broadcast_to(s.reshape(view), shape)
    return out


def _envelope_revenue(types: np.ndarray, pmf: np.ndarray, slope_q: np.ndarray, const_q: np.ndarray) -> float:
    """Expected payment when type ``k`` gets payoff ``types[k] * slope_q[k] + const_q[k]``.

    Payments follow from binding IR at the lowest type and binding downward
    adjacent IC: ``U[k] = U[k-1] + (types[k] - types[k-1]) * slope_q[k-1]``.
    """
    U = np.zeros(types.size)
    U[1:] = np.cumsum(np.diff(types) * slope_q[:-1])
    pay = types * slope_q + const_q - U
    return float(pmf @ pay)


def myerson_auction(spec: AuctionSpec, tie_tol: float = 1e-12) -> AuctionResult:
    J = [virtual_types(t, p) for t, p in zip(spec.types, spec.pmfs)]
    for i, j in enumerate(J):
        if np.any(np.diff(j) < -1e-12):
            raise IrregularDistribution(f"bidder {i}: virtual types are not monotone; ironing is not supported")
    for i, wi in enumerate(spec.designer_weights):
        if np.any(np.diff(wi, axis=1) < -1e-12):
            warnings.warn(f"bidder {i}: designer weight decreases in own type; monotonicity may fail")
    if np.prod([t.size for t in spec.types]) > 5_000_000:
        raise ValidationError("type profile grid too large for exact summation", "types")

    nw, N = spec.prior.size, spec.n
    shape = tuple(t.size for t in spec.types)
    alloc = np.zeros((nw, N + 1) + shape)
    for w in range(nw):
        s = _profile_scores(spec, J, w)
        best = np.maximum(s.max(axis=0), 0.0)
        winners = np.concatenate([s >= best - tie_tol, (0.0 >= best - tie_tol)[None]], axis=0)
        alloc[w] = winners / winners.sum(axis=0, keepdims=True)

    interim = []
    for i in range(N):
        # Q_i[w, k]: probability bidder i with type k wins, averaging over rivals
        qi = np.empty((nw, shape[i]))
        for w in range(nw):
            arr = alloc[w, i]
            arr = np.moveaxis(arr, i, 0)
            rest = [spec.pmfs[j] for j in range(N) if j != i]
            for p in reversed(rest):
                arr = arr @ p
            qi[w] = arr
        interim.append(qi)

    monotone = all(bool(np.all(np.diff(qi, axis=1) >= -1e-12)) for qi in interim)
    rev_full = 0.0
    rev_none = 0.0
    payoff_extra = 0.0
    for i in range(N):
        t, p, qi = spec.types[i], spec.pmfs[i], interim[i]
        for w in range(nw):
            rev_full += spec.prior[w] * _envelope_revenue(t, p, spec.slope[w, i] * qi[w], spec.shift[w, i] * qi[w])
            payoff_extra += spec.prior[w] * float(p @ (spec.designer_weights[i][w] * qi[w]))
        slope_bar = spec.prior @ (spec.slope[:, i][:, None] * qi)
        const_bar = spec.prior @ (spec.shift[:, i][:, None] * qi)
        rev_none += _envelope_revenue(t, p, slope_bar, const_bar)

    reserve = []
    for w in range(nw):
        row = []
        for i in range(N):
            s = spec.designer_weights[i][w] + J[i] * spec.slope[w, i] + spec.shift[w, i]
            pos = np.flatnonzero(s >= 0)
            row.append(float(spec.types[i][pos[0]]) if pos.size else None)
        reserve.append(row)
    return AuctionResult(alloc, interim, J, rev_full, rev_none, rev_full + payoff_extra, monotone, reserve)


def grid_sum_revenue(spec: AuctionSpec) -> float:
    """Independent oracle: expected positive part of the best virtual score, by explicit loops."""
    J = [virtual_types(t, p) for t, p in zip(spec.types, spec.pmfs)]
    total = 0.0
    for w, pw in enumerate(spec.prior):
        for ks in itertools.product(*[range(t.size) for t in spec.types]):
            prob = pw
            best = 0.0
            for i, k in enumerate(ks):
                prob *= spec.pmfs[i][k]
                best = max(best, J[i][k] * spec.slope[w, i] + spec.shift[w, i])
            total += prob * best
    return total


def uniform_auction(n_bidders: int, n_types: int, prior=(1.0,), slope=None, shift=None) -> AuctionSpec:
    """Symmetric bidders with midpoint grids on [0, 1]."""
    t = (np.arange(n_types) + 0.5) / n_types
    p = np.full(n_types, 1.0 / n_types)
    nw = len(prior)
    slope = np.ones((nw, n_bidders)) if slope is None else slope
    shift = np.zeros((nw, n_bidders)) if shift is None else shift
    return AuctionSpec([t] * n_bidders, [p] * n_bidders, np.array(prior, dtype=float), slope, shift)


__all__ = [
    "MyersonSolution",
    "GapReport",
    "AuctionSpec",
    "AuctionResult",
    "solve_myerson",
    "verify_average_ic_ir",
    "virtual_surplus",
    "virtual_types",
    "gap_report",
    "state_by_state_monotone",
    "myerson_auction",
    "grid_sum_revenue",
    "uniform_auction",
]

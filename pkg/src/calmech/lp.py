"""Dense linear programming.

The core is a two-phase tableau simplex with Bland's rule. It is exact enough
and fast enough for every small and medium LP in the package (belief splits,
undetectable deviations, the examples). Large screening LPs with hundreds of
discretized types are routed to SciPy's HiGHS dual simplex, which also returns
vertex solutions; both routes share the same post-solve residual checks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NumericalFailure

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
FAIL_TOL = 1e-6

# Tableau cells above which "auto" hands the problem to HiGHS.
TABLEAU_CELL_LIMIT = 250_000


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(eq=False)
class LinearProgram:
    """maximize ``objective @ x`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, ``lo <= x <= hi``.

    ``bounds`` defaults to ``[0, inf)`` for every variable.
    """

    objective: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    bounds: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        n = c.size
        self.objective = c
        self.A_eq, self.b_eq = _block(self.A_eq, self.b_eq, n, "equality")
        self.A_ub, self.b_ub = _block(self.A_ub, self.b_ub, n, "inequality")
        if self.bounds is None:
            b = np.zeros((n, 2))
            b[:, 1] = np.inf
        else:
            b = np.array(self.bounds, dtype=float)
            if b.shape != (n, 2):
                raise DimensionMismatch(f"bounds must have shape ({n}, 2), got {b.shape}")
            if np.any(np.isnan(b)) or np.any(b[:, 0] > b[:, 1]):
                raise DimensionMismatch("each bound needs lo <= hi")
            if np.any(b[:, 0] == np.inf) or np.any(b[:, 1] == -np.inf):
                raise DimensionMismatch("bounds are not satisfiable")
        self.bounds = b
        for arr in (c, self.A_eq, self.b_eq, self.A_ub, self.b_ub):
            if not np.all(np.isfinite(arr)):
                raise DimensionMismatch("coefficients must be finite")

    @property
    def n(self) -> int:
        return self.objective.size

    def residual(self, x: np.ndarray) -> float:
        """Largest violation of any constraint or bound at ``x``."""
        r = 0.0
        if self.b_eq.size:
            r = max(r, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if self.b_ub.size:
            r = max(r, float(np.max(self.A_ub @ x - self.b_ub)))
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        r = max(r, float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))
        return max(r, 0.0)


def _block(A, b, n, what):
    if A is None and b is None:
        return np.zeros((0, n)), np.zeros(0)
    if A is None or b is None:
        raise DimensionMismatch(f"{what} constraints need both a matrix and a right-hand side")
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float).ravel()
    if A.ndim == 1 and A.size == n and b.size == 1:
        A = A[None, :]
    if A.size == 0 and b.size == 0:
        return np.zeros((0, n)), np.zeros(0)
    if A.ndim != 2 or A.shape != (b.size, n):
        raise DimensionMismatch(f"{what} matrix has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


@dataclass(eq=False)
class LpSolution:
    status: LpStatus
    values: np.ndarray | None = None
    objective_value: float = math.nan
    basis: tuple[int, ...] = ()
    basic_variables: tuple[int, ...] = ()
    residual: float = math.nan
    max_reduced_cost: float = math.nan
    method: str = "tableau"
    pivots: int = 0
    certificate: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    def support(self, tol: float = 1e-10) -> np.ndarray:
        return np.flatnonzero(np.abs(self.values) > tol)


# ------------------------------------------------------------ standard form


@dataclass
class _Standard:
    """Equality form ``M y = r, y >= 0`` with ``x = offset + D y``."""

    M: np.ndarray
    r: np.ndarray
    c: np.ndarray
    c0: float
    D: np.ndarray
    offset: np.ndarray
    n_struct: int  # columns of y that come from original variables
    n_ub: int  # leading rows that carry a slack column
    flip: np.ndarray


def _standardize(lp: LinearProgram) -> _Standard:
    n = lp.n
    lo, hi = lp.bounds[:, 0], lp.bounds[:, 1]
    cols = []  # (original var, sign)
    offset = np.zeros(n)
    bound_rows = []  # (column in y, upper limit)
    for j in range(n):
        if np.isfinite(lo[j]):
            offset[j] = lo[j]
            cols.append((j, 1.0))
            if np.isfinite(hi[j]):
                bound_rows.append((len(cols) - 1, hi[j] - lo[j]))
        elif np.isfinite(hi[j]):
            offset[j] = hi[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    ny = len(cols)
    D = np.zeros((n, ny))
    for k, (j, s) in enumerate(cols):
        D[j, k] = s

    A_ub = lp.A_ub @ D
    b_ub = lp.b_ub - lp.A_ub @ offset
    if bound_rows:
        extra = np.zeros((len(bound_rows), ny))
        for i, (k, ub) in enumerate(bound_rows):
            extra[i, k] = 1.0
        A_ub = np.vstack([A_ub, extra])
        b_ub = np.concatenate([b_ub, [ub for _, ub in bound_rows]])
    A_eq = lp.A_eq @ D
    b_eq = lp.b_eq - lp.A_eq @ offset

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    M = np.zeros((m_ub + m_eq, ny + m_ub))
    M[:m_ub, :ny] = A_ub
    M[:m_ub, ny:] = np.eye(m_ub)
    M[m_ub:, :ny] = A_eq
    r = np.concatenate([b_ub, b_eq])
    flip = np.where(r < 0, -1.0, 1.0)
    M *= flip[:, None]
    r = r * flip
    c = np.concatenate([lp.objective @ D, np.zeros(m_ub)])
    return _Standard(M, r, c, float(lp.objective @ offset), D, offset, ny, m_ub, flip)


# ------------------------------------------------------------ tableau


class _Tableau:
    """Rows ``0..m-1`` are constraints, row ``m`` holds reduced costs and ``-z``."""

    def __init__(self, T: np.ndarray, basis: list[int]):
        self.T = T
        self.basis = basis
        self.pivots = 0

    @property
    def m(self) -> int:
        return self.T.shape[0] - 1

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        T[row] /= T[row, col]
        colv = T[:, col].copy()
        colv[row] = 0.0
        T -= np.outer(colv, T[row])
        self.basis[row] = col
        self.pivots += 1

    def entering(self, allowed: int) -> int:
        """Bland: the lowest-index column with a positive reduced cost."""
        d = self.T[-1, :allowed]
        idx = np.flatnonzero(d > PIVOT_TOL)
        return int(idx[0]) if idx.size else -1

    def leaving(self, col: int) -> int:
        a = self.T[:-1, col]
        rhs = self.T[:-1, -1]
        rows = np.flatnonzero(a > PIVOT_TOL)
        if rows.size == 0:
            return -1
        ratios = rhs[rows] / a[rows]
        best = ratios.min()
        # ties within tolerance go to the smallest basic variable index
        tied = rows[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        return int(min(tied, key=lambda i: self.basis[i]))

    def run(self, allowed: int, max_pivots: int) -> tuple[str, int]:
        while True:
            col = self.entering(allowed)
            if col < 0:
                return "optimal", -1
            row = self.leaving(col)
            if row < 0:
                return "unbounded", col
            self.pivot(row, col)
            if self.pivots > max_pivots:
                raise NumericalFailure(f"simplex exceeded {max_pivots} pivots")

    def set_objective(self, c: np.ndarray) -> None:
        n = self.T.shape[1] - 1
        row = np.zeros(n + 1)
        row[: c.size] = c
        for i, b in enumerate(self.basis):
            if row[b] != 0.0:
                row -= row[b] * self.T[i]
        self.T[-1] = row


def _tableau_solve(lp: LinearProgram) -> LpSolution:
    sf = _standardize(lp)
    M, r = sf.M, sf.r
    m, ncol = M.shape
    # rows whose slack can start in the basis (slack coefficient still +1)
    basis = [-1] * m
    for i in range(sf.n_ub):
        if sf.flip[i] > 0:
            basis[i] = sf.n_struct + i
    art_rows = [i for i in range(m) if basis[i] < 0]
    n_art = len(art_rows)
    T = np.zeros((m + 1, ncol + n_art + 1))
    T[:m, :ncol] = M
    T[:m, -1] = r
    for k, i in enumerate(art_rows):
        T[i, ncol + k] = 1.0
        basis[i] = ncol + k
    tab = _Tableau(T, basis)
    max_pivots = 50 * (m + ncol + n_art) + 1000

    if n_art:
        phase1 = np.zeros(ncol + n_art)
        phase1[ncol:] = -1.0
        tab.set_objective(phase1)
        tab.run(ncol + n_art, max_pivots)
        leftover = tab.T[-1, -1]  # sum of artificials at the phase-one optimum
        scale = max(1.0, float(np.max(np.abs(r), initial=0.0)))
        if leftover > FEAS_TOL * scale:
            # phase-one duals y satisfy y @ M >= 0 and y @ r < 0 (Farkas)
            dual = np.zeros(m)
            for i in range(m):
                if i < sf.n_ub and sf.flip[i] > 0:
                    dual[i] = -tab.T[-1, sf.n_struct + i]
            for k, i in enumerate(art_rows):
                dual[i] = -1.0 - tab.T[-1, ncol + k]
            return LpSolution(
                LpStatus.INFEASIBLE,
                pivots=tab.pivots,
                certificate={"farkas": dual * sf.flip, "phase1_objective": float(leftover)},
            )
        # drive zero-level artificials out of the basis, dropping redundant rows
        drop = []
        for i in range(m):
            if tab.basis[i] >= ncol:
                row = tab.T[i, :ncol]
                cand = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if cand.size:
                    tab.pivot(i, int(cand[0]))
                else:
                    drop.append(i)
        if drop:
            keep = [i for i in range(m) if i not in drop]
            tab.T = np.vstack([tab.T[keep], tab.T[-1:]])
            tab.basis = [tab.basis[i] for i in keep]
        tab.T = np.delete(tab.T, np.s_[ncol : ncol + n_art], axis=1)

    tab.set_objective(sf.c)
    status, col = tab.run(ncol, max_pivots)
    if status == "unbounded":
        d = np.zeros(ncol)
        d[col] = 1.0
        for i, b in enumerate(tab.basis):
            d[b] = -tab.T[i, col]
        ray = sf.D @ d[: sf.n_struct]
        return LpSolution(LpStatus.UNBOUNDED, pivots=tab.pivots, certificate={"ray": ray})

    y = np.zeros(ncol)
    for i, b in enumerate(tab.basis):
        y[b] = tab.T[i, -1]
    y = _refine(M, r, tab.basis, y)
    x = sf.offset + sf.D @ y[: sf.n_struct]
    reduced = float(np.max(tab.T[-1, :ncol], initial=0.0))
    basic_vars = tuple(sorted({int(np.flatnonzero(sf.D[:, b])[0]) for b in tab.basis if b < sf.n_struct}))
    return LpSolution(
        LpStatus.OPTIMAL,
        values=x,
        objective_value=float(lp.objective @ x),
        basis=tuple(int(b) for b in tab.basis),
        basic_variables=basic_vars,
        max_reduced_cost=reduced,
        pivots=tab.pivots,
        method="tableau",
    )


def _refine(M: np.ndarray, r: np.ndarray, basis: list[int], y: np.ndarray) -> np.ndarray:
    """One re-solve of the basic system to wash out accumulated pivot error."""
    B = M[:, basis]
    try:
        yb, *_ = np.linalg.lstsq(B, r, rcond=None)
    except np.linalg.LinAlgError:
        return y
    cand = np.zeros_like(y)
    cand[basis] = yb
    cand[np.abs(cand) < 1e-13] = 0.0
    old = np.max(np.abs(M @ np.clip(y, 0, None) - r), initial=0.0)
    new = np.max(np.abs(M @ np.clip(cand, 0, None) - r), initial=0.0)
    if np.all(cand >= -1e-12) and new <= old:
        return np.clip(cand, 0.0, None)
    return np.clip(y, 0.0, None)


def _highs_solve(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog
    from scipy.sparse import csr_matrix

    kw = {}
    if lp.b_ub.size:
        kw["A_ub"], kw["b_ub"] = csr_matrix(lp.A_ub), lp.b_ub
    if lp.b_eq.size:
        kw["A_eq"], kw["b_eq"] = csr_matrix(lp.A_eq), lp.b_eq
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi) for lo, hi in lp.bounds]
    res = linprog(-lp.objective, bounds=bounds, method="highs-ds", **kw)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, method="highs")
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, method="highs")
    if res.status != 0:
        raise NumericalFailure(f"HiGHS stopped with status {res.status}: {res.message}")
    x = np.asarray(res.x, dtype=float)
    lo, hi = lp.bounds[:, 0], lp.bounds[:, 1]
    off_bound = (np.abs(x - np.where(np.isfinite(lo), lo, np.nan)) > 1e-10) | ~np.isfinite(lo)
    off_bound &= (np.abs(x - np.where(np.isfinite(hi), hi, np.nan)) > 1e-10) | ~np.isfinite(hi)
    off_bound &= np.abs(x) > 1e-12
    return LpSolution(
        LpStatus.OPTIMAL,
        values=x,
        objective_value=float(lp.objective @ x),
        basic_variables=tuple(int(j) for j in np.flatnonzero(off_bound)),
        max_reduced_cost=0.0,
        method="highs",
    )


def _cells(lp: LinearProgram) -> int:
    rows = lp.b_eq.size + lp.b_ub.size + int(np.sum(np.isfinite(lp.bounds).all(axis=1)))
    return (rows + 1) * (lp.n + rows + 1)


def solve_lp(lp: LinearProgram, method: str = "auto") -> LpSolution:
    """Solve ``lp`` and return a basic optimal solution or a failure status.

    ``method`` is ``"tableau"``, ``"highs"`` or ``"auto"`` (tableau unless the
    dense tableau would exceed :data:`TABLEAU_CELL_LIMIT` cells).
    """
    if method == "auto":
        method = "tableau" if _cells(lp) <= TABLEAU_CELL_LIMIT else "highs"
    if method == "tableau":
        sol = _tableau_solve(lp)
    elif method == "highs":
        sol = _highs_solve(lp)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    if sol.optimal:
        sol.residual = lp.residual(sol.values)
        if sol.residual > FAIL_TOL:
            raise NumericalFailure(f"feasibility residual {sol.residual:.3g} after refinement")
    return sol


def solve_lp_basic_support(lp: LinearProgram) -> LpSolution:
    """Like :func:`solve_lp` but always on the tableau, so the basis is explicit.

    The number of nonzero variables is then at most the number of rows kept
    after phase one (linearly independent equalities plus inequalities).
    """
    return solve_lp(lp, method="tableau")

"""Random instance generators and brute-force oracles shared by the test files."""

from __future__ import annotations

import itertools

import numpy as np

from calmech.model import ProblemSpec, QuasilinearBlock


def random_problem(
    rng: np.random.Generator,
    n_states: int = 2,
    n_types: int = 2,
    n_alloc: int = 2,
    quasilinear: bool = False,
    private_values: bool = False,
    independent: bool = False,
) -> ProblemSpec:
    prior = rng.dirichlet(np.ones(n_states))
    prior = np.clip(prior, 0.05, None)
    prior /= prior.sum()
    if independent:
        pmf = np.tile(rng.dirichlet(np.ones(n_types) * 2), (n_states, 1))
    else:
        pmf = rng.dirichlet(np.ones(n_types) * 2, size=n_states)
    pmf = np.clip(pmf, 0.02, None)
    pmf /= pmf.sum(axis=1, keepdims=True)
    shape = (n_alloc, n_types, n_states)
    if private_values:
        u = np.repeat(rng.uniform(-1, 1, size=shape[:2])[:, :, None], n_states, axis=2)
    else:
        u = rng.uniform(-1, 1, size=shape)
    w = rng.uniform(-1, 1, size=shape)
    ql = None
    if quasilinear:
        grid = np.linspace(0.0, 1.0, n_alloc)
        # agent values scale with quantity so the outside option (q = 0) is worth 0
        u = grid[:, None, None] * np.abs(u)
        w = grid[:, None, None] * w * 0.5
        ql = QuasilinearBlock(grid, 10.0)
    return ProblemSpec(
        states=[f"w{i}" for i in range(n_states)],
        prior=prior,
        types=[f"t{i}" for i in range(n_types)],
        type_pmf=pmf,
        allocations=[f"a{i}" for i in range(n_alloc)],
        outside_option=0,
        agent_utility=u,
        designer_utility=w,
        quasilinear=ql,
    )


def vertex_enumeration(c, A_ub, b_ub, A_eq=None, b_eq=None):
    """Maximize ``c @ x`` over ``x >= 0`` by trying every basis of the slack form.

    Returns ``(value, x)`` or ``(None, None)`` when no basic feasible point exists.
    Only sensible for a handful of variables; the caller must keep the LP bounded.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    A = np.block([[A_ub, np.eye(m_ub)], [A_eq, np.zeros((m_eq, m_ub))]])
    b = np.concatenate([b_ub, b_eq])
    m, N = A.shape
    cost = np.concatenate([c, np.zeros(m_ub)])
    best, best_x = None, None
    for cols in itertools.combinations(range(N), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        if np.any(xb < -1e-9):
            continue
        x = np.zeros(N)
        x[list(cols)] = xb
        val = float(cost @ x)
        if best is None or val > best + 1e-12:
            best, best_x = val, x[:n]
    return best, best_x


def random_small_lp(rng):
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 4))
    A = rng.normal(size=(m, n))
    b = rng.uniform(0, 2, m)
    # keep it bounded
    A = np.vstack([A, np.ones(n)])
    b = np.append(b, 3.0)
    A_eq = b_eq = None
    if rng.random() < 0.4:
        x0 = rng.dirichlet(np.ones(n)) * rng.uniform(0.5, 2.5)
        A_eq = rng.normal(size=(1, n))
        b_eq = A_eq @ x0
        b = np.maximum(b, A @ x0)
    return rng.normal(size=n), A, b, A_eq, b_eq


def permutation_oracle(G: np.ndarray) -> float:
    """Best gain over truth-telling among permutation reports (uniform type weights)."""
    n = G.shape[0]
    base = float(np.trace(G))
    return max(float(sum(G[k, p[k]] for k in range(n))) - base for p in itertools.permutations(range(n)))


def exhaustive_posterior(prior_cells, cell_state, type_pmf, lik_fn, types, messages, allocs, transfers, t):
    """Posterior over cells after ``t`` periods, from the full-history likelihood product."""
    post = np.array(prior_cells, dtype=float)
    for s in range(t):
        for c in range(post.size):
            post[c] *= type_pmf[cell_state[c], types[s]] * lik_fn(c, messages[s], allocs[s], transfers[s])
    return post / post.sum()


def direct_value_at_belief(problem: ProblemSpec, belief: np.ndarray) -> float:
    """The fixed-belief screening problem rebuilt from scratch and handed to HiGHS."""
    from scipy.optimize import linprog

    nt, na = problem.n_types, problem.n_alloc
    joint = belief[:, None] * problem.type_pmf  # [w, k]
    fk = joint.sum(axis=0)
    post = np.divide(joint, fk[None, :], out=np.zeros_like(joint), where=fk[None, :] > 0).T  # [k, w]
    nvar = nt * na + (nt if problem.has_transfers else 0)
    c = np.zeros(nvar)
    for k in range(nt):
        for a in range(na):
            c[k * na + a] = -sum(joint[w, k] * problem.designer_utility[a, k, w] for w in range(problem.n_states))
        if problem.has_transfers:
            c[nt * na + k] = -fk[k]
    rows, rhs = [], []
    U = np.einsum("kw,akw->ka", post, problem.agent_utility)
    for k in range(nt):
        if fk[k] <= 0:
            continue
        for j in [None, *range(nt)]:
            if j == k:
                continue
            r = np.zeros(nvar)
            r[k * na : (k + 1) * na] -= U[k]
            if problem.has_transfers:
                r[nt * na + k] += 1.0
            if j is None:
                rows.append(r)
                rhs.append(-U[k, problem.outside_option])
            else:
                r[j * na : (j + 1) * na] += U[k]
                if problem.has_transfers:
                    r[nt * na + j] -= 1.0
                rows.append(r)
                rhs.append(0.0)
    A_eq = np.zeros((nt, nvar))
    for k in range(nt):
        A_eq[k, k * na : (k + 1) * na] = 1.0
    bounds = [(0, None)] * (nt * na) + [(-problem.transfer_bound, problem.transfer_bound)] * (nvar - nt * na)
    res = linprog(c, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rows else None, A_eq=A_eq, b_eq=np.ones(nt), bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return -float(res.fun)


def lottery_grid(n_alloc: int, steps: int) -> np.ndarray:
    rows = [c for c in itertools.product(range(steps + 1), repeat=n_alloc - 1) if sum(c) <= steps]
    return np.array([[*c, steps - sum(c)] for c in rows], dtype=float) / steps


def brute_force_value(problem: ProblemSpec, belief: np.ndarray, steps: int = 20) -> float:
    """Best designer value over all mechanisms whose lotteries lie on a ``1/steps`` lattice (no transfers)."""
    nt = problem.n_types
    L = lottery_grid(problem.n_alloc, steps)  # [l, a]
    joint = belief[:, None] * problem.type_pmf
    fk = joint.sum(axis=0)
    post = np.divide(joint, fk[None, :], out=np.zeros_like(joint), where=fk[None, :] > 0).T
    U = np.einsum("kw,akw->ka", post, problem.agent_utility) @ L.T  # [k, l]
    D = np.einsum("wk,akw->ka", joint, problem.designer_utility) @ L.T  # [k, l]
    outside = np.einsum("kw,kw->k", post, problem.agent_utility[problem.outside_option])
    best = -np.inf
    for combo in itertools.product(range(L.shape[0]), repeat=nt):
        ok = True
        for k in range(nt):
            if fk[k] <= 0:
                continue
            own = U[k, combo[k]]
            if own < outside[k] - 1e-12 or any(U[k, combo[j]] > own + 1e-12 for j in range(nt)):
                ok = False
                break
        if ok:
            best = max(best, float(sum(D[k, combo[k]] for k in range(nt))))
    return best

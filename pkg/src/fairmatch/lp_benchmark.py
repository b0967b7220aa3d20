"""Benchmark LPs and the small dense simplex solver behind them.

The solver is a textbook two-phase tableau simplex using Bland's rule for
both the entering and leaving variable, so identical inputs always follow
the same pivot path.  Instances here have at most a few hundred columns,
which a dense tableau handles comfortably.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .instance import Instance

TOL = 1e-9

HOMOGENEOUS = "homogeneous"
GROUPED = "grouped"


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


class IterationLimit(LPError):
    pass


@dataclass
class LinearProgram:
    """max (or min) c.x  s.t.  A x (<=|>=|=) rhs,  x >= 0."""

    c: np.ndarray
    A: np.ndarray
    senses: List[str]
    rhs: np.ndarray
    maximize: bool = True

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.c.size)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.senses = list(self.senses)
        m, n = self.A.shape
        if n != self.c.size or m != self.rhs.size or m != len(self.senses):
            raise ValueError("inconsistent LP dimensions")
        bad = [s for s in self.senses if s not in ("<=", ">=", "=")]
        if bad:
            raise ValueError(f"unknown constraint senses {bad}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A))
                and np.all(np.isfinite(self.rhs))):
            raise ValueError("LP coefficients must be finite")

    def residual(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of x."""
        ax = self.A @ x
        viol = [max(0.0, -float(x.min(initial=0.0)))]
        for k, sense in enumerate(self.senses):
            d = ax[k] - self.rhs[k]
            if sense == "<=":
                viol.append(max(0.0, d))
            elif sense == ">=":
                viol.append(max(0.0, -d))
            else:
                viol.append(abs(d))
        return max(viol)


@dataclass
class LpResult:
    values: np.ndarray
    objective: float
    iterations: int
    residual: float
    duality_gap: float


def _pivot(T: np.ndarray, r: int, j: int) -> None:
    T[r] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    nz = np.nonzero(np.abs(col) > 0)[0]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])


def _run_simplex(T: np.ndarray, basis: List[int], allowed: np.ndarray, tol: float,
                 max_iter: int, start: int = 0) -> int:
    """Minimize the objective held in the last row of T.  Returns iterations used."""
    m = T.shape[0] - 1
    it = start
    while True:
        reduced = T[m, :-1]
        cand = np.nonzero((reduced < -tol) & allowed)[0]
        if cand.size == 0:
            return it
        if it >= max_iter:
            raise IterationLimit(f"simplex exceeded {max_iter} pivots")
        j = int(cand[0])
        col = T[:m, j]
        rows = np.nonzero(col > tol)[0]
        if rows.size == 0:
            raise Unbounded("objective is unbounded")
        ratios = T[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        r = int(min(ties, key=lambda k: basis[k]))
        _pivot(T, r, j)
        basis[r] = j
        it += 1


def _simplex(lp: LinearProgram, tol: float, max_iter: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """Returns (x, y, iterations); y are duals of the min-form problem per original row."""
    A = lp.A.copy()
    rhs = lp.rhs.copy()
    senses = list(lp.senses)
    m, n = A.shape
    flipped = np.zeros(m, dtype=bool)
    for k in range(m):
        if rhs[k] < 0:
            A[k] *= -1
            rhs[k] *= -1
            senses[k] = {"<=": ">=", ">=": "<=", "=": "="}[senses[k]]
            flipped[k] = True

    n_slack = sum(s != "=" for s in senses)
    n_art = sum(s != "<=" for s in senses)
    N = n + n_slack + n_art
    T = np.zeros((m + 1, N + 1))
    T[:m, :n] = A
    T[:m, -1] = rhs
    basis: List[int] = []
    art_cols: List[int] = []
    # column whose reduced cost reads off each row's dual, and the sign to apply
    dual_col = np.zeros(m, dtype=int)
    dual_sign = np.zeros(m)
    s_col, a_col = n, n + n_slack
    for k, sense in enumerate(senses):
        if sense == "<=":
            T[k, s_col] = 1.0
            basis.append(s_col)
            dual_col[k], dual_sign[k] = s_col, -1.0
            s_col += 1
        else:
            if sense == ">=":
                T[k, s_col] = -1.0
                s_col += 1
            T[k, a_col] = 1.0
            basis.append(a_col)
            art_cols.append(a_col)
            dual_col[k], dual_sign[k] = a_col, -1.0
            a_col += 1

    allowed = np.ones(N, dtype=bool)
    row_ids = list(range(m))
    it = 0
    if art_cols:
        # phase 1: minimize the sum of artificials
        T[m, :] = 0.0
        T[m, art_cols] = 1.0
        for k, b in enumerate(basis):
            if b in art_cols:
                T[m] -= T[k]
        it = _run_simplex(T, basis, allowed, tol, max_iter)
        scale = max(1.0, float(np.abs(rhs).max(initial=0.0)))
        if -T[m, -1] > tol * scale * 10:
            raise Infeasible(f"LP infeasible (phase-1 residual {-T[m, -1]:.3g})")
        art_set = set(art_cols)
        keep = []
        for k in range(m):
            if basis[k] in art_set:
                row = T[k, : n + n_slack]
                nz = np.nonzero(np.abs(row) > tol)[0]
                if nz.size:
                    _pivot(T, k, int(nz[0]))
                    basis[k] = int(nz[0])
                    keep.append(k)
                # otherwise the row is redundant and is dropped
            else:
                keep.append(k)
        T = np.vstack([T[keep], T[m:]])
        basis = [basis[k] for k in keep]
        row_ids = keep
        allowed[art_cols] = False
    mm = len(basis)

    cost = np.zeros(N)
    cost[:n] = -lp.c if lp.maximize else lp.c
    T[mm, :] = 0.0
    T[mm, :N] = cost
    for k, b in enumerate(basis):
        if cost[b] != 0.0:
            T[mm] -= cost[b] * T[k]
    it = _run_simplex(T, basis, allowed, tol, max_iter, start=it)

    x = np.zeros(N)
    for k, b in enumerate(basis):
        x[b] = T[k, -1]
    x = np.maximum(x[:n], 0.0)
    y = np.zeros(m)
    y[row_ids] = (dual_sign * T[mm, dual_col])[row_ids]
    y[flipped] *= -1.0
    return x, y, it


def _duality_gap(lp: LinearProgram, x: np.ndarray, y: np.ndarray) -> float:
    """|primal - dual| plus any dual infeasibility, for the min-form problem."""
    c = -lp.c if lp.maximize else lp.c
    infeas = max(0.0, float(np.max(lp.A.T @ y - c, initial=0.0)))
    for k, sense in enumerate(lp.senses):
        if sense == "<=":
            infeas = max(infeas, float(y[k]))
        elif sense == ">=":
            infeas = max(infeas, float(-y[k]))
    return abs(float(c @ x) - float(lp.rhs @ y)) + infeas


def solve_lp(lp: LinearProgram, tol: float = TOL, max_iter: int = 100_000,
             backend: str = "simplex") -> LpResult:
    """Solve lp, raising Infeasible / Unbounded / IterationLimit on failure.

    The result carries the primal residual and the duality gap of the
    final basis, which together certify optimality.  ``backend="highs"``
    routes through scipy's HiGHS instead of the embedded simplex; it is
    kept for cross-checking only.
    """
    if backend == "simplex":
        x, y, it = _simplex(lp, tol, max_iter)
    elif backend == "highs":
        from scipy.optimize import linprog

        sign = -1.0 if lp.maximize else 1.0
        ub = [k for k, s in enumerate(lp.senses) if s == "<="]
        lb = [k for k, s in enumerate(lp.senses) if s == ">="]
        eq = [k for k, s in enumerate(lp.senses) if s == "="]
        A_ub = np.vstack([lp.A[ub], -lp.A[lb]]) if ub or lb else None
        b_ub = np.concatenate([lp.rhs[ub], -lp.rhs[lb]]) if ub or lb else None
        res = linprog(sign * lp.c, A_ub=A_ub, b_ub=b_ub,
                      A_eq=lp.A[eq] if eq else None, b_eq=lp.rhs[eq] if eq else None,
                      bounds=(0, None), method="highs")
        if res.status == 2:
            raise Infeasible(res.message)
        if res.status == 3:
            raise Unbounded(res.message)
        if res.status != 0:
            raise IterationLimit(res.message)
        x, it = np.maximum(res.x, 0.0), int(res.nit)
        y = np.zeros(len(lp.senses))
        if ub or lb:
            marg = res.ineqlin.marginals
            y[ub] = marg[: len(ub)]
            y[lb] = -marg[len(ub):]
        if eq:
            y[eq] = res.eqlin.marginals
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return LpResult(x, float(lp.c @ x), it, lp.residual(x), _duality_gap(lp, x, y))


@dataclass
class LpSolution:
    x: Dict[Tuple[int, int], float]
    s_star: float
    objective: float
    variant: str
    residual: float = 0.0

    def matrix(self, n_agents: int, n_types: int) -> np.ndarray:
        out = np.zeros((n_agents, n_types))
        for (i, j), v in self.x.items():
            out[i, j] = v
        return out

    def column_sums(self, n_types: int) -> np.ndarray:
        out = np.zeros(n_types)
        for (_, j), v in self.x.items():
            out[j] += v
        return out

    def row_sums(self, n_agents: int) -> np.ndarray:
        out = np.zeros(n_agents)
        for (i, _), v in self.x.items():
            out[i] += v
        return out


def _benchmark_lp(instance: Instance, variant: str) -> Tuple[LinearProgram, List[Tuple[int, int]]]:
    edges = instance.edges
    n_var = len(edges) + 1
    s = len(edges)
    rows: List[np.ndarray] = []
    senses: List[str] = []
    rhs: List[float] = []
    at_agent: Dict[int, List[int]] = {i: [] for i in range(instance.num_agents)}
    at_type: Dict[int, List[int]] = {j: [] for j in range(instance.num_types)}
    for e, (i, j) in enumerate(edges):
        at_agent[i].append(e)
        at_type[j].append(e)

    for i in range(instance.num_agents):
        row = np.zeros(n_var)
        row[at_agent[i]] = 1.0
        rows.append(row)
        senses.append("<=")
        rhs.append(float(instance.agents[i].capacity))

    rates = instance.rates
    if variant == HOMOGENEOUS:
        for j in range(instance.num_types):
            row = np.zeros(n_var)
            row[at_type[j]] = -1.0
            row[s] = rates[j]
            rows.append(row)
            senses.append("<=")
            rhs.append(0.0)
    elif variant == GROUPED:
        for g in instance.groups:
            row = np.zeros(n_var)
            for j in g.members:
                row[at_type[j]] = -1.0
            row[s] = float(sum(rates[j] for j in g.members))
            rows.append(row)
            senses.append("<=")
            rhs.append(0.0)
        for j in range(instance.num_types):
            row = np.zeros(n_var)
            row[at_type[j]] = 1.0
            rows.append(row)
            senses.append("<=")
            rhs.append(float(rates[j]))
    else:
        raise ValueError(f"unknown LP variant {variant!r}")

    c = np.zeros(n_var)
    c[s] = 1.0
    return LinearProgram(c, np.array(rows), senses, np.array(rhs)), edges


def _solve_benchmark(instance: Instance, variant: str, tol: float, backend: str) -> LpSolution:
    lp, edges = _benchmark_lp(instance, variant)
    res = solve_lp(lp, tol=tol, backend=backend)
    s_star = float(res.values[-1])
    if abs(s_star) < tol:
        s_star = 0.0
    x = {e: float(v) for e, v in zip(edges, res.values[:-1])}
    return LpSolution(x, s_star, res.objective, variant, res.residual)


def solve_homogeneous(instance: Instance, tol: float = TOL, backend: str = "simplex") -> LpSolution:
    """max s  s.t.  row sums <= b_i,  column sums >= s * rate_j; then normalize columns.

    After solving, each column is rescaled so its sum is exactly
    s* * rate_j (scaling down preserves the capacity rows).  When s* = 0
    the solution is returned unnormalized.
    """
    sol = _solve_benchmark(instance, HOMOGENEOUS, tol, backend)
    if sol.s_star > 0:
        cols = sol.column_sums(instance.num_types)
        rates = instance.rates
        for j in range(instance.num_types):
            if cols[j] <= 0:
                raise AssertionError(f"type {j} has zero LP service with s*={sol.s_star}")
        scale = sol.s_star * rates / cols
        sol.x = {(i, j): v * scale[j] for (i, j), v in sol.x.items()}
    return sol


def solve_grouped(instance: Instance, tol: float = TOL, backend: str = "simplex") -> LpSolution:
    """Group-level LP with the added per-type cap: column sums <= rate_j."""
    return _solve_benchmark(instance, GROUPED, tol, backend)


def solve_benchmark(instance: Instance, variant: Optional[str] = None, **kw) -> LpSolution:
    if variant is None:
        variant = HOMOGENEOUS if instance.is_homogeneous() else GROUPED
    if variant == HOMOGENEOUS:
        return solve_homogeneous(instance, **kw)
    return solve_grouped(instance, **kw)


def opt_upper_bound(sol: LpSolution) -> float:
    """Upper bound on the clairvoyant long-run fairness implied by sol."""
    if sol.variant == HOMOGENEOUS:
        return min(sol.s_star, 1.0)
    return sol.s_star


def check_solution(sol: LpSolution, instance: Instance, tol: float = 1e-8) -> List[str]:
    """Return the list of violated LpSolution invariants (empty when valid)."""
    problems = []
    rows = sol.row_sums(instance.num_agents)
    cols = sol.column_sums(instance.num_types)
    if any(v < -tol for v in sol.x.values()):
        problems.append("negative x")
    over = np.nonzero(rows > instance.capacities + tol)[0]
    if over.size:
        problems.append(f"capacity exceeded at agents {over.tolist()}")
    rates = instance.rates
    if sol.variant == HOMOGENEOUS:
        short = np.nonzero(cols < sol.s_star * rates - tol)[0]
        if short.size:
            problems.append(f"demand scale not met at types {short.tolist()}")
    else:
        for g in instance.groups:
            members = sorted(g.members)
            if cols[members].sum() < sol.s_star * rates[members].sum() - tol:
                problems.append(f"group {g.id} below s*")
        over = np.nonzero(cols > rates + tol)[0]
        if over.size:
            problems.append(f"per-type cap exceeded at types {over.tolist()}")
    return problems

"""Online matching policies behind one sequential decision contract.

A policy object holds its configuration.  ``init`` builds a
``PolicyState`` for a batch of B independent runs: per-run remaining
capacities plus whatever the policy fixes up front (priority orders,
reserved copies, a rejection schedule).  Decisions are made one arrival at
a time by a small compiled rule per policy kind; ``decide`` calls the rule
for a single event and ``run_batch`` loops it over whole arrival
sequences.  Each choice is checked against the graph
and the remaining capacity before it is committed.

A policy draws randomness only from the generator handed to ``init``.
Per-arrival coins are pre-drawn from it, so arrival streams and policy
coins never share a source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
from numba import njit

from .instance import Instance
from .lp_benchmark import GROUPED, HOMOGENEOUS, LpSolution, solve_grouped, solve_homogeneous
from .stochastic import (
    ArrivalEvent,
    RngLike,
    alias_draw,
    alias_tables,
    as_generator,
    kernel,
    dependent_round_bipartite_batch,
    dependent_round_vector,
)
from . import theory

SOL_TOL = 1e-7
REJECT = -1

# policy kinds understood by the compiled decision function
K_FCFS, K_GREEDY, K_RANK, K_SAMPLE, K_MGS, K_RESERVE, K_PROB, K_THRESH, K_NTH, K_REJECT = range(10)


class PolicyViolation(AssertionError):
    """A policy tried to serve with a non-neighbor or an exhausted agent."""


class PolicyInitError(ValueError):
    pass


@dataclass(frozen=True)
class Decision:
    agent: Optional[int] = None

    @property
    def serve(self) -> bool:
        return self.agent is not None


@dataclass
class PolicyState:
    remaining: np.ndarray  # (B, I) remaining capacity
    arrivals: np.ndarray  # (B,) arrivals seen so far
    gen: np.random.Generator
    data: Dict[str, Any] = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return self.remaining.shape[0]


# compiled core


@kernel
def _cdf_index(cdf, t, u):
    # number of entries of cdf[t] that are <= u; I means "past the end" (reject slot)
    lo, hi = 0, cdf.shape[1]
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[t, mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo


# One small compiled rule per policy kind.  All share the signature
# (b, t, time, seen, u1, u2, remaining, tabs) where b is the run, t the
# arriving type, seen the arrivals before this one, u1/u2 the arrival's
# coins and tabs the tuple built by Policy._tables.  -1 means reject.
TAB_NBR, TAB_DEG, TAB_CDF, TAB_PROBS, TAB_RANK, TAB_RES, TAB_Y, TAB_F, TAB_I = range(9)
TAB_ACOUNT, TAB_ACUT, TAB_AMAIN, TAB_AALT = range(9, 13)


@kernel
def _fcfs(b, t, time, seen, u1, u2, remaining, tabs):
    return 0 if remaining[b, 0] > 0 else -1


@kernel
def _greedy(b, t, time, seen, u1, u2, remaining, tabs):
    nbr, deg = tabs[TAB_NBR], tabs[TAB_DEG]
    best, m = 0, 0
    for d in range(deg[t]):
        c = remaining[b, nbr[t, d]]
        if c > best:
            best, m = c, 1
        elif c == best and c > 0:
            m += 1
    if best == 0:
        return -1
    pick = min(int(u1 * m), m - 1)
    for d in range(deg[t]):
        i = nbr[t, d]
        if remaining[b, i] == best:
            if pick == 0:
                return i
            pick -= 1
    return -1


@kernel
def _threshold(b, t, time, seen, u1, u2, remaining, tabs):
    if t == tabs[TAB_I][0] and time < tabs[TAB_F][0]:
        return -1
    return _greedy(b, t, time, seen, u1, u2, remaining, tabs)


@kernel
def _rank(b, t, time, seen, u1, u2, remaining, tabs):
    nbr, deg, rank = tabs[TAB_NBR], tabs[TAB_DEG], tabs[TAB_RANK]
    out, top = -1, remaining.shape[1] + 1
    for d in range(deg[t]):
        i = nbr[t, d]
        if remaining[b, i] > 0 and rank[b, i] < top:
            out, top = i, rank[b, i]
    return out


@kernel
def _sample(b, t, time, seen, u1, u2, remaining, tabs):
    i = alias_draw(tabs[TAB_ACOUNT], tabs[TAB_ACUT], tabs[TAB_AMAIN], tabs[TAB_AALT], t, u1)
    if i < remaining.shape[1] and remaining[b, i] > 0:
        return i
    return -1


@kernel
def _mgs(b, t, time, seen, u1, u2, remaining, tabs):
    cdf, probs = tabs[TAB_CDF], tabs[TAB_PROBS]
    I = remaining.shape[1]
    c1 = _cdf_index(cdf, t, u1)
    if c1 >= I:
        return -1
    if remaining[b, c1] > 0:
        return c1
    p1 = probs[t, c1]
    rest = 1.0 - p1
    if rest <= 1e-12:
        return -1
    # second candidate: same law conditioned on not being c1
    v = u2 * rest
    if v >= cdf[t, c1] - p1:
        v += p1
    c2 = _cdf_index(cdf, t, min(v, 1.0))
    if c2 < I and remaining[b, c2] > 0:
        return c2
    return -1


@kernel
def _reserve(b, t, time, seen, u1, u2, remaining, tabs):
    reserved = tabs[TAB_RES]
    for i in range(remaining.shape[1]):
        if reserved[b, t, i] > 0 and remaining[b, i] > 0:
            reserved[b, t, i] -= 1
            return i
    return -1


@kernel
def _prob_reject(b, t, time, seen, u1, u2, remaining, tabs):
    if seen < tabs[TAB_I][1] and tabs[TAB_Y][b, seen] != 0 and remaining[b, 0] > 0:
        return 0
    return -1


@kernel
def _nth(b, t, time, seen, u1, u2, remaining, tabs):
    nbr, deg = tabs[TAB_NBR], tabs[TAB_DEG]
    if seen == tabs[TAB_I][2] - 1:
        for d in range(deg[t]):
            if remaining[b, nbr[t, d]] > 0:
                return nbr[t, d]
    return -1


@kernel
def _reject(b, t, time, seen, u1, u2, remaining, tabs):
    return -1


def _make_runner(choose):
    @njit(_nrt=False)
    def run(types, times, has_times, U, nu, remaining, arrivals, served, elig, tabs):
        """Feed whole arrival rows; returns the first offending row, or -1."""
        B, W = types.shape
        for b in range(B):
            for k in range(W):
                t = types[b, k]
                if t < 0:
                    break
                time = times[b, k] if has_times else 0.0
                u1 = U[b, k, 0] if nu > 0 else 0.0
                u2 = U[b, k, 1] if nu > 1 else 0.0
                a = choose(b, t, time, arrivals[b], u1, u2, remaining, tabs)
                if a >= 0:
                    if not elig[t, a] or remaining[b, a] <= 0:
                        return b
                    remaining[b, a] -= 1
                    served[b, t] += 1
                arrivals[b] += 1
        return -1

    return run


_RULES = {
    K_FCFS: _fcfs, K_GREEDY: _greedy, K_RANK: _rank, K_SAMPLE: _sample, K_MGS: _mgs,
    K_RESERVE: _reserve, K_PROB: _prob_reject, K_THRESH: _threshold, K_NTH: _nth,
    K_REJECT: _reject,
}
_RUNNERS: Dict[int, Any] = {}


def _runner(kind: int):
    if kind not in _RUNNERS:
        _RUNNERS[kind] = _make_runner(_RULES[kind])
    return _RUNNERS[kind]


_EMPTY2 = np.zeros((1, 1))
_EMPTY_U = np.zeros((1, 1, 1))
_EMPTY_I2 = np.zeros((1, 1), dtype=np.int64)
_EMPTY_R = np.zeros((1, 1, 1), dtype=np.int32)
_EMPTY_Y = np.zeros((1, 1), dtype=np.uint8)
_EMPTY_A = (np.ones(1, dtype=np.int64), np.ones((1, 1)), _EMPTY_I2, _EMPTY_I2)


class Policy:
    name = "policy"
    kind = K_REJECT
    non_rejecting = False
    needs_times = False
    coins = 0  # uniforms consumed per arrival

    def init(self, instance: Instance, rng: RngLike, batch: int = 1) -> PolicyState:
        self.instance = instance
        self._elig = np.ascontiguousarray(instance.adjacency.T)  # (J, I)
        deg = self._elig.sum(axis=1).astype(np.int64)
        nbr = np.full((instance.num_types, max(1, int(deg.max(initial=0)))), -1, dtype=np.int64)
        for j in range(instance.num_types):
            ids = np.flatnonzero(self._elig[j])
            nbr[j, : ids.size] = ids
        self._nbr, self._deg = nbr, deg
        self._cdf, self._probs = _EMPTY2, _EMPTY2
        self._alias = _EMPTY_A
        self._fpar = np.zeros(1)
        self._ipar = np.zeros(3, dtype=np.int64)
        gen = as_generator(rng)
        remaining = np.tile(instance.capacities.astype(np.int64), (batch, 1))
        state = PolicyState(remaining, np.zeros(batch, dtype=np.int64), gen)
        self._setup(state)
        return state

    def _setup(self, state: PolicyState) -> None:
        pass

    def row_cells(self, instance: Instance) -> int:
        """Array cells of per-run state, used to size simulation chunks."""
        return 2 * instance.num_agents

    def _tables(self, state):
        d = state.data
        c = np.ascontiguousarray
        return (self._nbr, self._deg, c(self._cdf), c(self._probs),
                d.get("rank", _EMPTY_I2), d.get("reserved", _EMPTY_R), d.get("Y", _EMPTY_Y),
                self._fpar, self._ipar) + tuple(c(a) for a in self._alias)

    def run_batch(self, state: PolicyState, types: np.ndarray, times: Optional[np.ndarray]
                  ) -> np.ndarray:
        """Run every row of a padded (B, W) arrival matrix; returns served counts (B, J)."""
        B, W = types.shape
        if B != state.batch:
            raise ValueError("batch size does not match the policy state")
        if self.needs_times and times is None:
            raise ValueError(f"{self.name} needs arrival times")
        U = state.gen.random((B, W, self.coins)) if self.coins else _EMPTY_U
        served = np.zeros((B, self.instance.num_types), dtype=np.int64)
        run = _runner(self.kind)
        bad = run(np.ascontiguousarray(types, dtype=np.int64),
                  times if times is not None else _EMPTY2, times is not None,
                  U, self.coins, state.remaining, state.arrivals, served, self._elig,
                  self._tables(state))
        if bad >= 0:
            raise PolicyViolation(f"{self.name}: infeasible serve in run {bad}")
        return served

    def decide(self, state: PolicyState, event: ArrivalEvent, row: int = 0) -> Decision:
        t = int(event.type_id)
        u = state.gen.random(2) if self.coins else (0.0, 0.0)
        a = _RULES[self.kind](row, t, float(event.time), state.arrivals[row], u[0], u[1],
                              state.remaining, self._tables(state))
        if a >= 0:
            if not self._elig[t, a] or state.remaining[row, a] <= 0:
                raise PolicyViolation(f"{self.name}: infeasible serve of type {t} by agent {a}")
            state.remaining[row, a] -= 1
        state.arrivals[row] += 1
        return Decision(int(a)) if a >= 0 else Decision()


def _single_agent_check(instance: Instance, name: str) -> None:
    if instance.num_agents != 1 or not instance.adjacency.all():
        raise PolicyInitError(f"{name} needs one agent adjacent to every type")


class FCFS(Policy):
    """Single agent: serve while capacity lasts."""

    name, kind, non_rejecting = "fcfs", K_FCFS, True

    def _setup(self, state):
        _single_agent_check(self.instance, self.name)


class Greedy(Policy):
    """Serve the eligible agent with the most remaining capacity, ties broken uniformly."""

    name, kind, non_rejecting, coins = "greedy", K_GREEDY, True, 1


class Ranking(Policy):
    """One uniform priority order over agents per run."""

    name, kind, non_rejecting = "rank", K_RANK, True

    def _setup(self, state):
        B, I = state.remaining.shape
        state.data["rank"] = np.argsort(state.gen.random((B, I)), axis=1).argsort(axis=1)


def _grouped_columns_ok(sol: LpSolution, inst: Instance, name: str) -> np.ndarray:
    x = sol.matrix(inst.num_agents, inst.num_types)
    if (x.sum(axis=0) > inst.rates * (1 + SOL_TOL) + SOL_TOL).any():
        raise PolicyInitError(f"{name} needs column sums at most lambda_j")
    return x


class NadapS(Policy):
    """Sample i with probability x*_ij / (s* lambda_j); serve iff i has capacity."""

    name, kind, coins = "nadap-s", K_SAMPLE, 1

    def __init__(self, sol: LpSolution):
        self.sol = sol

    def _setup(self, state):
        inst, sol = self.instance, self.sol
        if sol.s_star <= 0:
            raise PolicyInitError("nadap-s needs s* > 0")
        x = sol.matrix(inst.num_agents, inst.num_types)
        target = sol.s_star * inst.rates
        if np.abs(x.sum(axis=0) - target).max() > SOL_TOL * max(1.0, target.max()):
            raise PolicyInitError("nadap-s needs a column-normalized solution")
        p = x.T / x.sum(axis=0)[:, None]
        cdf = np.cumsum(p, axis=1)
        # the draw always names an agent: snap the tail so float error cannot reach the reject slot
        cdf[cdf >= 1.0 - 1e-12] = 1.0
        self._probs, self._cdf = p, cdf
        self._alias = alias_tables(p, allow_reject=False)


class Nadap(Policy):
    """Sample i with probability x*_ij / lambda_j, reject with the leftover mass."""

    name, kind, coins = "nadap", K_SAMPLE, 1

    def __init__(self, sol: LpSolution):
        self.sol = sol

    def _setup(self, state):
        inst = self.instance
        x = _grouped_columns_ok(self.sol, inst, self.name)
        self._probs = np.minimum(x.T / inst.rates[:, None], 1.0)
        self._cdf = np.cumsum(self._probs, axis=1)
        self._alias = alias_tables(self._probs)


class MGS(Nadap):
    """Two candidates from the nadap table; the second is redrawn to differ from the first."""

    name, kind, coins = "mgs", K_MGS, 2


class Reserve(Policy):
    """Split agents into unit copies, round the assignment once, serve only from reserved copies."""

    name, kind = "reserve", K_RESERVE

    def __init__(self, sol: LpSolution):
        self.sol = sol

    def row_cells(self, instance):
        return instance.num_agents * (instance.num_types + 2)

    def split_copies(self):
        """Unit-copy edge map {(copy, j): value} and the owner agent of each copy.

        Each agent's row is poured into copies in type order, filling a copy
        to 1 before opening the next one.
        """
        inst = self.instance
        x = self.sol.matrix(inst.num_agents, inst.num_types)
        edges: Dict[tuple, float] = {}
        load: Dict[int, float] = {}
        owner = []
        for i in range(inst.num_agents):
            b = int(inst.capacities[i])
            base = len(owner)
            owner.extend([i] * b)
            k, room = 0, 1.0
            for j in range(inst.num_types):
                v = float(x[i, j])
                while v > 1e-12:
                    if k >= b:
                        if v > 1e-7:
                            raise PolicyInitError(f"row {i} exceeds capacity {b}")
                        break
                    put = min(v, room)
                    edges[(base + k, j)] = edges.get((base + k, j), 0.0) + put
                    load[base + k] = load.get(base + k, 0.0) + put
                    v -= put
                    room -= put
                    if room <= 1e-12:
                        k, room = k + 1, 1.0
        assert all(v <= 1 + 1e-9 for v in load.values()), "copy overfilled"
        return edges, np.array(owner, dtype=np.int64)

    def _setup(self, state):
        inst = self.instance
        _grouped_columns_ok(self.sol, inst, self.name)
        edges, owner = self.split_copies()
        B, I, J = state.batch, inst.num_agents, inst.num_types
        reserved = np.zeros((B, J, I), dtype=np.int32)
        frac = {}
        for (c, j), v in sorted(edges.items()):
            if v >= 1 - 1e-9:
                reserved[:, j, owner[c]] += 1
            elif v > 1e-9:
                frac[(c, j)] = min(v, 1.0)
        if frac:
            keys, Y = dependent_round_bipartite_batch(frac, state.gen, B)
            for e, (c, j) in enumerate(keys):
                reserved[:, j, owner[c]] += Y[:, e]
        state.data["reserved"] = reserved


class ProbReject(Policy):
    """Single agent: accept the k-th overall arrival iff k <= K and the pre-rounded Y_k is 1."""

    name, kind = "prob-reject", K_PROB

    def __init__(self, b: Optional[float] = None, Lambda: Optional[float] = None,
                 epsilon: Optional[float] = None):
        self.b, self.Lambda, self.epsilon = b, Lambda, epsilon

    def _setup(self, state):
        inst = self.instance
        _single_agent_check(inst, self.name)
        b = float(inst.capacities[0]) if self.b is None else float(self.b)
        Lam = inst.total_rate if self.Lambda is None else float(self.Lambda)
        eps = theory.prob_reject_epsilon(b, Lam) if self.epsilon is None else float(self.epsilon)
        # the small guard keeps e.g. 100 * 1.2 from flooring to 119
        K = int(math.floor(Lam * (1.0 + eps) + 1e-9))
        if K < 1:
            raise PolicyInitError("K = floor(Lambda (1 + eps)) must be at least 1")
        self.K = K
        self._ipar[1] = K
        frac = np.full(K, min(1.0, b / K))
        state.data["Y"] = dependent_round_vector(frac, state.gen, size=state.batch).astype(np.uint8)


class Threshold(Policy):
    """Central star: turn the common type away before time tau, then act greedily."""

    name, kind, needs_times, coins = "threshold", K_THRESH, True, 1

    def __init__(self, tau: float, common_type: int = 0):
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        self.tau, self.common_type = float(tau), int(common_type)

    def _setup(self, state):
        adj = self.instance.adjacency
        c = self.common_type
        others = [j for j in range(self.instance.num_types) if j != c]
        if not adj[:, c].all() or any(adj[:, j].sum() != 1 for j in others):
            raise PolicyInitError("threshold needs a central-star instance")
        self._fpar[0] = self.tau
        self._ipar[0] = c


class NthArrival(Policy):
    """Serve only the k-th overall arrival (1-based)."""

    name, kind = "nth-arrival", K_NTH

    def __init__(self, k: int):
        if int(k) < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)

    def _setup(self, state):
        self._ipar[2] = self.k


class AlwaysReject(Policy):
    name, kind = "reject", K_REJECT


POLICY_NAMES = ("fcfs", "nadap-s", "nadap", "reserve", "prob-reject", "greedy", "rank", "mgs",
                "threshold", "nth-arrival", "reject")


def make_policy(name: str, instance: Optional[Instance] = None, **params) -> Policy:
    """Build a policy by CLI name; LP-guided ones solve their LP on ``instance`` unless ``sol`` is given."""
    name = name.lower()
    sol = params.pop("sol", None)
    if name in ("nadap-s", "nadap", "reserve", "mgs") and sol is None:
        if instance is None:
            raise ValueError(f"{name} needs an instance or a solution")
        sol = solve_homogeneous(instance) if name == "nadap-s" else solve_grouped(instance)
    if name == "nadap-s":
        if sol.variant != HOMOGENEOUS:
            raise PolicyInitError("nadap-s needs the homogeneous LP solution")
        return NadapS(sol)
    if name == "mgs" and sol.variant != GROUPED:
        raise PolicyInitError("mgs needs the grouped LP solution")
    if name in ("nadap", "reserve", "mgs"):
        return {"nadap": Nadap, "reserve": Reserve, "mgs": MGS}[name](sol)
    if name == "prob-reject":
        return ProbReject(params.get("b"), params.get("Lambda"), params.get("epsilon"))
    if name == "threshold":
        return Threshold(float(params.get("tau", 2 - math.sqrt(3))), int(params.get("common_type", 0)))
    if name == "nth-arrival":
        return NthArrival(int(params["k"]))
    simple = {"fcfs": FCFS, "greedy": Greedy, "rank": Ranking, "reject": AlwaysReject}
    if name in simple:
        return simple[name]()
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")

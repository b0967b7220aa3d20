"""Problem instances: offline agents, online types, protected groups.

An instance is immutable once built.  Dense numpy views (capacities,
rates, adjacency, group membership) are computed lazily and cached, so an
instance can be shared freely between simulation workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

PathLike = Union[str, Path]


@dataclass(frozen=True)
class OfflineAgent:
    id: int
    capacity: int
    neighbors: frozenset = frozenset()


@dataclass(frozen=True)
class OnlineType:
    id: int
    rate: float
    neighbors: frozenset = frozenset()


@dataclass(frozen=True)
class Group:
    id: int
    members: frozenset


@dataclass
class ValidationReport:
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True)
class Instance:
    agents: Tuple[OfflineAgent, ...]
    types: Tuple[OnlineType, ...]
    groups: Tuple[Group, ...]
    label: str = ""
    metadata: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @property
    def num_types(self) -> int:
        return len(self.types)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @cached_property
    def capacities(self) -> np.ndarray:
        return np.array([a.capacity for a in self.agents], dtype=np.int64)

    @cached_property
    def rates(self) -> np.ndarray:
        return np.array([t.rate for t in self.types], dtype=float)

    @property
    def total_rate(self) -> float:
        return math.fsum(t.rate for t in self.types)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Boolean (agents x types) matrix, True where agent i may serve type j."""
        adj = np.zeros((self.num_agents, self.num_types), dtype=bool)
        for t in self.types:
            for i in t.neighbors:
                adj[i, t.id] = True
        adj.setflags(write=False)
        return adj

    @cached_property
    def group_matrix(self) -> np.ndarray:
        """Boolean (groups x types) membership matrix."""
        m = np.zeros((self.num_groups, self.num_types), dtype=bool)
        for g in self.groups:
            m[g.id, sorted(g.members)] = True
        m.setflags(write=False)
        return m

    @cached_property
    def group_rates(self) -> np.ndarray:
        return self.group_matrix.astype(float) @ self.rates

    @property
    def edges(self) -> List[Tuple[int, int]]:
        """All (agent, type) pairs, ordered by agent then type."""
        return [(a.id, j) for a in self.agents for j in sorted(a.neighbors)]

    def is_homogeneous(self) -> bool:
        """True when every group is a single type and no type is repeated."""
        seen = set()
        for g in self.groups:
            if len(g.members) != 1:
                return False
            (j,) = tuple(g.members)
            if j in seen:
                return False
            seen.add(j)
        return True

    def with_capacities(self, capacities: Sequence[int], label: Optional[str] = None) -> "Instance":
        agents = tuple(
            OfflineAgent(a.id, int(c), a.neighbors) for a, c in zip(self.agents, capacities)
        )
        return Instance(agents, self.types, self.groups, self.label if label is None else label,
                        dict(self.metadata))

    def with_rates(self, rates: Sequence[float], label: Optional[str] = None) -> "Instance":
        types = tuple(OnlineType(t.id, float(r), t.neighbors) for t, r in zip(self.types, rates))
        return Instance(self.agents, types, self.groups, self.label if label is None else label,
                        dict(self.metadata))

    # serialization

    def to_dict(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "agents": [
                {"id": a.id, "capacity": a.capacity, "neighbors": sorted(a.neighbors)}
                for a in self.agents
            ],
            "types": [
                {"id": t.id, "rate": t.rate, "neighbors": sorted(t.neighbors)} for t in self.types
            ],
            "groups": [{"id": g.id, "members": sorted(g.members)} for g in self.groups],
            "label": self.label,
        }
        if self.metadata:
            doc["metadata"] = dict(self.metadata)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Instance":
        agents = tuple(
            OfflineAgent(int(a["id"]), int(a["capacity"]), frozenset(int(x) for x in a["neighbors"]))
            for a in doc["agents"]
        )
        types = tuple(
            OnlineType(int(t["id"]), float(t["rate"]), frozenset(int(x) for x in t["neighbors"]))
            for t in doc["types"]
        )
        groups = tuple(
            Group(int(g["id"]), frozenset(int(x) for x in g["members"])) for g in doc["groups"]
        )
        return cls(agents, types, groups, str(doc.get("label", "")), dict(doc.get("metadata", {})))

    def save(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: PathLike) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def validate(instance: Instance) -> ValidationReport:
    """Check every structural invariant; never raises."""
    report = ValidationReport()
    err, warn = report.errors.append, report.warnings.append
    n_agents, n_types = instance.num_agents, instance.num_types

    for pos, a in enumerate(instance.agents):
        if a.id != pos:
            err(f"agent at position {pos} has id {a.id}")
        if int(a.capacity) != a.capacity or a.capacity < 1:
            err(f"agent {a.id}: capacity must be an integer >= 1, got {a.capacity}")
        for j in a.neighbors:
            if not 0 <= j < n_types:
                err(f"agent {a.id}: neighbor type {j} out of range")
        if not a.neighbors:
            warn(f"agent {a.id} has no neighbors and is unusable")

    for pos, t in enumerate(instance.types):
        if t.id != pos:
            err(f"type at position {pos} has id {t.id}")
        if not (math.isfinite(t.rate) and t.rate > 0):
            err(f"type {t.id}: nonpositive rate {t.rate}")
        for i in t.neighbors:
            if not 0 <= i < n_agents:
                err(f"type {t.id}: neighbor agent {i} out of range")
        if not t.neighbors:
            warn(f"type {t.id} has no neighbors; its fairness is structurally 0")

    # adjacency symmetry
    for a in instance.agents:
        for j in a.neighbors:
            if 0 <= j < n_types and a.id not in instance.types[j].neighbors:
                err(f"asymmetric edge: agent {a.id} lists type {j} but not vice versa")
    for t in instance.types:
        for i in t.neighbors:
            if 0 <= i < n_agents and t.id not in instance.agents[i].neighbors:
                err(f"asymmetric edge: type {t.id} lists agent {i} but not vice versa")

    covered = set()
    for pos, g in enumerate(instance.groups):
        if g.id != pos:
            err(f"group at position {pos} has id {g.id}")
        if not g.members:
            err(f"group {g.id} is empty")
        for j in g.members:
            if not 0 <= j < n_types:
                err(f"group {g.id}: member type {j} out of range")
        covered.update(g.members)
    for t in instance.types:
        if t.id not in covered:
            err(f"uncovered type {t.id}: not in any group")

    if n_types == 0:
        err("instance has no online types")
    elif not instance.total_rate > 0:
        err("total arrival rate must be positive")
    return report


def build(
    capacities: Sequence[int],
    rates: Sequence[float],
    edges: Iterable[Tuple[int, int]],
    groups: Optional[Sequence[Iterable[int]]] = None,
    label: str = "",
    metadata: Optional[Mapping[str, Any]] = None,
) -> Instance:
    """Assemble an instance from an edge list; neighbor sets come out symmetric.

    ``groups=None`` gives homogeneous groups (one per type).
    """
    agent_nbrs: List[set] = [set() for _ in capacities]
    type_nbrs: List[set] = [set() for _ in rates]
    for i, j in edges:
        agent_nbrs[i].add(j)
        type_nbrs[j].add(i)
    agents = tuple(OfflineAgent(i, int(b), frozenset(agent_nbrs[i])) for i, b in enumerate(capacities))
    types = tuple(OnlineType(j, float(r), frozenset(type_nbrs[j])) for j, r in enumerate(rates))
    if groups is None:
        groups = [[j] for j in range(len(rates))]
    grps = tuple(Group(k, frozenset(int(x) for x in members)) for k, members in enumerate(groups))
    return Instance(agents, types, grps, label, dict(metadata or {}))


def central_star(n: int) -> Instance:
    """n rare types (rate 1/n) each served only by its own unit agent, plus a
    common type (rate n-1) that every agent can serve.

    Type 0 is the common type; rare type t (1..n) belongs to agent t-1.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"central_star needs n >= 2, got {n}")
    n = int(n)
    rates = [n - 1.0] + [1.0 / n] * n
    edges = [(t - 1, t) for t in range(1, n + 1)] + [(i, 0) for i in range(n)]
    return build([1] * n, rates, edges, label=f"central_star(n={n})")


def pool_supply(n: int) -> Instance:
    """One type of rate n and n unit-capacity agents that can all serve it."""
    if int(n) != n or n < 1:
        raise ValueError(f"pool_supply needs n >= 1, got {n}")
    n = int(n)
    return build([1] * n, [float(n)], [(i, 0) for i in range(n)], label=f"pool_supply(n={n})")


def single_agent(
    b: int, rates: Sequence[float], groups: Optional[Sequence[Iterable[int]]] = None
) -> Instance:
    """A single agent of capacity b adjacent to every type."""
    if not rates:
        raise ValueError("single_agent needs at least one rate")
    if int(b) != b or b < 1:
        raise ValueError(f"capacity must be a positive integer, got {b}")
    groups = list(groups) if groups else None
    rate_str = ",".join(f"{r:g}" for r in rates)
    return build(
        [int(b)], list(rates), [(0, j) for j in range(len(rates))], groups,
        label=f"single_agent(b={int(b)},rates=[{rate_str}])",
    )


def scale_to_target_s(
    instance: Instance, target_s: float, tol: float = 1e-9, max_iter: int = 200
) -> Tuple[Instance, float]:
    """Rescale capacities by a common factor so the homogeneous LP scale is near target_s.

    Capacities become max(1, round(alpha * b_i)) (round half up).  Because
    capacities stay integral the achievable s* form a step function of
    alpha; the step whose s* is closest to the target is returned together
    with the s* it actually achieves.
    """
    from .lp_benchmark import solve_homogeneous

    if target_s <= 0:
        raise ValueError("target_s must be positive")
    base = instance.capacities.astype(float)

    def caps(alpha: float) -> Tuple[int, ...]:
        return tuple(max(1, int(math.floor(alpha * b + 0.5))) for b in base)

    cache: Dict[Tuple[int, ...], float] = {}

    def s_of(c: Tuple[int, ...]) -> float:
        if c not in cache:
            cache[c] = solve_homogeneous(instance.with_capacities(c)).s_star
        return cache[c]

    current = s_of(tuple(int(b) for b in base))
    if abs(current - target_s) <= tol:
        return instance, current

    lo, hi = 2.0 ** -20, 2.0 ** 20
    if s_of(caps(lo)) > target_s + tol or s_of(caps(hi)) < target_s - tol:
        raise ValueError(
            f"cannot bracket target s*={target_s} with capacity scale in [2^-20, 2^20] "
            f"(range {s_of(caps(lo)):.6g}..{s_of(caps(hi)):.6g})"
        )
    # smallest alpha (up to float resolution) with s*(alpha) >= target
    for _ in range(max_iter):
        if hi - lo <= 1e-12 * hi:
            break
        mid = 0.5 * (lo + hi)
        if s_of(caps(mid)) >= target_s - tol:
            hi = mid
        else:
            lo = mid
    c_hi, c_lo = caps(hi), caps(lo)
    s_hi, s_lo = s_of(c_hi), s_of(c_lo)
    chosen, s_chosen = (c_hi, s_hi) if abs(s_hi - target_s) <= abs(target_s - s_lo) else (c_lo, s_lo)
    label = f"{instance.label}|s*={target_s:g}" if instance.label else f"s*={target_s:g}"
    return instance.with_capacities(chosen, label=label), s_chosen

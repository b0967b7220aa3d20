"""Reproducible randomness: arrival streams and dependent rounding.

Every random draw in the package goes through an ``RngStream``, a
(seed, stream_id) pair mapped onto numpy's counter-based Philox generator
via ``SeedSequence``.  Independent streams need no shared state, so trial
blocks can be simulated in any order and still reproduce bit-for-bit.

Arrivals are produced in batches: a batch holds B independent realizations
of the arrival process as padded (B, N) matrices, which is what the
vectorized simulator consumes.  The single-stream helpers are thin views on
a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit

EPS = 1e-9

# Compiled loops here and in ``policies`` never allocate, so they run without
# numba's reference counting; with it, every array handed to a helper is
# incref'd per call, which dominates the per-arrival cost.
kernel = njit(cache=True, _nrt=False)


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, k: int) -> "RngStream":
        """A stream derived from this one; distinct k give independent streams."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, k))
        return RngStream(int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1)), k)


RngLike = Union[RngStream, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if rng is None:
        raise ValueError("an RngStream or Generator is required")
    return RngStream(int(rng)).generator()


@dataclass(frozen=True)
class ArrivalEvent:
    time: float
    type_id: int


@dataclass(frozen=True)
class ArrivalStream:
    events: Tuple[ArrivalEvent, ...]
    counts: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.events)

    def __post_init__(self) -> None:
        times = [e.time for e in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("arrival events must be sorted by time")
        tally = [0] * len(self.counts)
        for e in self.events:
            tally[e.type_id] += 1
        if tuple(tally) != tuple(self.counts):
            raise ValueError("counts do not match events")


@dataclass
class ArrivalBatch:
    """B realizations padded to a common length N.

    types[b, k] is the type of the k-th arrival of realization b, or -1
    past its last arrival; times is +inf there.  ``times`` may be None when
    the consumer only needs the order.
    """

    types: np.ndarray
    times: Optional[np.ndarray]
    counts: np.ndarray

    @property
    def size(self) -> int:
        return self.types.shape[0]

    @property
    def length(self) -> int:
        return self.types.shape[1]

    def stream(self, b: int) -> ArrivalStream:
        n = int(self.counts[b].sum())
        times = self.times[b, :n] if self.times is not None else np.linspace(0, 1, n + 2)[1:-1]
        events = tuple(ArrivalEvent(float(t), int(j)) for t, j in zip(times, self.types[b, :n]))
        return ArrivalStream(events, tuple(int(c) for c in self.counts[b]))

    @classmethod
    def from_streams(cls, streams: Sequence[ArrivalStream]) -> "ArrivalBatch":
        n = max((len(s) for s in streams), default=0)
        types = np.full((len(streams), n), -1, dtype=np.int64)
        times = np.full((len(streams), n), np.inf)
        counts = np.array([s.counts for s in streams], dtype=np.int64).reshape(len(streams), -1)
        for b, s in enumerate(streams):
            types[b, : len(s)] = [e.type_id for e in s.events]
            times[b, : len(s)] = [e.time for e in s.events]
        return cls(types, times, counts)


def _sorted_uniform_times(totals: np.ndarray, width: int, gen: np.random.Generator) -> np.ndarray:
    """Sorted i.i.d. Uniform[0,1] times, totals[b] per row, padded with +inf."""
    times = gen.random((totals.size, width))
    times[np.arange(width)[None, :] >= totals[:, None]] = np.inf
    times.sort(axis=1)
    return times


def alias_tables(probs: np.ndarray, allow_reject: bool = True):
    """Vose alias tables for each row of a (J, I) probability matrix.

    Row j's outcomes are the agents with positive mass plus, when the row
    sums to less than 1 and ``allow_reject`` is set, a reject outcome coded
    as I; otherwise rows are treated as complete and renormalized.
    Returns (count, cut, main, alt): draw k = floor(u * count[j]), then
    take main[j, k] if the fractional part of u * count[j] is below
    cut[j, k], else alt[j, k].
    """
    J, I = probs.shape
    rows = []
    for j in range(J):
        out = [i for i in range(I) if probs[j, i] > 0]
        w = [float(probs[j, i]) for i in out]
        left = 1.0 - math.fsum(w)
        if not out and not allow_reject:
            raise ValueError(f"row {j} has no mass")
        if allow_reject and (left > 1e-12 or not out):
            out.append(I)
            w.append(max(left, 0.0) if out[:-1] else 1.0)
        tot = math.fsum(w)
        n = len(out)
        q = [x * n / tot for x in w]
        cut, alt = [1.0] * n, list(range(n))
        small = [k for k in range(n) if q[k] < 1.0]
        large = [k for k in range(n) if q[k] >= 1.0]
        while small and large:
            s_, l_ = small.pop(), large.pop()
            cut[s_], alt[s_] = q[s_], l_
            q[l_] -= 1.0 - q[s_]
            (small if q[l_] < 1.0 else large).append(l_)
        rows.append((out, cut, [out[a] for a in alt]))
    width = max(len(r[0]) for r in rows)
    count = np.array([len(r[0]) for r in rows], dtype=np.int64)
    cut = np.ones((J, width))
    main = np.full((J, width), I, dtype=np.int64)
    alt = np.full((J, width), I, dtype=np.int64)
    for j, (o, c, a) in enumerate(rows):
        main[j, : len(o)], cut[j, : len(o)], alt[j, : len(o)] = o, c, a
    return count, cut, main, alt


@kernel
def alias_draw(count, cut, main, alt, t, u):
    x = u * count[t]
    k = min(int(x), count[t] - 1)
    return main[t, k] if x - k < cut[t, k] else alt[t, k]


@kernel
def _fill_marks(totals, U, count, cut, main, alt, types, counts):
    for b in range(totals.size):
        for k in range(totals[b]):
            j = alias_draw(count, cut, main, alt, 0, U[b, k])
            types[b, k] = j
            counts[b, j] += 1


def sample_batch(rates: Sequence[float], size: int, rng: RngLike, with_times: bool = True
                 ) -> ArrivalBatch:
    """B independent realizations of the Poisson arrival process on [0,1].

    Each row draws its total N ~ Poisson(sum of rates) and then N i.i.d.
    type marks proportional to the rates, in arrival order.  By Poisson
    splitting the per-type counts are independent Poisson(rate_j) and,
    given the counts, every interleaving is equally likely, which is the
    same law as drawing counts first and uniform times second.  Times are
    sorted uniforms, independent of the marks.
    """
    gen = as_generator(rng)
    rates = np.asarray(rates, dtype=float)
    if (rates <= 0).any():
        raise ValueError("rates must be positive")
    J = rates.size
    totals = gen.poisson(float(rates.sum()), size=size).astype(np.int64)
    width = int(totals.max(initial=0))
    U = gen.random((size, width))
    count, cut, main, alt = alias_tables((rates / rates.sum())[None, :], allow_reject=False)
    types = np.full((size, width), -1, dtype=np.int64)
    counts = np.zeros((size, J), dtype=np.int64)
    _fill_marks(totals, U, count, cut, main, alt, types, counts)
    times = _sorted_uniform_times(totals, width, gen) if with_times else None
    return ArrivalBatch(types, times, counts)


def order_batch(counts: np.ndarray, rng: RngLike, with_times: bool = True) -> ArrivalBatch:
    """Fresh uniformly random orders (and times) for fixed per-type counts, one per row."""
    gen = as_generator(rng)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim == 1:
        counts = counts[None, :]
    if (counts < 0).any():
        raise ValueError("counts must be nonnegative")
    B, J = counts.shape
    totals = counts.sum(axis=1)
    width = int(totals.max(initial=0))
    # type j repeated counts[b, j] times, row by row, then scattered into the padded grid
    flat = np.repeat(np.tile(np.arange(J, dtype=np.int64), B), counts.ravel())
    row_of = np.repeat(np.arange(B), totals)
    starts = np.cumsum(totals) - totals
    col_of = np.arange(flat.size) - np.repeat(starts, totals)
    types = np.full((B, width), -1, dtype=np.int64)
    types[row_of, col_of] = flat
    keys = gen.random((B, width))
    keys[types < 0] = 2.0
    perm = np.argsort(keys, axis=1, kind="stable")
    types = np.take_along_axis(types, perm, axis=1)
    times = _sorted_uniform_times(totals, width, gen) if with_times else None
    return ArrivalBatch(types, times, counts.copy())


def sample_stream(instance, rng: RngLike) -> ArrivalStream:
    """One realization of the instance's arrival process."""
    return sample_batch(instance.rates, 1, rng).stream(0)


def resample_order(counts: Sequence[int], rng: RngLike) -> ArrivalStream:
    """Fresh uniform arrival times for a fixed count vector."""
    return order_batch(np.asarray(counts, dtype=np.int64)[None, :], rng).stream(0)


# dependent rounding


def _check_fractions(x: np.ndarray) -> np.ndarray:
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise ValueError("fractions must lie in [0, 1]")
    return np.clip(x, 0.0, 1.0)


def dependent_round_vector(fractions: Sequence[float], rng: RngLike,
                           size: Optional[int] = None) -> np.ndarray:
    """Pipage rounding of a vector in [0,1]^K.

    Pairs are always the two leftmost fractional entries.  Each step moves
    mass between the pair so that one of them becomes integral, choosing
    the direction with the probabilities that keep both expectations
    unchanged.  Hence E[Y_k] = fractions[k] and sum(Y) lands on the floor
    or ceiling of sum(fractions) on every draw.  If a fractional entry is
    left over at the end it is rounded on its own.

    With ``size`` set, returns ``size`` independent roundings as rows of a
    (size, K) array; the rows are processed together.
    """
    gen = as_generator(rng)
    x = _check_fractions(np.asarray(fractions, dtype=float).ravel())
    B = 1 if size is None else int(size)
    K = x.size
    out = np.zeros((B, K), dtype=np.int8)
    carrier = np.full(B, -1, dtype=np.int64)
    cval = np.zeros(B)
    rows = np.arange(B)
    for k in range(K):
        v = x[k]
        if v <= EPS or v >= 1 - EPS:
            out[:, k] = 1 if v >= 1 - EPS else 0
            continue
        u = gen.random(B)
        free = carrier < 0
        carrier[free] = k
        cval[free] = v
        paired = ~free
        if not paired.any():
            continue
        a = cval[paired]
        alpha = np.minimum(1.0 - a, v)
        beta = np.minimum(a, 1.0 - v)
        up = u[paired] < beta / (alpha + beta)
        new_a = np.where(up, a + alpha, a - beta)
        new_v = np.where(up, v - alpha, v + beta)
        a_int = (new_a <= EPS) | (new_a >= 1 - EPS)
        v_int = (new_v <= EPS) | (new_v >= 1 - EPS)
        pr = rows[paired]
        pc = carrier[paired]
        # carrier settles: write it out, hand the role to k if k is still fractional
        settle = pr[a_int]
        out[settle, pc[a_int]] = (new_a[a_int] >= 1 - EPS).astype(np.int8)
        # k settles: write it out
        out[pr[v_int], k] = (new_v[v_int] >= 1 - EPS).astype(np.int8)
        next_carrier = np.where(a_int, np.where(v_int, -1, k), pc)
        next_val = np.where(a_int, np.where(v_int, 0.0, new_v), new_a)
        carrier[paired] = next_carrier
        cval[paired] = next_val
    left = carrier >= 0
    if left.any():
        u = gen.random(B)
        out[rows[left], carrier[left]] = (u[left] < cval[left]).astype(np.int8)
    return out[0] if size is None else out


@kernel
def _walk(v, vptr, vedges, ea, eb, alive, used, on_walk, walk):
    """Extend a walk from vertex v along unused fractional edges.

    Fills walk and returns (length, position where a cycle closes or -1,
    last vertex).  on_walk[start] must already be 0.
    """
    n = 0
    while True:
        nxt = -1
        for k in range(vptr[v], vptr[v + 1]):
            e = vedges[k]
            if alive[e] and not used[e]:
                nxt = e
                break
        if nxt < 0:
            return n, -1, v
        used[nxt] = True
        walk[n] = nxt
        n += 1
        v = eb[nxt] if ea[nxt] == v else ea[nxt]
        if on_walk[v] >= 0:
            return n, on_walk[v], v
        on_walk[v] = n


@kernel
def _reset(walk, n, ea, eb, used, on_walk):
    for k in range(n):
        e = walk[k]
        used[e] = False
        on_walk[ea[e]] = -1
        on_walk[eb[e]] = -1


@kernel
def _round_rows(vals0, ea, eb, vptr, vedges, U, out, vals, alive, used, on_walk, walk):
    """Cycle/path rounding of the edge values vals0, once per row of U.

    vals, alive, used, on_walk and walk are scratch arrays (kernels do not allocate);
    on_walk must come in filled with -1 and used with False.
    """
    E = vals0.size
    for b in range(U.shape[0]):
        nfrac = 0
        for e in range(E):
            v = vals0[e]
            alive[e] = EPS < v < 1 - EPS
            vals[e] = 0.0 if v <= EPS else (1.0 if v >= 1 - EPS else v)
            nfrac += alive[e]
        first, r = 0, 0
        while nfrac > 0:
            while not alive[first]:
                first += 1
            start = ea[first]
            on_walk[start] = 0
            n, close, last = _walk(start, vptr, vedges, ea, eb, alive, used, on_walk, walk)
            if close < 0:
                # walk again from the far end of the maximal path
                _reset(walk, n, ea, eb, used, on_walk)
                on_walk[start] = -1
                on_walk[last] = 0
                n, close, last = _walk(last, vptr, vedges, ea, eb, alive, used, on_walk, walk)
            lo = 0 if close < 0 else close
            alpha, beta = np.inf, np.inf
            for k in range(lo, n):
                x = vals[walk[k]]
                if (k - lo) % 2 == 0:
                    alpha, beta = min(alpha, 1 - x), min(beta, x)
                else:
                    alpha, beta = min(alpha, x), min(beta, 1 - x)
            up = U[b, r] < beta / (alpha + beta)
            r += 1
            for k in range(lo, n):
                e = walk[k]
                sign = 1.0 if (k - lo) % 2 == 0 else -1.0
                vals[e] += sign * alpha if up else -sign * beta
                if vals[e] <= EPS or vals[e] >= 1 - EPS:
                    vals[e] = 0.0 if vals[e] <= EPS else 1.0
                    alive[e] = False
                    nfrac -= 1
            _reset(walk, n, ea, eb, used, on_walk)
            on_walk[start] = -1
            on_walk[last] = -1
        for e in range(E):
            out[b, e] = vals[e] >= 0.5


def _bipartite_graph(keys: Sequence[Tuple[int, int]]):
    """Edge endpoints and a vertex -> sorted edge ids table; agents first, then types."""
    agents = sorted({i for i, _ in keys})
    types = sorted({j for _, j in keys})
    a_id = {i: k for k, i in enumerate(agents)}
    t_id = {j: len(agents) + k for k, j in enumerate(types)}
    ea = np.array([a_id[i] for i, _ in keys], dtype=np.int64)
    eb = np.array([t_id[j] for _, j in keys], dtype=np.int64)
    V = len(agents) + len(types)
    ends = np.concatenate([ea, eb])
    ids = np.concatenate([np.arange(len(keys)), np.arange(len(keys))])
    order = np.lexsort((ids, ends))
    vedges = ids[order].astype(np.int64)
    vptr = np.zeros(V + 1, dtype=np.int64)
    np.add.at(vptr, ends + 1, 1)
    return ea, eb, np.cumsum(vptr), vedges


def dependent_round_bipartite_batch(x: Mapping[Tuple[int, int], float], rng: RngLike, size: int
                                    ) -> Tuple[List[Tuple[int, int]], np.ndarray]:
    """``size`` independent roundings of x; returns (sorted edge keys, (size, E) 0/1 array)."""
    gen = as_generator(rng)
    keys = sorted(x)
    vals = _check_fractions(np.array([x[k] for k in keys], dtype=float))
    rowsum: Dict[int, float] = {}
    for (i, _), v in zip(keys, vals):
        rowsum[i] = rowsum.get(i, 0.0) + v
    if any(s > 1 + 1e-9 for s in rowsum.values()):
        raise ValueError("agent row sums must be at most 1")
    out = np.zeros((int(size), len(keys)), dtype=np.int8)
    if not keys:
        return keys, out
    ea, eb, vptr, vedges = _bipartite_graph(keys)
    # every round makes at least one edge integral, so E uniforms per row suffice
    U = gen.random((int(size), len(keys)))
    E = len(keys)
    scratch = (np.empty(E), np.zeros(E, dtype=np.bool_), np.zeros(E, dtype=np.bool_),
               np.full(vptr.size - 1, -1, dtype=np.int64), np.empty(E, dtype=np.int64))
    _round_rows(vals, ea, eb, vptr, vedges, U, out, *scratch)
    return keys, out


def dependent_round_bipartite(x: Mapping[Tuple[int, int], float], rng: RngLike
                              ) -> Dict[Tuple[int, int], int]:
    """Dependent rounding of a fractional bipartite assignment.

    ``x`` maps (agent, type) edges to values in [0,1] with every agent's
    row sum at most 1.  Repeatedly finds a cycle or a maximal path among
    the fractional edges, splits it into two alternating matchings and
    shifts mass between them in the expectation-preserving direction.
    Each round makes at least one edge integral.  The output keeps every
    marginal in expectation, never gives an agent more than one edge, and
    gives each type a degree within floor/ceil of its fractional degree.
    """
    keys, out = dependent_round_bipartite_batch(x, rng, 1)
    return dict(zip(keys, out[0].tolist()))

"""Monte-Carlo estimates of long-run (FAIR-A) and short-run (FAIR-B) fairness.

Trials are simulated in fixed-size chunks.  Chunk c draws its arrivals
from stream 2c and its policy coins from stream 2c+1 of the run's seed, so
an estimate depends only on (seed, trials) and not on how the work is
scheduled.  FAIR-A accumulates integer served counts, so its sums are
exact; FAIR-B scores are combined with ``math.fsum``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .instance import Instance
from .policies import Policy
from .stochastic import ArrivalBatch, ArrivalStream, RngLike, RngStream, order_batch, sample_batch
from .theory import offline_fair_b_single_agent  # noqa: F401  re-exported

FAIR_A = "FAIR-A"
FAIR_B = "FAIR-B"
Z95 = 1.959963984540054
CELL_BUDGET = 20_000_000  # rough cap on per-chunk array cells


class NotApplicable(ValueError):
    """Competitive ratio against a zero benchmark."""


@dataclass
class ServiceTally:
    served: np.ndarray
    arrived: np.ndarray

    def __post_init__(self):
        self.served = np.asarray(self.served, dtype=np.int64)
        self.arrived = np.asarray(self.arrived, dtype=np.int64)
        if (self.served < 0).any() or (self.served > self.arrived).any():
            raise ValueError("need 0 <= served <= arrived per type")

    @property
    def total_served(self) -> int:
        return int(self.served.sum())

    def group_served(self, instance: Instance) -> np.ndarray:
        return instance.group_matrix.astype(np.int64) @ self.served


@dataclass(frozen=True)
class FairnessEstimate:
    mean: float
    half_width_95: float
    trials: int
    objective: str
    group_values: Tuple[float, ...] = field(default=(), compare=False)
    inner: Optional[int] = None

    @property
    def interval(self) -> Tuple[float, float]:
        return self.mean - self.half_width_95, self.mean + self.half_width_95

    @property
    def std_error(self) -> float:
        return self.half_width_95 / Z95


PolicyLike = Union[Policy, Callable[[], Policy]]


def _policy(p: PolicyLike) -> Policy:
    return p if isinstance(p, Policy) else p()


def simulate(policy: Policy, instance: Instance, batch: ArrivalBatch, rng: RngLike) -> np.ndarray:
    """Run the policy on every row of the batch; returns served counts, shape (B, J)."""
    state = policy.init(instance, rng, batch=batch.size)
    return policy.run_batch(state, batch.types, batch.times if policy.needs_times else None)


def _group_sums(served: np.ndarray, G: np.ndarray) -> np.ndarray:
    if G.shape[0] == G.shape[1] and (G == np.eye(G.shape[0], dtype=G.dtype)).all():
        return served
    # float BLAS product, exact while counts stay below 2**53
    return np.rint(served.astype(float) @ G.T.astype(float)).astype(np.int64)


def run_once(policy: PolicyLike, instance: Instance, stream: ArrivalStream, rng: RngLike
             ) -> ServiceTally:
    """Feed one stream to a fresh policy state."""
    if len(stream.counts) != instance.num_types:
        raise ValueError("stream does not match the instance's types")
    batch = ArrivalBatch.from_streams([stream])
    served = simulate(_policy(policy), instance, batch, rng)
    return ServiceTally(served[0], np.asarray(stream.counts))


def _chunk_size(policy: Policy, instance: Instance) -> int:
    lam = instance.total_rate
    width = lam + 6 * math.sqrt(lam) + 10
    per_row = policy.row_cells(instance) + instance.num_types + 4 * width
    return int(min(50_000, max(64, CELL_BUDGET // per_row)))


def estimate_fair_a(policy: PolicyLike, instance: Instance, trials: int, seed: int,
                    chunk: Optional[int] = None) -> FairnessEstimate:
    """min over groups of E[X(G)] / lambda(G), with a 95% half-width for the minimizing group."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pol = _policy(policy)
    G = instance.group_matrix.astype(np.int64)
    lam_g = instance.group_rates
    if chunk is None:
        chunk = _chunk_size(pol, instance)
    s1, s2 = [], []
    done, c = 0, 0
    while done < trials:
        B = min(chunk, trials - done)
        batch = sample_batch(instance.rates, B, RngStream(seed, 2 * c), with_times=pol.needs_times)
        xg = _group_sums(simulate(pol, instance, batch, RngStream(seed, 2 * c + 1)), G)
        s1.append(xg.sum(axis=0))  # exact in int64
        s2.append((xg * xg).sum(axis=0))
        done += B
        c += 1
    means = np.sum(s1, axis=0) / trials
    sq = np.sum(s2, axis=0) / trials
    ratios = means / lam_g
    g = int(np.argmin(ratios))
    var = max(0.0, sq[g] - means[g] ** 2) * trials / max(trials - 1, 1)
    hw = Z95 * math.sqrt(var / trials) / lam_g[g]
    return FairnessEstimate(float(ratios[g]), hw, trials, FAIR_A, tuple(float(r) for r in ratios))


def estimate_fair_b(policy: PolicyLike, instance: Instance, outer_trials: int, inner_trials: int,
                    seed: int, chunk: Optional[int] = None) -> FairnessEstimate:
    """E over arrival counts of min over hit groups of E[X(G) | counts] / A(G).

    The inner expectation re-runs the policy ``inner_trials`` times on fresh
    orders of the same counts.  The min is taken after inner averaging, so
    a small ``inner_trials`` biases the estimate downward.
    """
    if outer_trials < 1 or inner_trials < 1:
        raise ValueError("outer and inner trials must be >= 1")
    pol = _policy(policy)
    G = instance.group_matrix.astype(np.int64)
    if chunk is None:
        chunk = _chunk_size(pol, instance)
    per = max(1, chunk // inner_trials)
    scores_sum, scores_sq = [], []
    done, c = 0, 0
    while done < outer_trials:
        O = min(per, outer_trials - done)
        counts = RngStream(seed, 3 * c).generator().poisson(instance.rates, size=(O, instance.num_types))
        rep = np.repeat(counts, inner_trials, axis=0)
        batch = order_batch(rep, RngStream(seed, 3 * c + 1), with_times=pol.needs_times)
        served = simulate(pol, instance, batch, RngStream(seed, 3 * c + 2))
        xg = _group_sums(served, G).reshape(O, inner_trials, -1).mean(axis=1)  # (O, G)
        ag = _group_sums(counts, G)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(ag > 0, xg / np.where(ag > 0, ag, 1), np.inf)
        score = ratio.min(axis=1)
        score[~np.isfinite(score)] = 1.0
        scores_sum.append(math.fsum(score.tolist()))
        scores_sq.append(math.fsum((score ** 2).tolist()))
        done += O
        c += 1
    n = outer_trials
    mean = math.fsum(scores_sum) / n
    var = max(0.0, math.fsum(scores_sq) / n - mean ** 2) * n / max(n - 1, 1)
    return FairnessEstimate(mean, Z95 * math.sqrt(var / n), n, FAIR_B, inner=inner_trials)


def competitive_ratio(alg: Union[FairnessEstimate, float], benchmark: float) -> float:
    value = alg.mean if isinstance(alg, FairnessEstimate) else float(alg)
    if not benchmark > 0:
        raise NotApplicable("benchmark is zero; competitive ratio undefined")
    return value / benchmark

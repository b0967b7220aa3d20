"""Closed-form values and analytic bounds for the fairness algorithms.

Everything here is a pure function of scalar parameters.  Poisson
probabilities are evaluated in log space so rates up to ~1e4 do not
overflow; infinite series are truncated once the remaining mass drops
below a fixed tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List

TAIL_TOL = 1e-14
OFFLINE_TAIL_TOL = 1e-12


@dataclass(frozen=True)
class BoundReport:
    name: str
    params: Dict[str, Any]
    value: float
    kind: str  # "exact" | "lower_bound" | "upper_bound"
    asymptotic: bool = False
    note: str = ""

    def as_row(self) -> List[Any]:
        params = ";".join(f"{k}={v}" for k, v in self.params.items())
        return [self.name, params, repr(float(self.value)), self.kind, str(self.asymptotic).lower()]


CSV_HEADER = ["name", "params", "value", "kind", "asymptotic"]


def poisson_logpmf(k: int, mu: float) -> float:
    if mu == 0:
        return 0.0 if k == 0 else -math.inf
    return -mu + k * math.log(mu) - math.lgamma(k + 1)


def poisson_pmf(k: int, mu: float) -> float:
    return math.exp(poisson_logpmf(k, mu))


def poisson_cdf(n: int, mu: float) -> float:
    """P[Pois(mu) <= n]."""
    if n < 0:
        return 0.0
    return 1.0 - poisson_sf(n + 1, mu)


def poisson_sf(m: int, mu: float) -> float:
    """P[Pois(mu) >= m].

    Summed directly from whichever side is the small one, so neither tail
    loses precision to cancellation.
    """
    if m <= 0:
        return 1.0
    if mu == 0:
        return 0.0
    if m > mu:
        total = 0.0
        k = m
        while True:
            term = poisson_pmf(k, mu)
            total += term
            # terms shrink geometrically once k > mu
            if term <= TAIL_TOL * total or term == 0.0:
                break
            k += 1
        return min(total, 1.0)
    head = math.fsum(poisson_pmf(k, mu) for k in range(m))
    return max(0.0, 1.0 - head)


def expected_min_poisson(mu: float, cap: float) -> float:
    """E[min(Pois(mu), cap)] for a real cap >= 0."""
    if mu < 0 or not math.isfinite(mu):
        raise ValueError(f"mu must be finite and nonnegative, got {mu}")
    if cap < 0:
        raise ValueError(f"cap must be nonnegative, got {cap}")
    if mu == 0 or cap == 0:
        return 0.0
    m = math.ceil(cap)  # smallest integer k with k >= cap
    head = math.fsum(k * poisson_pmf(k, mu) for k in range(1, m))
    return head + cap * poisson_sf(m, mu)


def truncated_poisson_mean(mu: float, b: int) -> float:
    """E[min(Pois(mu), b)] for an integer cap b."""
    if int(b) != b or b < 1:
        raise ValueError(f"b must be a positive integer, got {b}")
    return expected_min_poisson(mu, int(b))


def g(b: int, s: float) -> float:
    """Competitiveness guarantee of LP sampling with min capacity b and LP scale s."""
    if int(b) != b or b < 1:
        raise ValueError(f"b must be a positive integer, got {b}")
    if s <= 0:
        raise ValueError(f"s must be positive, got {s}")
    b = int(b)
    return max(s, 1.0) * truncated_poisson_mean(b / s, b) / b


def h(lam: float, s: float) -> float:
    """E[min(Pois(lam), lam*s)] / (lam * min(s, 1))."""
    if lam <= 0 or s <= 0:
        raise ValueError("lam and s must be positive")
    return expected_min_poisson(lam, lam * s) / (lam * min(s, 1.0))


def g_tail_bounds(b: int, s: float) -> BoundReport:
    """Analytic lower bound on g(b, s) for the regime of s.

    s > 1 drops the vanishing correction in the exponent and is flagged
    asymptotic.  At s == 1 with b == 1 no tail bound applies and the
    universal floor 1 - 1/e is returned.
    """
    if int(b) != b or b < 1 or s <= 0:
        raise ValueError("need integer b >= 1 and s > 0")
    params = {"b": int(b), "s": s}
    if s > 1:
        value = 1.0 - math.exp(-b * math.log(s) * (1.0 - 1.0 / s) ** 2)
        return BoundReport("g_tail_s_gt_1", params, value, "lower_bound", asymptotic=True)
    if s < 1:
        value = 1.0 - math.exp(-(b / (2.0 * s)) * (1.0 - s) ** 2)
        return BoundReport("g_tail_s_lt_1", params, value, "lower_bound")
    if b > 1:
        value = 1.0 - 1.0 / math.sqrt(2.0 * math.pi * (b - 1))
        return BoundReport("g_tail_s_eq_1", params, value, "lower_bound")
    return BoundReport("g_universal", params, 1.0 - math.exp(-1.0), "lower_bound")


def nadap_bound(b: float) -> float:
    """1 - e^{-b} b^b / b!  (the factorial read as Gamma(b+1) for real b)."""
    if b < 0:
        raise ValueError(f"b must be nonnegative, got {b}")
    if b == 0:
        return 0.0
    return 1.0 - math.exp(-b + b * math.log(b) - math.lgamma(b + 1))


def fcfs_fair_a(b: int, Lambda: float) -> float:
    """Long-run fairness of first-come-first-serve on a single agent."""
    if Lambda <= 0:
        raise ValueError("Lambda must be positive")
    return truncated_poisson_mean(Lambda, b) / Lambda


def offline_fair_b_single_agent(b: int, Lambda: float) -> float:
    """Short-run fairness of the clairvoyant allocator on a single agent.

    With A arrivals the best it can do is serve every arrival with
    probability min(1, b/A), so the value is
    P[A <= b] + sum_{k > b} P[A = k] * b / k.
    """
    if int(b) != b or b < 1:
        raise ValueError(f"b must be a positive integer, got {b}")
    if Lambda < 0:
        raise ValueError("Lambda must be nonnegative")
    b = int(b)
    if Lambda == 0:
        return 1.0
    total = poisson_cdf(b, Lambda)
    terms = []
    k = b + 1
    while True:
        p = poisson_pmf(k, Lambda)
        terms.append(p * b / k)
        if k > Lambda:
            # remaining mass after k is at most p * r / (1 - r) with r = Lambda / (k + 1)
            r = Lambda / (k + 1)
            if p * r / (1.0 - r) < OFFLINE_TAIL_TOL:
                break
        k += 1
    return total + math.fsum(terms)


def fcfs_fair_b_ratio(b: int, Lambda: float) -> float:
    """Lower bound f(b, Lambda) on the short-run competitiveness of FCFS."""
    return poisson_cdf(int(b), Lambda) / offline_fair_b_single_agent(b, Lambda)


def _ode_rhs(t: float, r: float, lam: float) -> float:
    return -lam * r + lam * min(r, 1.0 - r + math.exp(-lam * t))


def ode_fair_b_upper_bound(lam: float, step: float = 1e-4) -> float:
    """R_lam(1) from classical RK4 on dR/dt = -lam R + lam min(R, 1 - R + e^{-lam t}), R(0)=1.

    The min is evaluated afresh at every stage point, so the kink where the
    two branches cross is resolved to O(step) per crossing.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if step <= 0 or step > 1e-4:
        raise ValueError("step must be in (0, 1e-4]")
    n = math.ceil(1.0 / step)
    dt = 1.0 / n
    r = 1.0
    for k in range(n):
        t = k * dt
        k1 = _ode_rhs(t, r, lam)
        k2 = _ode_rhs(t + dt / 2, r + dt * k1 / 2, lam)
        k3 = _ode_rhs(t + dt / 2, r + dt * k2 / 2, lam)
        k4 = _ode_rhs(t + dt, r + dt * k3, lam)
        r += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return r


def ode_competitive_ratio(lam: float, step: float = 1e-4) -> float:
    """Upper bound on any online algorithm's short-run competitiveness (b = 1, all types rare)."""
    return ode_fair_b_upper_bound(lam, step) / offline_fair_b_single_agent(1, lam)


def prob_reject_epsilon(b: float, Lambda: float) -> float:
    """Rejection slack used by the probabilistic-rejection policy."""
    kappa = b / Lambda
    if kappa > 1:
        return kappa - 1.0
    if Lambda <= 1:
        raise ValueError("the kappa <= 1 slack sqrt(ln L / L) needs Lambda > 1")
    return math.sqrt(math.log(Lambda) / Lambda)


def prob_reject_bounds(b: float, Lambda: float) -> List[BoundReport]:
    """Competitiveness lower bound of probabilistic rejection, plus the offline upper bound when kappa < 1."""
    if Lambda <= 1:
        raise ValueError("bounds are stated for Lambda > 1")
    kappa = b / Lambda
    params = {"b": b, "Lambda": Lambda}
    reports = []
    if kappa > 1:
        value = 1.0 - math.exp(-Lambda * (kappa - 1.0) ** 2 / (2.0 * kappa))
        reports.append(BoundReport("prob_reject_kappa_gt_1", params, value, "lower_bound"))
    else:
        value = 1.0 - math.sqrt(math.log(Lambda) / Lambda)
        reports.append(
            BoundReport("prob_reject_kappa_le_1", params, value, "lower_bound", asymptotic=True)
        )
    if kappa < 1:
        reports.append(
            BoundReport(
                "offline_fair_b_upper", params, kappa * (1.0 + 1.0 / Lambda), "upper_bound",
                asymptotic=True,
            )
        )
    return reports


def threshold_fairness_limit(tau: float) -> float:
    """Large-n fairness cap min(tau + 1/2 - tau^2/2, 1 - tau) for delaying the common type until tau."""
    return min(tau + 0.5 - 0.5 * tau * tau, 1.0 - tau)

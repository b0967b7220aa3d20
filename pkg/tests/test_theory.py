import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fairmatch import theory

E1 = 1 - math.exp(-1)


def brute_min_poisson(mu, b, kmax=2000):
    k = np.arange(kmax)
    return float(np.sum(np.minimum(k, b) * stats.poisson.pmf(k, mu)))


@pytest.mark.parametrize("mu,b", [(0.5, 1), (1, 1), (2, 5), (10, 3), (50, 50), (300, 280)])
def test_truncated_mean_matches_scipy(mu, b):
    assert theory.truncated_poisson_mean(mu, b) == pytest.approx(brute_min_poisson(mu, b), rel=1e-12, abs=1e-12)


def test_poisson_tails_large_rate():
    for mu in (1e3, 1e4):
        for m in (int(mu * 0.9), int(mu), int(mu * 1.1)):
            assert theory.poisson_sf(m, mu) == pytest.approx(stats.poisson.sf(m - 1, mu), rel=1e-9)
            assert theory.poisson_cdf(m, mu) == pytest.approx(stats.poisson.cdf(m, mu), rel=1e-9)


def test_g_closed_form_at_s1():
    assert abs(theory.g(1, 1.0) - E1) < 1e-12
    for b in range(1, 31):
        want = 1 - math.exp(-b) * b ** (b - 1) / math.factorial(b - 1)
        assert theory.g(b, 1.0) == pytest.approx(want, abs=1e-12)
        assert theory.nadap_bound(b) == pytest.approx(want, abs=1e-12)


def test_g_rejects_fractional_capacity():
    with pytest.raises(ValueError):
        theory.g(1.5, 1.0)
    with pytest.raises(ValueError):
        theory.g(2, 0.0)


@given(st.integers(1, 40), st.floats(0.1, 3.0))
@settings(max_examples=200, deadline=None)
def test_g_properties(b, s):
    v = theory.g(b, s)
    assert v >= E1 - 1e-12
    assert v >= theory.g(b, 1.0) - 1e-12
    assert theory.g(b + 1, s) >= v - 1e-12
    assert v >= theory.g_tail_bounds(b, s).value - 1e-12


def test_h_matches_definition():
    assert theory.h(4.0, 1.0) == pytest.approx(brute_min_poisson(4.0, 4.0) / 4.0)
    # cap lam * s need not be integral
    want = sum(min(k, 3.0) * stats.poisson.pmf(k, 2.0) for k in range(200)) / 2.0
    assert theory.h(2.0, 1.5) == pytest.approx(want, abs=1e-12)


def test_fcfs_fair_a():
    assert theory.fcfs_fair_a(1, 1.0) == pytest.approx(E1, abs=1e-14)
    assert theory.fcfs_fair_a(2, 0.5) == pytest.approx(brute_min_poisson(0.5, 2) / 0.5, abs=1e-12)


def test_offline_fair_b_matches_series():
    for b, L in [(1, 1.0), (3, 2.5), (10, 20.0), (80, 100.0)]:
        k = np.arange(0, 2000)
        p = stats.poisson.pmf(k, L)
        want = float(np.sum(p * np.where(k <= b, 1.0, b / np.maximum(k, 1))))
        assert theory.offline_fair_b_single_agent(b, L) == pytest.approx(want, abs=1e-11)
    assert theory.offline_fair_b_single_agent(2, 0.0) == 1.0


def test_f11_value():
    assert 0.862 <= theory.fcfs_fair_b_ratio(1, 1.0) <= 0.864


def test_ode_ratio_and_step_convergence():
    r = theory.ode_competitive_ratio(1.0)
    assert 0.937 <= r <= 0.947
    coarse = theory.ode_fair_b_upper_bound(1.0, step=1e-4)
    fine = theory.ode_fair_b_upper_bound(1.0, step=2.5e-5)
    assert abs(coarse - fine) < 1e-6
    with pytest.raises(ValueError):
        theory.ode_fair_b_upper_bound(1.0, step=1e-2)


def test_prob_reject_epsilon_and_bounds():
    assert theory.prob_reject_epsilon(120, 100) == pytest.approx(0.2)
    assert theory.prob_reject_epsilon(80, 100) == pytest.approx(math.sqrt(math.log(100) / 100))
    (lb,) = theory.prob_reject_bounds(120, 100)
    assert lb.kind == "lower_bound" and lb.value == pytest.approx(1 - math.exp(-100 * 0.04 / 2.4))
    reps = theory.prob_reject_bounds(80, 100)
    assert [r.kind for r in reps] == ["lower_bound", "upper_bound"]
    assert all(r.asymptotic for r in reps)
    with pytest.raises(ValueError):
        theory.prob_reject_bounds(1, 1)


def test_threshold_limit_peak():
    tau = 2 - math.sqrt(3)
    assert theory.threshold_fairness_limit(tau) == pytest.approx(math.sqrt(3) - 1, abs=1e-12)
    grid = np.linspace(0, 1, 2001)
    assert max(theory.threshold_fairness_limit(t) for t in grid) <= math.sqrt(3) - 1 + 1e-12


def test_bound_report_row():
    row = theory.g_tail_bounds(3, 2.0).as_row()
    assert row[0] == "g_tail_s_gt_1" and row[4] == "true"
    assert len(row) == len(theory.CSV_HEADER)

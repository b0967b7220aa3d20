"""Acceptance criteria 1-11.

Each test records one "criterion N: PASS|FAIL ..." line (shown in the
pytest terminal summary, or printed when run as a script) and then
asserts.  Tolerances are pinned as module constants.  Monte-Carlo checks
use 3-standard-error bands unless stated otherwise.

Trial counts are raised above the nominal 1e5 where a min over many
groups makes the plain estimator too biased for the band (criterion 3).
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from fairmatch import harness as H
from fairmatch import instance as im
from fairmatch import theory
from fairmatch.lp_benchmark import solve_grouped, solve_homogeneous
from fairmatch.metrics import Z95, estimate_fair_a, estimate_fair_b
from fairmatch.policies import make_policy
from fairmatch.stochastic import RngStream, dependent_round_bipartite_batch, dependent_round_vector

E1 = 1 - math.exp(-1)
SIGMAS = 3.0

# criterion 1
G11_TOL = 1e-12
F11_RANGE = (0.862, 0.864)
ODE_RANGE = (0.937, 0.947)
# criterion 2
C2_TRIALS = 1_000_000
# criterion 3
C3_NADAP_TRIALS = 10_000_000
C3_THRESH_TRIALS = 3_000_000
C3_GREEDY_TRIALS = 100_000
C3_NADAP_TOL = 0.01
C3_GREEDY_MAX = 0.55
C3_THRESH_TOL = 0.03
C3_S_TOL = 1e-9
# criterion 4
C4_TRIALS = 100_000
C4_RESERVE_MIN = 0.93
C4_NADAP_TOL = 0.01
# criterion 5
C5_INSTANCES = 20
C5_TRIALS = 100_000
# criterion 6
C6_SAMPLES = 100_000
C6_ALPHA = 1e-3
# criterion 7
C7_OUTER, C7_INNER = 100_000, 200
C7_GAP = 0.02
# criterion 8
C8_OUTER, C8_INNER = 2000, 200
C8_MIN_RATIO = 0.81
C8_SLACK = 0.95
# criterion 10
C10_TRIALS = 1000
C10_RISE = 0.1
C10_S_TARGETS = [0.5, 1.0, 1.5, 2.0]
C10_GRID = [[2, 2], [3, 3], [5, 4], [9, 8], [27, 23], [310, 39]]

RESULTS = {}


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def sigma(est):
    return est.half_width_95 / Z95


def test_criterion_01_closed_forms():
    g11 = theory.g(1, 1.0)
    worst = max(abs(theory.g(b, 1.0) - (1 - math.exp(-b) * b ** (b - 1) / math.factorial(b - 1)))
                for b in range(1, 31))
    f11 = theory.fcfs_fair_b_ratio(1, 1.0)
    ode = theory.ode_competitive_ratio(1.0)
    ok = (abs(g11 - E1) < G11_TOL and worst < G11_TOL and F11_RANGE[0] <= f11 <= F11_RANGE[1]
          and ODE_RANGE[0] <= ode <= ODE_RANGE[1])
    record(1, ok, f"g(1,1)-(1-1/e)={g11 - E1:.1e} max|g(b,1)-closed|={worst:.1e} f(1,1)={f11:.5f} ode={ode:.5f}")


def test_criterion_02_fcfs_oracle():
    worst, parts = 0.0, []
    for b in (1, 2, 5):
        for L in (0.5, 1.0, 2.0):
            est = estimate_fair_a(make_policy("fcfs"), im.single_agent(b, [L]), C2_TRIALS, seed=100 + b)
            z = (est.mean - theory.truncated_poisson_mean(L, b) / L) / sigma(est)
            worst = max(worst, abs(z))
            parts.append(f"{z:+.2f}")
    record(2, worst <= SIGMAS, f"max |z|={worst:.2f} over 9 cells ({' '.join(parts)})")


def test_criterion_03_central_star():
    inst = im.central_star(100)
    s = solve_homogeneous(inst).s_star
    nad = estimate_fair_a(make_policy("nadap-s", inst), inst, C3_NADAP_TRIALS, seed=31)
    thr = estimate_fair_a(make_policy("threshold", tau=2 - math.sqrt(3)), inst, C3_THRESH_TRIALS, seed=32)
    greedy = estimate_fair_a(make_policy("greedy"), inst, C3_GREEDY_TRIALS, seed=33)
    rank = estimate_fair_a(make_policy("rank"), inst, C3_GREEDY_TRIALS, seed=34)
    # the min over 100 noisy rare-group means is biased low, which favors the <= check;
    # the pooled rare-group mean is unbiased and must pass too
    pooled = [float(np.mean(e.group_values[1:])) for e in (greedy, rank)]
    checks = {
        "s*": abs(s - 1) <= C3_S_TOL,
        "nadap-s": abs(nad.mean - E1) <= C3_NADAP_TOL,
        "greedy": greedy.mean <= C3_GREEDY_MAX and pooled[0] <= C3_GREEDY_MAX,
        "rank": rank.mean <= C3_GREEDY_MAX and pooled[1] <= C3_GREEDY_MAX,
        "threshold": abs(thr.mean - (math.sqrt(3) - 1)) <= C3_THRESH_TOL,
    }
    record(3, all(checks.values()),
           f"s*={s:.12f} nadap-s={nad.mean:.4f} greedy={greedy.mean:.4f}/pooled {pooled[0]:.4f} "
           f"rank={rank.mean:.4f}/pooled {pooled[1]:.4f} threshold={thr.mean:.4f} "
           f"failed={[k for k, v in checks.items() if not v]}")


def test_criterion_04_pool_supply():
    inst = im.pool_supply(50)
    res = estimate_fair_a(make_policy("reserve", inst), inst, C4_TRIALS, seed=41)
    nad = estimate_fair_a(make_policy("nadap-s", inst), inst, C4_TRIALS, seed=42)
    ok = res.mean >= C4_RESERVE_MIN and abs(nad.mean - E1) <= C4_NADAP_TOL
    record(4, ok, f"reserve={res.mean:.4f} (closed {theory.truncated_poisson_mean(50, 50) / 50:.4f}) "
                  f"nadap-s={nad.mean:.4f}")


def battery(seed, n):
    """Small random instances: <= 6 agents, <= 8 types, rates in [1, 5], overlapping groups."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        I, J = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        caps = rng.integers(1, 5, I)
        rates = rng.uniform(1, 5, J)
        edges = {(i, j) for i in range(I) for j in range(J) if rng.random() < 0.4}
        edges |= {(int(rng.integers(I)), j) for j in range(J)}
        groups = [sorted({int(x) for x in rng.choice(J, size=int(rng.integers(1, J + 1)), replace=False)})
                  for _ in range(int(rng.integers(1, J + 2)))]
        covered = {j for g in groups for j in g}
        groups += [[j] for j in range(J) if j not in covered]
        out.append(im.build(caps, rates, sorted(edges), groups, label=f"battery{len(out)}"))
    return out


def test_criterion_05_bound_dominance():
    worst = {"nadap": math.inf, "reserve": math.inf}
    for k, inst in enumerate(battery(2024, C5_INSTANCES)):
        s = solve_grouped(inst).s_star
        bounds = {"nadap": theory.nadap_bound(int(inst.capacities.min())) * s,
                  "reserve": theory.nadap_bound(math.floor(inst.rates.min())) * s}
        for name, bound in bounds.items():
            est = estimate_fair_a(make_policy(name, inst), inst, C5_TRIALS, seed=500 + k)
            worst[name] = min(worst[name], (est.mean - bound) / sigma(est))
    ok = all(z >= -SIGMAS for z in worst.values())
    record(5, ok, f"min z over {C5_INSTANCES} instances: nadap={worst['nadap']:.2f} reserve={worst['reserve']:.2f}")


def test_criterion_06_dependent_rounding():
    fr = np.array([0.3, 0.7, 0.45, 0.25, 0.8, 0.5, 0.05, 0.95])
    Y = dependent_round_vector(fr, RngStream(61), size=C6_SAMPLES)
    sums = Y.sum(axis=1)
    s = fr.sum()
    sum_ok = bool(np.all((sums >= math.floor(s + 1e-9)) & (sums <= math.ceil(s - 1e-9))))
    pv_vec = min(stats.chisquare([c, C6_SAMPLES - c], [p * C6_SAMPLES, (1 - p) * C6_SAMPLES]).pvalue
                 for c, p in zip(Y.sum(axis=0), fr))
    # bipartite: unit copies (rows sum <= 1) against types
    x = {(0, 0): 0.5, (0, 1): 0.3, (1, 0): 0.4, (1, 2): 0.6, (2, 1): 0.7, (2, 2): 0.2, (3, 0): 0.35}
    keys, B = dependent_round_bipartite_batch(x, RngStream(62), C6_SAMPLES)
    agent = np.array([i for i, _ in keys])
    per_copy = np.stack([B[:, agent == i].sum(axis=1) for i in range(4)], axis=1)
    disjoint = bool(np.all(per_copy <= 1))
    pv_bip = min(stats.chisquare([c, C6_SAMPLES - c], [x[k] * C6_SAMPLES, (1 - x[k]) * C6_SAMPLES]).pvalue
                 for c, k in zip(B.sum(axis=0), keys))
    ok = sum_ok and disjoint and pv_vec > C6_ALPHA and pv_bip > C6_ALPHA
    record(6, ok, f"sums preserved={sum_ok} copies serve <= 1 type={disjoint} "
                  f"min marginal p: vector={pv_vec:.3g} bipartite={pv_bip:.3g}")


def test_criterion_07_fair_b_orderings():
    ex3 = im.single_agent(1, [1.0])
    a3 = estimate_fair_a(make_policy("fcfs"), ex3, C7_OUTER, seed=71)
    b3 = estimate_fair_b(make_policy("fcfs"), ex3, C7_OUTER, C7_INNER, seed=72)
    ex4 = im.single_agent(1, [10.0])
    a4 = estimate_fair_a(make_policy("nth-arrival", k=11), ex4, C7_OUTER, seed=73)
    b4 = estimate_fair_b(make_policy("nth-arrival", k=11), ex4, C7_OUTER, C7_INNER, seed=74)
    ok = b3.mean - a3.mean >= C7_GAP and b4.mean < a4.mean
    record(7, ok, f"ex3 FAIR-B={b3.mean:.4f} FAIR-A={a3.mean:.4f}; ex4 FAIR-B={b4.mean:.4f} FAIR-A={a4.mean:.4f}")


def test_criterion_08_prob_reject():
    L = 100.0
    hi = im.single_agent(120, [L])
    est_hi = estimate_fair_b(make_policy("prob-reject"), hi, C8_OUTER, C8_INNER, seed=81)
    ratio_hi = est_hi.mean / min(1.0, theory.offline_fair_b_single_agent(120, L))
    lo = im.single_agent(80, [L])
    est_lo = estimate_fair_b(make_policy("prob-reject"), lo, C8_OUTER, C8_INNER, seed=82)
    target_lo = (1 - math.sqrt(math.log(L) / L)) * (80 / L) * C8_SLACK
    ok = ratio_hi >= C8_MIN_RATIO and est_lo.mean >= target_lo
    record(8, ok, f"b=120 ratio={ratio_hi:.4f} (bound {theory.prob_reject_bounds(120, L)[0].value:.4f}); "
                  f"b=80 FAIR-B={est_lo.mean:.4f} >= {target_lo:.4f}")


def test_criterion_09_g_properties():
    bad = []
    s_grid = [round(0.1 * k, 1) for k in range(1, 31)]
    for b in range(1, 41):
        for s in s_grid:
            v = theory.g(b, s)
            if v < E1 - 1e-12 or v < theory.g(b, 1.0) - 1e-12 or theory.g(b + 1, s) < v - 1e-12:
                bad.append((b, s))
            if v < theory.g_tail_bounds(b, s).value - 1e-12:
                bad.append((b, s, "tail"))
    record(9, not bad, f"{40 * len(s_grid)} grid points, violations={bad[:5]}")


def synthetic_sweeps(tmp_path):
    recs = H.synthetic_trips(areas=8, days=30, seed=3)
    H.write_trips(recs, tmp_path / "trips.csv")
    src = {"trips": "trips.csv", "window": "18:00-19:00", "top_k": 30}
    homo = H.ExperimentConfig(dict(src, grouping="homogeneous"), ["nadap-s", "greedy", "rank"],
                              trials=C10_TRIALS, seed=7, sweep={"kind": "scale_s", "targets": C10_S_TARGETS})
    het = H.ExperimentConfig(dict(src, grouping="destination"), ["nadap", "reserve"],
                             trials=C10_TRIALS, seed=7, sweep={"kind": "grid", "points": C10_GRID})
    return H.run_sweep(homo, tmp_path), H.run_sweep(het, tmp_path)


def test_criterion_10_synthetic_reproduction(tmp_path):
    homo, het = synthetic_sweeps(tmp_path)
    assert all(r["error"] == "" for r in homo + het)
    ratio = {}
    for r in homo:
        ratio.setdefault(r["policy"], []).append(r["competitive_ratio"])
    dominates = all(n >= max(g, k) for n, g, k in zip(ratio["nadap-s"], ratio["greedy"], ratio["rank"]))
    nad = ratio["nadap-s"]
    min_at_1 = int(np.argmin(nad)) == C10_S_TARGETS.index(1.0)
    grid = {}
    for r in het:
        grid.setdefault(r["policy"], []).append(r["competitive_ratio"])
    rise = {p: v[-1] - v[0] for p, v in grid.items()}
    ok = dominates and min_at_1 and all(d >= C10_RISE for d in rise.values())
    record(10, ok, f"nadap-s ratios={[round(v, 4) for v in nad]} dominates={dominates} "
                   f"rise nadap={rise['nadap']:.3f} reserve={rise['reserve']:.3f}")


def test_criterion_11_determinism(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    a_dir.mkdir()
    b_dir.mkdir()
    texts = []
    for d in (a_dir, b_dir):
        homo, het = synthetic_sweeps(d)
        cfg = H.ExperimentConfig({"builder": "single_agent", "params": {"b": 1, "rates": [1.0]}},
                                 ["fcfs", {"name": "nth-arrival", "params": {"k": 2}}],
                                 objective="fair-b", trials=2000, inner=20, seed=11)
        rows = homo + het + H.run_sweep(cfg)
        texts.append(H.write_results(rows, d / "results.csv").read_bytes())
    record(11, texts[0] == texts[1], f"{len(texts[0])} bytes, identical={texts[0] == texts[1]}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))

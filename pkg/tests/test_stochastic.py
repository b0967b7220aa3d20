import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fairmatch import stochastic as sto
from fairmatch.instance import central_star


def test_streams_are_reproducible_and_distinct():
    a = sto.RngStream(5, 0).generator().random(4)
    b = sto.RngStream(5, 0).generator().random(4)
    c = sto.RngStream(5, 1).generator().random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert sto.RngStream(5).child(1) != sto.RngStream(5).child(2)
    with pytest.raises(ValueError):
        sto.as_generator(None)


def test_sample_batch_counts_are_poisson():
    rates = np.array([0.5, 2.0, 4.0])
    batch = sto.sample_batch(rates, 200_000, sto.RngStream(1))
    assert np.array_equal(batch.counts.sum(axis=1), (batch.types >= 0).sum(axis=1))
    mean, var = batch.counts.mean(axis=0), batch.counts.var(axis=0)
    se = np.sqrt(rates / 200_000)
    assert np.all(np.abs(mean - rates) < 4 * se)
    assert np.allclose(var, rates, rtol=0.03)
    # counts of distinct types are uncorrelated under Poisson splitting
    r = np.corrcoef(batch.counts.T)[0, 2]
    assert abs(r) < 4 / np.sqrt(200_000)


def test_sample_batch_times_sorted_and_padded():
    batch = sto.sample_batch([1.0, 3.0], 500, sto.RngStream(2))
    n = batch.counts.sum(axis=1)
    for b in range(20):
        t = batch.times[b]
        assert np.all(np.diff(t[: n[b]]) >= 0) and np.all(np.isinf(t[n[b]:]))
        assert np.all(batch.types[b, n[b]:] == -1)
    s = batch.stream(3)
    assert len(s) == n[3]


def test_arrival_times_uniform():
    batch = sto.sample_batch([5.0], 20_000, sto.RngStream(3))
    t = batch.times[np.isfinite(batch.times)]
    assert stats.kstest(t, "uniform").pvalue > 1e-3


def test_interleaving_is_uniform():
    # with counts (1, 1) the rare type is first half the time
    batch = sto.order_batch(np.tile([1, 1], (40_000, 1)), sto.RngStream(4))
    first = (batch.types[:, 0] == 0).mean()
    assert abs(first - 0.5) < 4 * 0.5 / np.sqrt(40_000)
    # sampled process: position of a type among arrivals is exchangeable
    b2 = sto.sample_batch([1.0, 1.0], 40_000, sto.RngStream(5))
    two = b2.counts.sum(axis=1) == 2
    assert abs((b2.types[two, 0] == 0).mean() - 0.5) < 0.02


def test_order_batch_keeps_counts():
    counts = np.array([[3, 0, 2], [0, 0, 0], [1, 4, 1]])
    batch = sto.order_batch(counts, sto.RngStream(6))
    for b in range(3):
        got = np.bincount(batch.types[b][batch.types[b] >= 0], minlength=3)
        assert np.array_equal(got, counts[b])
    s = sto.resample_order([2, 1], sto.RngStream(7))
    assert s.counts == (2, 1) and len(s) == 3


def test_arrival_stream_validation():
    ev = (sto.ArrivalEvent(0.5, 0), sto.ArrivalEvent(0.2, 0))
    with pytest.raises(ValueError):
        sto.ArrivalStream(ev, (2,))
    with pytest.raises(ValueError):
        sto.ArrivalStream((sto.ArrivalEvent(0.1, 0),), (2,))


def test_sample_stream_instance():
    s = sto.sample_stream(central_star(4), sto.RngStream(8))
    assert len(s.counts) == 5


def test_alias_tables_probabilities():
    probs = np.array([[0.1, 0.2, 0.3], [0.0, 0.5, 0.5]])
    count, cut, main, alt = sto.alias_tables(probs)
    u = np.random.default_rng(0).random(200_000)
    draws = np.array([sto.alias_draw(count, cut, main, alt, 0, x) for x in u])
    freq = np.bincount(draws, minlength=4) / len(draws)
    # outcome 3 is the leftover (reject) mass
    assert np.allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=0.005)
    with pytest.raises(ValueError):
        sto.alias_tables(np.zeros((1, 2)), allow_reject=False)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(0, 1000))
@settings(max_examples=100, deadline=None)
def test_vector_rounding_preserves_sum(fr, seed):
    fr = np.array(fr)
    Y = sto.dependent_round_vector(fr, sto.RngStream(seed), size=50)
    s = fr.sum()
    sums = Y.sum(axis=1)
    assert np.all((sums >= np.floor(s - 1e-9)) & (sums <= np.ceil(s + 1e-9)))
    assert set(np.unique(Y)) <= {0, 1}
    assert np.all(Y[:, fr >= 1 - 1e-12] == 1) and np.all(Y[:, fr <= 1e-12] == 0)


def test_vector_rounding_marginals():
    fr = np.array([0.3, 0.7, 0.5, 0.25, 0.25, 1.0, 0.0])
    Y = sto.dependent_round_vector(fr, sto.RngStream(9), size=100_000)
    assert np.allclose(Y.mean(axis=0), fr, atol=4 * 0.5 / np.sqrt(100_000))
    assert np.all(Y.sum(axis=1) == 3)


def test_vector_rounding_rejects_out_of_range():
    with pytest.raises(ValueError):
        sto.dependent_round_vector([1.2], sto.RngStream(0))


def test_bipartite_rounding():
    x = {(0, 0): 0.5, (0, 1): 0.5, (1, 0): 0.5, (1, 1): 0.25, (2, 1): 0.25, (2, 2): 0.6}
    tot = {k: 0 for k in x}
    n = 20_000
    for t in range(n):
        y = sto.dependent_round_bipartite(x, sto.RngStream(t))
        for k in x:
            tot[k] += y[k]
        for i in range(3):
            row = [v for (a, _), v in x.items() if a == i]
            got = sum(y[k] for k in x if k[0] == i)
            assert np.floor(sum(row) - 1e-9) <= got <= np.ceil(sum(row) + 1e-9)
    for k, v in x.items():
        assert abs(tot[k] / n - v) < 4 * np.sqrt(v * (1 - v) / n) + 1e-9
    with pytest.raises(ValueError):
        sto.dependent_round_bipartite({(0, 0): 0.7, (0, 1): 0.7}, sto.RngStream(0))

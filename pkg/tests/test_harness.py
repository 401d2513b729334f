import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import nbinom

from annealtails import annealers as A
from annealtails import evt
from annealtails.exact import ground_energy
from annealtails.harness import (
    TtsRecord,
    batch_tts,
    bootstrap_ci,
    correlation_pairs,
    estimate_tau,
    nearest_rank,
    quantile_table,
    read_tts_csv,
    running_mean,
    scan_annealing_time,
    scan_beta,
    write_tts_csv,
)
from annealtails.instances import InvalidParameter, build_chimera, generate_instance
from annealtails.rng import Stream


class Inst:
    def __init__(self, id):
        self.id = id


class Always:
    def repeat_until(self, instance, E0, target, cap, base_key):
        reps = min(cap, math.ceil(target))
        return reps, float(reps)


class Never:
    def repeat_until(self, instance, E0, target, cap, base_key):
        return cap, 0.0


class Coin:
    def __init__(self, p=0.5):
        self.p = p

    def repeat_until(self, instance, E0, target, cap, base_key):
        u = Stream(base_key).uniform(cap)
        hits = np.cumsum(u < self.p)
        idx = np.searchsorted(hits, target)
        reps = cap if idx >= cap else idx + 1
        return int(reps), float(hits[reps - 1])


class Fixed:
    """Reports success probability s exactly (fractional successes)."""

    def __init__(self, s):
        self.s = s

    def repeat_until(self, instance, E0, target, cap, base_key):
        return 1000, 1000 * self.s


def test_deterministic_solver():
    r = estimate_tau(Inst(0), Always(), -1)
    assert (r.s, r.tau, r.repetitions, r.successes, r.is_upper_bound) == (1.0, 1.0, 100, 100.0, False)


def test_never_succeeding_is_upper_bound():
    r = estimate_tau(Inst(3), Never(), -1, cap=10**6)
    assert r.is_upper_bound and r.s == 1e-6 and r.tau == 1e6 and r.repetitions == 10**6


def test_cap_below_target():
    with pytest.raises(InvalidParameter):
        estimate_tau(Inst(0), Always(), -1, target_successes=100, cap=99)


def test_coin_flip_tau():
    r = estimate_tau(Inst(0), Coin(), 0, base_key=2024)
    assert 1.8 <= r.tau <= 2.2
    # over many streams the hit rate of [1.8, 2.2] follows the negative binomial
    trials = 400
    inside = sum(1.8 <= estimate_tau(Inst(0), Coin(), 0, base_key=k).tau <= 2.2 for k in range(trials))
    p = nbinom.cdf(120, 100, 0.5) - nbinom.cdf(79, 100, 0.5)
    assert abs(inside / trials - p) < 4 * math.sqrt(p * (1 - p) / trials)


@settings(max_examples=300)
@given(st.integers(1, 10**6), st.floats(1e-3, 1.0))
def test_tau_times_s(reps, frac):
    class Stub:
        def repeat_until(self, *a):
            return reps, reps * frac

    r = estimate_tau(Inst(0), Stub(), 0, target_successes=1, cap=10**6)
    assert r.tau == 1.0 / r.s
    assert abs(r.tau * r.s - 1.0) <= 2.0**-52
    assert 0 < r.s <= 1 and r.repetitions >= r.successes - 1e-9


def _small_batch():
    g = build_chimera(2)
    insts = [generate_instance(g, 100 + i, i) for i in range(3)]
    return insts, {i.id: ground_energy(i) for i in insts}


@pytest.mark.parametrize("sched", [A.SaSchedule(50), A.SqaSchedule(50, 10.0), A.MfaSchedule(50, 4.0)])
def test_batch_parallel_determinism(tmp_path, sched):
    insts, e0 = _small_batch()
    out = []
    for threads in (1, 8):
        recs = batch_tts(insts, sched, e0, master_seed=7, threads=threads, target_successes=20)
        p = tmp_path / f"t{threads}.csv"
        write_tts_csv(recs, p)
        out.append(p.read_bytes())
    assert out[0] == out[1]


def test_missing_ground_energy_is_a_record():
    insts, e0 = _small_batch()
    del e0[1]
    recs = batch_tts(insts, A.SaSchedule(20), e0, target_successes=5)
    assert [r.ok for r in recs] == [True, False, True]
    assert "missing" in recs[1].error


def test_csv_round_trip_and_effort_identity(tmp_path):
    insts, e0 = _small_batch()
    recs = batch_tts(insts, A.SqaSchedule(30, 10.0), e0, target_successes=7)
    p = tmp_path / "r.csv"
    write_tts_csv(recs, p)
    back = read_tts_csv(p)
    assert back == recs
    assert p.read_text().splitlines()[0] == "instance_id,s,tau,repetitions,successes,is_upper_bound"
    for r, b in zip(recs, back):
        assert r.effort(30) == b.effort(30) == 30 * b.tau


def test_nearest_rank():
    x = np.arange(1, 11, dtype=float)
    assert [nearest_rank(x, q) for q in (0.5, 0.75, 0.9, 0.99, 0.01)] == [5, 8, 9, 10, 1]
    assert nearest_rank(np.arange(1, 101, dtype=float), 0.07) == 7
    with pytest.raises(InvalidParameter):
        nearest_rank(np.array([]), 0.5)


@given(st.lists(st.floats(0, 1e12), min_size=1, max_size=200))
def test_quantiles_monotone(values):
    t = quantile_table(values)
    assert t[0.5] <= t[0.75] <= t[0.9] <= t[0.99]


def test_bootstrap_ci():
    x = np.random.default_rng(0).exponential(size=500)
    ci = bootstrap_ci(x, seed=3)
    assert ci == bootstrap_ci(x, seed=3)
    q = quantile_table(x)
    for level in q:
        lo, hi = ci[level]
        assert lo <= q[level] <= hi


def _stub_family(best_t):
    def family(t_a):
        # effort t_a / s is convex in log t_a with its minimum at best_t
        eff = 1000 * (1 + math.log(t_a / best_t) ** 2)
        return Fixed(min(1.0, t_a / eff))

    return family


def test_scan_annealing_time_stub():
    insts = [Inst(i) for i in range(5)]
    e0 = {i: 0 for i in range(5)}
    res = scan_annealing_time(insts, _stub_family(100), [25, 50, 100, 200, 400], e0, n_boot=50)
    assert res.optimum == 100 and not res.quantiles_disagree
    for p in res.points:
        assert p.quantiles[0.5] <= p.quantiles[0.75] <= p.quantiles[0.9] <= p.quantiles[0.99]
    single = scan_annealing_time(insts[:1], _stub_family(100), [100], e0, n_boot=10)
    assert single.optimum == 100
    with pytest.raises(InvalidParameter):
        scan_annealing_time(insts, _stub_family(100), [], e0)
    with pytest.raises(InvalidParameter):
        scan_annealing_time(insts, _stub_family(100), [200, 100], e0)


def test_scan_flags_disagreeing_quantiles():
    insts = [Inst(i) for i in range(4)]
    e0 = {i: 0 for i in range(4)}

    def family(t_a):
        class PerInstance:
            def repeat_until(self, instance, E0, target, cap, base_key):
                # the hardest instance prefers long anneals, the rest short ones
                s = 0.02 * (t_a / 100) ** 2 if instance.id == 3 else min(1.0, 10 / t_a)
                return 1000, 1000 * s
        return PerInstance()

    res = scan_annealing_time(insts, family, [10, 100], e0, n_boot=10)
    assert res.optimum == 10 and res.per_quantile_optimum[0.99] == 100
    assert res.quantiles_disagree and res.to_json()["quantiles_disagree"]


def test_scan_beta_stub():
    insts = [Inst(i) for i in range(3)]
    e0 = {i: 0 for i in range(3)}

    def family(t_a, beta):
        eff = 1000 * (1 + (beta - 6) ** 2 / 10) * (1 + math.log(t_a / 100) ** 2)
        return Fixed(min(1.0, t_a / eff))

    res = scan_beta(insts, family, [2, 4, 6, 10], [50, 100, 200], e0, n_boot=20)
    assert res.optimum == 6
    assert all(p.t_a == 100 for p in res.points)
    assert scan_beta(insts, family, [4], [100], e0, n_boot=5).optimum == 4
    with pytest.raises(InvalidParameter):
        scan_beta(insts, family, [], [100], e0)


def test_running_mean():
    assert running_mean([2, 4, 6]).tolist() == [2, 3, 4]
    assert np.all(running_mean([3.5] * 50) == 3.5)
    with pytest.raises(InvalidParameter):
        running_mean([])


def test_running_mean_heavy_tail_statistic():
    # P(max > 1.5 median over the last decade) for Pareto xi = 1.1, N = 1e4,
    # from an independent scipy.stats.genpareto simulation: 0.4995 +- 0.011
    oracle, trials, n = 0.4995, 300, 10_000
    hits = 0
    for seed in range(trials):
        u = np.random.default_rng(seed).random(n)
        rm = running_mean(evt.gpd_quantile(evt.GpdParams(1.1, 0.0, 1.0), u))
        last = rm[n // 10 - 1:]
        hits += last.max() > 1.5 * np.median(last)
    assert abs(hits / trials - oracle) < 4 * math.sqrt(0.25 / trials) + 0.011


def test_correlation_pairs():
    recs = [TtsRecord(i, 1 / (i + 1), i + 1.0, 100, 100.0) for i in range(5)]
    same = correlation_pairs(recs, recs, 100, 100)
    assert (same.n_s_increase, same.n_effort_decrease) == (0, 0)
    assert all(r[1] == r[2] and r[3] == r[4] for r in same.rows)
    faster = [TtsRecord(i, 1 / (i + 2), i + 2.0, 100, 100.0) for i in range(5)]
    res = correlation_pairs(recs, faster, 1000, 100)
    assert res.n_s_increase == 0 and res.n_effort_decrease == 5
    with pytest.raises(InvalidParameter, match=r"\[5\]"):
        correlation_pairs(recs, recs + [TtsRecord(5, 1.0, 1.0, 1, 1.0)])

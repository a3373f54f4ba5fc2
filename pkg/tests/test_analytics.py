import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from saimc.analytics import (CostModel, EstimateRecord, RunningStats, agamma, beta_opt, compare_tau_counts, fom,
                             pilot_integrals, qs_from_b, qs_opt1, qs_opt2, qs_table, run_batch,
                             sample_variance_stderr, speedup, stealing_second_moment, summarize,
                             tau_conditional_hist, volume_fraction, vrr, vrr_curve, vrr_max, vrr_max_approx)
from saimc.chains import HIT, ChainConfig, run_chain


def _record(var, sps, t0=0.0, mean=1.0):
    return EstimateRecord("s", "c", 0.05, 0.5, 0.5, 8.0, 100, mean, var, math.sqrt(var / 100), sps, t0, 0.0, 0.0, 0)


def test_running_stats_merge_exact():
    rng = np.random.default_rng(0)
    xs = rng.lognormal(size=10001)
    ref_mean, ref_var = xs.mean(), xs.var(ddof=1)
    parts = np.array_split(xs, 7)
    s = RunningStats()
    for p in parts:
        s.merge(RunningStats.from_array(p))
    assert s.mean == pytest.approx(ref_mean, rel=1e-12)
    assert s.variance == pytest.approx(ref_var, rel=1e-12)
    # permutation of shards
    t = RunningStats()
    for p in reversed(parts):
        t.merge(RunningStats.from_array(p))
    assert t.mean == pytest.approx(s.mean, rel=1e-12) and t.variance == pytest.approx(s.variance, rel=1e-12)
    u = RunningStats()
    for x in xs[:500]:
        u.push(x)
    assert u.variance == pytest.approx(xs[:500].var(ddof=1), rel=1e-12)


def test_summarize_and_shard_invariance(cos3):
    a = run_chain(cos3, ChainConfig("sb"), 5000, 1, shard_size=512)
    r = summarize(a, "cos3", 0.05, 8.0, 1)
    assert r.mean == pytest.approx(a.score.mean(), rel=1e-12)
    assert r.variance == pytest.approx(a.score.var(ddof=1), rel=1e-12)
    assert r.N == 5000 and r.hits == a.count(HIT)
    assert list(r.row()) == ["scenario", "chain", "h", "q_s", "q_v", "mfp_mult", "N", "mean", "variance", "stderr",
                             "shots_per_sec", "t0_seconds", "fom_m10", "fom_minf", "seed"]
    with pytest.raises(ValueError):
        run_batch(cos3, ChainConfig("sb"), 0)


def test_sample_variance_stderr_normal():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200000)
    # for normal data the standard error of s^2 is sqrt(2/n)
    assert sample_variance_stderr(x) == pytest.approx(math.sqrt(2 / x.size), rel=0.02)


def test_fom_and_cost_model():
    assert fom(2.0, 0.5) == pytest.approx(1.0)
    assert fom(2.0, 0.5, t0=10.0, m=10, eps=1.0) == pytest.approx(0.5)
    assert CostModel().t0(0.1) == pytest.approx(1.7)
    with pytest.raises(ValueError):
        CostModel().t0(0.0)


def test_speedup_examples():
    r1 = _record(4.0, 1.0)
    r2 = _record(1.0, 2.0)
    assert speedup(r1, r2, 0.1) == pytest.approx(8.0)
    assert speedup(r1, r1, 0.1) == 1.0
    # the deterministic solve cost is amortized over m reuses
    r3 = _record(1.0, 2.0, t0=50.0)
    assert speedup(r1, r3, 0.1, m=10) == pytest.approx(40.0 / (5.0 + 0.5))
    with pytest.raises(ValueError):
        speedup(r1, r2, 0.0)
    with pytest.raises(ValueError):
        speedup(r1, r2, 0.1, m=0.5)


@settings(max_examples=100, deadline=None)
@given(v1=st.floats(1e-6, 1e3), s1=st.floats(1.0, 1e6), v2=st.floats(1e-6, 1e3), s2=st.floats(1.0, 1e6),
       c=st.floats(1e-3, 1e3))
def test_speedup_scale_invariance(v1, s1, v2, s2, c):
    base = speedup(_record(v1, s1), _record(v2, s2), 0.1)
    scaled = speedup(_record(v1 * c, s1), _record(v2 * c, s2), 0.1)
    assert scaled == pytest.approx(base, rel=1e-9)


def test_stealing_moment_and_vrr():
    # b = 1 leaves the estimator unchanged
    assert stealing_second_moment(1.0, 0.01, 0.5, 0.02) == pytest.approx(0.01)
    assert vrr(1.0, 0.01, 0.5, 0.02) == pytest.approx(1.0)
    # B = D with b -> 1/P[D] approaches the zero-variance change of measure
    assert vrr(0.999999 / 0.01, 0.01, 1.0, 0.01) > 1e5
    with pytest.raises(ValueError):
        vrr(200.0, 0.01, 0.5, 0.01)
    with pytest.raises(ValueError):
        vrr(2.0, 0.01, 0.5, 0.01, variant="other")


def _scan_beta(gamma, a):
    f = lambda beta: 1 / beta + a / (1 - gamma * beta)
    hi = 1 / gamma
    grid = np.linspace(hi * 1e-6, hi * (1 - 1e-9), 20001)
    k = int(np.argmin(f(grid)))
    res = minimize_scalar(f, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]), method="bounded",
                          options={"xatol": 1e-13})
    return res.x


@pytest.mark.parametrize("gamma", np.linspace(0.5, 5.0, 10))
@pytest.mark.parametrize("a", np.geomspace(0.01, 500, 10))
def test_beta_opt_scan_grid(gamma, a):
    assert beta_opt(gamma, a) == pytest.approx(_scan_beta(gamma, a), abs=1e-6)


def test_vrr_max_consistent_with_vrr():
    p_d, p_bd, gamma = 0.002, 0.9, 1.0
    g, a = agamma(p_d, p_bd, gamma * p_d)
    b = beta_opt(g, a) / p_d
    assert vrr(b, p_d, p_bd, gamma * p_d) == pytest.approx(vrr_max(p_d, p_bd, gamma), rel=1e-10)
    assert vrr_max(p_d, 1.0, 1.0) == math.inf
    assert vrr_max_approx(0.9) == pytest.approx(10.0)
    curve = vrr_curve(p_d, p_bd, gamma, np.linspace(0.01, 0.99, 50))
    assert np.nanmax(curve[:, 1]) <= vrr_max(p_d, p_bd, gamma) * (1 + 1e-12)


def test_qs_opt1():
    assert qs_opt1(1.0, 1.0) == pytest.approx(0.5)
    assert qs_opt1(1.0, 0.0) == 0.0
    assert qs_opt1(0.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        qs_opt1(0.0, 0.0)
    for ib, iv in [(1.0, 3.0), (0.2, 0.01), (5.0, 7.0)]:
        res = minimize_scalar(lambda q: ib / (1 - q) + iv / q, bounds=(1e-12, 1 - 1e-12), method="bounded",
                              options={"xatol": 1e-12})
        assert qs_opt1(ib, iv) == pytest.approx(res.x, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(ib=st.floats(1e-6, 1e6), r1=st.floats(1e-3, 1e3), r2=st.floats(1e-3, 1e3))
def test_qs_opt1_range_and_monotone(ib, r1, r2):
    lo, hi = sorted((r1, r2))
    assert 0 <= qs_opt1(ib, lo * ib) <= qs_opt1(ib, hi * ib) <= 1


def test_qs_opt2():
    assert qs_from_b(1.0, 0.3) == 1.0
    q = qs_opt2(0.0024, 20 / 21)
    assert 0 < q < 1
    assert q == pytest.approx(0.8255737748, rel=1e-8)
    # direct minimization of the stealing second moment over b agrees with the closed form
    p_d, p_bd = 0.0024, 20 / 21
    p_b = p_d * p_bd
    res = minimize_scalar(lambda b: stealing_second_moment(b, p_d, p_bd, p_b), bounds=(1.0, 1 / p_b * (1 - 1e-9)),
                          method="bounded", options={"xatol": 1e-10})
    assert qs_from_b(res.x, p_b) == pytest.approx(q, abs=1e-6)
    with pytest.raises(ValueError):
        qs_opt2(0.0, 0.5)
    rows = qs_table()
    assert [r["mfp_mult"] for r in rows] == [16, 8, 2.7, 1.3]
    assert all(0 <= r["q_s"] <= 1 for r in rows)


def test_pilot_integrals_and_volume_fraction(cos3, cos3_tables):
    b = run_chain(cos3, ChainConfig("sai", 0.5, 0.5), 50000, 2, cos3_tables)
    ib, iv = pilot_integrals(b)
    assert ib > 0 and iv > 0
    assert 0 <= qs_opt1(ib, iv) <= 1
    a = run_chain(cos3, ChainConfig("analog"), 200000, 2)
    pv = volume_fraction(a)
    assert 0 < pv < 0.5
    with pytest.raises(ValueError):
        volume_fraction(b)


def test_tau_histogram(circle):
    b = run_chain(circle, ChainConfig("analog"), 20000, 3)
    h = tau_conditional_hist(b.tau, b.flags)
    assert h.sum() == pytest.approx(1.0) and h[0] == 0
    with pytest.raises(ValueError):
        tau_conditional_hist(b.tau, np.zeros_like(b.flags))


def test_compare_tau_counts(circle):
    rng = np.random.default_rng(4)
    p = np.array([0.5, 0.3, 0.15, 0.05])
    c1 = rng.multinomial(20000, p)
    c2 = rng.multinomial(20000, p)
    _, pval, dof = compare_tau_counts(c1, c2)
    assert dof == 3 and pval > 1e-3
    c3 = rng.multinomial(20000, [0.4, 0.35, 0.2, 0.05])
    assert compare_tau_counts(c1, c3)[1] < 1e-6
    assert compare_tau_counts([5, 0, 0], [7, 0, 0]) == (0.0, 1.0, 0)

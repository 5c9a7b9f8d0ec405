import math

import numpy as np
import pytest
from scipy import stats

from aoi_mesh.config import NetworkConfig
from aoi_mesh.meanfield import solve_fixed_point
from aoi_mesh.simulation import (LinkStates, empirical_active_fraction, empirical_success_prob,
                                 run_simulation, sample_topologies, simulate_topologies, step_slot)
from aoi_mesh.topology import Topology, isolated_links, single_link

QUIET = 1e-30  # noise power that makes the noise outage negligible


def test_reference_step_perfect_link_age_one():
    cfg = NetworkConfig(lambda_=0, xi=1.0, p=1.0, noise=QUIET)
    tp = single_link(cfg)
    st = LinkStates.fresh(1)
    rng = np.random.default_rng(0)
    for t in range(500):
        step_slot(tp, st, cfg, rng, t)
        assert st.age[0] == 1
    assert st.successes[0] == st.attempts[0] == 500


def test_default_link_success_probability():
    cfg = NetworkConfig()
    # exp(-0.5^3.8 / 5.01187e10), evaluated by hand
    assert cfg.mu_max == pytest.approx(1 - 1.43e-12, abs=1e-14)


def test_two_links_threshold_enumeration():
    # mirror-symmetric pair with unit fades: each receiver hears the other
    # transmitter from distance x, so at theta = 1 success iff x > r
    cfg = NetworkConfig(xi=1.0, p=1.0)
    r = cfg.r
    for x, want in [(0.1, False), (0.3, False), (0.49, False), (0.51, True), (1.0, True)]:
        tp = Topology.from_points([[10, 10], [10 + r, 10 + x]], [[10 + r, 10], [10, 10 + x]], 300.0)
        assert tp.cross_distances()[0, 1] == pytest.approx(x)
        sinr = r ** -cfg.alpha / (x ** -cfg.alpha + cfg.noise / cfg.p_tx)
        assert (sinr > cfg.theta) == want
        st = LinkStates.fresh(2)
        step_slot(tp, st, cfg, np.random.default_rng(0), 0, fades=np.ones((2, 2)))
        assert list(st.successes) == [int(want)] * 2


def test_reference_and_fast_engine_agree():
    cfg = NetworkConfig(lambda_=0.3, window=12.0, xi=0.6, p=0.7)
    tp = sample_topologies(cfg, 1, seed=3)[0]
    n = len(tp)
    assert n > 20
    slots = 6000
    st = LinkStates.fresh(n)
    rng = np.random.default_rng(9)
    for t in range(slots):
        step_slot(tp, st, cfg, rng, t)
    ref_rate = st.successes.sum() / st.attempts.sum()
    fast = simulate_topologies([tp], cfg, seed=5, warmup_slots=0, measure_slots=slots, radius=1.5)
    fast_rate = np.nansum(fast.emp_success_prob * fast.attempts) / fast.attempts.sum()
    assert abs(ref_rate - fast_rate) < 0.02
    assert abs(st.age_sum.mean() / slots - fast.avg_aoi.mean()) < 0.05 * fast.avg_aoi.mean()


def test_fast_engine_no_cutoff_radius_invariance():
    cfg = NetworkConfig(lambda_=0.1, window=30.0, xi=0.7, p=1.0)
    tp = sample_topologies(cfg, 1, seed=1)
    a = simulate_topologies(tp, cfg, warmup_slots=200, measure_slots=3000, radius=1.0)
    b = simulate_topologies(tp, cfg, warmup_slots=200, measure_slots=3000, radius=10.0)
    pa = np.nansum(a.emp_success_prob * a.attempts) / a.attempts.sum()
    pb = np.nansum(b.emp_success_prob * b.attempts) / b.attempts.sum()
    assert abs(pa - pb) < 0.01


@pytest.mark.parametrize("xi,p,want", [(0.5, 1.0, 2.0), (0.5, 0.5, 3.0)])
def test_isolated_link_aoi(xi, p, want):
    cfg = NetworkConfig(lambda_=0, xi=xi, p=p, noise=QUIET)
    rep = simulate_topologies([isolated_links(cfg, 16)], cfg, seed=2, warmup_slots=100,
                              measure_slots=100_000)
    se = rep.avg_aoi.std(ddof=1) / math.sqrt(16)
    assert abs(rep.avg_aoi.mean() - want) < 3 * se
    assert np.allclose(rep.emp_success_prob, 1.0)


def test_active_fraction_full_arrivals():
    cfg = NetworkConfig(lambda_=0, xi=1.0, p=0.35)
    rep = simulate_topologies([isolated_links(cfg, 25)], cfg, seed=1, warmup_slots=10,
                              measure_slots=20_000)
    se = math.sqrt(0.35 * 0.65 / 20_000)
    assert abs(rep.emp_active_prob.mean() - 0.35) < 3 * se / math.sqrt(25)


def test_two_symmetric_links_vs_meanfield():
    cfg = NetworkConfig(xi=0.5, p=0.8)
    tp = Topology.from_points([[10, 10], [10.5, 10.6]], [[10.5, 10], [10, 10.6]], 300.0)
    rep = simulate_topologies([tp], cfg, seed=4, warmup_slots=200, measure_slots=50_000)
    mf = solve_fixed_point(tp, cfg)
    assert np.all(np.abs(rep.emp_success_prob - mf.mu) < 0.05)


def test_undefined_success_marker():
    st = LinkStates.fresh(3)
    assert np.all(np.isnan(empirical_success_prob(st)))
    with pytest.raises(ValueError):
        empirical_active_fraction(st)


def test_topology_count_and_empty_flag():
    with pytest.raises(ValueError):
        run_simulation(NetworkConfig(), 0)
    rep = run_simulation(NetworkConfig(lambda_=0.0, measure_slots=10, warmup_slots=0), 2)
    assert rep.empty_topologies == 2 and "empty_topology" in rep.flags
    assert math.isnan(rep.network_avg_aoi)


def test_denser_network_ages_more():
    base = NetworkConfig(xi=0.75, window=100.0, warmup_slots=300, measure_slots=2000)
    lo = run_simulation(base.replace(lambda_=1e-2), 4, rng=8)
    hi = run_simulation(base.replace(lambda_=5e-2), 4, rng=8)
    assert math.isfinite(hi.network_avg_aoi)
    assert hi.network_avg_aoi > lo.network_avg_aoi


def test_network_average_is_link_mean():
    cfg = NetworkConfig(lambda_=2e-2, window=60.0, warmup_slots=50, measure_slots=300)
    rep = run_simulation(cfg, 3, rng=2)
    assert rep.network_avg_aoi == pytest.approx(rep.avg_aoi.mean())
    assert len(rep.per_link) == len(rep.avg_aoi)
    assert rep.slots_simulated == 350 and rep.topology_count == 3


def test_deterministic():
    cfg = NetworkConfig(lambda_=3e-2, window=50.0, warmup_slots=50, measure_slots=400, seed=77)
    a, b = run_simulation(cfg, 2), run_simulation(cfg, 2)
    assert np.array_equal(a.avg_aoi, b.avg_aoi)
    assert np.array_equal(a.emp_success_prob, b.emp_success_prob, equal_nan=True)
    assert a.network_avg_aoi_stderr == b.network_avg_aoi_stderr
    c = run_simulation(cfg.replace(seed=78), 2)
    assert not np.array_equal(a.avg_aoi[:5], c.avg_aoi[:5]) or len(a.avg_aoi) != len(c.avg_aoi)


def test_generator_seed_accepted():
    cfg = NetworkConfig(lambda_=1e-2, window=40.0, warmup_slots=10, measure_slots=50)
    a = run_simulation(cfg, 1, rng=np.random.default_rng(5))
    b = run_simulation(cfg, 1, rng=np.random.default_rng(5))
    assert np.array_equal(a.avg_aoi, b.avg_aoi)


def test_age_recursion_and_lcfs():
    cfg = NetworkConfig(lambda_=0.2, window=15.0, xi=0.4, p=0.6)
    tp = sample_topologies(cfg, 1, seed=6)[0]
    n = len(tp)
    st = LinkStates.fresh(n)
    rng = np.random.default_rng(1)
    last_arrival = np.full(n, -1)
    for t in range(2000):
        age_before = st.age.copy()
        gen_before = st.generation.copy()
        succ_before = st.successes.copy()
        rng_state = rng.bit_generator.state
        peek = np.random.default_rng()
        peek.bit_generator.state = rng_state
        arrived = peek.random(n) < cfg.xi
        last_arrival[arrived] = t
        step_slot(tp, st, cfg, rng, t)
        delivered = st.successes > succ_before
        gen_used = np.where(arrived, t, gen_before)
        assert np.all(st.age[delivered] == t - gen_used[delivered] + 1)
        assert np.all(st.age >= 1)
        assert np.all(st.age[~delivered] == age_before[~delivered] + 1)
        # buffered packet is always the newest arrival
        held = st.generation >= 0
        assert np.all(st.generation[held] == last_arrival[held])
        assert np.all(st.generation[held] >= gen_before[held])
    assert np.all(st.successes <= st.attempts) and np.all(st.attempts == st.active_slots)


def _lifetime_cdf(x, q):
    """CDF of L - U, L ~ Geometric(q) on {1, 2, ...}, U ~ Unif(0, 1)."""
    x = np.asarray(x, dtype=float)
    k = np.floor(x)
    geo = 1 - (1 - q) ** np.maximum(k, 0)
    nxt = 1 - (1 - q) ** np.maximum(k + 1, 0)
    return np.where(x <= 0, 0.0, geo + (x - k) * (nxt - geo))


@pytest.mark.parametrize("xi,p,q", [(0.3, 0.6, 0.9), (0.7, 0.4, 1.0)])
def test_isolated_lifetime_geometric(xi, p, q):
    cfg = NetworkConfig(lambda_=0, xi=xi, p=p * q, noise=QUIET)
    rep = simulate_topologies([isolated_links(cfg, 20)], cfg, seed=3, warmup_slots=50,
                              measure_slots=30_000, record_lifetimes=True)
    L = rep.lifetimes
    assert L.size >= 100_000 and L.min() >= 1
    u = np.random.default_rng(0).random(L.size)
    rate = 1 - (1 - p * q) * (1 - xi)
    assert stats.kstest(L - u, lambda x: _lifetime_cdf(x, rate)).pvalue > 0.01


@pytest.mark.parametrize("xi,pmu", [(0.25, 0.75), (0.6, 0.3)])
def test_buffer_occupancy(xi, pmu):
    cfg = NetworkConfig(lambda_=0, xi=xi, p=pmu, noise=QUIET)
    rep = simulate_topologies([isolated_links(cfg, 30)], cfg, seed=5, warmup_slots=100,
                              measure_slots=20_000)
    mu = rep.emp_success_prob
    want = xi / (xi + (1 - xi) * cfg.p * mu)
    diff = rep.nonempty_fraction - want
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / math.sqrt(diff.size)

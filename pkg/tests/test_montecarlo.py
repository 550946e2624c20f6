import numpy as np
import pytest
from scipy import stats

from aidnet.cases import build_case1, parse_scenario, random_toy_dict
from aidnet.evaluator import reliability, success_probs
from aidnet.montecarlo import CHUNK, simulate
from aidnet.scenario import DispatchPlan
from aidnet.warmstart import warm_start


def case1_optimum():
    s = build_case1()
    p = DispatchPlan.empty(s)
    p.u_fa[0, 0] = p.u_df[0, 0] = p.u_sd[0, 0] = 1
    p.t_fa[:], p.t_df[:], p.t_sd[:] = 4.400331, 1.713207, 0.0
    p.b_fa[:], p.b_df[:], p.b_sd[:] = 4.0, 2.0, 4.0
    return s, p


def random_toy_plan(seed):
    """Random toy with its warm-start dispatch and random departure times."""
    rng = np.random.default_rng(seed)
    s = parse_scenario(random_toy_dict(rng, n_commodities=int(rng.integers(1, 3)), tight=bool(seed % 2)))
    p = warm_start(s).plan
    horizon = float(np.max(s.demand_times))
    for name, lv, pair in (("t_fa", "F", "FA"), ("t_df", "D", "DF"), ("t_sd", "S", "SD")):
        t = getattr(p, name)
        avail = s.fleets[lv].available_at
        t[:] = np.where(p.dispatched(pair), avail + rng.uniform(0.0, 0.6 * horizon, t.size), np.inf)
    return s, p


def test_case1_agrees_with_closed_form():
    s, p = case1_optimum()
    res = simulate(s, p, 1_000_000, seed=11)
    assert res.R_analytic == pytest.approx(59.32, abs=0.05)
    assert res.std_err < 0.06
    assert abs(res.R_hat - 59.32) <= 3 * res.std_err + 0.01
    assert abs(res.R_hat - res.R_analytic) <= 3 * res.std_err


def test_single_leg_frequency_matches_probability():
    s, p = case1_optimum()
    p.u_df[:] = 0
    p.u_sd[:] = 0
    p.b_df[:] = p.b_sd[:] = 0.0
    p.t_df[:] = p.t_sd[:] = np.inf
    # With a tiny penalty scale, a late arrival counts almost nothing, so
    # the contribution per sample is (nearly) a Bernoulli indicator.
    n = 100_000
    res = simulate(s, p, n, seed=2)
    prob = success_probs(s, p)["FA"][0, 0]
    freq = res.R_hat / (100.0 * 0.4)
    assert abs(freq - prob) <= 3 * np.sqrt(prob * (1 - prob) / n)


def test_connection_miss_rate_matches_cdf():
    s, p = case1_optimum()
    n = 200_000
    res = simulate(s, p, n, seed=5)
    miss = res.miss_rates["D0->F0"]
    expected = stats.norm(2.5, 0.8).sf(p.t_fa[0] - p.t_df[0])
    assert abs(miss - expected) <= 4 * np.sqrt(expected * (1 - expected) / n)
    miss = res.miss_rates["S0->D0"]
    expected = stats.norm(1.5, 0.3).sf(p.t_df[0] - p.t_sd[0])
    assert abs(miss - expected) <= 4 * np.sqrt(expected * (1 - expected) / n)


def test_infinite_deadline_removes_delivery_variance():
    s, p = case1_optimum()
    s = s.replace(demand_times=np.full_like(s.demand_times, np.inf))
    p.u_df[:] = p.u_sd[:] = 0
    p.b_df[:] = p.b_sd[:] = 0.0
    res = simulate(s, p, 10_000, seed=0)
    assert res.std_err == 0.0
    assert res.R_hat == pytest.approx(40.0, abs=1e-12)
    assert res.R_hat == pytest.approx(reliability(s, p), abs=1e-12)


def test_seed_determinism_and_thread_independence():
    s, p = case1_optimum()
    n = 3 * CHUNK + 17
    a = simulate(s, p, n, seed=123)
    b = simulate(s, p, n, seed=123, threads=4)
    c = simulate(s, p, n, seed=124)
    assert a.R_hat == b.R_hat and a.std_err == b.std_err
    assert np.array_equal(a.hist_counts, b.hist_counts)
    assert a.R_hat != c.R_hat


def test_repeat_runs_are_identical():
    s, p = case1_optimum()
    a = simulate(s, p, CHUNK, seed=9)
    b = simulate(s, p, 2 * CHUNK, seed=9)
    c = simulate(s, p, CHUNK, seed=9)
    assert a.R_hat == c.R_hat
    assert b.R_hat != a.R_hat


def test_histogram_accounts_for_every_delivery():
    s, p = case1_optimum()
    n = 50_000
    res = simulate(s, p, n, seed=1)
    assert res.on_time + int(res.hist_counts.sum()) == n * s.n_E
    rows = res.histogram_rows()
    assert rows[0][0] == -np.inf and rows[0][2] == res.on_time


def test_rejects_empty_sample():
    s, p = case1_optimum()
    with pytest.raises(ValueError):
        simulate(s, p, 0)


def test_random_toys_agree():
    """50 toys at 2e5 samples; at least 48 within four standard errors."""
    outside = []
    for seed in range(50):
        s, p = random_toy_plan(1000 + seed)
        res = simulate(s, p, 200_000, seed=seed)
        if abs(res.R_hat - res.R_analytic) > 4 * res.std_err:
            outside.append((seed, res.R_hat, res.R_analytic, res.std_err))
    assert len(outside) <= 2, outside

import math

import numpy as np
import pytest
from scipy import stats

from aidnet.cases import build_case1, build_case2, parse_scenario, random_toy_dict
from aidnet.evaluator import (
    CONSTRAINT_FAMILIES,
    check_constraints,
    metrics,
    reliability,
    reliability_batch,
    reliability_gradient,
    success_probs,
    time_intervals_FA,
)
from aidnet.prob import penalized_success_prob
from aidnet.scenario import DispatchPlan


def case1_plan(t_f=4.399, t_d=1.712, t_s=0.0):
    s = build_case1()
    p = DispatchPlan.empty(s)
    p.u_fa[0, 0] = p.u_df[0, 0] = p.u_sd[0, 0] = 1
    p.t_fa[:] = t_f
    p.t_df[:] = t_d
    p.t_sd[:] = t_s
    p.b_fa[:] = 4.0
    p.b_df[:] = 2.0
    p.b_sd[:] = 4.0
    return s, p


def random_plan(s, rng):
    """Plan with random binaries, times and cargo (not necessarily feasible)."""
    p = DispatchPlan.empty(s)
    for pair, u, t, lv in (("FA", p.u_fa, p.t_fa, "F"), ("DF", p.u_df, p.t_df, "D"), ("SD", p.u_sd, p.t_sd, "S")):
        conn = s.edges[pair].connectivity
        for v in range(u.shape[0]):
            options = np.flatnonzero(conn[v])
            if options.size and rng.uniform() < 0.8:
                u[v, rng.choice(options)] = 1
                t[v] = rng.uniform(0.0, 4.0)
    p.b_fa[:] = rng.uniform(0, 3, p.b_fa.shape)
    p.b_df[:] = rng.uniform(0, 3, p.b_df.shape)
    p.b_sd[:] = rng.uniform(0, 3, p.b_sd.shape)
    return p


# ---------------------------------------------------------------- oracle

def loop_reliability(s, p):
    """Direct triple-loop evaluation using scipy distributions."""

    def frozen(d):
        if d.kind == "normal":
            return stats.norm(d.mu, d.sigma)
        return stats.gamma(d.kappa, scale=d.theta)

    homeF, homeD = s.fleets["F"].home, s.fleets["D"].home
    total = 0.0
    lam = sum(s.weights[e] * s.demand_amounts[e].sum() for e in range(s.n_E))
    for f in range(s.m("F")):
        if p.u_fa[f].sum() == 0:
            continue
        a = int(np.argmax(p.u_fa[f]))
        dfa = s.edges["FA"].dist(f, a)
        for e in range(s.n_E):
            pfa = penalized_success_prob(dfa, s.demand_times[e, a] - p.t_fa[f], s.zeta[e, f])
            g = p.b_fa[e, f]
            for d in range(s.m("D")):
                if p.u_df[d].sum() == 0 or int(np.argmax(p.u_df[d])) != homeF[f]:
                    continue
                gap = p.t_fa[f] - p.t_df[d]
                pdf = frozen(s.edges["DF"].dist(d, homeF[f])).cdf(gap) if gap > 0 else 0.0
                h = p.b_df[e, d, f]
                for v in range(s.m("S")):
                    if p.u_sd[v].sum() == 0 or int(np.argmax(p.u_sd[v])) != homeD[d]:
                        continue
                    gap2 = p.t_df[d] - p.t_sd[v]
                    psd = frozen(s.edges["SD"].dist(v, homeD[d])).cdf(gap2) if gap2 > 0 else 0.0
                    h += psd * p.b_sd[e, v, d, f]
                g += pdf * h
            total += s.weights[e] * pfa * g
    return 100.0 * total / lam


# ---------------------------------------------------------------- case 1

def test_case1_probabilities():
    s, p = case1_plan()
    P = success_probs(s, p)
    assert P["FA"][0, 0] == pytest.approx(0.8493, abs=5e-4)
    assert P["DF"][0, 0] == pytest.approx(stats.norm.cdf((4.399 - 1.712 - 2.5) / 0.8), abs=1e-12)
    assert P["SD"][0, 0] == pytest.approx(stats.norm.cdf((1.712 - 1.5) / 0.3), abs=1e-12)


def test_case1_reliability_value():
    s, p = case1_plan()
    # Hand oracle: 100/10 * sum_e 0.2 * P_fa * (4 + P_df * (2 + P_sd * 4)).
    pfa = penalized_success_prob(s.edges["FA"].dist(0, 0), 6.2 - 4.399, 0.001)
    pdf = stats.norm.cdf((4.399 - 1.712 - 2.5) / 0.8)
    psd = stats.norm.cdf((1.712 - 1.5) / 0.3)
    expected = 10.0 * pfa * (4 + pdf * (2 + psd * 4))
    assert reliability(s, p) == pytest.approx(expected, rel=1e-12)
    assert reliability(s, p) == pytest.approx(59.32, abs=0.05)


def test_force_prob_one_gives_full_stock_fraction():
    s, p = case1_plan()
    assert reliability(s, p, force_prob_one=True) == pytest.approx(100.0)


def test_time_intervals():
    s, p = case1_plan()
    assert np.allclose(time_intervals_FA(s, p), 6.2 - 4.399)
    empty = DispatchPlan.empty(s)
    assert np.all(np.isneginf(time_intervals_FA(s, empty)))


def test_empty_plan_zero():
    s = build_case2()
    p = DispatchPlan.empty(s)
    assert reliability(s, p) == 0.0
    m = metrics(s, p)
    assert m.load_factor_avg == 0.0
    assert m.n_dispatched == 0


def test_batch_matches_scalar():
    s, p = case1_plan()
    tf = np.array([[4.0], [4.399], [5.1]])
    td = np.array([[1.0], [1.712], [2.0]])
    ts = np.zeros((3, 1))
    batch = reliability_batch(s, p, tf, td, ts)
    for i in range(3):
        q = p.copy()
        q.t_fa[:] = tf[i]
        q.t_df[:] = td[i]
        assert batch[i] == pytest.approx(reliability(s, q), abs=1e-12)


# ---------------------------------------------------------------- oracle comparisons

@pytest.mark.parametrize("seed", range(8))
def test_matches_loop_oracle_random(seed):
    rng = np.random.default_rng(seed)
    s = parse_scenario(random_toy_dict(rng, n_nodes=2, n_vehicles=3, n_commodities=2))
    p = random_plan(s, rng)
    assert reliability(s, p) == pytest.approx(loop_reliability(s, p), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    s = parse_scenario(random_toy_dict(rng, n_nodes=2, n_vehicles=2, n_commodities=2))
    p = random_plan(s, rng)
    grad = reliability_gradient(s, p)
    h = 1e-5
    for key in ("t_fa", "t_df", "t_sd", "b_fa", "b_df", "b_sd"):
        arr = getattr(p, key)
        for idx in np.ndindex(arr.shape):
            if not np.isfinite(arr[idx]):
                assert grad[key][idx] == 0.0
                continue
            plus, minus = p.copy(), p.copy()
            getattr(plus, key)[idx] += h
            getattr(minus, key)[idx] -= h
            fd = (reliability(s, plus) - reliability(s, minus)) / (2 * h)
            assert grad[key][idx] == pytest.approx(fd, rel=1e-4, abs=1e-6), (key, idx)


# ---------------------------------------------------------------- constraints

def test_case1_plan_feasible():
    s, p = case1_plan()
    report = check_constraints(s, p)
    assert report.satisfied
    assert set(report.families) == set(CONSTRAINT_FAMILIES)


def test_one_destination_violation():
    s = build_case2()
    p = DispatchPlan.empty(s)
    p.u_fa[0, 0] = p.u_fa[0, 1] = 1
    p.t_fa[0] = 1.0
    report = check_constraints(s, p)
    assert report["one_destination"].violation == pytest.approx(1.0)
    assert report.violated() == ["one_destination"]


def test_budget_violation_amount():
    data = build_case2()
    s = data.replace(budget=0.0)
    p = DispatchPlan.empty(s)
    p.u_fa[0, 0] = 1
    p.t_fa[0] = 1.0
    cost = s.edges["FA"].cost[0, 0]
    s = s.replace(budget=cost - 10.0)
    assert check_constraints(s, p)["budget"].violation == pytest.approx(10.0)
    s = s.replace(budget=cost)
    assert check_constraints(s, p)["budget"].satisfied
    assert check_constraints(s, p)["budget"].binding.all()


def test_demand_and_availability_violations():
    s, p = case1_plan()
    p.b_fa[:] = 5.0  # stock at F is 4
    report = check_constraints(s, p)
    assert report["availability_F"].violation == pytest.approx(1.0)
    assert report["demand"].violation == pytest.approx(1.0)  # 5 + 2 + 4 > 10
    assert report["availability_F"].satisfied is False


def test_consistency_violation_for_mismatched_destination():
    s = build_case2()
    p = DispatchPlan.empty(s)
    p.u_fa[0, 0] = 1  # F vehicle 0 lives at node 0
    p.t_fa[0] = 4.0
    p.u_df[0, 1] = 1  # D vehicle goes to F node 1
    p.t_df[0] = 1.0
    p.b_df[0, 0, 0] = 2.0
    assert check_constraints(s, p)["consistency_DF"].violation == pytest.approx(2.0)


def test_dispatch_time_and_binary():
    s, p = case1_plan(t_s=-0.5)
    report = check_constraints(s, p)
    assert report["dispatch_time"].violation == pytest.approx(0.5)
    p2 = case1_plan()[1]
    p2.u_fa = p2.u_fa.astype(float)
    p2.u_fa[0, 0] = 0.5
    assert check_constraints(s, p2)["binary"].violation == pytest.approx(0.5)


def loop_constraint_violations(s, p):
    """Independent scalar re-coding of the demand, availability and capacity checks."""
    out = {}
    worst = 0.0
    for e in range(s.n_E):
        for a in range(s.n("A")):
            load = 0.0
            for f in range(s.m("F")):
                if p.u_fa[f, a]:
                    load += p.b_fa[e, f] + p.b_df[e, :, f].sum() + p.b_sd[e, :, :, f].sum()
            worst = max(worst, load - s.demand_amounts[e, a])
    out["demand"] = worst
    worst = 0.0
    for e in range(s.n_E):
        for n in range(s.n("F")):
            used = sum(p.b_fa[e, f] for f in range(s.m("F")) if s.fleets["F"].home[f] == n)
            worst = max(worst, used - s.availability["F"][e, n])
    out["availability_F"] = worst
    worst = 0.0
    for d in range(s.m("D")):
        used = sum(s.capacity_use[e] * (p.b_df[e, d].sum() + p.b_sd[e, :, d].sum()) for e in range(s.n_E))
        worst = max(worst, used - s.fleets["D"].capacity[d])
    out["capacity_D"] = worst
    return out


@pytest.mark.parametrize("seed", range(10))
def test_constraints_match_loop_recoding(seed):
    rng = np.random.default_rng(500 + seed)
    s = parse_scenario(random_toy_dict(rng, n_nodes=2, n_vehicles=3, n_commodities=2))
    p = random_plan(s, rng)
    report = check_constraints(s, p)
    for name, viol in loop_constraint_violations(s, p).items():
        assert report[name].violation == pytest.approx(viol, abs=1e-12), name


# ---------------------------------------------------------------- metrics

def test_case2_ceiling():
    assert metrics(build_case2(), DispatchPlan.empty(build_case2())).ceiling == pytest.approx(85.0)


def test_load_factors_and_parallel():
    s = build_case2()
    p = DispatchPlan.empty(s)
    # Both F vehicles at node 0 go to destination 2.
    p.u_fa[0, 2] = p.u_fa[1, 2] = 1
    p.t_fa[:2] = 1.0
    p.b_fa[0, 0] = 12.0
    p.b_fa[0, 1] = 6.0
    m = metrics(s, p)
    assert m.load_factors["F"][0] == pytest.approx(0.2)
    assert m.load_factors["F"][1] == pytest.approx(0.1)
    assert m.load_factor_avg == pytest.approx(0.15)
    assert m.n_dispatched == 2
    assert m.parallel["FA"][0, 2] == 1 and m.parallel["FA"][1, 2] == 1
    assert m.parallel["FA"].sum() == 2
    assert m.unsatisfied[0, 2] == pytest.approx(2.0)
    assert m.unsatisfied[0, 0] == pytest.approx(20.0)


def test_deficit_and_achieved_split():
    s, p = case1_plan()
    m = metrics(s, p)
    assert np.allclose(m.achieved + m.deficit, 100.0 * s.weights[:, None])
    # Single destination with equal demands, so the shares add up to R.
    assert m.achieved.sum() == pytest.approx(m.R)


def test_binding_causes_reports_availability():
    s, p = case1_plan()
    assert "availability_F" in metrics(s, p).binding_causes


def projected_time_gradient(s, p):
    g = reliability_gradient(s, p)
    parts = []
    for key, lv in (("t_fa", "F"), ("t_df", "D"), ("t_sd", "S")):
        t, gk = getattr(p, key), g[key].copy()
        at_lower = np.isclose(t, s.fleets[lv].available_at)
        gk[at_lower & (gk < 0)] = 0.0  # moving below availability is not allowed
        parts.append(gk)
    return np.linalg.norm(np.concatenate(parts))


def test_case1_reported_optimum_is_stationary():
    """Projected time gradient at the reported optimal times (4.399, 1.712, 0)."""
    s, p = case1_plan()
    assert projected_time_gradient(s, p) <= 1e-3


def test_case1_stationary_point_near_reported_times():
    from scipy.optimize import minimize

    s, p = case1_plan()

    def neg(x):
        q = p.copy()
        q.t_fa[:], q.t_df[:] = x
        return -reliability(s, q)

    res = minimize(neg, [4.399, 1.712], method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-13})
    assert np.allclose(res.x, [4.399, 1.712], atol=2e-3)
    q = p.copy()
    q.t_fa[:], q.t_df[:] = res.x
    assert projected_time_gradient(s, q) <= 1e-4
    assert -res.fun == pytest.approx(59.32, abs=0.05)


def test_cargo_scaling_linear():
    s, p = case1_plan()
    q = p.copy()
    q.b_fa *= 0.37
    q.b_df *= 0.37
    q.b_sd *= 0.37
    assert reliability(s, q) == pytest.approx(0.37 * reliability(s, p), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_reliability_below_ceiling_for_feasible_plans(seed):
    rng = np.random.default_rng(900 + seed)
    s = parse_scenario(random_toy_dict(rng, n_nodes=2, n_vehicles=2, n_commodities=2))
    from aidnet.warmstart import warm_start

    plan = warm_start(s).plan
    assert check_constraints(s, plan).satisfied
    m = metrics(s, plan)
    assert 0.0 <= m.R <= min(100.0, m.ceiling + 1e-6)

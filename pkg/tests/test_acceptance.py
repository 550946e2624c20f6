"""Acceptance checks, one test per criterion.

Every test prints a single line ``PASS criterion N: ...`` or
``FAIL criterion N: ...`` (shown even without ``-s``) and then asserts.
Run just this file with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time
import warnings

import numpy as np
import pytest

from aidnet.cases import build_case1, case1_dict, case2_dict, parse_scenario, random_toy_dict
from aidnet.cli import main
from aidnet.contour import contour_grid, local_maxima
from aidnet.evaluator import check_constraints, reliability, reliability_gradient
from aidnet.homotopy import HomotopyConfig, homotopy_solve, projected_gradient_norm, start_times, zeta_start
from aidnet.linsolve import BinaryProgram, LinearProgram, LPStatus, solve_bip, solve_lp
from aidnet.montecarlo import simulate
from aidnet.preprocess import preprocess
from aidnet.prob import Gamma, Normal, cdf, penalized_success_prob
from aidnet.scenario import DispatchPlan, load_scenario
from aidnet.search import search, tighten_budget

from oracles import brute_force
from test_evaluator import random_plan
from test_linsolve import enumerate_binary, vertex_enumeration
from test_montecarlo import random_toy_plan


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def case1_solve(tmp_path_factory):
    d = tmp_path_factory.mktemp("case1")
    scen = d / "case1.json"
    scen.write_text(json.dumps(case1_dict()))
    out = d / "report.json"
    t0 = time.perf_counter()
    code = main(["solve", str(scen), "--out", str(out), "--threads", "1"])
    runtime = time.perf_counter() - t0
    return scen, code, json.loads(out.read_text()), runtime


# ---------------------------------------------------------------- 1

def test_criterion_1_case1_endpoint(case1_solve, report):
    _, code, doc, runtime = case1_solve
    plan = doc["plan"]
    t_fa, t_df, t_sd = plan["t_fa"][0], plan["t_df"][0], plan["t_sd"][0]
    ok = (
        code == 0
        and abs(doc["R"] - 59.32) <= 0.05
        and abs(t_fa - 4.399) <= 0.01
        and abs(t_df - 1.712) <= 0.01
        and t_sd == 0.0
        and runtime < 10.0
    )
    report(1, ok, f"R={doc['R']:.4f} t=({t_fa:.4f}, {t_df:.4f}, {t_sd}) runtime={runtime:.2f}s")
    assert ok


# ---------------------------------------------------------------- 2

def test_criterion_2_case1_contour(case1_solve, report):
    scen, _, doc, _ = case1_solve
    s = load_scenario(scen)
    plan = DispatchPlan.from_dict(doc["plan"], s)
    grid = contour_grid(s, plan, "t_fa[0]", "t_df[0]", (0.0, 6.0), (0.0, 6.0), n=200, zeta=0.001)
    x, y, R = grid.argmax
    cell = 6.0 / 199
    peaks = local_maxima(grid)
    ok = abs(x - 4.399) <= cell and abs(y - 1.712) <= cell and len(peaks) >= 2
    report(2, ok, f"argmax=({x:.4f}, {y:.4f}) R={R:.4f} cell={cell:.4f} local maxima={len(peaks)}")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_3_homotopy_path(report):
    s = build_case1()
    p = DispatchPlan.empty(s)
    p.u_fa[0, 0] = p.u_df[0, 0] = p.u_sd[0, 0] = 1
    p.b_fa[:], p.b_df[:], p.b_sd[:] = 4.0, 2.0, 4.0
    p.t_sd[:], p.t_df[:], p.t_fa[:] = start_times(s, p, 0.99)
    z0 = float(zeta_start(s, p, 0.99).max())
    res = homotopy_solve(s, p, HomotopyConfig(eta_h=0.99, iota_h=12))
    end_ok = (
        res.n_optimize == 12
        and abs(res.plan.t_fa[0] - 4.399) <= 0.01
        and abs(res.plan.t_df[0] - 1.712) <= 0.01
        and res.plan.t_sd[0] == 0.0
        and abs(res.R - 59.32) <= 0.05
    )
    start_ok = 60.0 <= z0 <= 80.0
    report(3, start_ok and end_ok,
           f"zeta0={z0:.2f} ({'ok' if start_ok else 'outside 70 +/- 10'}); 12-step endpoint "
           f"t=({res.plan.t_fa[0]:.4f}, {res.plan.t_df[0]:.4f}) R={res.R:.4f} ({'ok' if end_ok else 'off'})")
    assert start_ok and end_ok


# ---------------------------------------------------------------- 4

def test_criterion_4_case2(tmp_path, report):
    scen = tmp_path / "case2.json"
    scen.write_text(json.dumps(case2_dict()))
    forced, plain = tmp_path / "forced.json", tmp_path / "plain.json"
    assert main(["solve", str(scen), "--force-prob-one", "--out", str(forced)]) == 0
    assert main(["solve", str(scen), "--out", str(plain)]) == 0
    R_forced = json.loads(forced.read_text())["R"]
    s = load_scenario(scen)
    doc = json.loads(plain.read_text())
    plan = DispatchPlan.from_dict(doc["plan"], s)
    pg = projected_gradient_norm(s, plan)
    feasible = check_constraints(s, plan).satisfied
    ok = abs(R_forced - 85.0) <= 0.01 and pg <= 1e-6 and feasible and doc["R"] <= 85.0 + 1e-9
    report(4, ok, f"forced R={R_forced:.4f}; plain R={doc['R']:.5f} projected gradient={pg:.2e} "
                  f"feasible={feasible}")
    assert ok


# ---------------------------------------------------------------- 5

def test_criterion_5_monte_carlo(report):
    inside = 0
    for seed in range(50):
        s, p = random_toy_plan(1000 + seed)
        res = simulate(s, p, 200_000, seed=seed)
        inside += abs(res.R_hat - res.R_analytic) <= 4 * res.std_err
    ok = inside >= 48
    report(5, ok, f"{inside}/50 toys within 4 standard errors")
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_6_brute_force(report):
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(20):
            s = parse_scenario(random_toy_dict(np.random.default_rng(seed), tight=bool(seed % 2)))
            best_R, _ = brute_force(s)
            t0 = time.perf_counter()
            rep = search(s)
            rows.append((seed, rep.R, best_R, time.perf_counter() - t0))
    misses = [r for r in rows if r[1] < r[2] - 0.5 or r[3] >= 60.0]
    worst_gap = max(r[2] - r[1] for r in rows)
    slowest = max(r[3] for r in rows)
    ok = not misses
    report(6, ok, f"{20 - len(misses)}/20 within 0.5 and under 60 s; worst gap={worst_gap:.3f}, "
                  f"slowest={slowest:.1f}s" + (f"; misses={misses}" if misses else ""))
    assert ok


# ---------------------------------------------------------------- 7

def _gradient_points(n_points):
    """Count random plans whose analytic gradient agrees with central differences."""
    good = 0
    h = 1e-5
    for k in range(n_points):
        rng = np.random.default_rng(5000 + k)
        s = parse_scenario(random_toy_dict(rng, n_nodes=2, n_vehicles=2, n_commodities=2))
        p = random_plan(s, rng)
        grad = reliability_gradient(s, p)
        agree = True
        for key in ("t_fa", "t_df", "t_sd", "b_fa", "b_df", "b_sd"):
            arr = getattr(p, key)
            for idx in np.ndindex(arr.shape):
                if not np.isfinite(arr[idx]):
                    continue
                plus, minus = p.copy(), p.copy()
                getattr(plus, key)[idx] += h
                getattr(minus, key)[idx] -= h
                fd = (reliability(s, plus) - reliability(s, minus)) / (2 * h)
                if abs(grad[key][idx] - fd) > 1e-4 * abs(fd) + 1e-6:
                    agree = False
        good += agree
    return good


def _probability_draws(n_draws):
    rng = np.random.default_rng(7)
    good = 0
    for _ in range(n_draws):
        if rng.uniform() < 0.5:
            mu = rng.uniform(0.5, 5.0)
            dist = Normal(mu, mu / rng.uniform(3.0, 12.0))
        else:
            dist = Gamma(rng.uniform(1.0, 8.0), rng.uniform(0.1, 2.0))
        T, dT = rng.uniform(-3.0, 10.0), rng.uniform(1e-3, 2.0)
        zeta = 10 ** rng.uniform(-4.0, 2.0)
        p = penalized_success_prob(dist, T, zeta)
        good += (
            cdf(dist, T) - 1e-12 <= p <= 1.0
            and penalized_success_prob(dist, T + dT, zeta) >= p - 1e-12
            and penalized_success_prob(dist, T, zeta * rng.uniform(1.01, 10.0)) >= p - 1e-12
        )
    return good


def _preprocess_cases(n_cases):
    good = 0
    for k in range(n_cases):
        s = parse_scenario(random_toy_dict(np.random.default_rng(300 + k), n_nodes=2, n_vehicles=3, tight=True))
        once = preprocess(s, eta_c=0.4).scenario
        twice = preprocess(once, eta_c=0.4).scenario
        ok = all(np.array_equal(once.edges[q].connectivity, twice.edges[q].connectivity) for q in ("FA", "DF", "SD"))
        previous = None
        for eta in (0.1, 0.3, 0.5, 0.7, 0.9):
            kept = {q: preprocess(s, eta_c=eta).scenario.edges[q].connectivity for q in ("FA", "DF", "SD")}
            if previous is not None:
                ok &= all(np.all(kept[q] <= previous[q]) for q in kept)
            previous = kept
        good += ok
    return good


def _tightening_cases(n_cases):
    good = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(n_cases):
            s = parse_scenario(random_toy_dict(np.random.default_rng(950 + k), tight=True, budget=15.0))
            res = tighten_budget(s, search(s), eps_R=100.0)
            Rs = [st.R for st in res.steps]
            good += all(r2 <= r1 + 1e-6 for r1, r2 in zip(Rs, Rs[1:]))
    return good


def _lp_instances(n):
    good = 0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        A = rng.uniform(-1.0, 3.0, size=(5, 8))
        b = rng.uniform(1.0, 5.0, size=5)
        c = rng.uniform(-1.0, 2.0, size=8)
        A[0] = np.abs(A[0]) + 0.1
        A = np.vstack([A, np.ones((1, 8))])
        b = np.append(b, 10.0)
        res = solve_lp(LinearProgram(c, A, b))
        good += res.optimal and abs(res.value - vertex_enumeration(c, A, b)) <= 1e-7
    return good


def _bip_instances(n):
    good = 0
    for seed in range(n):
        rng = np.random.default_rng(seed)
        c = rng.uniform(-2.0, 3.0, size=10)
        A = rng.uniform(-1.0, 2.0, size=(4, 10))
        b = rng.uniform(0.0, 4.0, size=4)
        maximize = bool(seed % 2)
        best, _ = enumerate_binary(c, A, b, maximize)
        res = solve_bip(BinaryProgram(c, A, b, maximize=maximize))
        if best is None:
            good += res.status is LPStatus.INFEASIBLE
        else:
            good += abs(res.value - best) <= 1e-9
    return good


def test_criterion_7_property_suites(report):
    counts = {
        "gradient": (_gradient_points(200), 200),
        "probability": (_probability_draws(1000), 1000),
        "preprocess": (_preprocess_cases(20), 20),
        "tightening": (_tightening_cases(3), 3),
        "lp": (_lp_instances(100), 100),
        "bip": (_bip_instances(100), 100),
    }
    ok = all(good == total for good, total in counts.values())
    report(7, ok, ", ".join(f"{k} {g}/{t}" for k, (g, t) in counts.items()))
    assert ok

"""Reference scenarios and random instance generators.

``case1`` is the one-node-per-level series network with five commodities.
``case2`` is a single-commodity network with five destinations whose
transfer times and deadlines are drawn from a seeded generator, so any
reported result can be regenerated exactly.
"""

import json
from importlib import resources

import numpy as np

from .scenario import parse_scenario, scenario_to_dict

__all__ = [
    "CASE2_DEFAULT_SEED",
    "case1_dict",
    "case2_dict",
    "build_case1",
    "build_case2",
    "load_bundled",
    "random_toy_dict",
]

CASE2_DEFAULT_SEED = 20210


def _edge(vehicle, node, cost, kind, p1, p2):
    return {"vehicle": vehicle, "node": node, "cost": cost, "dist": {"type": kind, "p1": p1, "p2": p2}}


def case1_dict():
    """One node and one vehicle per level, five equally weighted commodities.

    Each commodity has demand 10 at the destination with deadline 6.2 h.
    Stocks at F, D and S are 40, 20 and 40 percent of demand.  Capacities
    and budget are ample.
    """
    nE = 5
    demand = 10.0
    return {
        "commodities": [{"weight": 1.0 / nE, "capacity_use": 1.0} for _ in range(nE)],
        "levels": {"S": 1, "D": 1, "F": 1, "A": 1},
        "vehicles": [
            {"level": "S", "home_node": 0, "capacity": 1000.0, "available_at": 0.0},
            {"level": "D", "home_node": 0, "capacity": 1000.0, "available_at": 0.0},
            {"level": "F", "home_node": 0, "capacity": 1000.0, "available_at": 0.0},
        ],
        "edges": {
            "SD": [_edge(0, 0, 1.0, "normal", 1.5, 0.3)],
            "DF": [_edge(0, 0, 1.0, "normal", 2.5, 0.8)],
            "FA": [_edge(0, 0, 1.0, "gamma", 4.0, 0.3)],
        },
        "demand": {"amounts": [[demand]] * nE, "times": [[6.2]] * nE},
        "availability": {
            "F": [[0.4 * demand]] * nE,
            "D": [[0.2 * demand]] * nE,
            "S": [[0.4 * demand]] * nE,
        },
        "budget": 1000.0,
        "penalty_zeta": 0.001,
        "thresholds": {"eta_c": 0.3, "eta_h": 0.99},
        "meta": {"name": "case1"},
    }


def case2_dict(seed=CASE2_DEFAULT_SEED):
    """Single-commodity network with 2 S, 2 D, 3 F and 5 A nodes.

    Demand is 20 units at each destination (100 total) and stocks total 85
    units (50 at F, 20 at D, 15 at S).  Deadlines are drawn from N(6.5, 1.0).
    Mean transfer times are drawn around 1.5 h (S to D), 2.5 h (D to F) and
    1.0 h (F to A) with spread 0.2 h; each standard deviation is 10 percent
    of its mean.  Fleets are generous and the budget is ample.

    Parameters
    ----------
    seed : int
        Seed of the numpy ``default_rng`` generator.
    """
    rng = np.random.default_rng(seed)
    nodes = {"S": 2, "D": 2, "F": 3, "A": 5}
    vehicles = []
    homes = {"S": [0, 1], "D": [0, 0, 1, 1], "F": [0, 0, 1, 1, 2, 2]}
    for lv in ("S", "D", "F"):
        for h in homes[lv]:
            vehicles.append({"level": lv, "home_node": h, "capacity": 60.0, "available_at": 0.0})
    deadlines = np.clip(rng.normal(6.5, 1.0, size=nodes["A"]), 0.5, None)
    means = {"SD": 1.5, "DF": 2.5, "FA": 1.0}
    edges = {}
    for pair, (src, dst) in (("SD", ("S", "D")), ("DF", ("D", "F")), ("FA", ("F", "A"))):
        # One law per (origin node, destination node); vehicles at the same
        # node share it.
        mu = np.clip(rng.normal(means[pair], 0.2, size=(nodes[src], nodes[dst])), 0.2, None)
        cost = np.round(rng.uniform(5.0, 15.0, size=(len(homes[src]), nodes[dst])), 2)
        lst = []
        for v, h in enumerate(homes[src]):
            for n in range(nodes[dst]):
                m = float(round(mu[h, n], 6))
                lst.append(_edge(v, n, float(cost[v, n]), "normal", m, round(0.1 * m, 7)))
        edges[pair] = lst
    return {
        "commodities": [{"weight": 1.0, "capacity_use": 1.0}],
        "levels": nodes,
        "vehicles": vehicles,
        "edges": edges,
        "demand": {"amounts": [[20.0] * nodes["A"]], "times": [[float(round(x, 6)) for x in deadlines]]},
        "availability": {"F": [[20.0, 15.0, 15.0]], "D": [[10.0, 10.0]], "S": [[10.0, 5.0]]},
        "budget": 10000.0,
        "penalty_zeta": 0.001,
        "thresholds": {"eta_c": 0.3, "eta_h": 0.99},
        "meta": {"name": "case2", "seed": int(seed)},
    }


def build_case1():
    return parse_scenario(case1_dict())


def build_case2(seed=CASE2_DEFAULT_SEED):
    return parse_scenario(case2_dict(seed))


def load_bundled(name):
    """Load ``case1`` or ``case2`` from the package data directory."""
    text = resources.files("aidnet").joinpath("data", f"{name}.json").read_text(encoding="utf-8")
    return parse_scenario(json.loads(text))


def random_toy_dict(rng, *, n_nodes=2, n_vehicles=2, n_commodities=1, budget=None, tight=False):
    """Small random scenario with ``n_nodes`` nodes and ``n_vehicles`` vehicles per level.

    Deadlines, stocks and transfer laws are chosen so that some but not all
    dispatch options are attractive.  With ``tight`` the deadlines are short
    enough that timing trade-offs matter.
    """
    nE = n_commodities
    w = rng.dirichlet(np.ones(nE)) if nE > 1 else np.ones(1)
    w = w / w.sum()
    nodes = {"S": n_nodes, "D": n_nodes, "F": n_nodes, "A": n_nodes}
    vehicles = []
    for lv in ("S", "D", "F"):
        for v in range(n_vehicles):
            vehicles.append({
                "level": lv,
                "home_node": int(rng.integers(n_nodes)),
                "capacity": float(np.round(rng.uniform(5.0, 20.0), 3)),
                "available_at": float(np.round(rng.uniform(0.0, 0.5), 3)),
            })
    edges = {}
    for pair, base in (("SD", 1.0), ("DF", 1.2), ("FA", 1.0)):
        lst = []
        for v in range(n_vehicles):
            for n in range(n_nodes):
                if rng.uniform() < 0.2:
                    continue
                mu = float(np.round(base * rng.uniform(0.6, 1.6), 4))
                if pair == "FA" and rng.uniform() < 0.5:
                    kappa = float(np.round(rng.uniform(2.0, 6.0), 3))
                    dist = ("gamma", kappa, float(np.round(mu / kappa, 5)))
                else:
                    dist = ("normal", mu, float(np.round(mu / rng.uniform(4.0, 8.0), 5)))
                lst.append(_edge(v, n, float(np.round(rng.uniform(1.0, 5.0), 2)), *dist))
        edges[pair] = lst
    amounts = np.round(rng.uniform(2.0, 10.0, size=(nE, n_nodes)), 3)
    lo, hi = (2.5, 4.5) if tight else (3.5, 6.0)
    times = np.round(rng.uniform(lo, hi, size=(nE, n_nodes)), 3)
    total = amounts.sum(axis=1)
    avail = {}
    for lv in ("F", "D", "S"):
        share = rng.uniform(0.1, 0.5, size=(nE, n_nodes))
        avail[lv] = np.round(share * total[:, None] / n_nodes, 3).tolist()
    return {
        "commodities": [{"weight": float(x), "capacity_use": 1.0} for x in w],
        "levels": nodes,
        "vehicles": vehicles,
        "edges": edges,
        "demand": {"amounts": amounts.tolist(), "times": times.tolist()},
        "availability": avail,
        "budget": float(budget if budget is not None else 1000.0),
        "penalty_zeta": float(np.round(rng.uniform(0.05, 0.5), 3)),
        "thresholds": {"eta_c": 0.3, "eta_h": 0.99},
    }


def write_bundled(directory):
    """Regenerate the bundled scenario files into ``directory``."""
    import os

    for name, data in (("case1", case1_dict()), ("case2", case2_dict())):
        with open(os.path.join(directory, f"{name}.json"), "w", encoding="utf-8") as fh:
            json.dump(scenario_to_dict(parse_scenario(data)), fh, indent=1)
            fh.write("\n")

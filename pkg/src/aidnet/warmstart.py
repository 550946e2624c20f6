"""Heuristic first plan, built level by level from the destinations upward.

At each level the vehicles are chosen by a small binary program: cover
the capacity needed at every destination as cheaply as possible, with
each dispatch cost divided by a rough success probability.  When the
fleet cannot cover everything, the least infeasible choice is used.  When
the cheapest cover exceeds the budget, the choice is redone to minimize
uncovered need within the budget, and the cascade stops after that level.
With vehicles fixed, one LP loads the local stock and a second LP
measures how much more each dispatched vehicle could carry.  That
shortage becomes the demand for the level above.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import Infeasible, SizeLimit
from .linsolve import BinaryProgram, LinearProgram, least_infeasible_bip, solve_bip, solve_lp
from .prob import cdf, penalized_success_prob
from .scenario import DispatchPlan, plan_cost

__all__ = [
    "WarmStart",
    "prob_estimate_FA",
    "dispatch_bip",
    "dispatch_bip_FA",
    "assign_commodities_FA",
    "warm_start",
    "build_warm_start",
]

MAX_BINARY = 40


def _weighted_deadline(s):
    """Demand-weighted deadline per destination; NaN where there is no demand."""
    wB = s.weights[:, None] * s.demand_amounts
    total = wB.sum(axis=0)
    out = np.full(s.n("A"), np.nan)
    for a in range(s.n("A")):
        if total[a] <= 0:
            continue
        mask = wB[:, a] > 0
        times = s.demand_times[mask, a]
        if np.any(np.isinf(times)):
            out[a] = np.inf
        else:
            out[a] = float(wB[mask, a] @ times / total[a])
    return out


def prob_estimate_FA(s):
    """Success estimate of each F to A edge when leaving as early as possible.

    Returns an ``(m_F, n_A)`` array that is zero off the connectivity mask
    and at destinations without demand.
    """
    conn = s.edges["FA"].connectivity
    deadline = _weighted_deadline(s)
    avail = s.fleets["F"].available_at
    out = np.zeros(conn.shape)
    for f, a in zip(*np.nonzero(conn)):
        if np.isnan(deadline[a]):
            continue
        zeta = float(s.zeta[:, f].max())
        out[f, a] = penalized_success_prob(s.edges["FA"].dist(f, a), deadline[a] - avail[f], zeta)
    return out


def _greedy_cover(cost, cap, prob, need, budget):
    """Fallback for programs too large for branch and bound."""
    m, n = prob.shape
    u = np.zeros((m, n), dtype=int)
    left = need.astype(float).copy()
    spent = 0.0
    ratio = np.where(prob > 0, cost / np.where(prob > 0, prob, 1.0), np.inf)
    for v, j in sorted(zip(*np.nonzero(prob > 0)), key=lambda vj: ratio[vj]):
        if u[v].any() or left[j] <= 0 or spent + cost[v, j] > budget:
            continue
        u[v, j] = 1
        spent += cost[v, j]
        left[j] -= cap[v] * prob[v, j]
    return u


def dispatch_bip(cost, cap, prob, need, budget):
    """Choose vehicles for one level.

    Parameters
    ----------
    cost : ndarray (m, n)
        Dispatch cost per vehicle and destination.
    cap : ndarray (m,)
        Vehicle capacities.
    prob : ndarray (m, n)
        Success estimates; zero marks an unusable edge.
    need : ndarray (n,)
        Capacity required at each destination.
    budget : float
        Money left for this level.

    Returns
    -------
    u : ndarray of int (m, n)
    info : dict
        ``"covered"`` tells whether every need was met and
        ``"budget_limited"`` whether the cheapest cover was unaffordable.
        ``"refined"`` is set when an affordable cover existed but another
        affordable choice left less expected need open and replaced it.
        ``"shortfall"`` is the uncovered capacity.

    Notes
    -----
    The expected unmet need ``sum_j max(need_j - sum_v cap_v prob_vj u_vj, 0)``
    of the returned choice is the smallest possible within ``budget``, so it
    never grows when the budget is raised.
    """
    m, n = prob.shape
    pairs = [(v, j) for v in range(m) for j in range(n) if prob[v, j] > 0]
    k = len(pairs)
    info = {"covered": True, "budget_limited": False, "refined": False, "shortfall": 0.0, "greedy": False}
    if k == 0:
        info["shortfall"] = float(np.maximum(need, 0).sum())
        info["covered"] = info["shortfall"] <= 1e-9
        return np.zeros((m, n), dtype=int), info
    c_eff = np.array([cost[v, j] / prob[v, j] for v, j in pairs])
    c_true = np.array([cost[v, j] for v, j in pairs])
    one = np.zeros((m, k))
    for i, (v, _) in enumerate(pairs):
        one[v, i] = 1.0
    cover_rows = [j for j in range(n) if need[j] > 1e-12]
    cover = np.zeros((len(cover_rows), k))
    for r, j in enumerate(cover_rows):
        for i, (v, jj) in enumerate(pairs):
            if jj == j:
                cover[r, i] = cap[v]
    need_rows = np.array([need[j] for j in cover_rows])

    def to_matrix(x):
        u = np.zeros((m, n), dtype=int)
        for i, (v, j) in enumerate(pairs):
            if x[i] > 0.5:
                u[v, j] = 1
        return u

    if k > MAX_BINARY:
        info["greedy"] = True
        u = _greedy_cover(cost, cap, prob, need, budget)
        info["shortfall"] = float(np.maximum(need - cap @ u, 0.0).sum())
        info["covered"] = info["shortfall"] <= 1e-9
        return u, info

    def from_matrix(u):
        return np.array([float(u[v, j]) for v, j in pairs])

    greedy = from_matrix(_greedy_cover(cost, cap, prob, need, np.inf))
    bp = BinaryProgram(c_eff, np.vstack([one, -cover]), np.concatenate([np.ones(m), -need_rows]))
    res = solve_bip(bp, max_binary=MAX_BINARY, incumbent=greedy)
    if res.optimal:
        x = res.x
    else:
        info["covered"] = False
        try:
            x, _ = least_infeasible_bip(BinaryProgram(c_eff, one, np.ones(m)), cover, need_rows, max_binary=MAX_BINARY)
        except (Infeasible, SizeLimit):
            x = np.zeros(k)

    # Uncovered need, counted with success estimates, within the budget.
    # A tiny cost term picks the cheapest among equal covers.
    hinge_A = np.zeros((len(cover_rows), k))
    for r, j in enumerate(cover_rows):
        for i, (v, jj) in enumerate(pairs):
            if jj == j:
                hinge_A[r, i] = cap[v] * prob[v, j]
    tiny = 1e-6 * max(1.0, need_rows.sum(initial=0.0)) / max(1.0, c_eff.sum())
    bp2 = BinaryProgram(
        tiny * c_eff,
        np.vstack([one, c_true[None, :]]),
        np.concatenate([np.ones(m), [budget]]),
        hinge_A=hinge_A,
        hinge_b=need_rows,
    )
    affordable = c_true @ x <= budget + 1e-9
    res2 = solve_bip(bp2, max_binary=MAX_BINARY, incumbent=x if affordable else np.zeros(k))
    best = res2.x if res2.optimal else np.zeros(k)

    def uncovered(z):
        return float(np.maximum(need_rows - hinge_A @ z, 0.0).sum())

    if not affordable:
        info["budget_limited"] = True
        info["covered"] = False
        x = best
    elif uncovered(x) > uncovered(best) + 1e-9 * max(1.0, need_rows.sum(initial=0.0)):
        # The cheapest capacity cover leaves more expected need open than
        # another affordable choice; take the better-covering one.
        info["refined"] = True
        x = best
    u = to_matrix(x)
    info["shortfall"] = float(np.maximum(need - cap @ u, 0.0).sum())
    if info["shortfall"] > 1e-9:
        info["covered"] = False
    return u, info


def dispatch_bip_FA(s, prob=None, budget=None):
    """Facility dispatch matrix from :func:`dispatch_bip` on the A-level demand."""
    prob = prob_estimate_FA(s) if prob is None else prob
    need = s.capacity_use @ s.demand_amounts
    return dispatch_bip(
        np.asarray(s.edges["FA"].cost), s.fleets["F"].capacity, prob, need, s.budget if budget is None else budget
    )


def _lp_max(c, rows, rhs, n, tie_break=None):
    if n == 0:
        return np.zeros(0)
    A = np.array(rows) if rows else np.zeros((0, n))
    res = solve_lp(LinearProgram(c, A, np.array(rhs, dtype=float)), tie_break=tie_break)
    return np.maximum(res.x, 0.0) if res.optimal else np.zeros(n)


def _load_and_shortage(s, items, demand_key, avail_key, capacity_of, demand_cap, extra_load):
    """Shared LP pair for one level.

    Parameters
    ----------
    items : list of tuples ``(e, vehicle, target)``
        Admissible cargo entries; ``target`` identifies the downstream
        receiver whose demand the entry counts against.
    demand_key : callable(item) -> hashable
        Groups entries that share a demand row.
    avail_key : callable(item) -> hashable or None
        Groups entries drawing on the same stock (None: no stock row).
    capacity_of : dict vehicle -> capacity left
    demand_cap : dict demand group -> amount
    extra_load : dict vehicle -> capacity already used

    Returns
    -------
    load, shortage : ndarray
        Stock loaded per item and additional capacity-limited need per item.
    """
    n = len(items)
    w = s.weights
    kc = s.capacity_use
    c = np.array([w[e] for (e, _, _) in items])
    groups = {}
    for i, it in enumerate(items):
        groups.setdefault(("dem", demand_key(it)), []).append(i)
        key = avail_key(it)
        if key is not None:
            groups.setdefault(("avl", key), []).append(i)
        groups.setdefault(("cap", it[1]), []).append(i)

    def rows_for(with_avail, base):
        rows, rhs = [], []
        for (kind, key), idx in groups.items():
            row = np.zeros(n)
            if kind == "dem":
                row[idx] = 1.0
                rows.append(row)
                rhs.append(demand_cap[key] - (base[idx].sum() if base is not None else 0.0))
            elif kind == "avl" and with_avail:
                row[idx] = 1.0
                rows.append(row)
                rhs.append(s.availability[key[0]][key[1], key[2]])
            elif kind == "cap":
                for i in idx:
                    row[i] = kc[items[i][0]]
                used = extra_load.get(key, 0.0)
                if base is not None:
                    used += sum(kc[items[i][0]] * base[i] for i in idx)
                rows.append(row)
                rhs.append(capacity_of[key] - used)
        return rows, [max(r, 0.0) for r in rhs]

    rows, rhs = rows_for(True, None)
    load = _lp_max(c, rows, rhs, n, tie_break="most_nonzeros")
    rows, rhs = rows_for(False, load)
    shortage = _lp_max(c, rows, rhs, n)
    return load, shortage


def assign_commodities_FA(s, u_fa):
    """Load facility stock onto dispatched facility vehicles.

    Returns
    -------
    b_fa, shortage : ndarray (n_E, m_F)
        Loaded stock, and the extra amount each vehicle could still carry
        toward unmet demand.
    """
    dest = np.where(u_fa.sum(axis=1) > 0, np.argmax(u_fa, axis=1), -1)
    homeF = s.fleets["F"].home
    items = [(e, f, f) for e in range(s.n_E) for f in range(s.m("F")) if dest[f] >= 0]
    demand_cap = {(e, a): s.demand_amounts[e, a] for e in range(s.n_E) for a in range(s.n("A"))}
    load, short = _load_and_shortage(
        s,
        items,
        demand_key=lambda it: (it[0], dest[it[1]]),
        avail_key=lambda it: ("F", it[0], homeF[it[1]]),
        capacity_of={f: s.fleets["F"].capacity[f] for f in range(s.m("F"))},
        demand_cap=demand_cap,
        extra_load={},
    )
    b = np.zeros((s.n_E, s.m("F")))
    h = np.zeros_like(b)
    for i, (e, f, _) in enumerate(items):
        b[e, f] = load[i]
        h[e, f] = short[i]
    return b, h


def _upstream_prob(s, pair, downstream_deadline):
    """Estimate for D to F or S to D edges: chance of arriving by the node deadline."""
    conn = s.edges[pair].connectivity
    avail = s.fleets[pair[0]].available_at
    out = np.zeros(conn.shape)
    for v, n in zip(*np.nonzero(conn)):
        out[v, n] = float(cdf(s.edges[pair].dist(v, n), downstream_deadline[n] - avail[v]))
    return out


@dataclass
class WarmStart:
    """Warm-start plan with a record of how each level was decided."""

    plan: DispatchPlan
    levels: dict = field(default_factory=dict)
    shortage: dict = field(default_factory=dict)
    stopped_at: str = None


def warm_start(s, *, set_times=True):
    """Run the full cascade and return a :class:`WarmStart`.

    The plan always satisfies every constraint.  Dispatch times follow the
    homotopy start rule when ``set_times`` is true, otherwise dispatched
    vehicles leave at their availability times.
    """
    plan = DispatchPlan.empty(s)
    out = WarmStart(plan)
    homeF, homeD = s.fleets["F"].home, s.fleets["D"].home
    nE = s.n_E
    kc = s.capacity_use

    # ---- facility level
    prob_fa = prob_estimate_FA(s)
    u_fa, info = dispatch_bip_FA(s, prob_fa)
    plan.u_fa[:] = u_fa
    out.levels["FA"] = info
    b_fa, h_fa = assign_commodities_FA(s, u_fa)
    plan.b_fa[:] = b_fa
    out.shortage["F"] = h_fa
    spent = plan_cost(s, plan)

    def finish(level):
        out.stopped_at = level
        _set_times(s, plan, set_times)
        return out

    if info["budget_limited"] or not np.any(h_fa > 1e-9):
        return finish("F")

    # ---- depot level: facility shortages become demand at facility nodes
    dest_fa = plan.destinations("FA")
    node_need = np.zeros((nE, s.n("F")))
    for f in range(s.m("F")):
        node_need[:, homeF[f]] += h_fa[:, f]
    deadline_F = _node_deadline_F(s, plan)
    prob_df = _upstream_prob(s, "DF", deadline_F)
    u_df, info = dispatch_bip(np.asarray(s.edges["DF"].cost), s.fleets["D"].capacity, prob_df, kc @ node_need, s.budget - spent)
    plan.u_df[:] = u_df
    out.levels["DF"] = info
    dest_df = plan.destinations("DF")
    items = [
        (e, d, f)
        for e in range(nE)
        for d in range(s.m("D"))
        for f in range(s.m("F"))
        if dest_df[d] >= 0 and dest_fa[f] >= 0 and dest_df[d] == homeF[f] and h_fa[e, f] > 1e-12
    ]
    load, short = _load_and_shortage(
        s,
        items,
        demand_key=lambda it: (it[0], it[2]),
        avail_key=lambda it: ("D", it[0], homeD[it[1]]),
        capacity_of={d: s.fleets["D"].capacity[d] for d in range(s.m("D"))},
        demand_cap={(e, f): h_fa[e, f] for e in range(nE) for f in range(s.m("F"))},
        extra_load={},
    )
    h_df = np.zeros((nE, s.m("D"), s.m("F")))
    for i, (e, d, f) in enumerate(items):
        plan.b_df[e, d, f] = load[i]
        h_df[e, d, f] = short[i]
    out.shortage["D"] = h_df
    spent = plan_cost(s, plan)
    if info["budget_limited"] or not np.any(h_df > 1e-9):
        return finish("D")

    # ---- supplier level: depot shortages become demand at depot nodes
    node_need = np.zeros((nE, s.n("D")))
    for d in range(s.m("D")):
        node_need[:, homeD[d]] += h_df[:, d, :].sum(axis=1)
    deadline_D = _node_deadline_D(s, plan, deadline_F)
    prob_sd = _upstream_prob(s, "SD", deadline_D)
    u_sd, info = dispatch_bip(np.asarray(s.edges["SD"].cost), s.fleets["S"].capacity, prob_sd, kc @ node_need, s.budget - spent)
    plan.u_sd[:] = u_sd
    out.levels["SD"] = info
    dest_sd = plan.destinations("SD")
    items = [
        (e, v, (d, f))
        for e in range(nE)
        for v in range(s.m("S"))
        for d in range(s.m("D"))
        for f in range(s.m("F"))
        if dest_sd[v] >= 0 and dest_sd[v] == homeD[d] and h_df[e, d, f] > 1e-12
    ]
    # Depot and facility vehicles may be near capacity after their own
    # loads; the shortage LPs already kept room for exactly h_df, so the
    # supplier cargo only has to respect its own capacity and h_df.
    load, _ = _load_and_shortage(
        s,
        items,
        demand_key=lambda it: (it[0], it[2]),
        avail_key=lambda it: ("S", it[0], s.fleets["S"].home[it[1]]),
        capacity_of={v: s.fleets["S"].capacity[v] for v in range(s.m("S"))},
        demand_cap={(e, (d, f)): h_df[e, d, f] for e in range(nE) for d in range(s.m("D")) for f in range(s.m("F"))},
        extra_load={},
    )
    for i, (e, v, (d, f)) in enumerate(items):
        plan.b_sd[e, v, d, f] = load[i]
    return finish("S")


def _node_deadline_F(s, plan):
    """Latest sensible arrival at each facility node.

    For every dispatched facility vehicle: its destination's weighted
    deadline minus the median delivery time.  The node value is the largest
    over the vehicles based there, or ``-inf`` without one.
    """
    deadline = _weighted_deadline(s)
    out = np.full(s.n("F"), -np.inf)
    dest = plan.destinations("FA")
    for f, a in enumerate(dest):
        if a < 0 or np.isnan(deadline[a]):
            continue
        t = deadline[a] - float(s.edges["FA"].dist(f, a).ppf(0.5))
        n = s.fleets["F"].home[f]
        out[n] = max(out[n], t)
    return out


def _node_deadline_D(s, plan, deadline_F):
    """Same idea one level up, chaining through the depot leg."""
    out = np.full(s.n("D"), -np.inf)
    dest = plan.destinations("DF")
    for d, n_f in enumerate(dest):
        if n_f < 0 or not deadline_F[n_f] > -np.inf:
            continue
        t = deadline_F[n_f] - float(s.edges["DF"].dist(d, n_f).ppf(0.5))
        n = s.fleets["D"].home[d]
        out[n] = max(out[n], t)
    return out


def _set_times(s, plan, use_homotopy_rule):
    if use_homotopy_rule:
        from .homotopy import start_times

        t_sd, t_df, t_fa = start_times(s, plan, s.eta_h)
        plan.t_sd[:], plan.t_df[:], plan.t_fa[:] = t_sd, t_df, t_fa
    else:
        for pair, lv, t in (("FA", "F", plan.t_fa), ("DF", "D", plan.t_df), ("SD", "S", plan.t_sd)):
            disp = plan.dispatched(pair)
            t[:] = np.where(disp, s.fleets[lv].available_at, np.inf)


def build_warm_start(s):
    """Warm-start :class:`DispatchPlan` (see :func:`warm_start`)."""
    return warm_start(s).plan

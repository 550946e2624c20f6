"""Search over dispatch decisions, and budget tightening.

Every full dispatch configuration is a vertex of a layered decision graph
with one layer per vehicle.  Facility vehicles come first, then depot and
supplier vehicles.  A vertex is scored by optimizing cargo and departure
times for its dispatch matrices.  The search starts from the warm-start
configuration and climbs: at each step it ranks a set of single-vehicle
moves and takes the first one that raises the best reliability.  Visited
configurations are never scored twice, and configurations over budget are
rejected before any optimization.
"""

import itertools
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cargo import CargoSpace
from .evaluator import Structure, metrics, total_weighted_demand
from .homotopy import HomotopyConfig, MaxIterationsWarning, homotopy_solve, optimize_s, start_times
from .preprocess import preprocess
from .prob import cdf, penalized_success_prob
from .scenario import DispatchPlan, plan_cost
from .warmstart import _weighted_deadline, warm_start

__all__ = [
    "IterationCap",
    "SearchConfig",
    "DecisionGraph",
    "DecisionVertex",
    "Move",
    "SolveReport",
    "TighteningStep",
    "TighteningResult",
    "contribution_per_vehicle",
    "pair_moves",
    "propose_moves",
    "search",
    "tighten_budget",
    "time_scan",
    "upper_bound",
]

LEVELS = (("F", "FA"), ("D", "DF"), ("S", "SD"))


class IterationCap(RuntimeWarning):
    """The search stopped at its iteration cap; the report holds the incumbent."""


@dataclass
class SearchConfig:
    """Settings of :func:`search`.

    Attributes
    ----------
    homotopy : HomotopyConfig
        Used to score every vertex.
    max_iters : int
        Cap on accepted moves.
    improve_tol : float
        A move is accepted when it beats the incumbent by more than this.
    eta_c : float or None
        Pruning and drop threshold; the scenario's value when None.
    prune : bool
        Apply edge pruning before searching.
    threads : int
        Candidates scored concurrently.  Results do not depend on it.
    scan_points : int
        Grid points per departure time in the time scan run on every
        scored configuration (see :func:`time_scan`); 0 turns it off.
    pair_moves : int
        When no single move or swap improves, up to this many two-vehicle
        changes are scored (see :func:`pair_moves`); 0 turns them off.
    """

    homotopy: HomotopyConfig = field(default_factory=HomotopyConfig)
    max_iters: int = 50
    improve_tol: float = 1e-4
    eta_c: float = None
    prune: bool = True
    threads: int = 1
    scan_points: int = 12
    pair_moves: int = 24

    @property
    def force_prob_one(self):
        return self.homotopy.force_prob_one


# ---------------------------------------------------------------- graph

class DecisionGraph:
    """Layered graph of dispatch decisions for scenario ``s``.

    Layer ``i`` belongs to vehicle ``layers[i] = (level, pair, index)`` and
    holds one vertex per admissible destination plus one for staying put.
    A configuration is the tuple of chosen destinations, ``-1`` meaning no
    dispatch; its order matches :meth:`DispatchPlan.config_key`.
    """

    def __init__(self, s):
        self.s = s
        self.layers = []
        self.options = []
        for level, pair in LEVELS:
            conn = s.edges[pair].connectivity
            for v in range(s.m(level)):
                self.layers.append((level, pair, v))
                self.options.append(tuple(int(j) for j in np.flatnonzero(conn[v])))
        self.root = tuple(-1 for _ in self.layers)

    @property
    def n_vertices(self):
        """Root plus one vertex per (vehicle, choice)."""
        return 1 + sum(len(o) + 1 for o in self.options)

    @property
    def n_edges(self):
        """Edges between consecutive layers."""
        sizes = [1] + [len(o) + 1 for o in self.options]
        return int(sum(a * b for a, b in zip(sizes[:-1], sizes[1:])))

    def n_configurations(self):
        return int(np.prod([len(o) + 1 for o in self.options]))

    def configurations(self):
        """Every path from the root, as configuration tuples."""

        return itertools.product(*[(-1,) + o for o in self.options])

    def layer_of(self, level, v):
        return self.layers.index((level, {"F": "FA", "D": "DF", "S": "SD"}[level], v))

    def admissible(self, config):
        return all(c == -1 or c in opts for c, opts in zip(config, self.options))

    def plan_of(self, config):
        """Plan with the dispatch matrices of ``config``, no cargo and no times."""
        plan = DispatchPlan.empty(self.s)
        for (level, pair, v), c in zip(self.layers, config):
            if c >= 0:
                getattr(plan, "u_" + pair.lower())[v, c] = 1
        return plan

    def cost(self, config):
        total = 0.0
        for (level, pair, v), c in zip(self.layers, config):
            if c >= 0:
                total += float(self.s.edges[pair].cost[v, c])
        return total


@dataclass
class DecisionVertex:
    """A scored configuration."""

    config: tuple
    cost: float
    R: float = -np.inf
    plan: DispatchPlan = None
    explored: bool = False


@dataclass
class Move:
    """A candidate step: ``kind`` in drop, redirect, add, swap.

    For a swap, ``vehicle`` and ``dest`` describe the first of the two
    vehicles.
    """

    kind: str
    level: str
    vehicle: int
    dest: int
    score: float
    config: tuple
    bound: float = None


# ---------------------------------------------------------------- attribution

def _cargo_values(s, plan, zeta=None, force_prob_one=False):
    """Expected-delivery value of each cargo entry, on the R scale."""
    st = Structure(s, plan, zeta, force_prob_one)
    _, grad = st.value_and_grad(plan)
    return grad["b_fa"], grad["b_df"], grad["b_sd"]


def contribution_per_vehicle(s, plan, *, zeta=None, force_prob_one=False):
    """Share of ``R`` owed to each vehicle.

    Each vehicle is credited with the expected delivered value of the cargo
    it loads at its own origin.  For facility vehicles that is their own
    term in the objective; for depot and supplier vehicles it equals the
    drop in ``R`` when their loaded cargo is set to zero, because ``R`` is
    linear in cargo.  The shares therefore add up to ``R``.

    Returns
    -------
    dict
        ``{"F": (m_F,), "D": (m_D,), "S": (m_S,)}``; undispatched vehicles
        get 0.
    """
    g_fa, g_df, g_sd = _cargo_values(s, plan, zeta, force_prob_one)
    out = {
        "F": np.einsum("ef,ef->f", g_fa, plan.b_fa),
        "D": np.einsum("edf,edf->d", g_df, plan.b_df),
        "S": np.einsum("esdf,esdf->s", g_sd, plan.b_sd),
    }
    for level, pair in LEVELS:
        out[level] = np.where(plan.dispatched(pair), out[level], 0.0)
    return out


def _removal_ratio(s, plan, force_prob_one=False):
    """Value lost per unit of weighted cargo when a vehicle is withdrawn.

    Withdrawing a vehicle also removes every cargo entry that passes
    through it.  The ratio is a probability-like number comparable to the
    drop threshold; vehicles carrying nothing get 0.
    """
    g_fa, g_df, g_sd = _cargo_values(s, plan, None, force_prob_one)
    w = s.weights
    lam = total_weighted_demand(s)
    scale = 100.0 / lam
    v_fa, v_df, v_sd = g_fa * plan.b_fa, g_df * plan.b_df, g_sd * plan.b_sd
    wb_fa = w[:, None] * plan.b_fa
    wb_df = w[:, None, None] * plan.b_df
    wb_sd = w[:, None, None, None] * plan.b_sd
    lost = {
        "F": v_fa.sum(axis=0) + v_df.sum(axis=(0, 1)) + v_sd.sum(axis=(0, 1, 2)),
        "D": v_df.sum(axis=(0, 2)) + v_sd.sum(axis=(0, 1, 3)),
        "S": v_sd.sum(axis=(0, 2, 3)),
    }
    carried = {
        "F": wb_fa.sum(axis=0) + wb_df.sum(axis=(0, 1)) + wb_sd.sum(axis=(0, 1, 2)),
        "D": wb_df.sum(axis=(0, 2)) + wb_sd.sum(axis=(0, 1, 3)),
        "S": wb_sd.sum(axis=(0, 2, 3)),
    }
    return {lv: np.divide(lost[lv], scale * carried[lv], out=np.zeros_like(lost[lv]), where=carried[lv] > 0)
            for lv in lost}


# ---------------------------------------------------------------- moves

def _edge_estimates(s, plan):
    """Rough success chance of every edge for scoring moves."""
    conn_fa = s.edges["FA"].connectivity
    deadline = _weighted_deadline(s)
    est = {"FA": np.zeros(conn_fa.shape), "DF": np.zeros(s.edges["DF"].connectivity.shape),
           "SD": np.zeros(s.edges["SD"].connectivity.shape)}
    latest_f = np.full(s.n("F"), -np.inf)
    for f, a in zip(*np.nonzero(conn_fa)):
        if np.isnan(deadline[a]):
            continue
        dist = s.edges["FA"].dist(f, a)
        slack = deadline[a] - s.fleets["F"].available_at[f]
        est["FA"][f, a] = penalized_success_prob(dist, slack, float(s.zeta[:, f].max()))
        n = s.fleets["F"].home[f]
        latest_f[n] = max(latest_f[n], deadline[a] - float(dist.ppf(0.5)))
    # Upstream: arrive before the facility (or depot) vehicles must leave.
    # Dispatched vehicles use their planned times when known.
    for f in np.flatnonzero(plan.dispatched("FA")):
        if np.isfinite(plan.t_fa[f]):
            n = s.fleets["F"].home[f]
            latest_f[n] = max(latest_f[n], plan.t_fa[f])
    latest_d = np.full(s.n("D"), -np.inf)
    for d, n in zip(*np.nonzero(s.edges["DF"].connectivity)):
        dist = s.edges["DF"].dist(d, n)
        est["DF"][d, n] = float(cdf(dist, latest_f[n] - s.fleets["D"].available_at[d]))
        h = s.fleets["D"].home[d]
        latest_d[h] = max(latest_d[h], latest_f[n] - float(dist.ppf(0.5)))
    for d in np.flatnonzero(plan.dispatched("DF")):
        if np.isfinite(plan.t_df[d]):
            h = s.fleets["D"].home[d]
            latest_d[h] = max(latest_d[h], plan.t_df[d])
    for v, n in zip(*np.nonzero(s.edges["SD"].connectivity)):
        est["SD"][v, n] = float(cdf(s.edges["SD"].dist(v, n), latest_d[n] - s.fleets["S"].available_at[v]))
    return est


def _addressable(s, plan, m, level, v, dest):
    """Weighted amount a vehicle could usefully carry toward unmet demand."""
    w, kc = s.weights, s.capacity_use
    cap = s.fleets[level].capacity[v]
    # Demand not loaded at all, or loaded but expected to arrive late.
    w100 = 100.0 * w[:, None]
    late = np.divide(m.deficit, w100, out=np.zeros_like(m.deficit), where=w100 > 0) * s.demand_amounts
    unmet = np.maximum(np.maximum(m.unsatisfied, 0.0), late)  # (e, a)
    if level == "F":
        home = s.fleets["F"].home[v]
        # Upstream stock can also reach this vehicle.
        stock = s.availability["F"][:, home] + s.availability["D"].sum(axis=1) + s.availability["S"].sum(axis=1)
        amount = np.minimum(unmet[:, dest], stock)
    else:
        # Unmet demand at destinations served by facility vehicles based at
        # the node this vehicle would reach.
        if level == "D":
            nodes_f = {dest}
        else:
            nodes_f = {
                int(n)
                for d in range(s.m("D"))
                if s.fleets["D"].home[d] == dest
                for n in np.flatnonzero(s.edges["DF"].connectivity[d])
            }
        dest_fa = plan.destinations("FA")
        targets = set()
        for f in range(s.m("F")):
            if int(s.fleets["F"].home[f]) in nodes_f:
                # Undispatched facility vehicles could be added later.
                targets.update([dest_fa[f]] if dest_fa[f] >= 0 else np.flatnonzero(s.edges["FA"].connectivity[f]))
        need = unmet[:, sorted(int(a) for a in targets)].sum(axis=1) if targets else np.zeros(s.n_E)
        stock = s.availability[level][:, s.fleets[level].home[v]]
        amount = np.minimum(need, stock)
    # Capacity limit, spread over commodities in proportion.
    load = float(kc @ amount)
    if load > cap > 0:
        amount = amount * (cap / load)
    return float(w @ amount)


def propose_moves(s, graph, vertex, m=None, *, eta_c=None, tabu=(), force_prob_one=False):
    """Ranked neighbor configurations of an explored vertex.

    Drops come first, weakest vehicle first: vehicles whose value per unit
    of carried cargo is below ``eta_c``.  The rest are ranked by an
    estimated gain per dollar, success estimate times the unmet demand the
    vehicle could serve.  Redirects move a dispatched vehicle elsewhere and
    adds dispatch an idle vehicle.  Moves with no estimated gain are left
    out, as are drops of vehicles above the threshold: withdrawing a useful
    vehicle cannot raise the optimum.  Swaps, where two vehicles of one
    level trade destinations, come last, cheapest first.

    Returns
    -------
    list of Move
        Configurations in ``tabu`` or inadmissible ones are left out.
    """
    plan = vertex.plan
    eta = s.eta_c if eta_c is None else eta_c
    m = m if m is not None else metrics(s, plan, force_prob_one=force_prob_one)
    ratio = _removal_ratio(s, plan, force_prob_one)
    est = _edge_estimates(s, plan)
    deficit = m.deficit_by_node
    config = vertex.config
    drops, gains = [], []
    seen = set(tabu)
    for i, ((level, pair, v), c) in enumerate(zip(graph.layers, config)):
        cost_now = float(s.edges[pair].cost[v, c]) if c >= 0 else 0.0
        if c >= 0:
            new = config[:i] + (-1,) + config[i + 1:]
            if new not in seen:
                seen.add(new)
                r = float(ratio[level][v])
                if r < eta:
                    drops.append(Move("drop", level, v, -1, -r, new))
        for j in graph.options[i]:
            if j == c:
                continue
            new = config[:i] + (j,) + config[i + 1:]
            if new in seen:
                continue
            p = float(est[pair][v, j])
            value = p * _addressable(s, plan, m, level, v, j)
            if value <= 0.0:
                continue
            if level == "F" and c >= 0:
                # Among useful redirects, prefer the largest deficit.
                value += 1e-6 * float(deficit[j])
            seen.add(new)
            extra = float(s.edges[pair].cost[v, j]) - cost_now
            score = value / max(extra, 1e-9) if extra > 0 else value * 1e9 + 1.0
            gains.append(Move("redirect" if c >= 0 else "add", level, v, j, score, new))
    # Swaps: two dispatched vehicles of one level exchange destinations.
    # Single moves cannot reach these when each half alone loses value.
    # With every demand loaded and on time there is nothing to gain.
    swaps = []
    shortfall = float(np.maximum(m.unsatisfied, 0.0).sum() + m.deficit.sum())
    for i, ((level, pair, v), c) in enumerate(zip(graph.layers, config) if shortfall > 1e-12 else ()):
        for k in range(i + 1, len(config)):
            level_k, _, v_k = graph.layers[k]
            c_k = config[k]
            if level_k != level or c < 0 or c_k < 0 or c == c_k:
                continue
            if c_k not in graph.options[i] or c not in graph.options[k]:
                continue
            new = list(config)
            new[i], new[k] = c_k, c
            new = tuple(new)
            if new in seen:
                continue
            seen.add(new)
            extra = (float(s.edges[pair].cost[v, c_k]) + float(s.edges[pair].cost[v_k, c])
                     - float(s.edges[pair].cost[v, c]) - float(s.edges[pair].cost[v_k, c_k]))
            swaps.append(Move("swap", level, v, c_k, -extra, new))
    drops.sort(key=lambda mv: (-mv.score, mv.level, mv.vehicle))
    gains.sort(key=lambda mv: (-mv.score, mv.level, mv.vehicle, mv.dest))
    swaps.sort(key=lambda mv: (-mv.score, mv.level, mv.vehicle, mv.dest))
    return drops + gains + swaps


def pair_moves(s, graph, vertex, cfg, *, tabu=()):
    """Changes of two vehicles at once, most promising first.

    Used when no single move improves.  Every pair of layers and every
    pair of new choices (including no dispatch) is considered; those over
    budget, visited, or whose :func:`upper_bound` cannot beat the vertex
    are left out.  The rest are ranked by bound and the first
    ``cfg.pair_moves`` are returned.  They are scored without the homotopy
    solve: a local solve from the parent's optimum, then a time scan.
    """
    config = vertex.config
    seen = set(tabu)
    out = []
    for i, k in itertools.combinations(range(len(config)), 2):
        for a in (-1,) + graph.options[i]:
            if a == config[i]:
                continue
            for b in (-1,) + graph.options[k]:
                if b == config[k]:
                    continue
                new = list(config)
                new[i], new[k] = a, b
                new = tuple(new)
                if new in seen or graph.cost(new) > s.budget + 1e-9:
                    continue
                seen.add(new)
                bound = upper_bound(s, graph, new, force_prob_one=cfg.force_prob_one)
                if bound <= vertex.R + cfg.improve_tol:
                    continue
                level, _, v = graph.layers[i]
                out.append(Move("pair", level, v, a, bound, new, bound))
    out.sort(key=lambda mv: (-mv.score, mv.config))
    return out[: cfg.pair_moves]


# ---------------------------------------------------------------- scoring

def _carry_over(s, parent, child):
    """Start point for ``child`` built from the parent's optimum.

    Times of vehicles that keep their destination are reused; new
    dispatches get start-rule times.  Cargo is kept where every vehicle on
    its route is unchanged.
    """
    out = child.copy()
    t_sd, t_df, t_fa = start_times(s, child)
    same = {}
    for level, pair in LEVELS:
        same[level] = (parent.destinations(pair) == child.destinations(pair)) & child.dispatched(pair)
    out.t_fa = np.where(same["F"], parent.t_fa, t_fa)
    out.t_df = np.where(same["D"], parent.t_df, t_df)
    out.t_sd = np.where(child.dispatched("SD"), s.fleets["S"].available_at, np.inf)
    keep_f, keep_d, keep_s = same["F"], same["D"], same["S"]
    out.b_fa = parent.b_fa * keep_f[None, :]
    out.b_df = parent.b_df * (keep_d[:, None] & keep_f[None, :])[None]
    out.b_sd = parent.b_sd * (keep_s[:, None, None] & keep_d[None, :, None] & keep_f[None, None, :])[None]
    return out


def upper_bound(s, graph, config, *, force_prob_one=False):
    """Reliability no plan with this configuration can exceed.

    Delivery chances fall as facility vehicles leave later, so each is
    capped by its value at the vehicle's availability time; connection
    chances are capped by 1.  The cargo is then chosen by an exact LP.
    """
    plan = graph.plan_of(config)
    space = CargoSpace(s, plan)
    if space.n == 0:
        return 0.0
    dest = plan.destinations("FA")
    nE = s.n_E
    p_max = np.zeros((nE, s.m("F")))
    for f in np.flatnonzero(dest >= 0):
        if force_prob_one:
            p_max[:, f] = 1.0
            continue
        dist = s.edges["FA"].dist(f, dest[f])
        for e in range(nE):
            slack = s.demand_times[e, dest[f]] - s.fleets["F"].available_at[f]
            p_max[e, f] = penalized_success_prob(dist, slack, float(s.zeta[e, f]))
    c_fa = s.weights[:, None] * p_max
    c_df = np.broadcast_to(c_fa[:, None, :], plan.b_df.shape)
    c_sd = np.broadcast_to(c_fa[:, None, None, :], plan.b_sd.shape)
    c = space.coefficients(c_fa, c_df, c_sd)
    x = space.solve(c)
    return float(100.0 / total_weighted_demand(s) * (c @ x))


# Per-level LP weights (facility, depot, supplier legs) for scan starts.
_CARGO_STARTS = ((1.0, 1.0, 1.0), (1.0, 0.5, 0.25), (1.0, 0.1, 0.01))


def time_scan(s, plan, cfg=None, *, n_points=12, rounds=4, max_combos=4096, n_random=6, n_polish=3):
    """Restart the local solver from a global scan of departure times.

    For fixed cargo and fixed depot times the reliability is a sum of
    separate terms, one per facility vehicle.  So every combination of
    depot times on an ``n_points`` grid is tried (one depot time at a time
    when there are more than ``max_combos`` combinations), and each
    facility time is picked on its own grid.  The cargo is then re-chosen
    by an exact LP and the two steps alternate for up to ``rounds`` rounds.

    Starts are the plan's cargo and LP cargo that moves the most stock,
    with upstream legs weighted down by the factors in ``_CARGO_STARTS``,
    plus ``n_random`` LP optima for randomly perturbed weights (fixed seed),
    since the stock-moving LP usually has many tied optima.  This reaches
    plans that route cargo differently, which local steps in time rarely
    find.  The ``n_polish`` best distinct end points are then polished by
    a local solve.

    Returns
    -------
    plan : DispatchPlan
    R : float
        Never below the reliability of the input plan.
    """
    cfg = cfg or HomotopyConfig()
    st = Structure(s, plan, None, force_prob_one=cfg.force_prob_one)
    R0 = float(st.value(plan))
    finite = s.demand_times[np.isfinite(s.demand_times)]
    if cfg.force_prob_one or n_points < 2 or finite.size == 0:
        return plan, R0
    space = CargoSpace(s, plan)
    if space.n == 0:
        return plan, R0
    horizon = float(finite.max())
    d_idx = np.flatnonzero(plan.dispatched("DF"))
    f_idx = np.flatnonzero(plan.dispatched("FA"))
    grid = {}
    for name, idx, level in (("t_df", d_idx, "D"), ("t_fa", f_idx, "F")):
        for i in idx:
            lo = float(s.fleets[level].available_at[i])
            grid[name, i] = np.linspace(lo, max(horizon, lo), n_points)

    def depot_combos(t_df):
        if d_idx.size == 0:
            return t_df[None, :]
        if n_points ** d_idx.size <= max_combos:
            mesh = np.meshgrid(*[grid["t_df", d] for d in d_idx], indexing="ij")
            out = np.repeat(t_df[None, :], mesh[0].size, axis=0)
            out[:, d_idx] = np.stack([m.ravel() for m in mesh], axis=1)
            return out
        rows = [t_df]
        for d in d_idx:
            for v in grid["t_df", d]:
                row = t_df.copy()
                row[d] = v
                rows.append(row)
        return np.array(rows)

    def best_times(p):
        """Best grid times for the cargo of ``p``."""
        T_df = depot_combos(p.t_df)
        K = T_df.shape[0]
        t_sd = np.broadcast_to(p.t_sd, (K, p.t_sd.size))
        base_fa = np.repeat(p.t_fa[None, :], K, axis=0)
        base = st.value(p, (base_fa, T_df, t_sd))
        total = base.copy()
        choice = {}
        for f in f_idx:
            g = grid["t_fa", f]
            T_fa = np.repeat(base_fa[:, None, :], g.size, axis=1)
            T_fa[:, :, f] = g[None, :]
            vals = st.value(p, (T_fa, np.repeat(T_df[:, None, :], g.size, axis=1),
                                np.broadcast_to(p.t_sd, (K, g.size, p.t_sd.size))))
            j = np.argmax(vals, axis=1)
            gain = vals[np.arange(K), j] - base
            total = total + np.maximum(gain, 0.0)
            choice[f] = np.where(gain > 0.0, g[j], p.t_fa[f])
        k = int(np.argmax(total))
        q = p.copy()
        q.t_df = T_df[k].copy()
        for f in f_idx:
            q.t_fa[f] = choice[f][k]
        return q

    def with_best_cargo(p):
        _, grad = st.value_and_grad(p)
        c = space.coefficients(grad["b_fa"], grad["b_df"], grad["b_sd"])
        x = space.solve(c)
        return space.unpack(x, p), float(c @ x)

    starts = [plan] + [space.unpack(space.solve(space.level_weights(*lw)), plan) for lw in _CARGO_STARTS]
    rng = np.random.default_rng(0)
    base_c = space.level_weights(1.0, 1.0, 1.0)
    for _ in range(n_random):
        starts.append(space.unpack(space.solve(base_c * rng.uniform(0.5, 1.5, space.n)), plan))
    ends = {}
    for start in starts:
        cur, cur_R = start, float(st.value(start))
        for _ in range(rounds):
            trial, R = with_best_cargo(best_times(cur))
            if R <= cur_R + 1e-9:
                break
            cur, cur_R = trial, R
        key = tuple(np.round(np.concatenate([cur.t_df[d_idx], cur.t_fa[f_idx], space.pack(cur)]), 6))
        ends.setdefault(key, (cur_R, cur))
    # Grid points sit off the local optimum, so polish the few best
    # distinct end points rather than only the top one.
    best, best_R = plan, R0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxIterationsWarning)
        for _, cur in sorted(ends.values(), key=lambda e: -e[0])[:n_polish]:
            loc = optimize_s(s, cur, cfg=cfg)
            if loc.R > best_R + 1e-9:
                best, best_R = loc.plan, float(loc.R)
    return best, best_R


def _score(s, graph, config, cfg, parent=None, *, light=False):
    """Optimized plan and reliability for one configuration.

    The best of the homotopy solve, a local solve from the parent's optimum
    and (when ``cfg.scan_points`` > 1) a time scan from that best point.
    ``light`` skips the homotopy solve when a parent is given.
    """
    plan0 = graph.plan_of(config)
    if all(c < 0 for c in config):
        return plan0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxIterationsWarning)
        if light and parent is not None:
            best_plan, best_R = plan0, -np.inf
        else:
            res = homotopy_solve(s, plan0, cfg.homotopy)
            best_plan, best_R = res.plan, res.R
        if parent is not None:
            start = _carry_over(s, parent, plan0)
            loc = optimize_s(s, start, cfg=cfg.homotopy)
            if loc.R > best_R:
                best_plan, best_R = loc.plan, loc.R
    if cfg.scan_points > 1:
        plan, R = time_scan(s, best_plan, cfg.homotopy, n_points=cfg.scan_points)
        if R > best_R:
            best_plan, best_R = plan, R
    return best_plan, float(best_R)


# ---------------------------------------------------------------- search

@dataclass
class SolveReport:
    """Result of :func:`search`.

    ``trace`` holds one record per scored configuration, in order.
    ``capped`` is set when the iteration cap stopped the climb.
    """

    plan: DispatchPlan
    R: float
    cost: float
    metrics: object
    iterations: int
    capped: bool
    converged: bool
    explored: int
    rejected_budget: int
    pruned: dict
    bounded: int = 0
    trace: list = field(default_factory=list)
    runtime: float = 0.0
    force_prob_one: bool = False

    def to_dict(self):
        return {
            "R": self.R,
            "cost": self.cost,
            "plan": self.plan.to_dict(),
            "metrics": self.metrics.to_dict(),
            "solver": {
                "iterations": self.iterations,
                "capped": self.capped,
                "converged": self.converged,
                "explored": self.explored,
                "rejected_budget": self.rejected_budget,
                "bounded": self.bounded,
                "pruned_edges": dict(self.pruned),
                "runtime_s": self.runtime,
                "force_prob_one": self.force_prob_one,
                "trace": list(self.trace),
            },
        }


def _repair_budget(s, graph, plan, config):
    """Drop the least valuable vehicles until ``config`` fits the budget."""
    config = tuple(config)
    ratio = _removal_ratio(s, plan)
    while graph.cost(config) > s.budget + 1e-9:
        options = []
        for i, ((level, pair, v), c) in enumerate(zip(graph.layers, config)):
            if c >= 0:
                options.append((float(ratio[level][v]) * 1.0, -float(s.edges[pair].cost[v, c]), i))
        _, _, i = min(options)
        config = config[:i] + (-1,) + config[i + 1:]
    return config


def search(s, cfg=None, *, start=None):
    """Climb the decision graph from the warm start (or ``start``).

    Parameters
    ----------
    s : Scenario
    cfg : SearchConfig, optional
    start : DispatchPlan, optional
        Initial plan; its configuration is cut back to the budget if needed.
        The warm start is scored as well and the better one is used.

    Returns
    -------
    SolveReport
        The incumbent plan.  Its reliability never decreases along the
        trace.
    """
    cfg = cfg or SearchConfig()
    t0 = time.perf_counter()
    total_weighted_demand(s)
    if cfg.prune:
        pr = preprocess(s, cfg.eta_c)
        work, pruned = pr.scenario, pr.summary()
    else:
        work, pruned = s, {"FA": 0, "DF": 0, "SD": 0}
    graph = DecisionGraph(work)
    visited = {}
    trace = []
    rejected = 0

    def record(config, plan, R, kind):
        trace.append({"step": len(trace), "move": kind, "config": list(config), "cost": graph.cost(config), "R": R})

    def score(config, parent=None):
        plan, R = _score(work, graph, config, cfg, parent)
        v = DecisionVertex(config, graph.cost(config), R, plan, True)
        visited[config] = v
        return v

    # Root and warm start.
    root = score(graph.root)
    record(root.config, root.plan, root.R, "root")
    best = root
    candidates = []
    ws = warm_start(work)
    ws_config = ws.plan.config_key()
    if graph.admissible(ws_config):
        candidates.append((ws_config, ws.plan, "warm_start"))
    if start is not None:
        cfg_start = start.config_key()
        cfg_start = tuple(c if (c < 0 or c in o) else -1 for c, o in zip(cfg_start, graph.options))
        cfg_start = _repair_budget(work, graph, start, cfg_start)
        candidates.append((cfg_start, start, "start"))
    for config, parent, kind in candidates:
        if config in visited:
            continue
        if graph.cost(config) > work.budget + 1e-9:
            rejected += 1
            continue
        v = score(config, parent)
        record(config, v.plan, v.R, kind)
        if v.R > best.R:
            best = v

    counts = {"rejected": rejected, "bounded": 0}

    def try_moves(moves):
        """Score moves in order; return the first vertex that improves."""
        pending = []
        for mv in moves:
            if graph.cost(mv.config) > work.budget + 1e-9:
                counts["rejected"] += 1
                continue
            bound = mv.bound if mv.bound is not None else upper_bound(
                work, graph, mv.config, force_prob_one=cfg.force_prob_one)
            if bound <= best.R + cfg.improve_tol:
                # Cannot be accepted whatever the times; skip the solve.
                counts["bounded"] += 1
                visited[mv.config] = DecisionVertex(mv.config, graph.cost(mv.config), bound, None, False)
                continue
            pending.append(mv)
        batch = max(1, cfg.threads)
        for k in range(0, len(pending), batch):
            chunk = pending[k:k + batch]
            if pool is not None:
                results = list(pool.map(lambda mv: _score(work, graph, mv.config, cfg, best.plan,
                                                          light=mv.kind == "pair"), chunk))
            else:
                results = [_score(work, graph, mv.config, cfg, best.plan, light=mv.kind == "pair") for mv in chunk]
            for mv, (plan, R) in zip(chunk, results):
                visited[mv.config] = DecisionVertex(mv.config, graph.cost(mv.config), R, plan, True)
                record(mv.config, plan, R, mv.kind)
            for mv, (plan, R) in zip(chunk, results):
                if R > best.R + cfg.improve_tol:
                    return visited[mv.config]
        return None

    iterations = 0
    capped = False
    converged = False
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        while True:
            m = metrics(work, best.plan, force_prob_one=cfg.force_prob_one)
            if best.R + cfg.improve_tol >= m.ceiling:
                converged = True  # nothing can beat the availability bound
                break
            if iterations >= cfg.max_iters:
                capped = True
                break
            moves = propose_moves(work, graph, best, m, eta_c=cfg.eta_c, tabu=visited.keys(),
                                  force_prob_one=cfg.force_prob_one)
            accepted = try_moves(moves)
            if accepted is None and cfg.pair_moves > 0:
                accepted = try_moves(pair_moves(work, graph, best, cfg, tabu=visited.keys()))
            if accepted is None:
                converged = True
                break
            best = accepted
            iterations += 1
    finally:
        if pool is not None:
            pool.shutdown()
    if capped:
        warnings.warn(f"search stopped after {iterations} accepted moves", IterationCap, stacklevel=2)
    final = best.plan
    return SolveReport(
        plan=final,
        R=float(best.R),
        cost=plan_cost(s, final),
        metrics=metrics(s, final, force_prob_one=cfg.force_prob_one),
        iterations=iterations,
        capped=capped,
        converged=converged,
        explored=sum(1 for v in visited.values() if v.explored),
        rejected_budget=counts["rejected"],
        bounded=counts["bounded"],
        pruned=pruned,
        trace=trace,
        runtime=time.perf_counter() - t0,
        force_prob_one=cfg.force_prob_one,
    )


# ---------------------------------------------------------------- tightening

@dataclass
class TighteningStep:
    budget: float
    R: float
    cost: float
    plan: DispatchPlan


@dataclass
class TighteningResult:
    """Budget sweep.  ``best`` is the cheapest plan within ``eps_R`` of the start."""

    steps: list
    best: TighteningStep
    R0: float
    eps_R: float

    def rows(self):
        return [{"budget": st.budget, "R": st.R, "cost": st.cost} for st in self.steps]


def tighten_budget(s, incumbent, cfg=None, *, eps_R=0.5, step=None, floor=0.0, max_steps=100):
    """Lower the budget step by step, re-solving from the previous plan.

    The first step cuts the budget to what the incumbent actually spends.
    Each later step subtracts ``step`` (by default the larger of 5% of the
    original budget and the cheapest single dispatch).  The sweep stops once
    ``R`` has fallen more than ``eps_R`` below the incumbent, drops under
    ``floor``, or the budget reaches zero.

    A plan found at a lower budget is also valid at every higher budget, so
    earlier steps are upgraded when a later one does better.  The recorded
    ``R`` values are therefore non-increasing.

    Returns
    -------
    TighteningResult
    """
    cfg = cfg or SearchConfig()
    z0 = float(s.budget)
    costs = np.concatenate([s.edges[p].cost[s.edges[p].connectivity] for p in ("FA", "DF", "SD")])
    cheapest = float(costs.min()) if costs.size else 0.0
    step = step if step is not None else max(0.05 * z0, cheapest)
    R0 = float(incumbent.R)
    steps = [TighteningStep(z0, R0, plan_cost(s, incumbent.plan), incumbent.plan)]
    prev = incumbent.plan
    z = min(z0, steps[0].cost)
    if z >= z0 - 1e-12:
        z = z0 - step
    for _ in range(max_steps):
        if z < 0:
            if steps[-1].budget <= 0:
                break
            z = 0.0
        sz = s.replace(budget=float(z))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IterationCap)
            rep = search(sz, cfg, start=prev)
        cur = TighteningStep(float(z), float(rep.R), rep.cost, rep.plan)
        # Upgrade earlier, larger budgets that this plan also fits.
        for st in steps:
            if cur.R > st.R:
                st.R, st.cost, st.plan = cur.R, cur.cost, cur.plan
        steps.append(cur)
        prev = rep.plan
        if cur.R < R0 - eps_R or cur.R < floor or z <= 0:
            break
        z = min(z, cur.cost) - step
    ok = [st for st in steps if st.R >= R0 - eps_R]
    best = min(ok, key=lambda st: (st.cost, -st.R))
    return TighteningResult(steps, best, R0, eps_R)

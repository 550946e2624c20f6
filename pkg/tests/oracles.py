"""Brute-force reference optimizer for tiny scenarios.

Every dispatch configuration is enumerated.  Configurations that differ
only in vehicles that cannot affect deliveries are merged.  For each
remaining one, cargo and times are optimized by alternating an exact
cargo LP (scipy HiGHS) with a 50-point grid over departure times.  Given
the depot times, the best time of each facility vehicle is found on its
own grid independently of the others.  The grids are then zoomed in
around the best point.  The probability terms come from scipy.stats
except the late-delivery penalty, which uses the library routine checked
separately against numerical quadrature.
"""

import itertools

import numpy as np
from scipy import stats
from scipy.optimize import linprog

from aidnet.prob import penalized_success_prob


def _frozen(d):
    if d.kind == "normal":
        return stats.norm(d.mu, d.sigma)
    return stats.gamma(d.kappa, scale=d.theta)


def canonical(s, config):
    """Drop vehicles that cannot carry anything toward a destination."""
    mF, mD = s.m("F"), s.m("D")
    f_part = list(config[:mF])
    d_part = list(config[mF:mF + mD])
    s_part = list(config[mF + mD:])
    f_nodes = {int(s.fleets["F"].home[f]) for f in range(mF) if f_part[f] >= 0}
    d_part = [n if n in f_nodes else -1 for n in d_part]
    d_nodes = {int(s.fleets["D"].home[d]) for d in range(mD) if d_part[d] >= 0}
    s_part = [n if n in d_nodes else -1 for n in s_part]
    return tuple(f_part + d_part + s_part)


def config_cost(s, config):
    mF, mD = s.m("F"), s.m("D")
    cost = 0.0
    for i, c in enumerate(config):
        if c < 0:
            continue
        if i < mF:
            cost += s.edges["FA"].cost[i, c]
        elif i < mF + mD:
            cost += s.edges["DF"].cost[i - mF, c]
        else:
            cost += s.edges["SD"].cost[i - mF - mD, c]
    return float(cost)


def all_configs(s):
    opts = []
    for pair, lv in (("FA", "F"), ("DF", "D"), ("SD", "S")):
        conn = s.edges[pair].connectivity
        for v in range(s.m(lv)):
            opts.append((-1,) + tuple(int(j) for j in np.flatnonzero(conn[v])))
    return itertools.product(*opts)


class _Config:
    """Cargo variables, LP rows and probability tables for one configuration."""

    def __init__(self, s, config):
        self.s = s
        mF, mD = s.m("F"), s.m("D")
        self.dest_f = np.array(config[:mF])
        self.dest_d = np.array(config[mF:mF + mD])
        self.dest_s = np.array(config[mF + mD:])
        homeF, homeD, homeS = (s.fleets[lv].home for lv in ("F", "D", "S"))
        nE = s.n_E
        fs = [f for f in range(mF) if self.dest_f[f] >= 0]
        dfs = [(d, f) for d in range(mD) for f in fs if self.dest_d[d] >= 0 and self.dest_d[d] == homeF[f]]
        vdfs = [(v, d, f) for v in range(s.m("S")) for (d, f) in dfs if self.dest_s[v] >= 0 and self.dest_s[v] == homeD[d]]
        self.fs, self.dfs, self.vdfs = fs, dfs, vdfs
        # Variable list: (level, e, route)
        self.vars = [("fa", e, (f,)) for e in range(nE) for f in fs]
        self.vars += [("df", e, r) for e in range(nE) for r in dfs]
        self.vars += [("sd", e, r) for e in range(nE) for r in vdfs]
        n = len(self.vars)
        rows, rhs = [], []
        kc = s.capacity_use
        for e in range(nE):
            for a in range(s.n("A")):
                row = [1.0 if (ee == e and self.dest_f[r[-1]] == a) else 0.0 for (_, ee, r) in self.vars]
                rows.append(row)
                rhs.append(s.demand_amounts[e, a])
            for lvl, lv, home in (("fa", "F", homeF), ("df", "D", homeD), ("sd", "S", homeS)):
                for node in range(s.n(lv)):
                    row = [1.0 if (kind == lvl and ee == e and home[r[0]] == node) else 0.0 for (kind, ee, r) in self.vars]
                    rows.append(row)
                    rhs.append(s.availability[lv][e, node])
        for f in fs:
            rows.append([kc[ee] if r[-1] == f else 0.0 for (_, ee, r) in self.vars])
            rhs.append(s.fleets["F"].capacity[f])
        for d in range(mD):
            if self.dest_d[d] < 0:
                continue
            rows.append([kc[ee] if (kind in ("df", "sd") and r[-2] == d) else 0.0 for (kind, ee, r) in self.vars])
            rhs.append(s.fleets["D"].capacity[d])
        for v in range(s.m("S")):
            if self.dest_s[v] < 0:
                continue
            rows.append([kc[ee] if (kind == "sd" and r[0] == v) else 0.0 for (kind, ee, r) in self.vars])
            rhs.append(s.fleets["S"].capacity[v])
        self.A = np.array(rows, dtype=float).reshape(len(rows), n)
        self.b = np.array(rhs, dtype=float)
        self.n = n
        self.d_free = [d for d in range(mD) if self.dest_d[d] >= 0]

    def lp(self, coef):
        if self.n == 0:
            return np.zeros(0), 0.0
        res = linprog(-coef, A_ub=self.A, b_ub=self.b, bounds=(0, None), method="highs")
        return np.maximum(res.x, 0.0), -res.fun

    # Probability tables -------------------------------------------------
    def p_fa(self, f, t_f):
        """Penalized success per commodity, shape (len(t_f), n_E)."""
        s = self.s
        a = self.dest_f[f]
        dist = s.edges["FA"].dist(f, a)
        out = np.zeros((len(t_f), s.n_E))
        for e in range(s.n_E):
            for k, t in enumerate(t_f):
                out[k, e] = penalized_success_prob(dist, s.demand_times[e, a] - t, float(s.zeta[e, f]))
        return out

    def p_df(self, d, f, gap):
        return _frozen(self.s.edges["DF"].dist(d, self.dest_d[d])).cdf(gap)

    def p_sd(self, v, d, t_d):
        return _frozen(self.s.edges["SD"].dist(v, self.dest_s[v])).cdf(t_d - self.s.fleets["S"].available_at[v])

    def coefficients(self, t_f, t_d):
        """Objective coefficient of every cargo variable at given times."""
        s = self.s
        w = s.weights
        c = np.zeros(self.n)
        pfa = {f: self.p_fa(f, [t_f[f]])[0] for f in self.fs}
        for i, (kind, e, r) in enumerate(self.vars):
            f = r[-1]
            val = w[e] * pfa[f][e]
            if kind in ("df", "sd"):
                d = r[-2]
                val *= self.p_df(d, f, t_f[f] - t_d[d])
            if kind == "sd":
                val *= self.p_sd(r[0], r[1], t_d[r[1]])
            c[i] = val
        return c

    def best_times(self, x, grids_f, grids_d):
        """Exact maximum over the product grid for fixed cargo ``x``."""
        s = self.s
        w = s.weights
        d_free = self.d_free
        d_combos = list(itertools.product(*[grids_d[d] for d in d_free])) or [()]
        D = np.array(d_combos).reshape(len(d_combos), len(d_free))
        total = np.zeros(len(d_combos))
        choice = {}
        for f in self.fs:
            tf = grids_f[f]
            pfa = self.p_fa(f, tf)  # (G, nE)
            # value[c, g] for d-combo c and t_f grid point g
            inner = np.zeros((len(d_combos), len(tf), s.n_E))
            for i, (kind, e, r) in enumerate(self.vars):
                if r[-1] != f or x[i] == 0:
                    continue
                if kind == "fa":
                    inner[:, :, e] += x[i]
                    continue
                d = r[-2]
                col = d_free.index(d)
                gap = tf[None, :] - D[:, col][:, None]
                term = self.p_df(d, f, gap) * x[i]
                if kind == "sd":
                    term = term * self.p_sd(r[0], d, D[:, col])[:, None]
                inner[:, :, e] += term
            val = np.einsum("cge,ge,e->cg", inner, pfa, w)
            k = np.argmax(val, axis=1)
            total += val[np.arange(len(d_combos)), k]
            choice[f] = tf[k]
        c = int(np.argmax(total))
        t_f = np.full(s.m("F"), np.inf)
        for f in self.fs:
            t_f[f] = choice[f][c]
        t_d = np.full(s.m("D"), np.inf)
        for j, d in enumerate(d_free):
            t_d[d] = D[c, j]
        return t_f, t_d, float(total[c])


def optimize_config(s, config, n_grid=50, zooms=2, rounds=6):
    """Best reliability found for one configuration (0 to 100 scale)."""
    cf = _Config(s, config)
    if cf.n == 0:
        return 0.0
    lam = float(s.weights @ s.demand_amounts.sum(axis=1))
    horizon = float(np.max(s.demand_times[np.isfinite(s.demand_times)], initial=0.0)) + 1.0
    lo_f = {f: s.fleets["F"].available_at[f] for f in cf.fs}
    lo_d = {d: s.fleets["D"].available_at[d] for d in cf.d_free}
    best = 0.0
    # Two cargo starts: most stock moved, and stock weighted toward short routes.
    w = s.weights
    starts = []
    for level_w in ((1.0, 1.0, 1.0), (1.0, 0.5, 0.25)):
        coef = np.array([w[e] * {"fa": level_w[0], "df": level_w[1], "sd": level_w[2]}[k] for (k, e, _) in cf.vars])
        starts.append(cf.lp(coef)[0])
    for x in starts:
        value = -np.inf
        for _ in range(rounds):
            grids_f = {f: np.linspace(lo_f[f], max(horizon, lo_f[f] + 1.0), n_grid) for f in cf.fs}
            grids_d = {d: np.linspace(lo_d[d], max(horizon, lo_d[d] + 1.0), n_grid) for d in cf.d_free}
            t_f, t_d, _ = cf.best_times(x, grids_f, grids_d)
            for _ in range(zooms):
                width_f = {f: 2.0 * (grids_f[f][1] - grids_f[f][0]) for f in cf.fs}
                width_d = {d: 2.0 * (grids_d[d][1] - grids_d[d][0]) for d in cf.d_free}
                grids_f = {f: np.linspace(max(lo_f[f], t_f[f] - width_f[f]), t_f[f] + width_f[f], n_grid) for f in cf.fs}
                grids_d = {d: np.linspace(max(lo_d[d], t_d[d] - width_d[d]), t_d[d] + width_d[d], n_grid) for d in cf.d_free}
                t_f, t_d, _ = cf.best_times(x, grids_f, grids_d)
            x, val = cf.lp(cf.coefficients(t_f, t_d))
            if val <= value + 1e-10:
                value = max(value, val)
                break
            value = val
        best = max(best, 100.0 * value / lam)
    return best


def config_bound(s, config):
    """Reliability no timing can beat: delivery chance at the earliest
    departure, every connection certain, cargo by exact LP."""
    cf = _Config(s, config)
    if cf.n == 0:
        return 0.0
    lam = float(s.weights @ s.demand_amounts.sum(axis=1))
    best_p = {f: cf.p_fa(f, [s.fleets["F"].available_at[f]])[0] for f in cf.fs}
    coef = np.array([s.weights[e] * best_p[r[-1]][e] for (_, e, r) in cf.vars])
    return 100.0 * cf.lp(coef)[1] / lam


def brute_force(s, **kw):
    """Largest reliability over all affordable configurations.

    Configurations are visited in decreasing order of :func:`config_bound`
    and skipped once their bound cannot beat the best value found.

    Returns
    -------
    best_R : float
    best_config : tuple
    """
    keys = set()
    for config in all_configs(s):
        key = canonical(s, config)
        if config_cost(s, key) <= s.budget + 1e-9:
            keys.add(key)
    bounds = sorted(((config_bound(s, k), k) for k in keys), key=lambda bk: (-bk[0], bk[1]))
    best_R, best = 0.0, bounds[0][1]
    for bound, key in bounds:
        if bound <= best_R:
            break
        R = optimize_config(s, key, **kw)
        if R > best_R:
            best_R, best = R, key
    return best_R, best

"""Linear programs over the cargo tensors of a plan with fixed dispatches.

With dispatch decisions and times held fixed, the reliability is linear in
the cargo tensors and every constraint on them is linear.  ``CargoSpace``
lists the cargo entries that the dispatch matrices allow and builds the
demand, availability and capacity rows once, so that the optimizer can
re-solve the cargo block with different objectives.
"""

import numpy as np

from .linsolve import LinearProgram, solve_lp

__all__ = ["CargoSpace"]


class CargoSpace:
    """Admissible cargo entries for fixed dispatch matrices.

    Parameters
    ----------
    s : Scenario
    plan : DispatchPlan
        Only the dispatch matrices are read.
    """

    def __init__(self, s, plan):
        self.s = s
        nE = s.n_E
        homeF, homeD, homeS = (s.fleets[lv].home for lv in ("F", "D", "S"))
        dest_fa = plan.destinations("FA")
        dest_df = plan.destinations("DF")
        dest_sd = plan.destinations("SD")
        fs = [f for f in range(s.m("F")) if dest_fa[f] >= 0]
        dfs = [(d, f) for d in range(s.m("D")) for f in fs if dest_df[d] >= 0 and dest_df[d] == homeF[f]]
        sdfs = [
            (v, d, f) for v in range(s.m("S")) for (d, f) in dfs if dest_sd[v] >= 0 and dest_sd[v] == homeD[d]
        ]
        self.fa = [(e, f) for e in range(nE) for f in fs]
        self.df = [(e, d, f) for e in range(nE) for (d, f) in dfs]
        self.sd = [(e, v, d, f) for e in range(nE) for (v, d, f) in sdfs]
        self.n_fa, self.n_df, self.n_sd = len(self.fa), len(self.df), len(self.sd)
        self.n = self.n_fa + self.n_df + self.n_sd

        kc = s.capacity_use
        rows, rhs = [], []

        def add_row(entries, bound):
            row = np.zeros(self.n)
            for j, coef in entries:
                row[j] += coef
            rows.append(row)
            rhs.append(bound)

        # Index helpers: the F vehicle that finally carries each entry.
        carrier = [f for (_, f) in self.fa] + [f for (_, _, f) in self.df] + [f for (_, _, _, f) in self.sd]
        commodity = [e for (e, _) in self.fa] + [e for (e, _, _) in self.df] + [e for (e, _, _, _) in self.sd]
        carrier = np.array(carrier, dtype=int)
        commodity = np.array(commodity, dtype=int)

        # Demand per (commodity, destination).
        for e in range(nE):
            for a in range(s.n("A")):
                idx = [j for j in range(self.n) if commodity[j] == e and dest_fa[carrier[j]] == a]
                if idx:
                    add_row([(j, 1.0) for j in idx], s.demand_amounts[e, a])
        # Availability per level and node.
        for e in range(nE):
            for n in range(s.n("F")):
                idx = [j for j, (ee, f) in enumerate(self.fa) if ee == e and homeF[f] == n]
                if idx:
                    add_row([(j, 1.0) for j in idx], s.availability["F"][e, n])
            for n in range(s.n("D")):
                idx = [self.n_fa + j for j, (ee, d, _) in enumerate(self.df) if ee == e and homeD[d] == n]
                if idx:
                    add_row([(j, 1.0) for j in idx], s.availability["D"][e, n])
            for n in range(s.n("S")):
                base = self.n_fa + self.n_df
                idx = [base + j for j, (ee, v, _, _) in enumerate(self.sd) if ee == e and homeS[v] == n]
                if idx:
                    add_row([(j, 1.0) for j in idx], s.availability["S"][e, n])
        # Capacity: F carries everything routed through it, D carries depot
        # and supplier cargo, S carries supplier cargo.
        for f in fs:
            idx = [j for j in range(self.n) if carrier[j] == f]
            if idx:
                add_row([(j, kc[commodity[j]]) for j in idx], s.fleets["F"].capacity[f])
        for d in sorted({d for (_, d, _) in self.df}):
            idx = [self.n_fa + j for j, (_, dd, _) in enumerate(self.df) if dd == d]
            idx += [self.n_fa + self.n_df + j for j, (_, _, dd, _) in enumerate(self.sd) if dd == d]
            add_row([(j, kc[commodity[j]]) for j in idx], s.fleets["D"].capacity[d])
        for v in sorted({v for (_, v, _, _) in self.sd}):
            idx = [self.n_fa + self.n_df + j for j, (_, vv, _, _) in enumerate(self.sd) if vv == v]
            add_row([(j, kc[commodity[j]]) for j in idx], s.fleets["S"].capacity[v])
        self.A_ub = np.array(rows) if rows else np.zeros((0, self.n))
        self.b_ub = np.array(rhs, dtype=float)

    # -- conversions ------------------------------------------------------
    def pack(self, plan):
        """Cargo entries of ``plan`` as a flat vector."""
        x = np.zeros(self.n)
        for j, (e, f) in enumerate(self.fa):
            x[j] = plan.b_fa[e, f]
        for j, (e, d, f) in enumerate(self.df):
            x[self.n_fa + j] = plan.b_df[e, d, f]
        for j, (e, v, d, f) in enumerate(self.sd):
            x[self.n_fa + self.n_df + j] = plan.b_sd[e, v, d, f]
        return x

    def unpack(self, x, plan):
        """Write ``x`` into a copy of ``plan``; inadmissible entries become 0."""
        out = plan.copy()
        out.b_fa[:] = 0.0
        out.b_df[:] = 0.0
        out.b_sd[:] = 0.0
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        for j, (e, f) in enumerate(self.fa):
            out.b_fa[e, f] = x[j]
        for j, (e, d, f) in enumerate(self.df):
            out.b_df[e, d, f] = x[self.n_fa + j]
        for j, (e, v, d, f) in enumerate(self.sd):
            out.b_sd[e, v, d, f] = x[self.n_fa + self.n_df + j]
        return out

    def coefficients(self, c_fa, c_df, c_sd):
        """Flatten per-tensor objective coefficients to the packed order."""
        c = np.zeros(self.n)
        for j, (e, f) in enumerate(self.fa):
            c[j] = c_fa[e, f]
        for j, (e, d, f) in enumerate(self.df):
            c[self.n_fa + j] = c_df[e, d, f]
        for j, (e, v, d, f) in enumerate(self.sd):
            c[self.n_fa + self.n_df + j] = c_sd[e, v, d, f]
        return c

    def level_weights(self, w_fa, w_df, w_sd):
        """Objective ``w_e`` times a per-level factor."""
        w = self.s.weights
        c = np.zeros(self.n)
        c[: self.n_fa] = [w_fa * w[e] for (e, _) in self.fa]
        c[self.n_fa: self.n_fa + self.n_df] = [w_df * w[e] for (e, _, _) in self.df]
        c[self.n_fa + self.n_df:] = [w_sd * w[e] for (e, _, _, _) in self.sd]
        return c

    def feasible(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if np.any(x < -tol):
            return False
        return bool(np.all(self.A_ub @ x <= self.b_ub + tol)) if self.A_ub.shape[0] else True

    def solve(self, c, *, tie_break=None):
        """Maximize ``c @ x`` over admissible cargo; returns the packed optimum."""
        if self.n == 0:
            return np.zeros(0)
        res = solve_lp(LinearProgram(c, self.A_ub, self.b_ub), tie_break=tie_break)
        if not res.optimal:  # the zero vector is always feasible, so this is numerical
            return np.zeros(self.n)
        return np.maximum(res.x, 0.0)

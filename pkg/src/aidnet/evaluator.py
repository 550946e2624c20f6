"""Reliability objective, its gradient, constraint checks and diagnostics.

The reliability of a plan is

    R = 100 / lambda * sum_{e,f} w_e P_fa[e,f] G[e,f]

    G[e,f] = b_fa[e,f] + sum_d P_df[d,f] H[e,d,f]
    H[e,d,f] = b_df[e,d,f] + sum_s P_sd[s,d] b_sd[e,s,d,f]

where ``P_fa`` is the penalized delivery probability of facility vehicle
``f`` and ``P_df``, ``P_sd`` are the probabilities that upstream vehicles
arrive before the downstream vehicle leaves.  A connection only exists when
the upstream vehicle is dispatched to the home node of the downstream one;
all other connection probabilities are zero.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .prob import connection_prob, connection_prob_grad, penalized_success_prob_grad
from .scenario import DispatchPlan, plan_cost, total_weighted_demand

__all__ = [
    "Structure",
    "time_intervals_FA",
    "success_probs",
    "reliability",
    "reliability_gradient",
    "reliability_batch",
    "check_constraints",
    "ConstraintReport",
    "FamilyReport",
    "Metrics",
    "metrics",
    "CONSTRAINT_FAMILIES",
    "BINDING_TOL",
    "VIOLATION_TOL",
]

BINDING_TOL = 1e-7
VIOLATION_TOL = 1e-9


class Structure:
    """Fixed-binary view of a plan: which transfer laws and deadlines apply.

    Parameters
    ----------
    s : Scenario
    plan : DispatchPlan
        Only the dispatch matrices are read.
    zeta : ndarray, optional
        Penalty scales ``(n_E, m_F)``; defaults to the scenario's.
    force_prob_one : bool
        Replace every structurally possible success probability by 1.
    """

    def __init__(self, s, plan, zeta=None, force_prob_one=False):
        plan.check_shapes(s)
        self.s = s
        self.force = bool(force_prob_one)
        self.zeta = np.asarray(s.zeta if zeta is None else zeta, dtype=float)
        if self.zeta.shape != s.zeta.shape:
            raise ShapeError(f"zeta has shape {self.zeta.shape}, expected {s.zeta.shape}")
        self.lam = total_weighted_demand(s)
        self.scale = 100.0 / self.lam
        self.w = s.weights
        self.dest_fa = plan.destinations("FA")
        self.dest_df = plan.destinations("DF")
        self.dest_sd = plan.destinations("SD")
        homeF = s.fleets["F"].home
        homeD = s.fleets["D"].home
        mS, mD, mF = s.m("S"), s.m("D"), s.m("F")
        nE = s.n_E

        self.fa = []  # (f, dist, deadlines[e])
        for f in range(mF):
            a = self.dest_fa[f]
            if a >= 0:
                dist = s.edges["FA"].dist(f, a)
                self.fa.append((f, dist, np.asarray(s.demand_times[:, a], dtype=float)))
        self.df = []  # (d, f, dist)
        for d in range(mD):
            for f in range(mF):
                if self.dest_df[d] >= 0 and self.dest_df[d] == homeF[f] and self.dest_fa[f] >= 0:
                    self.df.append((d, f, s.edges["DF"].dist(d, homeF[f])))
        self.sd = []  # (s, d, dist)
        for v in range(mS):
            for d in range(mD):
                if self.dest_sd[v] >= 0 and self.dest_sd[v] == homeD[d] and self.dest_df[d] >= 0:
                    self.sd.append((v, d, s.edges["SD"].dist(v, homeD[d])))
        self.shape = (nE, mS, mD, mF)

    # -- probabilities --------------------------------------------------
    def probs(self, t_fa, t_df, t_sd, want_grad=False):
        """Success probabilities for (possibly batched) dispatch times.

        Time arrays have shape ``(..., m)``.  Returns ``P_fa (..., n_E, m_F)``,
        ``P_df (..., m_D, m_F)``, ``P_sd (..., m_S, m_D)`` and, when requested,
        the slopes ``dP_fa/dT``, ``dP_df/dgap`` and ``dP_sd/dgap``.
        """
        nE, mS, mD, mF = self.shape
        t_fa = np.asarray(t_fa, dtype=float)
        t_df = np.asarray(t_df, dtype=float)
        t_sd = np.asarray(t_sd, dtype=float)
        batch = t_fa.shape[:-1]
        P_fa = np.zeros(batch + (nE, mF))
        P_df = np.zeros(batch + (mD, mF))
        P_sd = np.zeros(batch + (mS, mD))
        g_fa = np.zeros_like(P_fa) if want_grad else None
        g_df = np.zeros_like(P_df) if want_grad else None
        g_sd = np.zeros_like(P_sd) if want_grad else None
        for f, dist, deadlines in self.fa:
            if self.force:
                P_fa[..., :, f] = 1.0
                continue
            p, g = _penalized_by_time(dist, deadlines, self.zeta[:, f], t_fa[..., f])
            P_fa[..., :, f] = p
            if want_grad:
                g_fa[..., :, f] = g
        for d, f, dist in self.df:
            if self.force:
                P_df[..., d, f] = 1.0
                continue
            P_df[..., d, f] = connection_prob(dist, t_df[..., d], t_fa[..., f])
            if want_grad:
                g_df[..., d, f] = connection_prob_grad(dist, t_df[..., d], t_fa[..., f])
        for v, d, dist in self.sd:
            if self.force:
                P_sd[..., v, d] = 1.0
                continue
            P_sd[..., v, d] = connection_prob(dist, t_sd[..., v], t_df[..., d])
            if want_grad:
                g_sd[..., v, d] = connection_prob_grad(dist, t_sd[..., v], t_df[..., d])
        if want_grad:
            return P_fa, P_df, P_sd, g_fa, g_df, g_sd
        return P_fa, P_df, P_sd

    # -- objective ------------------------------------------------------
    def value(self, plan, times=None):
        t_fa, t_df, t_sd = times if times is not None else (plan.t_fa, plan.t_df, plan.t_sd)
        P_fa, P_df, P_sd = self.probs(t_fa, t_df, t_sd)
        return self._combine(P_fa, P_df, P_sd, plan)

    def _combine(self, P_fa, P_df, P_sd, plan):
        H = plan.b_df + np.einsum("...sd,esdf->...edf", P_sd, plan.b_sd)
        G = plan.b_fa + np.einsum("...df,...edf->...ef", P_df, H)
        return self.scale * np.einsum("e,...ef,...ef->...", self.w, P_fa, G)

    def value_and_grad(self, plan):
        """Objective and full analytic gradient at the plan's own times."""
        P_fa, P_df, P_sd, g_fa, g_df, g_sd = self.probs(plan.t_fa, plan.t_df, plan.t_sd, want_grad=True)
        c = self.scale
        w = self.w
        H = plan.b_df + np.einsum("sd,esdf->edf", P_sd, plan.b_sd)
        G = plan.b_fa + np.einsum("df,edf->ef", P_df, H)
        R = c * np.einsum("e,ef,ef->", w, P_fa, G)
        wP = c * w[:, None] * P_fa  # (e, f)
        d_b_fa = wP
        d_b_df = wP[:, None, :] * P_df[None, :, :]
        d_b_sd = d_b_df[:, None, :, :] * P_sd[None, :, :, None]
        # Time derivatives.  The facility slack is deadline minus dispatch,
        # so dP_fa/dt_fa = -slope; each connection gap is downstream minus
        # upstream.
        d_t_fa = c * (
            -np.einsum("e,ef,ef->f", w, g_fa, G)
            + np.einsum("ef,df,edf->f", w[:, None] * P_fa, g_df, H)
        )
        inner = np.einsum("sd,esdf->edf", g_sd, plan.b_sd)
        d_t_df = c * (
            -np.einsum("ef,df,edf->d", w[:, None] * P_fa, g_df, H)
            + np.einsum("ef,df,edf->d", w[:, None] * P_fa, P_df, inner)
        )
        d_t_sd = -c * np.einsum("ef,df,sd,esdf->s", w[:, None] * P_fa, P_df, g_sd, plan.b_sd)
        grad = {
            "t_fa": d_t_fa,
            "t_df": d_t_df,
            "t_sd": d_t_sd,
            "b_fa": d_b_fa,
            "b_df": d_b_df,
            "b_sd": d_b_sd,
        }
        # Undispatched vehicles sit at +inf where every slope is zero.
        for key, t in (("t_fa", plan.t_fa), ("t_df", plan.t_df), ("t_sd", plan.t_sd)):
            grad[key] = np.where(np.isfinite(t), grad[key], 0.0)
        return float(R), grad


def _penalized_by_time(dist, deadlines, zeta, t):
    """Penalized probabilities ``(..., n_E)`` for departure times ``t``.

    Batched scans repeat the same departure time many times, so each
    distinct time is evaluated once.
    """
    flat = np.asarray(t, dtype=float).reshape(-1)
    inv = None
    if flat.size > 8:
        flat, inv = np.unique(flat, return_inverse=True)
    T = deadlines[None, :] - flat[:, None]
    Z = np.broadcast_to(zeta, T.shape)
    p, g = penalized_success_prob_grad(dist, T.reshape(-1), np.ascontiguousarray(Z).reshape(-1))
    p, g = np.reshape(p, T.shape), np.reshape(g, T.shape)
    if inv is not None:
        inv = inv.reshape(-1)
        p, g = p[inv], g[inv]
    shape = np.shape(t) + (deadlines.size,)
    return p.reshape(shape), g.reshape(shape)


# ------------------------------------------------------------------ public API

def time_intervals_FA(s, plan):
    """Slack ``T^n[e, dest(f)] - t_fa[f]`` per commodity and facility vehicle.

    Columns of undispatched vehicles hold ``-inf``.
    """
    plan.check_shapes(s)
    dest = plan.destinations("FA")
    out = np.full((s.n_E, s.m("F")), -np.inf)
    for f, a in enumerate(dest):
        if a >= 0:
            out[:, f] = s.demand_times[:, a] - plan.t_fa[f]
    return out


def success_probs(s, plan, *, zeta=None, force_prob_one=False):
    """Success probabilities of every transfer in the plan.

    Returns
    -------
    dict
        ``{"FA": (n_E, m_F), "DF": (m_D, m_F), "SD": (m_S, m_D)}``.
    """
    st = Structure(s, plan, zeta, force_prob_one)
    P_fa, P_df, P_sd = st.probs(plan.t_fa, plan.t_df, plan.t_sd)
    return {"FA": P_fa, "DF": P_df, "SD": P_sd}


def reliability(s, plan, *, zeta=None, force_prob_one=False):
    """Reliability ``R`` on the 0 to 100 scale.

    Defined for any shape-valid plan, feasible or not.

    Raises
    ------
    DegenerateDemand
        If the weighted demand is zero.
    ShapeError
        If plan arrays do not match the scenario.
    """
    return float(Structure(s, plan, zeta, force_prob_one).value(plan))


def reliability_gradient(s, plan, *, zeta=None, force_prob_one=False):
    """Analytic gradient of :func:`reliability` with respect to times and cargo.

    Returns
    -------
    dict
        Keys ``t_fa``, ``t_df``, ``t_sd``, ``b_fa``, ``b_df``, ``b_sd`` with the
        shapes of the matching plan fields.
    """
    return Structure(s, plan, zeta, force_prob_one).value_and_grad(plan)[1]


def reliability_batch(s, plan, t_fa, t_df, t_sd, *, zeta=None, force_prob_one=False):
    """Reliability for many time assignments sharing one plan's binaries and cargo.

    Time arrays have shape ``(..., m)`` with a common batch shape.
    """
    st = Structure(s, plan, zeta, force_prob_one)
    return st.value(plan, (t_fa, t_df, t_sd))


# ------------------------------------------------------------------ constraints

CONSTRAINT_FAMILIES = (
    "demand",
    "availability_F",
    "availability_D",
    "availability_S",
    "consistency_FA",
    "consistency_DF",
    "consistency_SD",
    "capacity_F",
    "capacity_D",
    "capacity_S",
    "one_destination",
    "connectivity",
    "budget",
    "dispatch_time",
    "nonnegativity",
    "binary",
)


@dataclass
class FamilyReport:
    """Status of one constraint family.

    ``slack`` holds ``rhs - lhs`` for each inequality in the family, so
    negative entries are violations and entries below ``BINDING_TOL`` in
    absolute value are binding.
    """

    name: str
    slack: np.ndarray

    @property
    def violation(self):
        return float(max(0.0, -np.min(self.slack))) if self.slack.size else 0.0

    @property
    def satisfied(self):
        return self.violation <= VIOLATION_TOL

    @property
    def binding(self):
        return np.abs(self.slack) < BINDING_TOL

    def to_dict(self):
        return {
            "satisfied": self.satisfied,
            "violation": self.violation,
            "n_binding": int(np.count_nonzero(self.binding)),
        }


@dataclass
class ConstraintReport:
    families: dict = field(default_factory=dict)

    @property
    def satisfied(self):
        return all(f.satisfied for f in self.families.values())

    def violated(self):
        return [name for name, f in self.families.items() if not f.satisfied]

    def __getitem__(self, name):
        return self.families[name]

    def to_dict(self):
        return {name: f.to_dict() for name, f in self.families.items()}


def cargo_per_facility_vehicle(plan):
    """Total cargo per (commodity, facility vehicle) from all three levels."""
    return plan.b_fa + plan.b_df.sum(axis=1) + plan.b_sd.sum(axis=(1, 2))


def check_constraints(s, plan):
    """Evaluate every constraint family of the model.

    Families are keyed by name (see ``CONSTRAINT_FAMILIES``).  Each entry
    reports the maximum violation and which inequalities are binding.
    """
    plan.check_shapes(s)
    fam = {}
    kc = s.capacity_use
    homeS, homeD, homeF = (s.fleets[lv].home for lv in ("S", "D", "F"))
    nS, nD, nF = s.n("S"), s.n("D"), s.n("F")

    cargo_f = cargo_per_facility_vehicle(plan)
    delivered = cargo_f @ plan.u_fa  # (e, a)
    fam["demand"] = s.demand_amounts - delivered

    onehot = lambda home, n: np.eye(n)[home] if home.size else np.zeros((0, n))  # noqa: E731
    fam["availability_F"] = s.availability["F"] - plan.b_fa @ onehot(homeF, nF)
    fam["availability_D"] = s.availability["D"] - plan.b_df.sum(axis=2) @ onehot(homeD, nD)
    fam["availability_S"] = s.availability["S"] - plan.b_sd.sum(axis=(2, 3)) @ onehot(homeS, nS)

    disp_f = plan.u_fa.sum(axis=1) > 0
    dest_df = plan.destinations("DF")
    dest_sd = plan.destinations("SD")
    ok_df = (dest_df[:, None] == homeF[None, :]) & (dest_df[:, None] >= 0) & disp_f[None, :]
    ok_sd = (dest_sd[:, None] == homeD[None, :]) & (dest_sd[:, None] >= 0)
    ok_sdf = ok_sd[:, :, None] & ok_df[None, :, :]
    fam["consistency_FA"] = -np.where(disp_f[None, :], 0.0, np.abs(plan.b_fa))
    fam["consistency_DF"] = -np.where(ok_df, 0.0, np.abs(plan.b_df).sum(axis=0))
    fam["consistency_SD"] = -np.where(ok_sdf, 0.0, np.abs(plan.b_sd).sum(axis=0))

    fam["capacity_F"] = s.fleets["F"].capacity - kc @ cargo_f
    load_d = np.einsum("e,edf->d", kc, plan.b_df) + np.einsum("e,esdf->d", kc, plan.b_sd)
    fam["capacity_D"] = s.fleets["D"].capacity - load_d
    fam["capacity_S"] = s.fleets["S"].capacity - np.einsum("e,esdf->s", kc, plan.b_sd)

    fam["one_destination"] = np.concatenate(
        [1.0 - u.sum(axis=1) for u in (plan.u_fa, plan.u_df, plan.u_sd)]
    )
    fam["connectivity"] = np.concatenate(
        [
            (s.edges[p].connectivity.astype(float) - u).ravel()
            for p, u in (("FA", plan.u_fa), ("DF", plan.u_df), ("SD", plan.u_sd))
        ]
    )
    fam["budget"] = np.array([s.budget - plan_cost(s, plan)])
    slacks = []
    for lv, u, t in (("F", plan.u_fa, plan.t_fa), ("D", plan.u_df, plan.t_df), ("S", plan.u_sd, plan.t_sd)):
        disp = u.sum(axis=1) > 0
        slacks.append(np.where(disp, t - s.fleets[lv].available_at, np.inf))
    fam["dispatch_time"] = np.concatenate(slacks)
    fam["nonnegativity"] = np.concatenate([plan.b_fa.ravel(), plan.b_df.ravel(), plan.b_sd.ravel()])
    u_all = np.concatenate([plan.u_fa.ravel(), plan.u_df.ravel(), plan.u_sd.ravel()]).astype(float)
    fam["binary"] = -np.minimum(np.abs(u_all), np.abs(u_all - 1.0))

    report = ConstraintReport()
    for name in CONSTRAINT_FAMILIES:
        arr = np.asarray(fam[name], dtype=float).ravel()
        report.families[name] = FamilyReport(name, arr)
    return report


# ------------------------------------------------------------------ metrics

@dataclass
class Metrics:
    """Diagnostics of a plan.

    Attributes
    ----------
    R : float
        Reliability on the 0 to 100 scale.
    cost : float
        Dollars spent on dispatches.
    load_factors : dict
        Per level ``F``, ``D``, ``S``: carried capacity over vehicle capacity.
    load_factor_avg : float
        Mean load factor over dispatched vehicles, 0 when none is dispatched.
    n_dispatched : int
    parallel : dict
        Per level pair, 1 where two or more vehicles share origin and
        destination.
    unsatisfied : ndarray
        Demand minus dispatched cargo, ``(n_E, n_A)``.
    achieved : ndarray
        ``100 w_e`` times the expected delivered fraction of demand
        ``(n_E, n_A)``; zero where there is no demand.
    deficit : ndarray
        ``100 w_e`` times the expected undelivered fraction ``(n_E, n_A)``.
    deficit_by_node : ndarray
        Column sums of ``deficit``, one per destination.
    ceiling : float
        Availability-limited upper bound on ``R``.
    binding_causes : list of str
        Availability, capacity or budget families with binding entries.
    """

    R: float
    cost: float
    load_factors: dict
    load_factor_avg: float
    n_dispatched: int
    parallel: dict
    unsatisfied: np.ndarray
    achieved: np.ndarray
    deficit: np.ndarray
    deficit_by_node: np.ndarray
    ceiling: float
    binding_causes: list

    def to_dict(self):
        return {
            "R": self.R,
            "cost": self.cost,
            "load_factors": {k: v.tolist() for k, v in self.load_factors.items()},
            "load_factor_avg": self.load_factor_avg,
            "n_dispatched": self.n_dispatched,
            "parallel": {k: v.tolist() for k, v in self.parallel.items()},
            "unsatisfied": self.unsatisfied.tolist(),
            "achieved": self.achieved.tolist(),
            "deficit": self.deficit.tolist(),
            "deficit_by_node": self.deficit_by_node.tolist(),
            "ceiling": self.ceiling,
            "binding_causes": list(self.binding_causes),
        }


def reliability_ceiling(s):
    """Upper bound on ``R`` when every stocked unit could be delivered for sure.

    Each commodity contributes ``w_e * min(total stock, total demand)``,
    normalized by the weighted demand.
    """
    lam = total_weighted_demand(s)
    stock = sum(s.availability[lv].sum(axis=1) for lv in ("F", "D", "S"))
    demand = s.demand_amounts.sum(axis=1)
    return float(100.0 / lam * np.sum(s.weights * np.minimum(stock, demand)))


def _parallel(u, home, n_origin):
    if u.size == 0:
        return np.zeros_like(u)
    per_node = np.eye(n_origin)[home].T @ u  # (origin node, destination)
    shared = per_node >= 2
    return (shared[home, :] & (u > 0)).astype(int)


def _safe_ratio(num, den):
    den = np.asarray(den, dtype=float)
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)


def metrics(s, plan, *, zeta=None, force_prob_one=False):
    """Compute all diagnostics for a plan (see :class:`Metrics`)."""
    st = Structure(s, plan, zeta, force_prob_one)
    P_fa, P_df, P_sd = st.probs(plan.t_fa, plan.t_df, plan.t_sd)
    R = float(st._combine(P_fa, P_df, P_sd, plan))
    kc = s.capacity_use
    cargo_f = cargo_per_facility_vehicle(plan)
    load = {
        "F": kc @ cargo_f,
        "D": np.einsum("e,edf->d", kc, plan.b_df) + np.einsum("e,esdf->d", kc, plan.b_sd),
        "S": np.einsum("e,esdf->s", kc, plan.b_sd),
    }
    nu = {lv: _safe_ratio(load[lv], s.fleets[lv].capacity) for lv in ("F", "D", "S")}
    disp = {"F": plan.dispatched("FA"), "D": plan.dispatched("DF"), "S": plan.dispatched("SD")}
    n_disp = int(sum(np.count_nonzero(v) for v in disp.values()))
    total_nu = float(sum(nu[lv][disp[lv]].sum() for lv in nu))
    nu_avg = total_nu / n_disp if n_disp else 0.0

    parallel = {
        "FA": _parallel(plan.u_fa, s.fleets["F"].home, s.n("F")),
        "DF": _parallel(plan.u_df, s.fleets["D"].home, s.n("D")),
        "SD": _parallel(plan.u_sd, s.fleets["S"].home, s.n("S")),
    }

    unsatisfied = s.demand_amounts - cargo_f @ plan.u_fa
    H = plan.b_df + np.einsum("sd,esdf->edf", P_sd, plan.b_sd)
    G = plan.b_fa + np.einsum("df,edf->ef", P_df, H)
    expected = (P_fa * G) @ plan.u_fa  # (e, a)
    frac = _safe_ratio(expected, s.demand_amounts)
    w100 = 100.0 * s.weights[:, None]
    has_demand = s.demand_amounts > 0
    achieved = w100 * frac
    deficit = np.where(has_demand, w100 * np.clip(1.0 - frac, 0.0, None), 0.0)

    report = check_constraints(s, plan)
    causes = [
        name
        for name in ("availability_F", "availability_D", "availability_S", "capacity_F", "capacity_D", "capacity_S", "budget")
        if np.any(report[name].binding)
    ]
    return Metrics(
        R=R,
        cost=plan_cost(s, plan),
        load_factors=nu,
        load_factor_avg=nu_avg,
        n_dispatched=n_disp,
        parallel=parallel,
        unsatisfied=unsatisfied,
        achieved=achieved,
        deficit=deficit,
        deficit_by_node=deficit.sum(axis=0),
        ceiling=reliability_ceiling(s),
        binding_causes=causes,
    )


def with_times(plan, t_fa=None, t_df=None, t_sd=None):
    """Copy of ``plan`` with some dispatch times replaced."""
    out = plan.copy()
    if t_fa is not None:
        out.t_fa = np.asarray(t_fa, dtype=float).copy()
    if t_df is not None:
        out.t_df = np.asarray(t_df, dtype=float).copy()
    if t_sd is not None:
        out.t_sd = np.asarray(t_sd, dtype=float).copy()
    return out


__all__ += ["cargo_per_facility_vehicle", "reliability_ceiling", "with_times", "DispatchPlan"]

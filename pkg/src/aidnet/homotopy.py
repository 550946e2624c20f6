"""Continuation in the late-delivery penalty for fixed dispatch decisions.

With the dispatch matrices fixed, the remaining unknowns are departure
times and cargo.  The start point makes every connection succeed with
probability ``eta_h``.  Suppliers leave at once.  Each later level waits a
high quantile of the upstream transfer time after its feeders leave.
Facility vehicles may then leave after their deadlines.  A large penalty
scale ``zeta0`` lets those late deliveries still count with probability
``eta_h``.  The scale is then walked back to the real value, re-optimizing
at each step from the previous optimum.

``optimize_s`` is the local solver.  It alternates an exact LP in the
cargo (the objective is linear there) with a bound-constrained
trust-region step in the departure times.  The two blocks have
independent constraints, so a point that is optimal for both blocks is a
first-order point of the joint problem.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import BFGS, Bounds, minimize, nnls

from .cargo import CargoSpace
from .errors import NoSolution
from .evaluator import Structure, total_weighted_demand
from .prob import invert_cdf, invert_zeta

__all__ = [
    "HomotopyConfig",
    "OptimizeResult",
    "HomotopyStep",
    "HomotopyResult",
    "MaxIterationsWarning",
    "start_times",
    "start_commodities",
    "zeta_start",
    "optimize_s",
    "zeta_schedule",
    "homotopy_solve",
]


class MaxIterationsWarning(RuntimeWarning):
    """The local solver stopped at its iteration cap."""


@dataclass
class HomotopyConfig:
    """Settings of the continuation.

    Attributes
    ----------
    eta_h : float or None
        Target start-point probability; the scenario's value when None.
    iota_h : int
        Number of continuation steps.
    schedule : {"uniform", "geometric"}
        Uniform steps move linearly from ``zeta0`` to ``zeta``; geometric
        steps move linearly in ``log(zeta)``.
    gtol : float
        Projected-gradient tolerance of the local solver.
    max_rounds : int
        Cap on alternations between the cargo LP and the time step.
    max_time_iter : int
        Iteration cap of each quasi-Newton time step.
    step_gtol, step_rounds : float, int
        Looser tolerance and round cap for the intermediate continuation
        steps; only the last step, at the true scales, is solved to ``gtol``.
    force_prob_one : bool
        Diagnostic mode: every success probability is taken as 1, so only
        the cargo matters.
    """

    eta_h: float = None
    iota_h: int = 12
    schedule: str = "uniform"
    gtol: float = 1e-6
    max_rounds: int = 50
    max_time_iter: int = 500
    step_gtol: float = 1e-4
    step_rounds: int = 6
    force_prob_one: bool = False

    def __post_init__(self):
        if self.iota_h < 1:
            raise ValueError("iota_h must be at least 1")
        if self.schedule not in ("uniform", "geometric"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.eta_h is not None and not 0 < self.eta_h < 1:
            raise ValueError("eta_h must lie in (0, 1)")


# ---------------------------------------------------------------- start point

def start_times(s, plan, eta_h=None):
    """Start departure times for fixed dispatch matrices.

    Suppliers leave when available.  A depot vehicle leaves when every
    supplier feeding it has arrived with probability ``eta_h``, and never
    before its own availability.  Facility vehicles are treated the same way
    relative to the depot departures just computed.  Undispatched vehicles
    get ``+inf``.

    Returns
    -------
    t_sd, t_df, t_fa : ndarray
    """
    eta = s.eta_h if eta_h is None else eta_h
    dest_sd = plan.destinations("SD")
    dest_df = plan.destinations("DF")
    dest_fa = plan.destinations("FA")
    homeD, homeF = s.fleets["D"].home, s.fleets["F"].home
    t_sd = np.where(dest_sd >= 0, s.fleets["S"].available_at, np.inf)
    t_df = np.full(s.m("D"), np.inf)
    for d in range(s.m("D")):
        if dest_df[d] < 0:
            continue
        t = s.fleets["D"].available_at[d]
        for v in range(s.m("S")):
            if dest_sd[v] == homeD[d]:
                t = max(t, t_sd[v] + invert_cdf(s.edges["SD"].dist(v, homeD[d]), eta))
        t_df[d] = t
    t_fa = np.full(s.m("F"), np.inf)
    for f in range(s.m("F")):
        if dest_fa[f] < 0:
            continue
        t = s.fleets["F"].available_at[f]
        for d in range(s.m("D")):
            if dest_df[d] >= 0 and dest_df[d] == homeF[f]:
                t = max(t, t_df[d] + invert_cdf(s.edges["DF"].dist(d, homeF[f]), eta))
        t_fa[f] = t
    return t_sd, t_df, t_fa


def start_commodities(s, plan, eta_h=None):
    """Cargo maximizing stock moved, discounted by ``eta_h`` per extra leg.

    Returns a copy of ``plan`` with the cargo tensors replaced.  Among
    optimal solutions a sparse one is preferred.
    """
    eta = s.eta_h if eta_h is None else eta_h
    space = CargoSpace(s, plan)
    x = space.solve(space.level_weights(1.0, eta, eta * eta), tie_break="least_nonzeros")
    return space.unpack(x, plan)


def zeta_start(s, plan, eta_h=None):
    """Penalty scales that lift every delivery to probability ``eta_h``.

    Entries where the on-time probability already meets ``eta_h`` (or the
    vehicle is not dispatched) keep the scenario's scale.
    """
    eta = s.eta_h if eta_h is None else eta_h
    out = np.array(s.zeta, dtype=float)
    dest = plan.destinations("FA")
    for f, a in enumerate(dest):
        if a < 0 or not np.isfinite(plan.t_fa[f]):
            continue
        dist = s.edges["FA"].dist(f, a)
        for e in range(s.n_E):
            try:
                out[e, f] = invert_zeta(dist, s.demand_times[e, a] - plan.t_fa[f], eta)
            except NoSolution:
                out[e, f] = s.zeta[e, f]
    return out


# ---------------------------------------------------------------- local solver

@dataclass
class OptimizeResult:
    plan: object
    R: float
    converged: bool
    rounds: int
    projected_gradient: float


def _time_blocks(s, plan):
    """Indices of free time variables: dispatched depot and facility vehicles."""
    d_idx = np.flatnonzero(plan.dispatched("DF"))
    f_idx = np.flatnonzero(plan.dispatched("FA"))
    lower = np.concatenate([s.fleets["D"].available_at[d_idx], s.fleets["F"].available_at[f_idx]])
    return d_idx, f_idx, lower


def _projected_time_gradient(g, x, lower):
    g = g.copy()
    at_lower = x <= lower + 1e-10
    g[at_lower & (g < 0)] = 0.0
    return g


def _cargo_stationarity(space, x, c):
    """Distance of ``c`` from the cone spanned by the active constraint normals."""
    if space.n == 0:
        return 0.0
    normals = []
    if space.A_ub.shape[0]:
        slack = space.b_ub - space.A_ub @ x
        scale = 1.0 + np.abs(space.b_ub)
        for i in np.flatnonzero(slack <= 1e-9 * scale):
            normals.append(space.A_ub[i])
    for j in np.flatnonzero(x <= 1e-12):
        e = np.zeros(space.n)
        e[j] = -1.0
        normals.append(e)
    if not normals:
        return float(np.linalg.norm(c))
    N = np.array(normals).T
    _, resid = nnls(N, c)
    return float(resid)


def projected_gradient_norm(s, plan, zeta=None, *, force_prob_one=False):
    """First-order residual of ``plan`` for fixed dispatch matrices.

    Combines the box-projected time gradient (depot and facility times) with
    the distance of the cargo gradient from the cone of active constraints.
    """
    st = Structure(s, plan, zeta, force_prob_one=force_prob_one)
    _, grad = st.value_and_grad(plan)
    d_idx, f_idx, lower = _time_blocks(s, plan)
    x = np.concatenate([plan.t_df[d_idx], plan.t_fa[f_idx]])
    g = np.concatenate([grad["t_df"][d_idx], grad["t_fa"][f_idx]])
    gt = _projected_time_gradient(g, x, lower)
    space = CargoSpace(s, plan)
    gc = space.coefficients(grad["b_fa"], grad["b_df"], grad["b_sd"])
    rc = _cargo_stationarity(space, space.pack(plan), gc)
    return float(np.hypot(np.linalg.norm(gt), rc))


def _lbfgsb(neg, x0, lower, base, cfg):
    res = minimize(
        neg,
        x0,
        args=(base,),
        jac=True,
        method="L-BFGS-B",
        bounds=[(lo, None) for lo in lower],
        options={"maxiter": cfg.max_time_iter, "gtol": 1e-12, "ftol": 1e-15, "maxcor": 20},
    )
    x = np.maximum(res.x, lower)
    return x, neg(x, base)[0]


def _time_step(neg, x0, lower, base, cfg):
    """Improve the departure times with the cargo held fixed.

    A bound-constrained quasi-Newton pass is tried first.  When it ends
    within 0.5 h of the start it is taken as the local maximum of the start's
    basin.  A longer move may have crossed into another basin, so a
    trust-region pass (initial radius 0.5 h) is run instead, followed by a
    quasi-Newton polish that is itself cut back to a 0.5 h step if it leaps.
    """
    f0 = neg(x0, base)[0]
    x, f = _lbfgsb(neg, x0, lower, base, cfg)
    if np.max(np.abs(x - x0), initial=0.0) <= 0.5:
        return x if f < f0 else x0
    best_x, best_f = x0, f0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = minimize(
            neg,
            x0,
            args=(base,),
            jac=True,
            hess=BFGS(),
            method="trust-constr",
            bounds=Bounds(lower, np.full(lower.size, np.inf)),
            options={"initial_tr_radius": 0.5, "gtol": 1e-8, "xtol": 1e-10, "maxiter": cfg.max_time_iter},
        )
    x = np.maximum(res.x, lower)
    f = neg(x, base)[0]
    if f < best_f:
        best_x, best_f = x, f
    x, f = _lbfgsb(neg, best_x, lower, base, cfg)
    jump = np.max(np.abs(x - best_x), initial=0.0)
    if jump > 0.5:
        x = np.maximum(best_x + (x - best_x) * (0.5 / jump), lower)
        f = neg(x, base)[0]
    if f < best_f:
        best_x, best_f = x, f
    return best_x


def optimize_s(s, plan, zeta=None, *, cfg=None, space=None):
    """Local maximum of the reliability in cargo and depot/facility times.

    Supplier times and dispatch matrices stay fixed.  The returned plan
    never has a lower objective than the start.

    Parameters
    ----------
    s : Scenario
    plan : DispatchPlan
        Feasible start point.
    zeta : ndarray, optional
        Penalty scales used in the objective; the scenario's by default.
    cfg : HomotopyConfig, optional

    Returns
    -------
    OptimizeResult
        ``converged`` is False when the round cap was hit, in which case a
        :class:`MaxIterationsWarning` is also issued.
    """
    cfg = cfg or HomotopyConfig()
    st = Structure(s, plan, zeta, force_prob_one=cfg.force_prob_one)
    space = space or CargoSpace(s, plan)
    d_idx, f_idx, lower = _time_blocks(s, plan)
    nd = d_idx.size
    cur = plan.copy()
    R = float(st.value(cur))

    def with_x(p, x):
        q = p.copy()
        q.t_df[d_idx] = x[:nd]
        q.t_fa[f_idx] = x[nd:]
        return q

    def neg(x, base):
        q = with_x(base, x)
        val, grad = st.value_and_grad(q)
        g = np.concatenate([grad["t_df"][d_idx], grad["t_fa"][f_idx]])
        return -val, -g

    converged = False
    pg = np.inf
    rounds = 0
    for rounds in range(1, cfg.max_rounds + 1):
        R_round = R
        # Cargo block: exact LP with the current times.
        _, grad = st.value_and_grad(cur)
        c = space.coefficients(grad["b_fa"], grad["b_df"], grad["b_sd"])
        x_cargo = space.solve(c)
        trial = space.unpack(x_cargo, cur)
        R_trial = float(st.value(trial))
        if R_trial > R + 1e-12:
            cur, R = trial, R_trial
        # Time block.
        x0 = np.concatenate([cur.t_df[d_idx], cur.t_fa[f_idx]])
        if x0.size:
            x_new = _time_step(neg, x0, lower, cur, cfg)
            trial = with_x(cur, x_new)
            R_trial = float(st.value(trial))
            if R_trial > R:
                gain = R_trial - R
                cur, R = trial, R_trial
            else:
                gain = 0.0
        else:
            gain = 0.0
        # Stationarity of both blocks at the current point.
        _, grad = st.value_and_grad(cur)
        xt = np.concatenate([cur.t_df[d_idx], cur.t_fa[f_idx]])
        gt = np.concatenate([grad["t_df"][d_idx], grad["t_fa"][f_idx]])
        pt = np.linalg.norm(_projected_time_gradient(gt, xt, lower))
        gc = space.coefficients(grad["b_fa"], grad["b_df"], grad["b_sd"])
        pc = _cargo_stationarity(space, space.pack(cur), gc)
        pg = float(np.hypot(pt, pc))
        if pg <= cfg.gtol or (gain <= 1e-13 * max(1.0, abs(R)) and pt <= cfg.gtol and rounds > 1):
            converged = pg <= cfg.gtol
            break
        if R <= R_round + 1e-15 * max(1.0, abs(R)) and rounds > 1:
            break  # a full round changed nothing; more rounds would repeat it
    if not converged:
        warnings.warn(
            f"local solver stopped after {rounds} rounds with projected gradient {pg:.3g}",
            MaxIterationsWarning,
            stacklevel=2,
        )
    return OptimizeResult(cur, R, converged, rounds, pg)


# ---------------------------------------------------------------- continuation

@dataclass
class HomotopyStep:
    step: int
    zeta: np.ndarray
    R_step: float
    R: float
    plan: object
    converged: bool

    def row(self):
        """Flat record for CSV output."""
        out = {
            "step": self.step,
            "zeta_min": float(np.min(self.zeta)),
            "zeta_max": float(np.max(self.zeta)),
            "R_step": self.R_step,
            "R": self.R,
        }
        for i, t in enumerate(self.plan.t_fa):
            out[f"t_fa_{i}"] = t
        for i, t in enumerate(self.plan.t_df):
            out[f"t_df_{i}"] = t
        return out


@dataclass
class HomotopyResult:
    plan: object
    R: float
    zeta0: np.ndarray
    path: list = field(default_factory=list)
    n_optimize: int = 0
    transformed: bool = True


def zeta_schedule(zeta0, zeta, iota_h, schedule="uniform"):
    """Penalty scales for steps 1 to ``iota_h``; the last equals ``zeta``."""
    zeta0 = np.asarray(zeta0, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    out = []
    for i in range(1, iota_h + 1):
        frac = i / iota_h
        if schedule == "uniform":
            z = zeta0 + frac * (zeta - zeta0)
        else:
            z = np.exp(np.log(zeta0) + frac * (np.log(zeta) - np.log(zeta0)))
        out.append(z if i < iota_h else zeta.copy())
    return out


def homotopy_solve(s, plan, cfg=None):
    """Optimize cargo and times for the dispatch matrices of ``plan``.

    Returns
    -------
    HomotopyResult
        ``R`` and every ``path[i].R`` are evaluated with the scenario's own
        penalty scales; ``path[i].R_step`` uses the step's scales.
    """
    cfg = cfg or HomotopyConfig()
    eta = s.eta_h if cfg.eta_h is None else cfg.eta_h
    total_weighted_demand(s)  # raises DegenerateDemand early
    start = plan.copy()
    start.t_sd[:], start.t_df[:], start.t_fa[:] = start_times(s, start, eta)
    start = start_commodities(s, start, eta)
    zeta0 = zeta_start(s, start, eta)
    space = CargoSpace(s, start)
    original = Structure(s, start, force_prob_one=cfg.force_prob_one)
    result = HomotopyResult(plan=start, R=float(original.value(start)), zeta0=zeta0)
    result.path.append(HomotopyStep(0, zeta0, float(Structure(s, start, zeta0, force_prob_one=cfg.force_prob_one).value(start)), result.R, start, True))
    if cfg.force_prob_one or np.all(zeta0 <= s.zeta):
        res = optimize_s(s, start, s.zeta, cfg=cfg, space=space)
        result.transformed = False
        result.n_optimize = 1
        result.plan, result.R = res.plan, res.R
        result.path.append(HomotopyStep(1, np.array(s.zeta), res.R, res.R, res.plan, res.converged))
        return result
    cur = start
    loose = replace(cfg, gtol=max(cfg.gtol, cfg.step_gtol), max_rounds=min(cfg.max_rounds, cfg.step_rounds))
    for i, z in enumerate(zeta_schedule(zeta0, s.zeta, cfg.iota_h, cfg.schedule), start=1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxIterationsWarning)
            res = optimize_s(s, cur, z, cfg=cfg if i == cfg.iota_h else loose, space=space)
        cur = res.plan
        result.n_optimize += 1
        result.path.append(HomotopyStep(i, z, res.R, float(original.value(cur)), cur, res.converged))
    result.plan = cur
    result.R = float(original.value(cur))
    return result

"""Small dense linear and binary-integer program solvers.

The LP solver is a two-phase revised simplex on dense matrices.  Pricing
picks the most negative reduced cost and falls back to Bland's rule when
pivots stall, so it stays deterministic and cycle-free.  The programs
built by the warm-start and homotopy code have at most a few hundred
variables.  Binary programs are solved by depth-first branch and bound on
the LP relaxation.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import Infeasible, NumericalError, SizeLimit

__all__ = [
    "LPStatus",
    "LinearProgram",
    "LPResult",
    "solve_lp",
    "BinaryProgram",
    "BIPResult",
    "solve_bip",
    "least_infeasible_bip",
    "count_nonzeros",
]

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-10
NONZERO_TOL = 1e-9
PIN_TOL = 1e-7


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


def _as2d(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        rows = A.shape[0] if A.ndim == 2 else 0
        return np.zeros((rows, n))
    return A.reshape(-1, n)


def _as1d(b):
    if b is None:
        return np.zeros(0)
    return np.asarray(b, dtype=float).reshape(-1)


@dataclass
class LinearProgram:
    """``max`` (or ``min``) of ``c @ x`` subject to linear rows and box bounds.

    Parameters
    ----------
    c : array_like, shape (n,)
    A_ub, b_ub : array_like, optional
        Rows ``A_ub @ x <= b_ub``.
    A_eq, b_eq : array_like, optional
        Rows ``A_eq @ x == b_eq``.
    lb, ub : array_like, optional
        Finite lower bounds (default 0) and upper bounds (default +inf).
    maximize : bool
        Direction of optimization, default True.
    """

    c: np.ndarray
    A_ub: np.ndarray = None
    b_ub: np.ndarray = None
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    maximize: bool = True

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_ub = _as2d(self.A_ub, n)
        self.b_ub = _as1d(self.b_ub)
        self.A_eq = _as2d(self.A_eq, n)
        self.b_eq = _as1d(self.b_eq)
        self.lb = np.zeros(n) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrix and right-hand side sizes differ")
        if not np.all(np.isfinite(self.lb)):
            raise ValueError("lower bounds must be finite")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self):
        return self.c.size

    def objective(self, x):
        return float(self.c @ x)

    def max_violation(self, x):
        """Largest constraint or bound violation of ``x``."""
        parts = [0.0]
        if self.A_ub.shape[0]:
            parts.append(np.max(self.A_ub @ x - self.b_ub))
        if self.A_eq.shape[0]:
            parts.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        parts.append(np.max(self.lb - x, initial=0.0))
        finite = np.isfinite(self.ub)
        if finite.any():
            parts.append(np.max(x[finite] - self.ub[finite]))
        return float(max(parts))


@dataclass
class LPResult:
    """Outcome of :func:`solve_lp`.

    ``duals_ub`` and ``duals_eq`` are shadow prices: the rate of change of
    the optimal value per unit increase of each right-hand side.
    """

    status: LPStatus
    x: np.ndarray = None
    value: float = None
    duals_ub: np.ndarray = None
    duals_eq: np.ndarray = None
    iterations: int = 0

    @property
    def optimal(self):
        return self.status is LPStatus.OPTIMAL


class _StandardForm:
    """``min c y`` s.t. ``A y = b``, ``y >= 0`` with ``b >= 0``, built from a LinearProgram."""

    def __init__(self, lp):
        n = lp.n
        shift = lp.lb
        rows, rhs, kinds = [], [], []
        for i in range(lp.A_ub.shape[0]):
            rows.append(lp.A_ub[i])
            rhs.append(lp.b_ub[i] - lp.A_ub[i] @ shift)
            kinds.append(("ub", i))
        for j in np.flatnonzero(np.isfinite(lp.ub)):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(lp.ub[j] - shift[j])
            kinds.append(("bound", j))
        n_ineq = len(rows)
        for i in range(lp.A_eq.shape[0]):
            rows.append(lp.A_eq[i])
            rhs.append(lp.b_eq[i] - lp.A_eq[i] @ shift)
            kinds.append(("eq", i))
        m = len(rows)
        A = np.zeros((m, n + n_ineq))
        if m:
            A[:, :n] = np.array(rows)
        A[np.arange(n_ineq), n + np.arange(n_ineq)] = 1.0
        b = np.array(rhs, dtype=float)
        sign = np.where(b < 0, -1.0, 1.0)
        A *= sign[:, None]
        b *= sign
        self.A, self.b, self.sign, self.kinds = A, b, sign, kinds
        self.n_orig, self.n_ineq, self.m = n, n_ineq, m
        self.obj_sign = -1.0 if lp.maximize else 1.0
        self.c = np.concatenate([self.obj_sign * lp.c, np.zeros(n_ineq)])
        self.shift = shift


def _simplex(A, b, c, basis, max_iter, allowed):
    """Revised simplex from a feasible basis.

    Pricing uses the most negative reduced cost.  After a run of degenerate
    pivots it switches to Bland's rule for good, which rules out cycling.
    Returns (status, basis, iterations).  ``allowed`` marks columns that may
    enter the basis.
    """
    m = A.shape[0]
    it = 0
    degenerate_run = 0
    bland = False
    scale = 1.0 + np.abs(c).max(initial=0.0)
    while True:
        if it > max_iter:
            raise NumericalError(f"simplex exceeded {max_iter} iterations")
        if m == 0:
            return LPStatus.OPTIMAL, basis, it
        lu = lu_factor(A[:, basis], check_finite=False)
        xB = lu_solve(lu, b, check_finite=False)
        y = lu_solve(lu, c[basis], trans=1, check_finite=False)
        reduced = c - A.T @ y
        in_basis = np.zeros(A.shape[1], dtype=bool)
        in_basis[basis] = True
        cand = np.flatnonzero(allowed & ~in_basis & (reduced < -1e-11 * scale))
        if cand.size == 0:
            return LPStatus.OPTIMAL, basis, it
        j = int(cand[0]) if bland else int(cand[np.argmin(reduced[cand])])
        d = lu_solve(lu, A[:, j], check_finite=False)
        pos = d > PIVOT_TOL
        if not pos.any():
            return LPStatus.UNBOUNDED, basis, it
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / d[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * (1.0 + best))
        leave = ties[np.argmin(np.asarray(basis)[ties])]
        degenerate_run = degenerate_run + 1 if best <= 1e-12 else 0
        if degenerate_run > 2 * m + 10:
            bland = True
        basis = list(basis)
        basis[leave] = j
        it += 1


def _solve_standard(sf, max_iter):
    A, b, c = sf.A, sf.b, sf.c
    m, n = A.shape
    # Initial basis: slack columns with coefficient +1 where available,
    # artificials elsewhere.
    basis = []
    art_rows = []
    for i in range(m):
        if i < sf.n_ineq and sf.sign[i] > 0:
            basis.append(sf.n_orig + i)
        else:
            art_rows.append(i)
    n_art = len(art_rows)
    A1 = np.hstack([A, np.zeros((m, n_art))])
    for k, i in enumerate(art_rows):
        A1[i, n + k] = 1.0
    full_basis = [None] * m
    slack_iter = iter(basis)
    for i in range(m):
        if i in art_rows:
            full_basis[i] = n + art_rows.index(i)
        else:
            full_basis[i] = next(slack_iter)
    iters = 0
    if n_art:
        c1 = np.concatenate([np.zeros(n), np.ones(n_art)])
        status, full_basis, it = _simplex(A1, b, c1, full_basis, max_iter, np.ones(n + n_art, dtype=bool))
        iters += it
        xB = np.linalg.solve(A1[:, full_basis], b)
        infeas = sum(xB[k] for k, col in enumerate(full_basis) if col >= n)
        if infeas > FEAS_TOL * (1.0 + np.abs(b).max(initial=0.0)):
            return LPStatus.INFEASIBLE, None, None, iters
        # Drive zero-level artificials out of the basis; drop redundant rows.
        keep_rows = list(range(m))
        for k in range(m):
            col = full_basis[k]
            if col < n:
                continue
            B = A1[np.ix_(keep_rows, [full_basis[r] for r in keep_rows])]
            row_pos = keep_rows.index(k)
            e = np.zeros(len(keep_rows))
            e[row_pos] = 1.0
            row = np.linalg.solve(B.T, e) @ A1[keep_rows, :n]
            in_basis = set(full_basis[r] for r in keep_rows)
            cand = [j for j in range(n) if j not in in_basis and abs(row[j]) > 1e-9]
            if cand:
                full_basis[k] = cand[0]
            else:
                keep_rows.remove(k)
        A2 = A[keep_rows]
        b2 = b[keep_rows]
        basis2 = [full_basis[r] for r in keep_rows]
    else:
        keep_rows = list(range(m))
        A2, b2, basis2 = A, b, full_basis
    status, basis2, it = _simplex(A2, b2, c, basis2, max_iter, np.ones(n, dtype=bool))
    iters += it
    if status is not LPStatus.OPTIMAL:
        return status, None, None, iters
    y_full = np.zeros(n)
    if basis2:
        B = A2[:, basis2]
        y_full[basis2] = np.linalg.solve(B, b2)
        dual_rows = np.linalg.solve(B.T, c[basis2])
    else:
        dual_rows = np.zeros(0)
    duals = np.zeros(m)
    duals[keep_rows] = dual_rows
    return LPStatus.OPTIMAL, np.maximum(y_full, 0.0), duals, iters


def _solve_plain(lp, max_iter=None):
    sf = _StandardForm(lp)
    if max_iter is None:
        max_iter = 50 * (sf.m + sf.A.shape[1]) + 1000
    status, y, duals, iters = _solve_standard(sf, max_iter)
    if status is not LPStatus.OPTIMAL:
        return LPResult(status, iterations=iters)
    x = sf.shift + y[: sf.n_orig]
    # Shadow prices: d(value)/d(rhs) for each original row.
    prices = sf.obj_sign * sf.sign * duals
    duals_ub = np.zeros(lp.A_ub.shape[0])
    duals_eq = np.zeros(lp.A_eq.shape[0])
    for k, (kind, i) in enumerate(sf.kinds):
        if kind == "ub":
            duals_ub[i] = prices[k]
        elif kind == "eq":
            duals_eq[i] = prices[k]
    return LPResult(LPStatus.OPTIMAL, x, lp.objective(x), duals_ub, duals_eq, iters)


def count_nonzeros(x, lb=None, mask=None):
    """Number of entries of ``x - lb`` above the nonzero tolerance."""
    x = np.asarray(x, dtype=float)
    z = x - (0.0 if lb is None else lb)
    nz = np.abs(z) > NONZERO_TOL * (1.0 + np.abs(x).max(initial=0.0))
    if mask is not None:
        nz &= mask
    return int(np.count_nonzero(nz))


def _pinned(lp, value):
    """Copy of ``lp`` whose objective is held within PIN_TOL of ``value``."""
    tol = PIN_TOL * max(1.0, abs(value))
    sgn = -1.0 if lp.maximize else 1.0
    A_ub = np.vstack([lp.A_ub, sgn * lp.c[None, :]])
    b_ub = np.concatenate([lp.b_ub, [sgn * value + tol]])
    return A_ub, b_ub


def _lexi_weight(gain_scale, value):
    """Weight on the original objective that dominates a secondary gain of ``gain_scale``."""
    return 10.0 * gain_scale / (PIN_TOL * max(1.0, abs(value)))


def _least_nonzeros(lp, base, mask, rounds=4):
    """Reweighted-L1 search for a sparse optimal vertex."""
    A_ub, b_ub = _pinned(lp, base.value)
    best = base
    best_count = count_nonzeros(base.x, lp.lb, mask)
    x = base.x
    scale = 1.0 + np.abs(base.x).max(initial=0.0)
    for k in range(rounds):
        if k == 0:
            weights = np.ones(lp.n)
        else:
            weights = 1.0 / (np.abs(x - lp.lb) + 1e-3 * scale)
        weights = np.where(mask, weights, 0.0)
        # The original objective is kept with a weight large enough that no
        # sparsity gain can pay for giving up optimality within the pin.
        W = _lexi_weight(weights.sum() * scale, base.value)
        sign = 1.0 if lp.maximize else -1.0
        sub = LinearProgram(weights - W * sign * lp.c, A_ub, b_ub, lp.A_eq, lp.b_eq, lp.lb, lp.ub, maximize=False)
        res = _solve_plain(sub)
        if not res.optimal:
            break
        x = res.x
        cnt = count_nonzeros(x, lp.lb, mask)
        if cnt < best_count:
            best_count = cnt
            best = LPResult(LPStatus.OPTIMAL, x, lp.objective(x), base.duals_ub, base.duals_eq, base.iterations)
    return best


def _most_nonzeros(lp, base, mask):
    """Spread an optimum over as many masked variables as the optimal face allows.

    Maximizes ``sum_j min(x_j - lb_j, tau)`` over the optimal face, which
    counts variables that can be raised to at least ``tau``.
    """
    A_ub, b_ub = _pinned(lp, base.value)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return base
    n, k = lp.n, idx.size
    tau = 1e-3 * (1.0 + np.abs(base.x).max(initial=0.0))
    sign = 1.0 if lp.maximize else -1.0
    c = np.concatenate([_lexi_weight(k * tau, base.value) * sign * lp.c, np.ones(k)])
    # s_j <= x_j - lb_j  ->  s_j - x_j <= -lb_j
    link = np.zeros((k, n + k))
    link[np.arange(k), idx] = -1.0
    link[np.arange(k), n + np.arange(k)] = 1.0
    A = np.vstack([np.hstack([A_ub, np.zeros((A_ub.shape[0], k))]), link])
    b = np.concatenate([b_ub, -lp.lb[idx]])
    A_eq = np.hstack([lp.A_eq, np.zeros((lp.A_eq.shape[0], k))])
    lb = np.concatenate([lp.lb, np.zeros(k)])
    ub = np.concatenate([lp.ub, np.full(k, tau)])
    res = _solve_plain(LinearProgram(c, A, b, A_eq, lp.b_eq, lb, ub, maximize=True))
    if not res.optimal:
        return base
    x = res.x[:n]
    if count_nonzeros(x, lp.lb, mask) < count_nonzeros(base.x, lp.lb, mask):
        return base
    return LPResult(LPStatus.OPTIMAL, x, lp.objective(x), base.duals_ub, base.duals_eq, base.iterations)


def solve_lp(lp, *, tie_break=None, nonzero_mask=None, max_iter=None):
    """Solve a :class:`LinearProgram`.

    Parameters
    ----------
    lp : LinearProgram
    tie_break : {None, "least_nonzeros", "most_nonzeros"}
        Second pass over the optimal face (objective held within 1e-7
        relative) that looks for a sparser or denser optimum.  Duals are those
        of the first pass.
    nonzero_mask : array_like of bool, optional
        Variables counted by the tie-break; all by default.
    max_iter : int, optional
        Simplex iteration cap per phase.

    Returns
    -------
    LPResult

    Raises
    ------
    NumericalError
        If the iteration cap is hit.
    """
    res = _solve_plain(lp, max_iter)
    if not res.optimal or tie_break is None:
        return res
    mask = np.ones(lp.n, dtype=bool) if nonzero_mask is None else np.asarray(nonzero_mask, dtype=bool)
    if tie_break == "least_nonzeros":
        return _least_nonzeros(lp, res, mask)
    if tie_break == "most_nonzeros":
        return _most_nonzeros(lp, res, mask)
    raise ValueError(f"unknown tie_break {tie_break!r}")


# ---------------------------------------------------------------- binary programs

@dataclass
class BinaryProgram:
    """Minimize (or maximize) a linear objective over binary variables.

    Parameters
    ----------
    c : array_like, shape (n,)
    A_ub, b_ub, A_eq, b_eq : array_like, optional
        Linear rows as in :class:`LinearProgram`.
    maximize : bool
        Default False (minimization).
    hinge_A, hinge_b : array_like, optional
        Adds ``sum_k max(hinge_b[k] - hinge_A[k] @ x, 0)`` to a minimization
        objective.  Each hinge becomes one continuous auxiliary variable.
    continuous : array_like of bool, optional
        Marks variables that are continuous and nonnegative instead of binary.
    """

    c: np.ndarray
    A_ub: np.ndarray = None
    b_ub: np.ndarray = None
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    maximize: bool = False
    hinge_A: np.ndarray = None
    hinge_b: np.ndarray = None
    continuous: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_ub = _as2d(self.A_ub, n)
        self.b_ub = _as1d(self.b_ub)
        self.A_eq = _as2d(self.A_eq, n)
        self.b_eq = _as1d(self.b_eq)
        self.hinge_A = _as2d(self.hinge_A, n)
        self.hinge_b = _as1d(self.hinge_b)
        if self.hinge_A.shape[0] and self.maximize:
            raise ValueError("hinge terms require a minimization objective")
        self.continuous = np.zeros(n, dtype=bool) if self.continuous is None else np.asarray(self.continuous, bool)
        if self.A_ub.shape[0] != self.b_ub.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrix and right-hand side sizes differ")
        if self.hinge_A.shape[0] != self.hinge_b.size:
            raise ValueError("hinge matrix and offsets sizes differ")

    @property
    def n(self):
        return self.c.size

    @property
    def n_binary(self):
        return int(np.count_nonzero(~self.continuous))

    def objective(self, x):
        val = float(self.c @ x)
        if self.hinge_A.shape[0]:
            val += float(np.maximum(self.hinge_b - self.hinge_A @ x, 0.0).sum())
        return val

    def is_feasible(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        ok = True
        if self.A_ub.shape[0]:
            ok &= bool(np.all(self.A_ub @ x <= self.b_ub + tol))
        if self.A_eq.shape[0]:
            ok &= bool(np.all(np.abs(self.A_eq @ x - self.b_eq) <= tol))
        return ok

    def _extended(self):
        """Mixed program with one auxiliary per hinge: (c, A_ub, b_ub, A_eq, ub, binary mask)."""
        n, h = self.n, self.hinge_A.shape[0]
        c = np.concatenate([self.c, np.ones(h)])
        # b - A x - s <= 0
        hinge_rows = np.hstack([-self.hinge_A, -np.eye(h)])
        A_ub = np.vstack([np.hstack([self.A_ub, np.zeros((self.A_ub.shape[0], h))]), hinge_rows])
        b_ub = np.concatenate([self.b_ub, -self.hinge_b])
        A_eq = np.hstack([self.A_eq, np.zeros((self.A_eq.shape[0], h))])
        ub = np.concatenate([np.where(self.continuous, np.inf, 1.0), np.full(h, np.inf)])
        binary = np.concatenate([~self.continuous, np.zeros(h, dtype=bool)])
        return c, A_ub, b_ub, A_eq, ub, binary


@dataclass
class BIPResult:
    """Outcome of :func:`solve_bip`.  ``history`` lists incumbent values in order."""

    status: LPStatus
    x: np.ndarray = None
    value: float = None
    nodes: int = 0
    history: list = field(default_factory=list)

    @property
    def optimal(self):
        return self.status is LPStatus.OPTIMAL


def solve_bip(bp, *, max_binary=40, max_nodes=200000, incumbent=None):
    """Exact branch and bound for a :class:`BinaryProgram`.

    Depth-first; branches on the lowest-index fractional binary variable and
    explores the side nearest the relaxation value first.  A feasible
    ``incumbent`` (binary in the original variables) tightens pruning from
    the start; it is ignored when infeasible or when the program has
    continuous variables.

    Raises
    ------
    SizeLimit
        If the program has more than ``max_binary`` binary variables.
    NumericalError
        If ``max_nodes`` nodes are explored without closing the tree.
    """
    if bp.n_binary > max_binary:
        raise SizeLimit(f"{bp.n_binary} binary variables exceed the cap of {max_binary}")
    c, A_ub, b_ub, A_eq, ub0, binary = bp._extended()
    sense = -1.0 if bp.maximize else 1.0  # internal minimization of sense * c
    n_orig = bp.n
    best_x, best_val = None, np.inf
    history = []
    if incumbent is not None and not bp.continuous.any():
        x0 = np.round(np.asarray(incumbent, dtype=float))
        if x0.shape == (n_orig,) and np.all((x0 == 0) | (x0 == 1)) and bp.is_feasible(x0):
            h = bp.hinge_A.shape[0]
            aux = np.maximum(bp.hinge_b - bp.hinge_A @ x0, 0.0) if h else np.zeros(0)
            best_x = np.concatenate([x0, aux])
            best_val = sense * float(bp.c @ x0) + float(aux.sum())
            history.append(bp.objective(x0))
    nodes = 0
    stack = [(np.zeros(c.size), ub0.copy())]
    while stack:
        lb, ub = stack.pop()
        nodes += 1
        if nodes > max_nodes:
            raise NumericalError(f"branch and bound exceeded {max_nodes} nodes")
        res = _solve_plain(LinearProgram(sense * c, A_ub, b_ub, A_eq, bp.b_eq, lb, ub, maximize=False))
        if not res.optimal:
            if res.status is LPStatus.UNBOUNDED:
                return BIPResult(LPStatus.UNBOUNDED, nodes=nodes, history=history)
            continue
        if res.value >= best_val - 1e-9:
            continue
        x = res.x
        frac = np.flatnonzero(binary & (np.abs(x - np.round(x)) > 1e-7))
        if frac.size == 0:
            x = np.where(binary, np.round(x), x)
            best_x, best_val = x, res.value
            history.append(sense * best_val)
            continue
        j = int(frac[0])
        down_lb, down_ub = lb.copy(), ub.copy()
        down_ub[j] = 0.0
        up_lb, up_ub = lb.copy(), ub.copy()
        up_lb[j] = 1.0
        # Push the less promising side first so the nearer one is explored next.
        if x[j] >= 0.5:
            stack.append((down_lb, down_ub))
            stack.append((up_lb, up_ub))
        else:
            stack.append((up_lb, up_ub))
            stack.append((down_lb, down_ub))
    if best_x is None:
        return BIPResult(LPStatus.INFEASIBLE, nodes=nodes, history=history)
    x = best_x[:n_orig]
    return BIPResult(LPStatus.OPTIMAL, x, bp.objective(x), nodes, history)


def least_infeasible_bip(bp, A_soft, b_soft, *, max_binary=40):
    """Least-violating assignment for soft covering rows ``A_soft @ x >= b_soft``.

    The hard rows of ``bp`` must hold.  The first pass minimizes the L1
    shortfall of the soft rows; the second minimizes the original objective
    among assignments with that shortfall.

    Returns
    -------
    x : ndarray
        Binary assignment.
    shortfall : float
        Total L1 violation of the soft rows.

    Raises
    ------
    Infeasible
        If the hard rows admit no binary assignment.
    """
    A_soft = _as2d(A_soft, bp.n)
    b_soft = _as1d(b_soft)
    k = A_soft.shape[0]
    n = bp.n
    pad = lambda M: np.hstack([M, np.zeros((M.shape[0], k))])  # noqa: E731
    # A_soft x + sigma >= b  ->  -A_soft x - sigma <= -b
    soft_rows = np.hstack([-A_soft, -np.eye(k)])
    A_ub = np.vstack([pad(bp.A_ub), soft_rows])
    b_ub = np.concatenate([bp.b_ub, -b_soft])
    cont = np.concatenate([bp.continuous, np.ones(k, dtype=bool)])
    first = BinaryProgram(
        np.concatenate([np.zeros(n), np.ones(k)]), A_ub, b_ub, pad(bp.A_eq), bp.b_eq, continuous=cont
    )
    r1 = solve_bip(first, max_binary=max_binary)
    if not r1.optimal:
        raise Infeasible("hard constraints admit no binary assignment")
    shortfall = r1.value
    tol = 1e-7 * max(1.0, abs(shortfall))
    cap = np.concatenate([np.zeros(n), np.ones(k)])[None, :]
    c2 = np.concatenate([(-1.0 if bp.maximize else 1.0) * bp.c, np.zeros(k)])
    second = BinaryProgram(
        c2,
        np.vstack([A_ub, cap]),
        np.concatenate([b_ub, [shortfall + tol]]),
        pad(bp.A_eq),
        bp.b_eq,
        hinge_A=pad(bp.hinge_A) if bp.hinge_A.shape[0] else None,
        hinge_b=bp.hinge_b if bp.hinge_A.shape[0] else None,
        continuous=cont,
    )
    r2 = solve_bip(second, max_binary=max_binary)
    x = (r2.x if r2.optimal else r1.x)[:n]
    viol = float(np.maximum(b_soft - A_soft @ x, 0.0).sum())
    return x, viol

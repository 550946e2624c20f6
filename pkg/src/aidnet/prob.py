"""Transfer-time distributions and the penalized delivery probability.

The penalized probability of a delivery with slack ``T`` (time between the
dispatch and the deadline) is

    P(T, zeta) = F(T) + E[ psi(X - T) ; X > T ],   psi(l) = 1 - erf(l / zeta)

where ``X`` is the transfer duration with CDF ``F``.  Integrating by parts and
substituting ``t = T + zeta * v`` gives the late-mass term

    D(T, zeta) = 2/sqrt(pi) * int_0^inf exp(-v**2) * (S(T) - S(T + zeta v)) dv

with ``S = 1 - F`` the survival function, so ``P = F(T) + D``.  This form has
a bounded, smooth integrand for every ``zeta > 0``, so a single Gauss-Kronrod
rule serves both the nearly-step penalty of tiny ``zeta`` and the very flat
penalty of huge ``zeta``.  The slope is

    dP/dT = 2/sqrt(pi) * int_0^inf exp(-v**2) * f(T + zeta v) dv.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DistributionError, DomainError, NoSolution, QuadratureError

__all__ = [
    "TransferDistribution",
    "Normal",
    "Gamma",
    "distribution_from_spec",
    "PenalizedProbParams",
    "cdf",
    "pdf",
    "psi",
    "penalized_success_prob",
    "penalized_success_prob_grad",
    "connection_prob",
    "connection_prob_grad",
    "invert_cdf",
    "invert_zeta",
    "invert_penalized_interval",
]

# Survival level treated as exactly zero when truncating the integration range.
_TAIL = 1e-16
# exp(-v**2) is below 4e-44 past this point.
_V_MAX = 10.0
_TWO_OVER_SQRT_PI = 2.0 / np.sqrt(np.pi)

# 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1].
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KWEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GWEIGHTS = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod abscissae (xgk[1], xgk[3], ...).
_GWEIGHTS[[1, 3, 5]] = _WG[:3]
_GWEIGHTS[[13, 11, 9]] = _WG[:3]
_GWEIGHTS[7] = _WG[3]

_MAX_PANEL_LEVEL = 12


class TransferDistribution:
    """Base class for a non-negative transfer-time law.

    Subclasses are frozen dataclasses and therefore hashable, which lets
    callers group edges that share a law.
    """

    kind = "abstract"

    def cdf(self, t):
        raise NotImplementedError

    def sf(self, t):
        raise NotImplementedError

    def pdf(self, t):
        raise NotImplementedError

    def ppf(self, p):
        raise NotImplementedError

    def upper_support(self):
        """Time beyond which the survival function is below 1e-16."""
        raise NotImplementedError

    def mean(self):
        raise NotImplementedError

    def params(self):
        raise NotImplementedError

    def to_dict(self):
        p1, p2 = self.params()
        return {"type": self.kind, "p1": p1, "p2": p2}


@dataclass(frozen=True)
class Normal(TransferDistribution):
    """Normal transfer time with mean ``mu`` and standard deviation ``sigma`` (hours)."""

    mu: float
    sigma: float
    kind = "normal"

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma)) or self.sigma <= 0:
            raise DistributionError("dist", f"normal needs finite mu and sigma > 0, got {self.mu}, {self.sigma}")

    def _z(self, t):
        return (np.asarray(t, dtype=float) - self.mu) / self.sigma

    def cdf(self, t):
        return special.ndtr(self._z(t))

    def sf(self, t):
        return special.ndtr(-self._z(t))

    def pdf(self, t):
        z = self._z(t)
        return np.exp(-0.5 * z * z) / (self.sigma * np.sqrt(2.0 * np.pi))

    def ppf(self, p):
        return self.mu + self.sigma * special.ndtri(p)

    def upper_support(self):
        return self.mu - self.sigma * special.ndtri(_TAIL)

    def mean(self):
        return self.mu

    def params(self):
        return (float(self.mu), float(self.sigma))


@dataclass(frozen=True)
class Gamma(TransferDistribution):
    """Gamma transfer time with shape ``kappa`` and scale ``theta`` (hours).

    Shapes below one have an unbounded density at zero and are rejected.
    """

    kappa: float
    theta: float
    kind = "gamma"

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and np.isfinite(self.theta)) or self.theta <= 0:
            raise DistributionError("dist", f"gamma needs finite theta > 0, got {self.theta}")
        if self.kappa < 1:
            raise DistributionError("dist", f"gamma shape must be >= 1 for a bounded density, got {self.kappa}")

    def cdf(self, t):
        x = np.maximum(np.asarray(t, dtype=float), 0.0) / self.theta
        return special.gammainc(self.kappa, x)

    def sf(self, t):
        x = np.maximum(np.asarray(t, dtype=float), 0.0) / self.theta
        return special.gammaincc(self.kappa, x)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        x = np.maximum(t, 0.0) / self.theta
        with np.errstate(divide="ignore", invalid="ignore"):
            logf = (self.kappa - 1.0) * np.log(x) - x - special.gammaln(self.kappa) - np.log(self.theta)
            out = np.exp(logf)
        out = np.where(t > 0, out, 0.0)
        if self.kappa == 1.0:
            out = np.where(t == 0, 1.0 / self.theta, out)
        return out

    def ppf(self, p):
        return self.theta * special.gammaincinv(self.kappa, p)

    def upper_support(self):
        return self.theta * special.gammainccinv(self.kappa, _TAIL)

    def mean(self):
        return self.kappa * self.theta

    def params(self):
        return (float(self.kappa), float(self.theta))


def distribution_from_spec(spec):
    """Build a distribution from ``{"type": "normal"|"gamma", "p1": ..., "p2": ...}``."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise DistributionError("dist", "expected an object with 'type', 'p1', 'p2'")
    kind = str(spec["type"]).lower()
    try:
        p1 = float(spec["p1"])
        p2 = float(spec["p2"])
    except (KeyError, TypeError, ValueError):
        raise DistributionError("dist", "parameters p1 and p2 must be numbers") from None
    if kind == "normal":
        return Normal(p1, p2)
    if kind == "gamma":
        return Gamma(p1, p2)
    raise DistributionError("dist", f"unknown distribution type {spec['type']!r}")


def cdf(dist, t):
    """Probability that the transfer takes at most ``t`` hours.

    Parameters
    ----------
    dist : TransferDistribution
    t : float or array_like
        Any real value; ``+inf`` maps to 1 and ``-inf`` to 0.

    Returns
    -------
    float or ndarray
    """
    out = dist.cdf(t)
    return float(out) if np.ndim(out) == 0 else out


def pdf(dist, t):
    """Density of the transfer time at ``t``."""
    out = dist.pdf(t)
    return float(out) if np.ndim(out) == 0 else out


def psi(lateness, zeta):
    """Late-delivery penalty ``1 - erf(lateness / zeta)``.

    Parameters
    ----------
    lateness : float or array_like
        Hours past the deadline, must be non-negative.
    zeta : float or array_like
        Penalty scale in hours, positive.

    Raises
    ------
    DomainError
        If any lateness is negative or any ``zeta`` is not positive.
    """
    lateness = np.asarray(lateness, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if np.any(lateness < 0):
        raise DomainError("lateness must be non-negative")
    if np.any(zeta <= 0):
        raise DomainError("zeta must be positive")
    out = special.erfc(lateness / zeta)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PenalizedProbParams:
    """Arguments of one penalized-probability evaluation."""

    dist: TransferDistribution
    interval: float
    zeta: float

    def __post_init__(self):
        if not self.zeta > 0:
            raise DomainError("zeta must be positive")

    def evaluate(self):
        return penalized_success_prob(self.dist, self.interval, self.zeta)


def _gk_panels(func, a, b, n_panels):
    """Composite G7/K15 over ``n_panels`` equal panels of ``[a, b]`` per element.

    ``func(v, idx)`` receives nodes of shape ``(k, n_panels * 15)`` and the
    element indices, and returns an array of shape ``(c, k, n_panels * 15)``
    with ``c`` integrand channels.  Returns the Kronrod estimates and the
    absolute error estimates, both of shape ``(c, k)``.
    """
    k = a.shape[0]
    h = (b - a) / n_panels
    left = a[:, None] + h[:, None] * np.arange(n_panels)[None, :]
    half = 0.5 * h[:, None, None]
    nodes = left[:, :, None] + half * (1.0 + _NODES[None, None, :])
    vals = func(nodes.reshape(k, -1)).reshape(-1, k, n_panels, 15)
    kron = np.einsum("ckpn,n->ckp", vals, _KWEIGHTS) * half[None, :, :, 0]
    gauss = np.einsum("ckpn,n->ckp", vals, _GWEIGHTS) * half[None, :, :, 0]
    return kron.sum(axis=2), np.abs(kron - gauss).sum(axis=2)


def _adaptive(func, a, b, tol, n_channels):
    """Integrate a vector of smooth integrands, doubling panels until converged."""
    k = a.shape[0]
    result = np.zeros((n_channels, k))
    todo = np.flatnonzero(b > a)
    n_panels = 1
    level = 0
    while todo.size:
        est, err = _gk_panels(lambda v: func(v, todo), a[todo], b[todo], n_panels)
        done = np.all(err <= tol, axis=0)
        result[:, todo[done]] = est[:, done]
        todo = todo[~done]
        level += 1
        n_panels *= 2
        if todo.size and level > _MAX_PANEL_LEVEL:
            raise QuadratureError(
                f"penalized probability did not converge to {tol:g} within {15 * n_panels} nodes"
            )
    return result


def _penalized_core(dist, interval, zeta, want_grad, tol=1e-9):
    """Shared kernel returning ``(P, dP/dT)`` as arrays of the broadcast shape."""
    T, Z = np.broadcast_arrays(np.asarray(interval, dtype=float), np.asarray(zeta, dtype=float))
    shape = T.shape
    T = T.ravel().astype(float)
    Z = Z.ravel().astype(float)
    if np.any(~(Z > 0)):
        raise DomainError("zeta must be positive")
    prob = np.zeros(T.shape)
    grad = np.zeros(T.shape)
    prob[T == np.inf] = 1.0
    finite = np.flatnonzero(np.isfinite(T))
    if finite.size:
        Tf = T[finite]
        Zf = Z[finite]
        t_hi = dist.upper_support()
        vmax = np.clip((t_hi - Tf) / Zf, 0.0, _V_MAX)
        s_at = dist.sf(Tf)
        f_at = dist.pdf(Tf)
        # The survival function may have a kink where the shifted argument
        # crosses zero (gamma laws), so the range is split there.
        if isinstance(dist, Gamma):
            brk = np.clip(-Tf / Zf, 0.0, vmax)
        else:
            brk = np.zeros_like(Tf)

        def integrand(v, idx):
            t = Tf[idx, None] + Zf[idx, None] * v
            w = np.exp(-v * v)
            late = w * (s_at[idx, None] - dist.sf(t))
            if not want_grad:
                return late[None]
            return np.stack([late, w * dist.pdf(t)])

        lo = np.zeros_like(Tf)
        nch = 2 if want_grad else 1
        parts = _adaptive(integrand, lo, brk, tol / 2, nch) + _adaptive(integrand, brk, vmax, tol / 2, nch)
        parts *= _TWO_OVER_SQRT_PI
        late_mass = parts[0] + s_at * special.erfc(vmax)
        prob[finite] = np.clip(dist.cdf(Tf) + late_mass, 0.0, 1.0)
        if want_grad:
            grad[finite] = np.maximum(parts[1], 0.0)
            # A zero-width range means the slack exceeds the support; the
            # slope then equals the density, which is already negligible.
            flat = vmax <= 0
            grad[finite[flat]] = f_at[flat]
    return prob.reshape(shape), grad.reshape(shape)


def penalized_success_prob(dist, interval, zeta, *, tol=1e-9):
    """Probability of on-time delivery plus the penalized late mass.

    Parameters
    ----------
    dist : TransferDistribution
        Law of the final transfer duration.
    interval : float or array_like
        Slack between dispatch and deadline in hours.  ``-inf`` is the
        undispatched sentinel and yields 0; ``+inf`` yields 1.
    zeta : float or array_like
        Penalty scale, strictly positive; broadcast against ``interval``.
    tol : float, optional
        Absolute tolerance of the adaptive quadrature.

    Returns
    -------
    float or ndarray
        Values in ``[0, 1]``, non-decreasing in both ``interval`` and ``zeta``.

    Raises
    ------
    QuadratureError
        If the quadrature budget is exhausted.
    DomainError
        If ``zeta`` is not positive.

    Examples
    --------
    >>> round(penalized_success_prob(Gamma(4.0, 0.3), 1.801, 0.001), 4)
    0.8493
    """
    p, _ = _penalized_core(dist, interval, zeta, want_grad=False, tol=tol)
    return float(p) if p.ndim == 0 else p


def penalized_success_prob_grad(dist, interval, zeta, *, tol=1e-9):
    """Return the penalized probability and its derivative in the interval.

    The derivative with respect to a dispatch time is the negative of the
    returned slope, since the interval is the deadline minus the dispatch.
    """
    p, g = _penalized_core(dist, interval, zeta, want_grad=True, tol=tol)
    if p.ndim == 0:
        return float(p), float(g)
    return p, g


def connection_prob(dist, upstream_dispatch, downstream_dispatch):
    """Probability that an upstream transfer arrives before the downstream departure.

    Equal to ``cdf(dist, downstream - upstream)`` when that gap is positive and
    0 otherwise.  Infinite (undispatched) times follow the convention
    ``inf - inf = 0``, so two undispatched vehicles never connect.
    """
    gap = _gap(upstream_dispatch, downstream_dispatch)
    out = np.where(gap > 0, dist.cdf(np.where(gap > 0, gap, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def connection_prob_grad(dist, upstream_dispatch, downstream_dispatch):
    """Derivative of :func:`connection_prob` with respect to the gap.

    The derivative with respect to the downstream time equals this value and
    the derivative with respect to the upstream time is its negative.
    """
    gap = _gap(upstream_dispatch, downstream_dispatch)
    ok = (gap > 0) & np.isfinite(gap)
    out = np.where(ok, dist.pdf(np.where(ok, gap, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def _gap(up, down):
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    both_inf = np.isinf(up) & np.isinf(down) & (np.sign(up) == np.sign(down))
    with np.errstate(invalid="ignore"):
        gap = down - up
    return np.where(both_inf, 0.0, gap)


def invert_cdf(dist, p):
    """Quantile: the duration ``t`` with ``cdf(dist, t) == p``.

    Raises
    ------
    DomainError
        If ``p`` is not strictly between 0 and 1.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0) & (p_arr < 1))):
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    out = dist.ppf(p_arr)
    return float(out) if out.ndim == 0 else out


def invert_zeta(dist, interval, target, *, zeta_max=1e12):
    """Penalty scale at which the penalized probability reaches ``target``.

    The penalized probability rises monotonically from ``cdf(dist, interval)``
    (as ``zeta`` tends to 0) towards 1, so the root is unique when it exists.
    The search runs on ``log(zeta)`` with Brent's method.

    Raises
    ------
    NoSolution
        If ``target`` does not exceed the on-time probability, if the interval
        is infinite, or if ``zeta_max`` is not large enough.
    DomainError
        If ``target`` is outside ``(0, 1)``.
    """
    if not 0 < target < 1:
        raise DomainError(f"target must lie in (0, 1), got {target}")
    if not np.isfinite(interval):
        raise NoSolution(f"interval {interval} leaves nothing to transform")
    floor = float(dist.cdf(interval))
    if target <= floor:
        raise NoSolution(f"on-time probability {floor:.6g} already meets target {target:.6g}")

    def gap(logz):
        return penalized_success_prob(dist, interval, np.exp(logz), tol=1e-13) - target

    lo, hi = np.log(1e-300), np.log(1.0)
    while gap(hi) < 0:
        lo = hi
        hi += np.log(10.0)
        if hi > np.log(zeta_max):
            raise NoSolution(f"target {target} needs zeta above {zeta_max:g}")
    if gap(lo) >= 0:
        return float(np.exp(lo))
    root = optimize.brentq(gap, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(np.exp(root))


def invert_penalized_interval(dist, zeta, target):
    """Slack ``T`` at which the penalized probability equals ``target``.

    Used to find the latest useful dispatch for a given probability floor.
    The penalized probability is strictly increasing in the slack on the
    region where it lies strictly between 0 and 1.

    Raises
    ------
    DomainError
        If ``target`` is outside ``(0, 1)``.
    """
    if not 0 < target < 1:
        raise DomainError(f"target must lie in (0, 1), got {target}")

    def gap(T):
        return penalized_success_prob(dist, T, zeta, tol=1e-12) - target

    hi = float(dist.ppf(target))
    lo = hi
    step = max(zeta, dist.mean(), 1e-3)
    while gap(lo) > 0:
        lo -= step
        step *= 2
    while gap(hi) < 0:
        hi += step
        step *= 2
    return float(optimize.brentq(gap, lo, hi, xtol=1e-12, maxiter=500))

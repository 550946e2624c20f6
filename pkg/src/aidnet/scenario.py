"""Scenario and dispatch-plan types, validation, and the JSON file format.

Index conventions
-----------------
Levels are ``S`` (suppliers), ``D`` (depots), ``F`` (storage facilities) and
``A`` (destinations).  Commodities are indexed ``e``; vehicles are indexed
within their level's fleet.  Edge sets are keyed by the level pair:
``"SD"`` (supplier vehicles to depot nodes), ``"DF"`` and ``"FA"``.

All indices are zero based.  Undispatched vehicles carry the dispatch time
``+inf``.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDemand, DistributionError, ParseError, ShapeError, ValidationError
from .prob import Normal, TransferDistribution, distribution_from_spec

__all__ = [
    "LEVELS",
    "PAIRS",
    "Commodity",
    "Vehicle",
    "Fleet",
    "EdgeSet",
    "Scenario",
    "DispatchPlan",
    "load_scenario",
    "parse_scenario",
    "scenario_to_dict",
    "save_scenario",
    "total_weighted_demand",
    "plan_shapes",
    "plan_cost",
    "MIN_NORMAL_RATIO",
]

LEVELS = ("S", "D", "F", "A")
# Level pair -> (vehicle level, destination level).
PAIRS = {"SD": ("S", "D"), "DF": ("D", "F"), "FA": ("F", "A")}

# Normal laws whose mean is closer than this many standard deviations to
# zero put visible mass on negative durations and are rejected.
MIN_NORMAL_RATIO = 3.0


def _readonly(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Commodity:
    """Aid commodity with importance weight and capacity use per ton."""

    weight: float
    capacity_use: float


@dataclass(frozen=True)
class Vehicle:
    """One vehicle: its level, home node, capacity and availability time."""

    level: str
    home_node: int
    capacity: float
    available_at: float


@dataclass(frozen=True, eq=False)
class Fleet:
    """Column view of the vehicles on one level."""

    home: np.ndarray
    capacity: np.ndarray
    available_at: np.ndarray

    @property
    def size(self):
        return int(self.home.shape[0])

    def __eq__(self, other):
        return (
            isinstance(other, Fleet)
            and np.array_equal(self.home, other.home)
            and np.array_equal(self.capacity, other.capacity)
            and np.array_equal(self.available_at, other.available_at)
        )


@dataclass(frozen=True, eq=False)
class EdgeSet:
    """Admissible dispatches from one level's vehicles to the next level's nodes.

    Attributes
    ----------
    connectivity : ndarray of bool, shape (m, n)
    cost : ndarray, shape (m, n)
        Dollars per dispatch; zero where no edge exists.
    dists : tuple of tuple
        ``dists[v][n]`` is the transfer law of edge ``(v, n)`` or ``None``.
    """

    connectivity: np.ndarray
    cost: np.ndarray
    dists: tuple

    @property
    def shape(self):
        return self.connectivity.shape

    def dist(self, vehicle, node):
        return self.dists[vehicle][node]

    def with_connectivity(self, mask):
        """Copy keeping only edges where ``mask`` is true."""
        mask = np.asarray(mask, dtype=bool) & self.connectivity
        dists = tuple(
            tuple(d if mask[i, j] else None for j, d in enumerate(row)) for i, row in enumerate(self.dists)
        )
        return EdgeSet(_readonly(mask, bool), _readonly(np.where(mask, self.cost, 0.0)), dists)

    def __eq__(self, other):
        return (
            isinstance(other, EdgeSet)
            and np.array_equal(self.connectivity, other.connectivity)
            and np.array_equal(self.cost, other.cost)
            and self.dists == other.dists
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable problem instance.

    Build instances through :func:`parse_scenario` or :func:`load_scenario`,
    which validate every field; the constructor itself trusts its inputs.
    """

    nodes: dict
    commodities: tuple
    fleets: dict
    edges: dict
    demand_amounts: np.ndarray
    demand_times: np.ndarray
    availability: dict
    budget: float
    zeta: np.ndarray
    eta_c: float = 0.30
    eta_h: float = 0.99
    meta: dict = field(default_factory=dict)

    # -- dimensions -------------------------------------------------------
    @property
    def n_E(self):
        return len(self.commodities)

    def n(self, level):
        return self.nodes[level]

    def m(self, level):
        return self.fleets[level].size

    @property
    def weights(self):
        return np.array([c.weight for c in self.commodities])

    @property
    def capacity_use(self):
        return np.array([c.capacity_use for c in self.commodities])

    def replace(self, **changes):
        """Return a copy with some fields replaced (no re-validation)."""
        fields = {
            name: getattr(self, name)
            for name in (
                "nodes", "commodities", "fleets", "edges", "demand_amounts", "demand_times",
                "availability", "budget", "zeta", "eta_c", "eta_h", "meta",
            )
        }
        fields.update(changes)
        return Scenario(**fields)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.commodities == other.commodities
            and all(self.fleets[k] == other.fleets[k] for k in ("S", "D", "F"))
            and all(self.edges[k] == other.edges[k] for k in PAIRS)
            and np.array_equal(self.demand_amounts, other.demand_amounts)
            and np.array_equal(self.demand_times, other.demand_times)
            and all(np.array_equal(self.availability[k], other.availability[k]) for k in ("S", "D", "F"))
            and self.budget == other.budget
            and np.array_equal(self.zeta, other.zeta)
            and self.eta_c == other.eta_c
            and self.eta_h == other.eta_h
        )

    __hash__ = None


def total_weighted_demand(s):
    """Importance-weighted total demand ``lambda = w . B^n . 1``.

    Raises
    ------
    DegenerateDemand
        If the weighted demand is zero.
    """
    lam = float(s.weights @ s.demand_amounts.sum(axis=1))
    if lam <= 0:
        raise DegenerateDemand("total importance-weighted demand is zero")
    return lam


# ---------------------------------------------------------------- dispatch plan

def plan_shapes(s):
    """Array shapes of every :class:`DispatchPlan` field for scenario ``s``."""
    nE = s.n_E
    mS, mD, mF = s.m("S"), s.m("D"), s.m("F")
    return {
        "u_fa": (mF, s.n("A")),
        "u_df": (mD, s.n("F")),
        "u_sd": (mS, s.n("D")),
        "t_fa": (mF,),
        "t_df": (mD,),
        "t_sd": (mS,),
        "b_fa": (nE, mF),
        "b_df": (nE, mD, mF),
        "b_sd": (nE, mS, mD, mF),
    }


_PLAN_FIELDS = ("u_fa", "u_df", "u_sd", "t_fa", "t_df", "t_sd", "b_fa", "b_df", "b_sd")


@dataclass(eq=False)
class DispatchPlan:
    """Decision variables: dispatch matrices, dispatch times and cargo tensors.

    ``b_df[e, d, f]`` is the amount of commodity ``e`` that depot vehicle ``d``
    brings for facility vehicle ``f``; ``b_sd[e, s, d, f]`` is the amount that
    supplier vehicle ``s`` brings, relayed by ``d`` and then ``f``.
    """

    u_fa: np.ndarray
    u_df: np.ndarray
    u_sd: np.ndarray
    t_fa: np.ndarray
    t_df: np.ndarray
    t_sd: np.ndarray
    b_fa: np.ndarray
    b_df: np.ndarray
    b_sd: np.ndarray

    def __post_init__(self):
        for name in ("u_fa", "u_df", "u_sd"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=int))
        for name in ("t_fa", "t_df", "t_sd", "b_fa", "b_df", "b_sd"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def empty(cls, s):
        """Plan that dispatches nothing."""
        shapes = plan_shapes(s)
        parts = {}
        for name, shape in shapes.items():
            if name.startswith("u"):
                parts[name] = np.zeros(shape, dtype=int)
            elif name.startswith("t"):
                parts[name] = np.full(shape, np.inf)
            else:
                parts[name] = np.zeros(shape)
        return cls(**parts)

    def copy(self):
        return DispatchPlan(**{k: getattr(self, k).copy() for k in _PLAN_FIELDS})

    def check_shapes(self, s):
        """Raise :class:`ShapeError` unless every array matches ``s``."""
        for name, shape in plan_shapes(s).items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"{name} has shape {got}, expected {shape}")

    def destinations(self, pair):
        """Destination index per vehicle for a level pair, ``-1`` if undispatched."""
        u = getattr(self, "u_" + pair.lower())
        dest = np.argmax(u, axis=1) if u.shape[1] else np.zeros(u.shape[0], dtype=int)
        return np.where(u.sum(axis=1) > 0, dest, -1)

    def dispatched(self, pair):
        return getattr(self, "u_" + pair.lower()).sum(axis=1) > 0

    def config_key(self):
        """Hashable description of the binary dispatch decisions."""
        return tuple(int(x) for pair in ("FA", "DF", "SD") for x in self.destinations(pair))

    def to_dict(self):
        out = {}
        for name in _PLAN_FIELDS:
            arr = getattr(self, name)
            if name.startswith("t"):
                out[name] = [_encode_time(x) for x in arr.tolist()]
            else:
                out[name] = arr.tolist()
        return out

    @classmethod
    def from_dict(cls, data, s=None):
        """Rebuild a plan from :meth:`to_dict` output, checking shapes against ``s``."""
        try:
            parts = {}
            for name in _PLAN_FIELDS:
                raw = data[name]
                if name.startswith("t"):
                    parts[name] = np.array([_decode_time(x) for x in raw], dtype=float)
                else:
                    parts[name] = np.array(raw, dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError("plan", f"malformed plan document ({exc})") from None
        plan = cls(**parts)
        if s is not None:
            plan.check_shapes(s)
        return plan

    def __eq__(self, other):
        return isinstance(other, DispatchPlan) and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in _PLAN_FIELDS
        )


def plan_cost(s, plan):
    """Total dispatch cost in dollars."""
    return float(
        np.sum(s.edges["FA"].cost * plan.u_fa)
        + np.sum(s.edges["DF"].cost * plan.u_df)
        + np.sum(s.edges["SD"].cost * plan.u_sd)
    )


def _encode_time(x):
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return x


def _decode_time(x):
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        if x.strip().lower() in ("-inf", "-infinity"):
            return -math.inf
        raise ValueError(f"bad time {x!r}")
    return float(x)


# ---------------------------------------------------------------- parsing

def load_scenario(path):
    """Read and validate a scenario file.

    Raises
    ------
    ParseError
        Unreadable file or invalid JSON.
    ValidationError
        A field is malformed; the message names the field.
    DistributionError
        A transfer-time law is inadmissible.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return parse_scenario(data)


def _require(data, key, where=""):
    if not isinstance(data, dict) or key not in data:
        raise ValidationError(f"{where}{key}", "missing")
    return data[key]


def _number(x, name, *, lo=None, allow_inf=False):
    try:
        val = _decode_time(x) if allow_inf else float(x)
    except (TypeError, ValueError):
        raise ValidationError(name, f"not a number: {x!r}") from None
    if isinstance(x, bool):
        raise ValidationError(name, "booleans are not numbers")
    if math.isnan(val) or (not allow_inf and math.isinf(val)):
        raise ValidationError(name, "must be finite")
    if lo is not None and val < lo:
        raise ValidationError(name, f"must be >= {lo}, got {val}")
    return val


def _matrix(x, name, shape, *, lo=0.0, allow_inf=False):
    if not isinstance(x, list) or len(x) != shape[0]:
        raise ValidationError(name, f"expected {shape[0]} rows")
    out = np.zeros(shape)
    for i, row in enumerate(x):
        if not isinstance(row, list) or len(row) != shape[1]:
            raise ValidationError(name, f"row {i} must have {shape[1]} entries")
        for j, v in enumerate(row):
            out[i, j] = _number(v, f"{name}[{i}][{j}]", lo=lo, allow_inf=allow_inf)
    return out


def _count(x, name):
    if isinstance(x, bool) or not isinstance(x, int) or x < 0:
        raise ValidationError(name, f"must be a non-negative integer, got {x!r}")
    return x


def _check_dist(dist, name):
    if isinstance(dist, Normal) and dist.mu / dist.sigma < MIN_NORMAL_RATIO:
        raise DistributionError(
            name,
            f"normal mean/sd ratio {dist.mu / dist.sigma:.3g} is below {MIN_NORMAL_RATIO}: "
            "too much probability on negative durations",
        )


def parse_scenario(data):
    """Validate a decoded scenario document and build a :class:`Scenario`."""
    if not isinstance(data, dict):
        raise ParseError("scenario document must be a JSON object")

    raw_comms = _require(data, "commodities")
    if not isinstance(raw_comms, list) or not raw_comms:
        raise ValidationError("commodities", "must be a non-empty list")
    comms = []
    for i, c in enumerate(raw_comms):
        w = _number(_require(c, "weight", f"commodities[{i}]."), f"commodities[{i}].weight", lo=0.0)
        k = _number(_require(c, "capacity_use", f"commodities[{i}]."), f"commodities[{i}].capacity_use", lo=0.0)
        comms.append(Commodity(w, k))
    wsum = sum(c.weight for c in comms)
    if abs(wsum - 1.0) > 1e-9:
        raise ValidationError("commodities.weight", f"w does not sum to 1 (sum = {wsum:.12g})")
    nE = len(comms)

    raw_levels = _require(data, "levels")
    nodes = {lv: _count(_require(raw_levels, lv, "levels."), f"levels.{lv}") for lv in LEVELS}

    raw_veh = _require(data, "vehicles")
    if not isinstance(raw_veh, list):
        raise ValidationError("vehicles", "must be a list")
    per_level = {"S": [], "D": [], "F": []}
    for i, v in enumerate(raw_veh):
        where = f"vehicles[{i}]."
        lv = _require(v, "level", where)
        if lv not in per_level:
            raise ValidationError(where + "level", f"must be one of S, D, F, got {lv!r}")
        home = _require(v, "home_node", where)
        if isinstance(home, bool) or not isinstance(home, int) or not 0 <= home < nodes[lv]:
            raise ValidationError(where + "home_node", f"must index one of the {nodes[lv]} nodes on level {lv}")
        cap = _number(_require(v, "capacity", where), where + "capacity", lo=0.0)
        ta = _number(_require(v, "available_at", where), where + "available_at", lo=0.0)
        per_level[lv].append(Vehicle(lv, home, cap, ta))
    fleets = {
        lv: Fleet(
            _readonly([v.home_node for v in vs], int),
            _readonly([v.capacity for v in vs]),
            _readonly([v.available_at for v in vs]),
        )
        for lv, vs in per_level.items()
    }

    raw_edges = _require(data, "edges")
    edges = {}
    for pair, (src, dst) in PAIRS.items():
        m, n = fleets[src].size, nodes[dst]
        conn = np.zeros((m, n), dtype=bool)
        cost = np.zeros((m, n))
        dists = [[None] * n for _ in range(m)]
        lst = _require(raw_edges, pair, "edges.")
        if not isinstance(lst, list):
            raise ValidationError(f"edges.{pair}", "must be a list")
        for k, e in enumerate(lst):
            where = f"edges.{pair}[{k}]."
            vi = _require(e, "vehicle", where)
            ni = _require(e, "node", where)
            if isinstance(vi, bool) or not isinstance(vi, int) or not 0 <= vi < m:
                raise ValidationError(where + "vehicle", f"must index one of the {m} vehicles on level {src}")
            if isinstance(ni, bool) or not isinstance(ni, int) or not 0 <= ni < n:
                raise ValidationError(where + "node", f"must index one of the {n} nodes on level {dst}")
            if conn[vi, ni]:
                raise ValidationError(where[:-1], f"duplicate edge ({vi}, {ni})")
            c = _number(_require(e, "cost", where), where + "cost", lo=0.0)
            try:
                dist = distribution_from_spec(_require(e, "dist", where))
            except DistributionError as exc:
                raise DistributionError(where + "dist", exc.reason) from None
            _check_dist(dist, where + "dist")
            conn[vi, ni] = True
            cost[vi, ni] = c
            dists[vi][ni] = dist
        edges[pair] = EdgeSet(_readonly(conn, bool), _readonly(cost), tuple(tuple(r) for r in dists))

    raw_dem = _require(data, "demand")
    amounts = _matrix(_require(raw_dem, "amounts", "demand."), "demand.amounts", (nE, nodes["A"]))
    times = _matrix(_require(raw_dem, "times", "demand."), "demand.times", (nE, nodes["A"]), allow_inf=True)
    if np.any(times == -np.inf):
        raise ValidationError("demand.times", "must not be -inf")

    raw_av = _require(data, "availability")
    availability = {
        lv: _readonly(_matrix(_require(raw_av, lv, "availability."), f"availability.{lv}", (nE, nodes[lv])))
        for lv in ("F", "D", "S")
    }

    budget = _number(_require(data, "budget"), "budget", lo=0.0)

    raw_zeta = _require(data, "penalty_zeta")
    mF = fleets["F"].size
    if isinstance(raw_zeta, list):
        zeta = _matrix(raw_zeta, "penalty_zeta", (nE, mF))
    else:
        zeta = np.full((nE, mF), _number(raw_zeta, "penalty_zeta"))
    if np.any(zeta <= 0):
        raise ValidationError("penalty_zeta", "entries must be > 0")

    thr = _require(data, "thresholds")
    eta_c = _number(_require(thr, "eta_c", "thresholds."), "thresholds.eta_c", lo=0.0)
    eta_h = _number(_require(thr, "eta_h", "thresholds."), "thresholds.eta_h", lo=0.0)
    if not eta_c < 1:
        raise ValidationError("thresholds.eta_c", "must lie in [0, 1)")
    if not 0 < eta_h < 1:
        raise ValidationError("thresholds.eta_h", "must lie in (0, 1)")

    meta = data.get("meta", {})
    if not isinstance(meta, dict):
        raise ValidationError("meta", "must be an object when present")

    return Scenario(
        nodes=nodes,
        commodities=tuple(comms),
        fleets=fleets,
        edges=edges,
        demand_amounts=_readonly(amounts),
        demand_times=_readonly(times),
        availability=availability,
        budget=budget,
        zeta=_readonly(zeta),
        eta_c=eta_c,
        eta_h=eta_h,
        meta=dict(meta),
    )


def scenario_to_dict(s):
    """Encode a scenario in the file format accepted by :func:`parse_scenario`."""
    vehicles = []
    for lv in ("S", "D", "F"):
        fl = s.fleets[lv]
        for i in range(fl.size):
            vehicles.append({
                "level": lv,
                "home_node": int(fl.home[i]),
                "capacity": float(fl.capacity[i]),
                "available_at": float(fl.available_at[i]),
            })
    edges = {}
    for pair, es in s.edges.items():
        lst = []
        for v, n in zip(*np.nonzero(es.connectivity)):
            lst.append({
                "vehicle": int(v),
                "node": int(n),
                "cost": float(es.cost[v, n]),
                "dist": es.dist(v, n).to_dict(),
            })
        edges[pair] = lst
    zeta = s.zeta
    zeta_out = float(zeta.flat[0]) if zeta.size and np.all(zeta == zeta.flat[0]) else zeta.tolist()
    out = {
        "commodities": [{"weight": c.weight, "capacity_use": c.capacity_use} for c in s.commodities],
        "levels": dict(s.nodes),
        "vehicles": vehicles,
        "edges": edges,
        "demand": {
            "amounts": s.demand_amounts.tolist(),
            "times": [[_encode_time(x) for x in row] for row in s.demand_times.tolist()],
        },
        "availability": {lv: s.availability[lv].tolist() for lv in ("F", "D", "S")},
        "budget": s.budget,
        "penalty_zeta": zeta_out,
        "thresholds": {"eta_c": s.eta_c, "eta_h": s.eta_h},
    }
    if s.meta:
        out["meta"] = dict(s.meta)
    return out


def save_scenario(s, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=1)
        fh.write("\n")


def check_distribution(dist, name="dist"):
    """Apply the scenario-level admissibility rule to a single law."""
    if not isinstance(dist, TransferDistribution):
        raise DistributionError(name, "not a transfer distribution")
    _check_dist(dist, name)

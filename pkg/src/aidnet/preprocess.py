"""Removal of network edges that cannot reach a minimum success probability.

The pass works from the destinations upward.  An F to A edge is kept when
its penalized on-time probability, with the vehicle leaving as early as it
can and the latest deadline of any commodity, reaches ``eta_c``.  Inverting
that probability at ``eta_c`` gives the latest useful departure of each
facility vehicle.  A depot vehicle is then useful for a facility node only
if it can arrive before some vehicle at that node must leave, with
probability at least ``eta_c``.  Supplier edges are screened the same way
against the latest useful departure of the depot vehicles.
"""

from dataclasses import dataclass, field

import numpy as np

from .prob import cdf, invert_cdf, invert_penalized_interval, penalized_success_prob

__all__ = ["PruneResult", "prune_FA", "prune_DF", "prune_SD", "preprocess"]


def _latest_deadline(s):
    """Largest deadline over commodities, per destination node."""
    return s.demand_times.max(axis=0) if s.n_E else np.full(s.n("A"), -np.inf)


def prune_FA(s, eta_c=None):
    """Screen F to A edges.

    Returns
    -------
    keep : ndarray of bool, shape (m_F, n_A)
    interval : ndarray
        Slack between earliest departure and the latest deadline; ``-inf``
        where no edge exists.
    best_prob : ndarray
        Highest achievable penalized success probability; 0 where no edge.
    latest : ndarray, shape (m_F,)
        Latest departure of each facility vehicle that still meets
        ``eta_c`` on some kept edge; ``-inf`` if none.
    """
    eta = s.eta_c if eta_c is None else eta_c
    conn = s.edges["FA"].connectivity
    deadline = _latest_deadline(s)
    avail = s.fleets["F"].available_at
    mF, nA = conn.shape
    interval = np.full((mF, nA), -np.inf)
    best = np.zeros((mF, nA))
    latest = np.full(mF, -np.inf)
    for f in range(mF):
        # The most forgiving penalty scale over commodities keeps the edge
        # whenever any commodity could use it.
        zeta = float(s.zeta[:, f].max()) if s.n_E else 1.0
        for a in range(nA):
            if not conn[f, a]:
                continue
            dist = s.edges["FA"].dist(f, a)
            interval[f, a] = deadline[a] - avail[f]
            best[f, a] = penalized_success_prob(dist, interval[f, a], zeta)
            if eta > 0 and best[f, a] >= eta:
                slack_needed = invert_penalized_interval(dist, zeta, eta)
                latest[f] = max(latest[f], deadline[a] - slack_needed)
            elif eta <= 0:
                latest[f] = np.inf
    keep = conn & (best >= eta) if eta > 0 else conn.copy()
    return keep, interval, best, latest


def _node_latest(latest, home, n_nodes):
    out = np.full(n_nodes, -np.inf)
    for v, h in enumerate(home):
        out[h] = max(out[h], latest[v])
    return out


def prune_DF(s, latest_F, eta_c=None):
    """Screen D to F edges against the latest useful facility departures.

    Parameters
    ----------
    latest_F : ndarray, shape (m_F,)
        From :func:`prune_FA`.

    Returns
    -------
    keep, interval, best_prob, latest_D
        ``latest_D`` is the latest departure of each depot vehicle that still
        connects with probability ``eta_c`` on some kept edge.
    """
    eta = s.eta_c if eta_c is None else eta_c
    conn = s.edges["DF"].connectivity
    node_latest = _node_latest(latest_F, s.fleets["F"].home, s.n("F"))
    avail = s.fleets["D"].available_at
    mD, nF = conn.shape
    interval = np.full((mD, nF), -np.inf)
    best = np.zeros((mD, nF))
    latest = np.full(mD, -np.inf)
    for d in range(mD):
        for n in range(nF):
            if not conn[d, n]:
                continue
            dist = s.edges["DF"].dist(d, n)
            interval[d, n] = node_latest[n] - avail[d]
            best[d, n] = float(cdf(dist, interval[d, n]))
            if eta <= 0:
                latest[d] = np.inf
            elif best[d, n] >= eta:
                latest[d] = max(latest[d], node_latest[n] - invert_cdf(dist, eta))
    keep = conn & (best >= eta) if eta > 0 else conn.copy()
    return keep, interval, best, latest


def prune_SD(s, latest_D, eta_c=None):
    """Screen S to D edges against the latest useful depot departures."""
    eta = s.eta_c if eta_c is None else eta_c
    conn = s.edges["SD"].connectivity
    node_latest = _node_latest(latest_D, s.fleets["D"].home, s.n("D"))
    avail = s.fleets["S"].available_at
    mS, nD = conn.shape
    interval = np.full((mS, nD), -np.inf)
    best = np.zeros((mS, nD))
    for v in range(mS):
        for n in range(nD):
            if not conn[v, n]:
                continue
            interval[v, n] = node_latest[n] - avail[v]
            best[v, n] = float(cdf(s.edges["SD"].dist(v, n), interval[v, n]))
    keep = conn & (best >= eta) if eta > 0 else conn.copy()
    return keep, interval, best


@dataclass
class PruneResult:
    """Pruned scenario and the per-pair diagnostics behind it."""

    scenario: object
    removed: dict
    best_prob: dict = field(default_factory=dict)
    interval: dict = field(default_factory=dict)

    def summary(self):
        return {pair: int(n) for pair, n in self.removed.items()}


def preprocess(s, eta_c=None):
    """Prune all three edge sets of ``s`` and return a new scenario.

    The input scenario is left untouched.  With ``eta_c = 0`` nothing is
    removed.
    """
    eta = s.eta_c if eta_c is None else float(eta_c)
    keep_fa, int_fa, p_fa, latest_f = prune_FA(s, eta)
    # Downstream screens only see facility vehicles that kept an edge.
    latest_f = np.where(keep_fa.any(axis=1), latest_f, -np.inf)
    keep_df, int_df, p_df, latest_d = prune_DF(s, latest_f, eta)
    latest_d = np.where(keep_df.any(axis=1), latest_d, -np.inf)
    keep_sd, int_sd, p_sd = prune_SD(s, latest_d, eta)
    edges = {
        "FA": s.edges["FA"].with_connectivity(keep_fa),
        "DF": s.edges["DF"].with_connectivity(keep_df),
        "SD": s.edges["SD"].with_connectivity(keep_sd),
    }
    removed = {
        pair: int(np.count_nonzero(s.edges[pair].connectivity & ~keep))
        for pair, keep in (("FA", keep_fa), ("DF", keep_df), ("SD", keep_sd))
    }
    return PruneResult(
        scenario=s.replace(edges=edges, eta_c=eta),
        removed=removed,
        best_prob={"FA": p_fa, "DF": p_df, "SD": p_sd},
        interval={"FA": int_fa, "DF": int_df, "SD": int_sd},
    )

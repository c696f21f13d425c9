"""Co-primary PRB sharing: random, equal, decentralized and graph-based
centralized allocation of other operators' unused shared PRBs.

All functions are pure: the reports (BWU per SBS), the graph and the spectrum
grid fully determine the grants, except for the random draw of
:func:`algo1_random`, which comes from the caller's generator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .scheduling import EPS, SpectrumGrid
from .topology import connected_components

log = logging.getLogger(__name__)

NONE = "none"
RANDOM = "random"
EQUAL = "equal"
DECENTRALIZED = "decentralized"
CENTRALIZED_GRAPH = "centralized_graph"
ALGORITHMS = (NONE, RANDOM, EQUAL, DECENTRALIZED, CENTRALIZED_GRAPH)


class SbsReport(NamedTuple):
    sbs_id: int
    operator_id: int
    bwu: float

    @property
    def overloaded(self) -> bool:
        return self.bwu >= 1.0 - EPS


@dataclass(frozen=True)
class Grant:
    sbs_id: int
    counts: dict = field(default_factory=dict)  # donor operator -> PRBs from the sharing formula
    prbs: tuple[int, ...] = ()
    issue_tti: int = 0

    @property
    def loaned(self) -> int:
        return len(self.prbs)


@dataclass(frozen=True)
class OverloadSets:
    neighbors: tuple[int, ...]
    overloaded: tuple[int, ...]
    not_overloaded: tuple[int, ...]
    overloaded_ops: frozenset
    donor_ops: frozenset


def free_fraction(operator_k: int, reports) -> float:
    """1 - max BWU over operator k's SBSs in scope; an absent operator is fully free."""
    worst = None
    for r in reports:
        if r.operator_id == operator_k and (worst is None or r.bwu > worst):
            worst = r.bwu
    return 1.0 if worst is None else max(0.0, 1.0 - worst)


def share_count(free: float, sharing: float, q: int, claimants: int = 1) -> int:
    return math.floor(min(free, sharing) * q / claimants + EPS)


def concretize(grant_counts, donor_free, claimant_order):
    """Map abstract counts to PRB indices.

    grant_counts:   claimant -> {donor operator -> count}
    donor_free:     donor operator -> free shared PRBs, ordered from the occupied side
    claimant_order: claimants in the order they split each donor's free sub-band
    Each donor's list is cut into consecutive pieces in claimant order.
    """
    out = {c: [] for c in claimant_order}
    offset = {}
    for c in claimant_order:
        for k, n in sorted(grant_counts.get(c, {}).items()):
            if n <= 0:
                continue
            free = donor_free[k]
            start = offset.get(k, 0)
            take = free[start:start + n]
            if len(take) < n:
                log.warning("grant of %d PRBs from operator %d clamped to %d", n, k, len(take))
            out[c].extend(take)
            offset[k] = start + n
    return out


def _neighbor_lists(adjacency) -> list[list[int]]:
    if isinstance(adjacency, np.ndarray):
        return [np.flatnonzero(row).tolist() for row in adjacency]
    return [list(n) for n in adjacency]


def overload_sets(i: int, neighbors, reports, n_operators: int) -> OverloadSets:
    nbrs = tuple(neighbors[i])
    ol = tuple(j for j in nbrs if reports[j].overloaded)
    nol = tuple(j for j in nbrs if not reports[j].overloaded)
    k_hat = frozenset(reports[j].operator_id for j in ol)
    k_check = frozenset(range(n_operators)) - k_hat - {reports[i].operator_id}
    return OverloadSets(nbrs, ol, nol, k_hat, k_check)


# ---------------------------------------------------------------- Algorithm 1


def algo1_random(reports, grid: SpectrumGrid, rng, issue_tti: int = 0) -> dict[int, Grant]:
    """Central controller picks one SBS uniformly; if it is overloaded it gets
    floor(min(W_k, S) * Q) PRBs from every other operator k."""
    if not reports:
        return {}
    chosen = reports[int(rng.integers(len(reports)))]
    if not chosen.overloaded:
        return {}
    q = grid.prbs_per_operator
    counts, prbs = {}, []
    for k in range(grid.n_operators):
        if k == chosen.operator_id:
            continue
        w = free_fraction(k, reports)
        counts[k] = share_count(w, grid.sharing[k], q)
        prbs.extend(grid.free_shared(k, 1.0 - w)[:counts[k]])
    return {chosen.sbs_id: Grant(chosen.sbs_id, counts, tuple(prbs), issue_tti)}


# ---------------------------------------------------------------- Algorithm 2


def algo2_equal(reports, grid: SpectrumGrid, issue_tti: int = 0) -> dict[int, Grant]:
    """Every overloaded SBS gets floor(min(W_k, S) * Q / |v+|) PRBs from every
    other operator k."""
    vplus = sorted((r for r in reports if r.overloaded), key=lambda r: (r.operator_id, r.sbs_id))
    if not vplus:
        return {}
    q = grid.prbs_per_operator
    counts = {r.sbs_id: {} for r in vplus}
    free = {}
    for k in range(grid.n_operators):
        w = free_fraction(k, reports)
        c = share_count(w, grid.sharing[k], q, len(vplus))
        free[k] = grid.free_shared(k, 1.0 - w)
        for r in vplus:
            if r.operator_id != k:
                counts[r.sbs_id][k] = c
    order = [r.sbs_id for r in vplus]
    prbs = concretize(counts, free, order)
    return {s: Grant(s, counts[s], tuple(prbs[s]), issue_tti) for s in order}


# ---------------------------------------------------------------- Algorithm 3


def algo3_decentralized(report, neighbor_reports, grid: SpectrumGrid, issue_tti: int = 0) -> Grant | None:
    """Grant an overloaded SBS computes for itself from its neighbours' reports."""
    if not report.overloaded:
        return None
    q = grid.prbs_per_operator
    own = report.operator_id
    if not neighbor_reports:
        # nobody in range: every other operator's shared part is free
        counts = {k: grid.shared_count(k) for k in range(grid.n_operators) if k != own}
        prbs = [p for k, n in counts.items() for p in grid.free_shared(k, 0.0)[:n]]
        return Grant(report.sbs_id, counts, tuple(prbs), issue_tti)
    ol = [r for r in neighbor_reports if r.overloaded]
    nol = [r for r in neighbor_reports if not r.overloaded]
    claimant_ops = sorted({r.operator_id for r in ol} | {own})
    donors = [k for k in range(grid.n_operators) if k not in claimant_ops]
    counts, free = {}, {}
    for k in donors:
        w = free_fraction(k, nol)
        counts[k] = share_count(w, grid.sharing[k], q, len(claimant_ops))
        free[k] = grid.free_shared(k, 1.0 - w)
    # every claimant operator applies the same formula, so they split evenly
    prbs = concretize({op: counts for op in claimant_ops}, free, claimant_ops)[own]
    return Grant(report.sbs_id, counts, tuple(prbs), issue_tti)


def algo3_all(adjacency, reports, grid: SpectrumGrid, issue_tti: int = 0) -> dict[int, Grant]:
    """Run the decentralized rule at every SBS of a building."""
    neighbors = _neighbor_lists(adjacency)
    out = {}
    for i, r in enumerate(reports):
        if r.overloaded:
            out[r.sbs_id] = algo3_decentralized(r, [reports[j] for j in neighbors[i]], grid, issue_tti)
    return out


# ---------------------------------------------------------------- Algorithm 4


def algo4_centralized(adjacency, reports, grid: SpectrumGrid, issue_tti: int = 0) -> dict[int, Grant]:
    """Graph-aware central allocation followed by interference avoidance.

    ``reports`` are aligned with the rows of ``adjacency`` and processed in
    that order.
    """
    neighbors = _neighbor_lists(adjacency)
    overloaded = [i for i, r in enumerate(reports) if r.overloaded]
    if not overloaded:
        return {}
    if len(overloaded) == 1:
        i = overloaded[0]
        g = algo3_decentralized(reports[i], [reports[j] for j in neighbors[i]], grid, issue_tti)
        return {reports[i].sbs_id: g}

    q = grid.prbs_per_operator
    taken = set()
    counts, grants = [], []
    # PRB allocation step
    for i in overloaded:
        sets = overload_sets(i, neighbors, reports, grid.n_operators)
        nol = [reports[j] for j in sets.not_overloaded]
        den = len(sets.overloaded) + 1
        c_i, w_i = {}, []
        for k in sorted(sets.donor_ops):
            w = free_fraction(k, nol)
            c = share_count(w, grid.sharing[k], q, den)
            c_i[k] = c
            if c:
                pick = [p for p in grid.free_shared(k, 1.0 - w) if p not in taken][:c]
                taken.update(pick)
                w_i.extend(pick)
        counts.append(c_i)
        grants.append(set(w_i))
    # interference avoidance step, in place and in vertex order
    for a in range(len(grants)):
        for b in range(len(grants)):
            if a != b:
                grants[a] -= grants[a] & grants[b]
    return {
        reports[i].sbs_id: Grant(reports[i].sbs_id, counts[n], tuple(sorted(grants[n])), issue_tti)
        for n, i in enumerate(overloaded)
    }


def run_algorithm(name: str, adjacency, reports, grid: SpectrumGrid, rng=None,
                  issue_tti: int = 0) -> dict[int, Grant]:
    """Grants for one building.  Algorithms 1-2 treat the building as a single
    controller graph; algorithm 4 runs per connected component."""
    if name == NONE:
        return {}
    if name == RANDOM:
        return algo1_random(reports, grid, rng, issue_tti)
    if name == EQUAL:
        return algo2_equal(reports, grid, issue_tti)
    if name == DECENTRALIZED:
        return algo3_all(adjacency, reports, grid, issue_tti)
    if name == CENTRALIZED_GRAPH:
        adj = np.asarray(adjacency)
        out = {}
        for comp in connected_components(adj):
            idx = list(comp.vertices)
            out.update(algo4_centralized(adj[np.ix_(idx, idx)], [reports[i] for i in idx], grid, issue_tti))
        return out
    raise ValueError(f"unknown sharing algorithm {name!r}")

"""PRB grid conventions, proportional-fair scheduling and bandwidth utilization."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

BAND_START = "band_start"
BAND_END = "band_end"
EPS = 1e-9


def allocation_anchor(operator_id: int) -> str:
    """Which end of its band an operator fills first: even ids from the start,
    odd ids from the end.  Coordinated CQI prediction relies on the same rule."""
    return BAND_START if operator_id % 2 == 0 else BAND_END


@functools.lru_cache(maxsize=None)
def _anchor_order(k: int, q: int) -> tuple[int, ...]:
    band = tuple(range(k * q, (k + 1) * q))
    return band if allocation_anchor(k) == BAND_START else band[::-1]


@dataclass(frozen=True)
class SpectrumGrid:
    """K contiguous operator bands of Q PRBs each, tiling [0, K*Q)."""
    n_operators: int
    prbs_per_operator: int
    sharing: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.sharing:
            object.__setattr__(self, "sharing", (0.0,) * self.n_operators)
        if len(self.sharing) != self.n_operators:
            raise ValueError("one sharing factor per operator expected")

    @property
    def n_prbs(self) -> int:
        return self.n_operators * self.prbs_per_operator

    def band(self, k: int) -> range:
        q = self.prbs_per_operator
        return range(k * q, (k + 1) * q)

    def anchor_order(self, k: int) -> list[int]:
        """Band PRBs listed from the allocation anchor outward."""
        return list(_anchor_order(k, self.prbs_per_operator))

    def used_count(self, bwu: float) -> int:
        return min(self.prbs_per_operator, math.ceil(bwu * self.prbs_per_operator - EPS))

    def shared_count(self, k: int) -> int:
        return math.floor(self.sharing[k] * self.prbs_per_operator + EPS)

    def occupied(self, k: int, bwu: float) -> list[int]:
        return list(_anchor_order(k, self.prbs_per_operator)[: self.used_count(bwu)])

    def shared_tail(self, k: int) -> list[int]:
        """The S*Q PRBs furthest from the anchor; the only part ever loaned."""
        q = self.prbs_per_operator
        return list(_anchor_order(k, q)[q - self.shared_count(k):])

    def free_shared(self, k: int, max_bwu: float) -> list[int]:
        """Shared PRBs of operator k not covered by utilization ``max_bwu``,
        ordered from the occupied side toward the far end of the band."""
        q = self.prbs_per_operator
        start = max(self.used_count(max_bwu), q - self.shared_count(k))
        return list(_anchor_order(k, q)[start:])

    def position_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(band owner, distance from anchor) for every PRB index."""
        owner = np.repeat(np.arange(self.n_operators), self.prbs_per_operator)
        pos = np.empty(self.n_prbs, dtype=int)
        for k in range(self.n_operators):
            pos[self.anchor_order(k)] = np.arange(self.prbs_per_operator)
        return owner, pos


@dataclass(frozen=True)
class BwuReport:
    sbs_id: int
    operator_id: int
    bwu: float
    sharing_factor: float = 0.0
    adjacency: tuple[int, ...] = ()
    report_tti: int = 0

    @property
    def overloaded(self) -> bool:
        return self.bwu >= 1.0 - EPS


@dataclass
class AllocationMap:
    sbs_id: int
    tti: int = 0
    assignment: dict[int, int] = field(default_factory=dict)  # prb -> user id

    def prbs_of(self, user_id: int) -> list[int]:
        return sorted(p for p, u in self.assignment.items() if u == user_id)


def compute_bwu(sbs_id: int, operator_id: int, allocation: AllocationMap | None,
                grid: SpectrumGrid, tti: int = 0) -> BwuReport:
    """Fraction of the SBS's own band allocated; loaned PRBs do not count."""
    used = 0
    if allocation is not None:
        band = grid.band(operator_id)
        used = sum(1 for p in allocation.assignment if p in band)
    return BwuReport(sbs_id, operator_id, used / grid.prbs_per_operator,
                     grid.sharing[operator_id], report_tti=tti)


def prb_order(grid: SpectrumGrid, operator_id: int, granted=()) -> list[int]:
    """Scheduling order: own band from the anchor outward, then loaned PRBs."""
    return grid.anchor_order(operator_id) + sorted(granted)


def schedule_pf(order, members, rate, avg_rate, demand, window: float = 100.0,
                tti_s: float = 1e-3) -> np.ndarray:
    """Greedy proportional-fair allocation for a batch of SBSs.

    order:    (S, L) PRB indices in the order each SBS fills them, -1 padded
    members:  (S, U) user rows served by each SBS, ascending, -1 padded
    rate:     (n_users, P) CQI-implied bits each user would get on each PRB
    avg_rate: (n_users,) smoothed throughput in bit/s, must be > 0
    demand:   (n_users,) bits wanted this TTI, inf for full buffer

    Each PRB goes to the active user with the best instantaneous rate over
    running average, where the running average already includes what the user
    got earlier in this TTI.  Users drop out once their demand is covered.
    Returns (S, P) user row per PRB, -1 where unallocated.
    """
    order = np.asarray(order)
    members = np.asarray(members)
    n_sbs, n_slots = order.shape
    n_prbs = rate.shape[1]
    out = np.full((n_sbs, n_prbs), -1, dtype=int)
    if n_sbs == 0 or members.shape[1] == 0:
        return out
    valid = members >= 0
    rows = np.where(valid, members, 0)
    a = 1.0 - 1.0 / window
    b = 1.0 / window
    avg = np.where(valid, avg_rate[rows], 1.0)
    remaining = np.where(valid, demand[rows], 0.0)
    got = np.zeros(members.shape)
    s_idx = np.arange(n_sbs)
    for j in range(n_slots):
        prb = order[:, j]
        live = prb >= 0
        if not live.any():
            break
        p = np.where(live, prb, 0)
        r = rate[rows, p[:, None]]
        active = valid & (remaining > 0) & (r > 0) & live[:, None]
        any_active = active.any(axis=1)
        if not any_active.any():
            if not ((remaining > 0) & valid).any():
                break
            continue
        metric = np.where(active, r / (a * avg + b * got / tti_s), -np.inf)
        win = np.argmax(metric, axis=1)  # first maximum, i.e. lowest user row
        s = s_idx[any_active]
        w = win[any_active]
        out[s, p[any_active]] = members[s, w]
        gained = r[s, w]
        got[s, w] += gained
        remaining[s, w] -= gained
    return out


def proportional_fair(sbs_id: int, operator_id: int, users, rates, available_prbs,
                      avg_rates, demands, grid: SpectrumGrid, window: float = 100.0,
                      tti: int = 0) -> AllocationMap:
    """Single-SBS wrapper around :func:`schedule_pf`.

    ``users`` are user ids; ``rates`` maps user id -> per-PRB bits (length P);
    ``available_prbs`` is own band plus loaned PRBs.
    """
    alloc = AllocationMap(sbs_id, tti)
    users = sorted(users)
    if not users:
        return alloc
    own = set(grid.band(operator_id))
    loaned = [p for p in available_prbs if p not in own]
    order = [p for p in grid.anchor_order(operator_id) if p in set(available_prbs)] + sorted(loaned)
    rate = np.array([np.asarray(rates[u], dtype=float) for u in users])
    avg = np.array([avg_rates[u] for u in users], dtype=float)
    dem = np.array([demands[u] for u in users], dtype=float)
    out = schedule_pf(np.array([order]), np.arange(len(users))[None, :], rate, avg, dem, window)
    for p in np.flatnonzero(out[0] >= 0):
        alloc.assignment[int(p)] = users[out[0, p]]
    return alloc


def update_average(avg_rate, served_bits, window: float = 100.0, tti_s: float = 1e-3):
    """Exponential smoothing of the PF average throughput (bit/s)."""
    return (1.0 - 1.0 / window) * avg_rate + (1.0 / window) * np.asarray(served_bits) / tti_s

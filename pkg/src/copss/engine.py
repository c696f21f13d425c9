"""Per-TTI system-level loop.

One drop = one layout realisation with its own shadowing and fading streams.
Every TTI: release delayed CQI and grants, run a coordination round on its
boundary, accrue traffic, schedule, build the PRB occupancy, compute the true
SINR, decode with HARQ and record delivered bits.
"""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sharing, traffic
from .channel import ChannelConfig, FadingField, link_gain, sinr_per_prb
from .link import (COORDINATED, CQI_MODES, HarqBank, LinkConfig, bits_per_prb,
                   estimate_cqi_batch, to_db)
from .metrics import MetricsStore, ThroughputSample
from .scheduling import SpectrumGrid, schedule_pf, update_average
from .topology import Scenario, ScenarioConfig, build_layout

# independent random streams inside a drop
_LAYOUT, _FADING, _SHARING, _DECODE, _SHADOW = range(5)


class ContractViolation(RuntimeError):
    """A module contract broke during a run; carries the TTI."""


@dataclass(frozen=True)
class RunParams:
    ttis: int = 2000
    drops: int = 20
    seed: int = 0
    algorithm: str = sharing.NONE
    sharing_factor: float | None = None  # None keeps the scenario's factors
    cqi_mode: str = COORDINATED
    warmup_ttis: int = 50
    coordination_period: int = 5
    coordination_delay: int = 5
    pf_window: float = 100.0
    pf_initial_rate: float = 1e3
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    rates_bps: tuple[float, float] = (1e6, 4e6)  # constant rate, multimedia
    workers: int = 1

    def __post_init__(self):
        if self.ttis <= 0 or self.drops <= 0:
            raise ValueError("ttis and drops must be positive")
        if not 0 <= self.warmup_ttis < self.ttis:
            raise ValueError("warm-up must be shorter than the drop")
        if self.algorithm not in sharing.ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.cqi_mode not in CQI_MODES:
            raise ValueError(f"unknown CQI mode {self.cqi_mode!r}")
        if self.sharing_factor is not None and not 0.0 <= self.sharing_factor <= 1.0:
            raise ValueError("sharing factor outside [0, 1]")

    @property
    def rates(self) -> dict:
        return {traffic.FULL_BUFFER: math.inf, traffic.CONSTANT_RATE: self.rates_bps[0],
                traffic.MULTIMEDIA: self.rates_bps[1]}


@dataclass
class DropResult:
    drop: int
    layout: str
    user_ids: np.ndarray
    classes: list
    throughput_bps: np.ndarray
    offered_bits: np.ndarray
    diagnostics: dict


class DropSimulation:
    """Mutable state of one drop (SimState)."""

    def __init__(self, scenario: Scenario, params: RunParams, drop: int = 0):
        self.scenario = scenario
        self.params = params
        self.drop = drop
        self.tti = 0
        ch, ln = params.channel, params.link
        self.table = ln.table()
        sf = scenario.sharing_factors if params.sharing_factor is None else \
            (params.sharing_factor,) * len(scenario.operators)
        self.grid = SpectrumGrid(len(scenario.operators), scenario.prbs_per_operator, tuple(sf))
        q, n_prb = self.grid.prbs_per_operator, self.grid.n_prbs
        cells, users = scenario.cells, scenario.users
        n_s, n_u = len(cells), len(users)
        self.n_sbs, self.n_users = n_s, n_u
        self.sbs_op = np.array([c.operator_id for c in cells], dtype=int)
        self.ue_sbs = np.array([u.serving_cell_id for u in users], dtype=int)
        self.ue_op = self.sbs_op[self.ue_sbs] if n_u else np.zeros(0, int)
        self.classes = [u.traffic_class for u in users]

        # per-building graphs
        self.buildings = []
        for b in scenario.buildings:
            ids = [c.id for c in scenario.cells_in(b.id)]
            if ids:
                self.buildings.append((b, ids, scenario.adjacency(b.id)))

        # candidate transmitters of each user: every SBS in its building
        m_max = max((len(ids) for _, ids, _ in self.buildings), default=1)
        self.link_sbs = np.full((n_u, m_max), -1, dtype=int)
        self.serving_col = np.zeros(n_u, dtype=int)
        rx_dbm = np.full((n_u, m_max), -np.inf)
        shadow_rng = self._rng(_SHADOW)
        shadow = shadow_rng.normal(0.0, ch.shadowing_sigma_db, size=(n_u, m_max))
        by_id = {b.id: b for b in scenario.buildings}
        per_prb_dbm = np.array([c.tx_power_dbm for c in cells]) - 10 * math.log10(q)
        ids_of = {b.id: ids for b, ids, _ in self.buildings}
        for u in users:
            ids = ids_of[u.building_id]
            self.link_sbs[u.id, :len(ids)] = ids
            self.serving_col[u.id] = ids.index(u.serving_cell_id)
            for m, s in enumerate(ids):
                g = link_gain(cells[s], u, by_id[u.building_id], ch, float(shadow[u.id, m]))
                rx_dbm[u.id, m] = per_prb_dbm[s] + g.gain_db
        self.link_valid = self.link_sbs >= 0
        self.rx_mw = np.where(self.link_valid, 10 ** (rx_dbm / 10), 0.0)
        self.link_ops = np.where(self.link_valid, self.sbs_op[np.maximum(self.link_sbs, 0)], -1)
        self.fading = FadingField((params.seed, drop, _FADING), n_u * m_max, n_prb, ch)
        self.m_max = m_max

        # users of each SBS
        u_max = max((int(np.sum(self.ue_sbs == s)) for s in range(n_s)), default=0)
        self.members = np.full((n_s, max(u_max, 1)), -1, dtype=int)
        for s in range(n_s):
            rows = np.flatnonzero(self.ue_sbs == s)
            self.members[s, :len(rows)] = rows

        rates = params.rates
        self.offer = np.array([rates[c] * traffic.TTI_S for c in self.classes])
        self.full_buffer = np.isinf(self.offer)
        self.buffer = np.where(self.full_buffer, np.inf, 0.0)
        self.avg = np.full(n_u, params.pf_initial_rate)
        self.harq = HarqBank(n_u, ln.max_retransmissions)
        self.cqi = np.full((n_u, n_prb), np.nan)
        self.cqi_rate = np.zeros((n_u, n_prb))
        self.cqi_queue = []  # (deliver_tti, sinr matrix)
        self.grant_queue = []  # (effective_tti, grants)
        self.grants = {}
        self.bwu = np.zeros(n_s)
        self.bwu_seen = np.zeros(n_s)
        self.order = self._order_matrix()
        self.sharing_rng = self._rng(_SHARING)
        self.decode_rng = self._rng(_DECODE)

        self.delivered = np.zeros(n_u)
        self.offered = np.zeros(n_u)
        self.diag = dict(grant_collisions_adjacent=0, cross_operator_overlaps=0,
                         acked_tb_bits=0.0, dropped_blocks=0, transmissions=0, nacks=0,
                         rounds=0, grants_issued=0, loaned_prbs=0)

    def _rng(self, stream: int):
        return np.random.default_rng([self.params.seed, self.drop, stream])

    def _order_matrix(self) -> np.ndarray:
        n_prb = self.grid.n_prbs
        order = np.full((self.n_sbs, n_prb), -1, dtype=int)
        for s in range(self.n_sbs):
            own = self.grid.anchor_order(int(self.sbs_op[s]))
            g = self.grants.get(s)
            row = own + (sorted(g.prbs) if g else [])
            order[s, :len(row)] = row
        return order

    # ------------------------------------------------------------ phases

    def _release(self):
        t = self.tti
        due = [item for item in self.grant_queue if item[0] <= t]
        if due:
            self.grants = due[-1][1]
            self.grant_queue = [item for item in self.grant_queue if item[0] > t]
            self.order = self._order_matrix()
        due = [item for item in self.cqi_queue if item[0] <= t]
        if due:
            self.cqi = due[-1][1]
            self.cqi_queue = [item for item in self.cqi_queue if item[0] > t]
            mcs = self.table.indices(to_db(self.cqi))
            self.cqi_rate = bits_per_prb(mcs, self.table, self.params.link.re_per_prb)

    def _coordinate(self):
        p = self.params
        t = self.tti
        self.bwu_seen = self.bwu.copy()
        grants = {}
        for b, ids, adj in self.buildings:
            reports = [sharing.SbsReport(s, int(self.sbs_op[s]), float(self.bwu[s])) for s in ids]
            grants.update(sharing.run_algorithm(p.algorithm, adj, reports, self.grid,
                                                self.sharing_rng, issue_tti=t))
            if grants and p.algorithm != sharing.NONE:
                self.diag["grant_collisions_adjacent"] += _adjacent_collisions(ids, adj, grants)
        grants = {s: g for s, g in grants.items() if g is not None and g.prbs}
        self.diag["rounds"] += 1
        self.diag["grants_issued"] += len(grants)
        self.diag["loaned_prbs"] += sum(g.loaned for g in grants.values())
        self.grant_queue.append((t + p.coordination_delay, grants))

    def step(self):
        """Advance one TTI."""
        p, ln = self.params, self.params.link
        t = self.tti
        n_u, n_prb = self.n_users, self.grid.n_prbs
        q = self.grid.prbs_per_operator

        self._release()
        if t % p.coordination_period == 0:
            self._coordinate()

        rate_users = ~self.full_buffer
        self.buffer[rate_users] += self.offer[rate_users]
        if t >= p.warmup_ttis:
            self.offered[rate_users] += self.offer[rate_users]

        pending = self.harq.active
        demand = np.where(pending & rate_users, self.harq.tb_bits, self.buffer)
        assigned = schedule_pf(self.order, self.members, self.cqi_rate, self.avg, demand, p.pf_window)

        occ = assigned >= 0
        own_mask = self.grid_owner[None, :] == self.sbs_op[:, None]
        self.bwu = (occ & own_mask).sum(axis=1) / q
        if self.buildings:
            self.diag["cross_operator_overlaps"] += self._cross_operator_overlaps(occ)

        alloc = np.zeros((n_u, n_prb), dtype=bool)
        s_idx, p_idx = np.nonzero(occ)
        alloc[assigned[s_idx, p_idx], p_idx] = True
        n_alloc = alloc.sum(axis=1)
        scheduled = n_alloc > 0

        fading = self.fading.draw(t).reshape(n_u, self.m_max, p.channel.n_rx, n_prb)
        occ_pad = np.vstack([occ, np.zeros((1, n_prb), bool)])
        tx_mask = occ_pad[self.link_sbs]  # -1 picks the silent padding row
        sinr = sinr_per_prb(self.rx_mw, fading, tx_mask, self.serving_col,
                            p.channel.noise_mw, p.channel.evm_pct)

        uniforms = self.decode_rng.uniform(size=n_u)
        served = np.zeros(n_u)
        if scheduled.any():
            users = np.flatnonzero(scheduled)
            new = users[~pending[users]]
            if new.size:
                cqi_eff = np.nansum(np.where(alloc[new], self.cqi[new], 0.0), axis=1) / n_alloc[new]
                mcs = self.table.indices(to_db(cqi_eff))
                tb = n_alloc[new] * bits_per_prb(mcs, self.table, ln.re_per_prb)
                tb = np.minimum(tb, self.buffer[new])
                self.buffer[new] -= np.where(self.full_buffer[new], 0.0, tb)
                self.harq.start(new, tb, mcs)
                users = users[self.harq.active[users]]
            eff = (sinr[users] * alloc[users]).sum(axis=1) / n_alloc[users]
            served[users] = self.harq.tb_bits[users]
            bits, acked, dropped = self.harq.attempt(users, eff, uniforms[users], self.table,
                                                     ln.fer_steepness_db)
            if t >= p.warmup_ttis:
                self.delivered[users] += bits
                self.diag["acked_tb_bits"] += float(bits.sum())
                self.diag["dropped_blocks"] += int(dropped.sum())
                self.diag["transmissions"] += int(users.size)
                self.diag["nacks"] += int((~acked).sum())
        self.avg = update_average(self.avg, served, p.pf_window)

        if t % ln.cqi_period == 0 and n_u:
            link_bwu = np.where(self.link_valid, self.bwu_seen[np.maximum(self.link_sbs, 0)], np.nan)
            est = estimate_cqi_batch(p.cqi_mode, self.grid, self.rx_mw, fading, self.serving_col,
                                     self.ue_op, self.bwu_seen[self.ue_sbs], self.link_ops, link_bwu,
                                     p.channel.noise_mw, p.channel.evm_pct, self.link_valid)
            self.cqi_queue.append((t + ln.cqi_delay, est))
        self.tti += 1

    @property
    def grid_owner(self) -> np.ndarray:
        if not hasattr(self, "_owner"):
            self._owner = self.grid.position_arrays()[0]
        return self._owner

    def _cross_operator_overlaps(self, occ) -> int:
        b_of = np.array([c.building_id for c in self.scenario.cells])
        if not hasattr(self, "_b_index"):
            _, self._b_index = np.unique(b_of, return_inverse=True)
        n_b = int(self._b_index.max()) + 1
        used = np.zeros((n_b, self.grid.n_operators, self.grid.n_prbs), dtype=int)
        np.add.at(used, (self._b_index, self.sbs_op), occ.astype(int))
        return int(((used > 0).sum(axis=1) >= 2).sum())

    def run(self) -> DropResult:
        p = self.params
        try:
            while self.tti < p.ttis:
                self.step()
        except (ValueError, IndexError) as exc:
            raise ContractViolation(f"drop {self.drop}, TTI {self.tti}: {exc}") from exc
        span = (p.ttis - p.warmup_ttis) * traffic.TTI_S
        return DropResult(self.drop, self.scenario.layout, np.array([u.id for u in self.scenario.users]),
                          self.classes, self.delivered / span, self.offered, dict(self.diag))


def _adjacent_collisions(ids, adj, grants) -> int:
    n = 0
    for a in range(len(ids)):
        ga = grants.get(ids[a])
        if ga is None or not ga.prbs:
            continue
        for b in range(a + 1, len(ids)):
            gb = grants.get(ids[b])
            if adj[a, b] and gb is not None:
                n += len(set(ga.prbs) & set(gb.prbs))
    return n


def _scenario_for_drop(scenario, params: RunParams, drop: int) -> Scenario:
    if isinstance(scenario, ScenarioConfig):
        return build_layout(scenario, np.random.default_rng([params.seed, drop, _LAYOUT]))
    return scenario


def run_drop(scenario, params: RunParams, drop: int) -> DropResult:
    return DropSimulation(_scenario_for_drop(scenario, params, drop), params, drop).run()


def _run_drop_args(args):
    return run_drop(*args)


def run(scenario, params: RunParams) -> MetricsStore:
    """Simulate ``params.drops`` drops.

    ``scenario`` is either a fixed :class:`Scenario` reused by every drop (only
    shadowing and fading change) or a :class:`ScenarioConfig`, in which case each
    drop draws a fresh layout from ``(seed, drop)``.
    """
    jobs = [(scenario, params, d) for d in range(params.drops)]
    if params.workers > 1:
        with ProcessPoolExecutor(params.workers) as pool:
            results = list(pool.map(_run_drop_args, jobs))
    else:
        results = [_run_drop_args(j) for j in jobs]
    return collect(results, params, scenario)


def collect(results, params: RunParams, scenario) -> MetricsStore:
    sf = params.sharing_factor
    if sf is None:
        factors = scenario.sharing_factors
        sf = factors[0] if len(set(factors)) == 1 else float(np.mean(factors))
    store = MetricsStore()
    for r in results:
        for uid, cls, thr in zip(r.user_ids, r.classes, r.throughput_bps):
            store.add(ThroughputSample(int(uid), r.drop, cls, params.algorithm, float(sf),
                                       params.cqi_mode, r.layout, float(thr)))
        store.diagnostics.append(dict(r.diagnostics, drop=r.drop,
                                      offered_bits=float(r.offered_bits.sum())))
    return store


def params_to_dict(params: RunParams) -> dict:
    return dataclasses.asdict(params)


def params_from_dict(d: dict) -> RunParams:
    d = dict(d)
    d["channel"] = ChannelConfig(**d.get("channel", {}))
    d["link"] = LinkConfig(**d.get("link", {}))
    if "rates_bps" in d:
        d["rates_bps"] = tuple(d["rates_bps"])
    return RunParams(**d)

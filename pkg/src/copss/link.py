"""CQI estimation, MCS selection and HARQ with chase combining."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.special import expit

from .channel import sinr_per_prb
from .scheduling import EPS, SpectrumGrid

NO_SHARING = "no_sharing"
UNCOORDINATED = "uncoordinated"
COORDINATED = "coordinated"
CQI_MODES = (NO_SHARING, UNCOORDINATED, COORDINATED)

# 4-bit LTE CQI efficiencies; thresholds are the ~10% BLER points of a typical L2S fit
_EFFICIENCY = (0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141,
               2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547)
_THRESHOLD_DB = (-6.7, -4.7, -2.3, 0.2, 2.4, 4.3, 5.9, 8.1,
                 10.3, 11.7, 14.1, 16.3, 18.7, 21.0, 22.7)


@dataclass(frozen=True)
class McsLevel:
    index: int
    efficiency: float
    threshold_db: float


class McsTable:
    def __init__(self, levels):
        levels = sorted(levels, key=lambda m: m.index)
        if [m.index for m in levels] != list(range(1, len(levels) + 1)):
            raise ValueError("MCS indices must run 1..N")
        eff = np.array([m.efficiency for m in levels])
        thr = np.array([m.threshold_db for m in levels])
        if np.any(np.diff(eff) <= 0) or np.any(np.diff(thr) <= 0):
            raise ValueError("MCS efficiency and threshold must increase with index")
        self.levels = tuple(levels)
        self.efficiency = eff
        self.threshold_db = thr

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, index: int) -> McsLevel:
        return self.levels[index - 1]

    @classmethod
    def default(cls) -> McsTable:
        return cls(McsLevel(i + 1, e, t) for i, (e, t) in enumerate(zip(_EFFICIENCY, _THRESHOLD_DB)))

    @classmethod
    def load(cls, path) -> McsTable:
        """Read an ordered list of {index, efficiency, threshold_db} (YAML or JSON)."""
        text = Path(path).read_text()
        rows = yaml.safe_load(text) if not str(path).endswith(".json") else json.loads(text)
        return cls(McsLevel(int(r["index"]), float(r["efficiency"]), float(r["threshold_db"])) for r in rows)

    def indices(self, sinr_db) -> np.ndarray:
        """Vectorised :func:`select_mcs`; NaN input maps to index 0 (no CQI)."""
        x = np.asarray(sinr_db, dtype=float)
        idx = np.searchsorted(self.threshold_db, x, side="right")
        idx = np.maximum(idx, 1)
        return np.where(np.isnan(x), 0, idx)


def select_mcs(effective_sinr_db: float, table: McsTable | None = None) -> McsLevel:
    """Highest MCS whose threshold is at or below the SINR; MCS 1 as the floor."""
    table = McsTable.default() if table is None else table
    return table[int(table.indices(effective_sinr_db))]


def effective_sinr(sinr_vector, allocated_prbs) -> float:
    """Arithmetic mean of linear SINR over the allocated PRBs."""
    allocated = list(allocated_prbs)
    if not allocated:
        raise ValueError("effective SINR of an empty allocation")
    return float(np.mean(np.asarray(sinr_vector, dtype=float)[allocated]))


def to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


@dataclass(frozen=True)
class LinkConfig:
    re_per_prb: int = 112
    fer_steepness_db: float = 1.0
    max_retransmissions: int = 3
    cqi_period: int = 6
    cqi_delay: int = 2
    mcs_table_path: str | None = None

    def table(self) -> McsTable:
        return McsTable.default() if self.mcs_table_path is None else McsTable.load(self.mcs_table_path)


def bits_per_prb(mcs_index, table: McsTable, re_per_prb: int = 112):
    idx = np.asarray(mcs_index)
    eff = np.where(idx > 0, table.efficiency[np.maximum(idx, 1) - 1], 0.0)
    return eff * re_per_prb


# ---------------------------------------------------------------- CQI


@dataclass
class CqiReport:
    ue_id: int
    sinr: np.ndarray  # linear, one per PRB of the whole grid; NaN = not measured
    generated_tti: int
    deliver_tti: int


def latest_report(reports, tti: int) -> CqiReport | None:
    """Newest report the scheduler may read at ``tti``."""
    usable = [r for r in reports if r.deliver_tti <= tti]
    return max(usable, key=lambda r: r.generated_tti) if usable else None


def assumed_interferers(mode: str, grid: SpectrumGrid, ue_op, serving_bwu, link_ops, link_bwu,
                        serving_col, link_valid=None) -> np.ndarray:
    """Which candidate transmitters a user believes are active on each PRB.

    ue_op, serving_bwu, serving_col: (U,)
    link_ops, link_bwu:              (U, M); link_bwu NaN where no BWU was received
    Returns bool (U, M, P).

    Same-operator neighbours are always assumed to fill the whole own band.
    Across operators:
      no_sharing    - nothing (bands are orthogonal)
      uncoordinated - every other operator's band is fully used by its owners,
                      and the shared tail of the own band is hit by all of them
      coordinated   - owners use exactly ceil(BWU*Q) PRBs from their anchor;
                      only overloaded neighbours may borrow from the free part
                      of the own shared tail
    """
    if mode not in CQI_MODES:
        raise ValueError(f"unknown CQI mode {mode!r}")
    ue_op = np.asarray(ue_op)
    link_ops = np.asarray(link_ops)
    n_u, n_m = link_ops.shape
    q = grid.prbs_per_operator
    owner, pos = grid.position_arrays()
    valid = np.ones((n_u, n_m), bool) if link_valid is None else np.asarray(link_valid, bool)
    not_serving = np.ones((n_u, n_m), bool)
    not_serving[np.arange(n_u), serving_col] = False
    valid = valid & not_serving

    same_op = valid & (link_ops == ue_op[:, None])
    own_band = owner[None, :] == ue_op[:, None]  # (U, P)
    mask = same_op[:, :, None] & own_band[:, None, :]
    if mode == NO_SHARING:
        return mask

    cross = valid & ~same_op
    in_link_band = owner[None, None, :] == link_ops[:, :, None]  # (U, M, P)
    shared = np.array([grid.shared_count(k) for k in range(grid.n_operators)])
    tail_start = q - shared[ue_op]  # (U,)
    if mode == UNCOORDINATED:
        owner_busy = in_link_band
        borrow = cross
    else:
        link_bwu = np.asarray(link_bwu, dtype=float)
        known = ~np.isnan(link_bwu)
        used = np.where(known, np.ceil(np.nan_to_num(link_bwu) * q - EPS), q)
        owner_busy = in_link_band & (pos[None, None, :] < used[:, :, None])
        borrow = cross & (~known | (link_bwu >= 1.0 - EPS))
        own_used = np.ceil(np.asarray(serving_bwu, dtype=float) * q - EPS)
        tail_start = np.maximum(tail_start, own_used)
    own_tail = own_band & (pos[None, :] >= tail_start[:, None])  # (U, P)
    mask |= cross[:, :, None] & (owner_busy | (borrow[:, :, None] & own_tail[:, None, :]))
    return mask


def estimate_cqi_batch(mode: str, grid: SpectrumGrid, rx_power_mw, fading, serving_col, ue_op,
                       serving_bwu, link_ops, link_bwu, noise_mw, evm_pct, link_valid=None) -> np.ndarray:
    """Per-PRB SINR estimates (U, P); PRBs outside the own band are NaN in no_sharing mode."""
    mask = assumed_interferers(mode, grid, ue_op, serving_bwu, link_ops, link_bwu, serving_col, link_valid)
    sinr = sinr_per_prb(rx_power_mw, fading, mask, np.asarray(serving_col), noise_mw, evm_pct)
    if mode == NO_SHARING:
        owner, _ = grid.position_arrays()
        sinr = np.where(owner[None, :] == np.asarray(ue_op)[:, None], sinr, np.nan)
    return sinr


def estimate_cqi(ue_id: int, mode: str, grid: SpectrumGrid, rx_power_mw, fading, serving_col: int,
                 ue_op: int, serving_bwu: float, link_ops, link_bwu, noise_mw, evm_pct,
                 tti: int, delay: int = 2) -> CqiReport:
    """One user's CQI report.

    rx_power_mw: (M,) mean received power from each detected SBS
    fading:      (M, R, P) fading power gains at ``tti``
    link_ops/link_bwu: (M,) operator and last received BWU (NaN if unknown) of each detected SBS
    """
    sinr = estimate_cqi_batch(mode, grid, np.asarray(rx_power_mw, float)[None], np.asarray(fading)[None],
                              np.array([serving_col]), np.array([ue_op]), np.array([serving_bwu]),
                              np.asarray(link_ops)[None], np.asarray(link_bwu, float)[None],
                              noise_mw, evm_pct)[0]
    return CqiReport(ue_id, sinr, tti, tti + delay)


# ---------------------------------------------------------------- HARQ

ACK = "ack"
NACK = "nack"
DROPPED = "dropped"
_LN9 = math.log(9.0)


def frame_error_probability(sinr_db, threshold_db, steepness_db: float = 1.0):
    """Logistic FER in the dB gap; exactly 10% at the MCS threshold."""
    gap = np.asarray(sinr_db, dtype=float) - threshold_db
    return expit(-(gap / steepness_db + _LN9))


@dataclass
class HarqProcess:
    tb_bits: float = 0.0
    mcs: int = 0
    accumulated_sinr: float = 0.0
    retransmissions: int = 0
    max_retransmissions: int = 3

    @property
    def active(self) -> bool:
        return self.tb_bits > 0

    def start(self, tb_bits: float, mcs: int):
        self.tb_bits, self.mcs = tb_bits, mcs
        self.accumulated_sinr = 0.0
        self.retransmissions = 0

    def clear(self):
        self.start(0.0, 0)


def decode(harq: HarqProcess, effective_sinr: float, mcs: int, rng, table: McsTable | None = None,
           steepness_db: float = 1.0) -> str:
    """One transmission attempt with chase combining of earlier attempts."""
    if not harq.active:
        raise ValueError("decode on an idle HARQ process")
    table = McsTable.default() if table is None else table
    harq.accumulated_sinr += effective_sinr
    fer = frame_error_probability(float(to_db(harq.accumulated_sinr)), table[mcs].threshold_db, steepness_db)
    if rng.uniform() >= fer:
        harq.clear()
        return ACK
    if harq.retransmissions >= harq.max_retransmissions:
        harq.clear()
        return DROPPED
    harq.retransmissions += 1
    return NACK


class HarqBank:
    """Array form of one :class:`HarqProcess` per user, used by the engine."""

    def __init__(self, n_users: int, max_retransmissions: int = 3):
        self.tb_bits = np.zeros(n_users)
        self.mcs = np.zeros(n_users, dtype=int)
        self.accumulated = np.zeros(n_users)
        self.retx = np.zeros(n_users, dtype=int)
        self.max_retx = max_retransmissions

    @property
    def active(self) -> np.ndarray:
        return self.tb_bits > 0

    def start(self, users, tb_bits, mcs):
        self.tb_bits[users] = tb_bits
        self.mcs[users] = mcs
        self.accumulated[users] = 0.0
        self.retx[users] = 0

    def attempt(self, users, eff_sinr, uniforms, table: McsTable, steepness_db: float = 1.0):
        """Decode for ``users``; returns (acked_bits, acked, dropped) aligned with ``users``."""
        users = np.asarray(users, dtype=int)
        self.accumulated[users] += eff_sinr
        fer = frame_error_probability(to_db(self.accumulated[users]),
                                      table.threshold_db[self.mcs[users] - 1], steepness_db)
        acked = np.asarray(uniforms) >= fer
        dropped = ~acked & (self.retx[users] >= self.max_retx)
        bits = np.where(acked, self.tb_bits[users], 0.0)
        done = users[acked | dropped]
        self.tb_bits[done] = 0.0
        self.mcs[done] = 0
        self.accumulated[done] = 0.0
        self.retx[done] = 0
        self.retx[users[~acked & ~dropped]] += 1
        return bits, acked, dropped

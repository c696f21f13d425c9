"""Link gains and per-PRB SINR.

Indoor NLOS log-distance path loss, per-link log-normal shadowing, 5 dB per
crossed wall, frequency-selective Rayleigh fading, MRC over the receive
branches and an EVM ceiling at the receiver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .topology import Building, count_walls

THERMAL_NOISE_DBM_HZ = -174.0


@dataclass(frozen=True)
class ChannelConfig:
    # PL(d) = A log10(d) + B + C log10(f_GHz); defaults follow the usual InH NLOS fit
    pathloss_a: float = 43.3
    pathloss_b: float = 11.5
    pathloss_c: float = 20.0
    carrier_ghz: float = 2.0
    shadowing_sigma_db: float = 4.0
    evm_pct: float = 4.0
    noise_figure_db: float = 9.0
    coherence_prbs: float = 4.0
    n_rx: int = 2
    prb_bandwidth_hz: float = 180e3
    min_distance_m: float = 1.0

    @property
    def noise_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + 10 * math.log10(self.prb_bandwidth_hz) + self.noise_figure_db

    @property
    def noise_mw(self) -> float:
        return 10 ** (self.noise_dbm / 10)

    @property
    def prb_correlation(self) -> float:
        if math.isinf(self.coherence_prbs):
            return 1.0
        if self.coherence_prbs <= 0:
            return 0.0
        return math.exp(-1.0 / self.coherence_prbs)


@dataclass(frozen=True)
class LinkGain:
    tx_id: int
    rx_id: int
    pathloss_db: float
    shadowing_db: float
    wall_loss_db: float

    @property
    def gain_db(self) -> float:
        return -(self.pathloss_db + self.shadowing_db + self.wall_loss_db)


def pathloss_db(distance_m, cfg: ChannelConfig = ChannelConfig()):
    d = np.maximum(distance_m, cfg.min_distance_m)
    return cfg.pathloss_a * np.log10(d) + cfg.pathloss_b + cfg.pathloss_c * math.log10(cfg.carrier_ghz)


def path_gain_db(tx_pos, rx_pos, building: Building, cfg: ChannelConfig = ChannelConfig(),
                 shadowing_db: float = 0.0) -> float:
    """Large-scale gain in dB (negative): path loss, shadowing and wall penetration."""
    d = math.hypot(tx_pos[0] - rx_pos[0], tx_pos[1] - rx_pos[1])
    walls = count_walls(tx_pos, rx_pos, building)
    return -(float(pathloss_db(d, cfg)) + shadowing_db + building.wall_attenuation_db * walls)


def link_gain(tx, rx, building: Building, cfg: ChannelConfig, shadowing_db: float) -> LinkGain:
    d = math.hypot(tx.position[0] - rx.position[0], tx.position[1] - rx.position[1])
    walls = count_walls(tx.position, rx.position, building)
    return LinkGain(tx.id, rx.id, float(pathloss_db(d, cfg)), shadowing_db,
                    building.wall_attenuation_db * walls)


def apply_evm(sinr_in, evm_pct: float):
    """Cap a linear SINR by the transmitter/receiver EVM floor."""
    sinr_in = np.asarray(sinr_in, dtype=float)
    e2 = (evm_pct / 100.0) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        out = 1.0 / (1.0 / sinr_in + e2)
    out = np.where(sinr_in > 0, out, 0.0)
    return out if out.ndim else float(out)


class FadingField:
    """Unit-mean exponential power gains, correlated across adjacent PRBs and
    redrawn every TTI.

    The draw for TTI ``t`` comes from a generator keyed by ``(seed, t)`` so any
    (link, prb, tti) can be recomputed without replaying earlier TTIs.
    """

    def __init__(self, seed, n_links: int, n_prbs: int, cfg: ChannelConfig = ChannelConfig()):
        self.seed = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
        self.n_links = n_links
        self.n_prbs = n_prbs
        self.n_rx = cfg.n_rx
        self.rho = cfg.prb_correlation

    def draw(self, tti: int) -> np.ndarray:
        """Power gains of shape (n_links, n_rx, n_prbs)."""
        rng = np.random.default_rng([*self.seed, int(tti)])
        shape = (self.n_links, self.n_rx, self.n_prbs)
        if self.rho >= 1.0:
            h = rng.standard_normal((2, self.n_links, self.n_rx, 1))
            g = 0.5 * (h[0] ** 2 + h[1] ** 2)
            return np.broadcast_to(g, shape).copy()
        z = rng.standard_normal((2,) + shape) * math.sqrt(0.5)
        z = z[0] + 1j * z[1]
        if self.rho > 0.0:
            # AR(1) along the PRB axis with a stationary unit-variance start
            c = math.sqrt(1.0 - self.rho ** 2)
            z[..., 0] /= c
            z = lfilter([c], [1.0, -self.rho], z, axis=-1)
        return z.real ** 2 + z.imag ** 2


def fading_gain(link: int, prb: int, tti: int, seed, n_links: int, n_prbs: int,
                cfg: ChannelConfig = ChannelConfig(), branch: int = 0) -> float:
    return float(FadingField(seed, n_links, n_prbs, cfg).draw(tti)[link, branch, prb])


def sinr_per_prb(rx_power_mw, fading, interferer_mask, serving_col, noise_mw: float,
                 evm_pct: float, signal_mask=None) -> np.ndarray:
    """Post-MRC, post-EVM linear SINR for a batch of users.

    rx_power_mw:     (U, M) mean received power per PRB from each candidate transmitter
    fading:          (U, M, R, P) power gains per receive branch
    interferer_mask: (U, M, P) whether link m interferes on PRB p (serving column ignored)
    serving_col:     (U,) column of the serving cell
    signal_mask:     optional (U, P); PRBs where the serving cell is silent get SINR 0
    """
    u_idx = np.arange(rx_power_mw.shape[0])
    power = rx_power_mw[:, :, None, None] * fading  # (U, M, R, P)
    signal = power[u_idx, serving_col]  # (U, R, P)
    mask = interferer_mask.copy()
    mask[u_idx, serving_col] = False
    interference = np.einsum("umrp,ump->urp", power, mask.astype(power.dtype))
    sinr = (signal / (noise_mw + interference)).sum(axis=1)  # MRC: branch SINRs add
    if signal_mask is not None:
        sinr = np.where(signal_mask, sinr, 0.0)
    return apply_evm(sinr, evm_pct)


def per_prb_sinr(ue_row: int, rx_power_mw, fading, occupancy_mask, serving_col, noise_mw,
                 evm_pct) -> np.ndarray:
    """SINR vector of one user given which candidate transmitters are active per PRB."""
    sl = slice(ue_row, ue_row + 1)
    return sinr_per_prb(rx_power_mw[sl], fading[sl], occupancy_mask[sl],
                        np.asarray(serving_col)[sl], noise_mw, evm_pct)[0]

"""Downlink demand for the three traffic classes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FULL_BUFFER = "full_buffer"
CONSTANT_RATE = "constant_rate"
MULTIMEDIA = "multimedia"
CLASSES = (FULL_BUFFER, CONSTANT_RATE, MULTIMEDIA)

DEFAULT_MIX = (0.1, 0.5, 0.4)
DEFAULT_RATES_BPS = {FULL_BUFFER: math.inf, CONSTANT_RATE: 1e6, MULTIMEDIA: 4e6}
TTI_S = 1e-3


@dataclass
class TrafficSpec:
    traffic_class: str
    rate_bps: float
    buffer_bits: float = 0.0

    def __post_init__(self):
        if self.traffic_class == FULL_BUFFER:
            self.buffer_bits = math.inf

    @classmethod
    def of(cls, traffic_class: str, rates=None) -> TrafficSpec:
        rates = DEFAULT_RATES_BPS if rates is None else rates
        return cls(traffic_class, rates[traffic_class])


def validate_mix(mix) -> np.ndarray:
    p = np.asarray(mix, dtype=float)
    if p.shape != (len(CLASSES),) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"traffic mix must be {len(CLASSES)} non-negative shares summing to 1, got {mix}")
    return p


def assign_mix(users, mix=DEFAULT_MIX, rng=None) -> list[str]:
    """Draw a traffic class per user, i.i.d. with the mix probabilities.

    ``users`` is either a count or a sequence of users.
    """
    p = validate_mix(mix)
    n = users if isinstance(users, int) else len(users)
    rng = np.random.default_rng() if rng is None else rng
    idx = rng.choice(len(CLASSES), size=n, p=p)
    return [CLASSES[i] for i in idx]


def accrue(spec: TrafficSpec, ttis: int = 1) -> float:
    """Add ``ttis`` worth of offered bits to the buffer; returns bits added."""
    if spec.traffic_class == FULL_BUFFER:
        return math.inf
    bits = spec.rate_bps * TTI_S * ttis
    spec.buffer_bits += bits
    return bits


def offered_bits_per_tti(classes, rates=None) -> np.ndarray:
    """Vector form of :func:`accrue` used by the engine (inf for full buffer)."""
    rates = DEFAULT_RATES_BPS if rates is None else rates
    return np.array([rates[c] * TTI_S for c in classes], dtype=float)

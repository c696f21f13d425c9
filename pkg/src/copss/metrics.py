"""Throughput samples, empirical CDFs, percentiles and gain tables."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import astuple, dataclass, field

import numpy as np

CSV_HEADER = ("user_id", "drop", "class", "algorithm", "sharing_factor", "cqi_mode", "layout",
              "throughput_bps")


@dataclass(frozen=True)
class ThroughputSample:
    user_id: int
    drop: int
    traffic_class: str
    algorithm: str
    sharing_factor: float
    cqi_mode: str
    layout: str
    throughput_bps: float


@dataclass
class MetricsStore:
    samples: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def add(self, sample: ThroughputSample):
        if sample.throughput_bps < 0:
            raise ValueError("negative throughput")
        self.samples.append(sample)

    def __len__(self):
        return len(self.samples)

    def select(self, traffic_class: str | None = None, **tags) -> MetricsStore:
        out = [s for s in self.samples
               if (traffic_class is None or s.traffic_class == traffic_class)
               and all(getattr(s, k) == v for k, v in tags.items())]
        return MetricsStore(out)

    def values(self, traffic_class: str | None = None) -> np.ndarray:
        return np.array([s.throughput_bps for s in self.select(traffic_class).samples])

    def mean(self, traffic_class: str | None = None) -> float:
        v = self.values(traffic_class)
        return float(v.mean()) if v.size else math.nan

    def per_drop_mean(self, traffic_class: str | None = None) -> dict[int, float]:
        acc = defaultdict(list)
        for s in self.select(traffic_class).samples:
            acc[s.drop].append(s.throughput_bps)
        return {d: float(np.mean(v)) for d, v in sorted(acc.items())}

    def tags(self) -> set:
        return {(s.traffic_class, s.sharing_factor, s.cqi_mode, s.layout) for s in self.samples}

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for s in self.samples:
                row = list(astuple(s))
                row[4] = repr(float(row[4]))
                row[7] = repr(float(row[7]))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> MetricsStore:
        store = cls()
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = tuple(next(r))
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected header {header}")
            for row in r:
                store.add(ThroughputSample(int(row[0]), int(row[1]), row[2], row[3], float(row[4]),
                                           row[5], row[6], float(row[7])))
        return store


def cdf(samples) -> list[tuple[float, float]]:
    """Empirical CDF: one (value, P[X <= value]) point per distinct value."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("CDF of no samples")
    values, counts = np.unique(x, return_counts=True)
    return list(zip(values.tolist(), (np.cumsum(counts) / x.size).tolist()))


def percentile(samples, p: float) -> float:
    """Lowest sample whose cumulative probability reaches ``p``."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"percentile level {p} outside (0, 1]")
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("percentile of no samples")
    k = max(math.ceil(p * x.size - 1e-9), 1)
    return float(x[k - 1])


def gain_table(baseline: MetricsStore, shared: MetricsStore, p: float = 0.05) -> dict[str, float]:
    """Per traffic class: percentile(shared) - percentile(baseline) at level p."""
    def key(store):
        return {(s.sharing_factor, s.cqi_mode, s.layout) for s in store.samples}

    if key(baseline) != key(shared):
        raise ValueError("stores differ in tags other than the algorithm")
    out = {}
    classes = sorted({s.traffic_class for s in baseline.samples} | {s.traffic_class for s in shared.samples})
    for cls in classes:
        a, b = baseline.values(cls), shared.values(cls)
        if a.size and b.size:
            out[cls] = percentile(b, p) - percentile(a, p)
    return out


def mean_vs_sharing(stores, traffic_class: str) -> list[tuple[float, float]]:
    """(sharing factor, mean throughput) points, one per store, sorted by factor."""
    pts = []
    for st in stores:
        factors = {s.sharing_factor for s in st.samples}
        if len(factors) != 1:
            raise ValueError("each store must hold a single sharing factor")
        pts.append((factors.pop(), st.mean(traffic_class)))
    return sorted(pts)

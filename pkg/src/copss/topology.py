"""Building geometry, small-cell layouts and the SBS communication graph.

A building is a 120 m x 120 m floor with two rows of 24 m rooms on each side
of a 24 m wide open corridor (5 x 4 = 20 rooms).  Positions are absolute
coordinates in meters; every building has its own origin and buildings never
interact with each other.
"""
from __future__ import annotations

import dataclasses
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import traffic

BUILDING_SIZE = 120.0
ROOM_SIZE = 24.0
ROOM_COLUMNS = 5
CORRIDOR = (48.0, 72.0)  # y-extent of the open corridor, building-local
BUILDING_SPACING = 500.0

FIXED = "fixed"
RANDOM = "random"
LAYOUTS = (FIXED, RANDOM)

DEFAULT_THRESHOLD_M = {FIXED: 50.0, RANDOM: 25.0}


class ConfigError(ValueError):
    """Invalid scenario or run configuration."""


@dataclass(frozen=True)
class Operator:
    id: int
    sharing_factor: float
    band_start: int
    prbs: int

    def __post_init__(self):
        if not 0.0 <= self.sharing_factor <= 1.0:
            raise ConfigError(f"sharing factor {self.sharing_factor} outside [0, 1]")

    @property
    def band(self) -> range:
        return range(self.band_start, self.band_start + self.prbs)


@dataclass(frozen=True)
class Building:
    id: int
    origin: tuple[float, float]
    wall_attenuation_db: float = 5.0

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin[0] + BUILDING_SIZE / 2, self.origin[1] + BUILDING_SIZE / 2)

    def rooms(self) -> list[tuple[float, float, float, float]]:
        """Room rectangles (x0, y0, x1, y1), row by row from the bottom."""
        ox, oy = self.origin
        rows = [0.0, ROOM_SIZE, CORRIDOR[1], CORRIDOR[1] + ROOM_SIZE]
        return [
            (ox + c * ROOM_SIZE, oy + y0, ox + (c + 1) * ROOM_SIZE, oy + y0 + ROOM_SIZE)
            for y0 in rows
            for c in range(ROOM_COLUMNS)
        ]

    def room_centers(self) -> list[tuple[float, float]]:
        return [((x0 + x1) / 2, (y0 + y1) / 2) for x0, y0, x1, y1 in self.rooms()]

    def corridor(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return (ox, oy + CORRIDOR[0], ox + BUILDING_SIZE, oy + CORRIDOR[1])

    def walls(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        """Interior wall segments as maximal straight pieces."""
        ox, oy = self.origin
        segs = []
        for y in (ROOM_SIZE, CORRIDOR[0], CORRIDOR[1], CORRIDOR[1] + ROOM_SIZE):
            segs.append(((ox, oy + y), (ox + BUILDING_SIZE, oy + y)))
        for c in range(1, ROOM_COLUMNS):
            x = ox + c * ROOM_SIZE
            segs.append(((x, oy), (x, oy + CORRIDOR[0])))
            segs.append(((x, oy + CORRIDOR[1]), (x, oy + BUILDING_SIZE)))
        return segs

    def contains(self, pos) -> bool:
        x, y = pos[0] - self.origin[0], pos[1] - self.origin[1]
        return 0.0 <= x <= BUILDING_SIZE and 0.0 <= y <= BUILDING_SIZE


@dataclass(frozen=True)
class SmallCell:
    id: int
    operator_id: int
    building_id: int
    position: tuple[float, float]
    tx_power_dbm: float = 20.0


@dataclass(frozen=True)
class UserTerminal:
    id: int
    serving_cell_id: int
    building_id: int
    position: tuple[float, float]
    traffic_class: str


@dataclass(frozen=True)
class Graph:
    """One connected group of SBSs; vertices are cell ids."""
    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    layout: str = FIXED
    buildings: int = 21
    operators: int = 3
    prbs_per_operator: int = 16
    users_per_sbs: tuple[int, int] = (1, 2)
    deployment_probability: float = 0.15
    connectivity_threshold_m: float | None = None
    hotspot_radius_m: float = 20.0
    sharing_factor: float | tuple[float, ...] = 0.0
    tx_power_dbm: float = 20.0
    wall_attenuation_db: float = 5.0
    traffic_mix: tuple[float, float, float] = traffic.DEFAULT_MIX
    seed: int = 0

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout {self.layout!r}")
        if self.operators < 1:
            raise ConfigError("need at least one operator")
        if self.buildings < 1:
            raise ConfigError("need at least one building")
        if self.prbs_per_operator < 1:
            raise ConfigError("need at least one PRB per operator")
        lo, hi = self.users_per_sbs
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad users_per_sbs range {self.users_per_sbs}")
        if not 0.0 <= self.deployment_probability <= 1.0:
            raise ConfigError("deployment probability outside [0, 1]")
        if self.threshold <= 0:
            raise ConfigError("connectivity threshold must be positive")
        if len(self.sharing_factors) != self.operators:
            raise ConfigError("one sharing factor per operator expected")
        if any(not 0.0 <= s <= 1.0 for s in self.sharing_factors):
            raise ConfigError("sharing factor outside [0, 1]")
        try:
            traffic.validate_mix(self.traffic_mix)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def threshold(self) -> float:
        if self.connectivity_threshold_m is None:
            return DEFAULT_THRESHOLD_M[self.layout]
        return self.connectivity_threshold_m

    @property
    def sharing_factors(self) -> tuple[float, ...]:
        if isinstance(self.sharing_factor, (int, float)):
            return (float(self.sharing_factor),) * self.operators
        return tuple(float(s) for s in self.sharing_factor)


@dataclass(frozen=True)
class Scenario:
    layout: str
    operators: tuple[Operator, ...]
    buildings: tuple[Building, ...]
    cells: tuple[SmallCell, ...]
    users: tuple[UserTerminal, ...]
    prbs_per_operator: int
    connectivity_threshold_m: float
    hotspot_radius_m: float = 20.0
    _by_building: dict = field(default=None, init=False, repr=False, compare=False)

    @property
    def n_prbs(self) -> int:
        return len(self.operators) * self.prbs_per_operator

    @property
    def sharing_factors(self) -> tuple[float, ...]:
        return tuple(op.sharing_factor for op in self.operators)

    def cells_in(self, building_id: int) -> list[SmallCell]:
        if self._by_building is None:
            groups = {b.id: [] for b in self.buildings}
            for c in self.cells:
                groups[c.building_id].append(c)
            object.__setattr__(self, "_by_building", groups)
        return self._by_building[building_id]

    def users_of(self, cell_id: int) -> list[UserTerminal]:
        return [u for u in self.users if u.serving_cell_id == cell_id]

    def adjacency(self, building_id: int) -> np.ndarray:
        return compute_adjacency(self.cells_in(building_id), self.connectivity_threshold_m)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_by_building")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def with_sharing(self, sharing: float | tuple[float, ...]) -> Scenario:
        if isinstance(sharing, (int, float)):
            sharing = (float(sharing),) * len(self.operators)
        ops = tuple(Operator(o.id, s, o.band_start, o.prbs) for o, s in zip(self.operators, sharing))
        return Scenario(self.layout, ops, self.buildings, self.cells, self.users,
                        self.prbs_per_operator, self.connectivity_threshold_m, self.hotspot_radius_m)


def make_operators(config: ScenarioConfig) -> tuple[Operator, ...]:
    q = config.prbs_per_operator
    return tuple(Operator(k, s, k * q, q) for k, s in enumerate(config.sharing_factors))


def make_buildings(config: ScenarioConfig) -> tuple[Building, ...]:
    return tuple(
        Building(i, (i * BUILDING_SPACING, 0.0), config.wall_attenuation_db)
        for i in range(config.buildings)
    )


def _uniform_in_building(building: Building, rng) -> tuple[float, float]:
    x, y = rng.uniform(0.0, BUILDING_SIZE, size=2)
    return (building.origin[0] + float(x), building.origin[1] + float(y))


def _uniform_in_hotspot(center, radius, building: Building, rng) -> tuple[float, float]:
    # rejection keeps users indoors when the hotspot overlaps the outer wall
    while True:
        r = radius * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2 * math.pi)
        pos = (center[0] + r * math.cos(phi), center[1] + r * math.sin(phi))
        if building.contains(pos):
            return pos


def _attach_users(config, cells, buildings, place, rng) -> tuple[UserTerminal, ...]:
    lo, hi = config.users_per_sbs
    users = []
    for cell in cells:
        b = buildings[cell.building_id]
        for _ in range(int(rng.integers(lo, hi + 1))):
            users.append((cell, place(cell, b)))
    classes = traffic.assign_mix(len(users), config.traffic_mix, rng)
    return tuple(
        UserTerminal(i, cell.id, cell.building_id, pos, cls)
        for i, ((cell, pos), cls) in enumerate(zip(users, classes))
    )


def build_fixed_layout(config: ScenarioConfig, rng=None) -> Scenario:
    """K colocated SBSs (one per operator) at every building center."""
    if config.layout != FIXED:
        config = _replace(config, layout=FIXED)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    buildings = make_buildings(config)
    cells = []
    for b in buildings:
        for k in range(config.operators):
            cells.append(SmallCell(len(cells), k, b.id, b.center, config.tx_power_dbm))
    users = _attach_users(config, cells, buildings,
                          lambda cell, b: _uniform_in_building(b, rng), rng)
    return Scenario(FIXED, make_operators(config), buildings, tuple(cells), users,
                    config.prbs_per_operator, config.threshold, config.hotspot_radius_m)


def build_random_layout(config: ScenarioConfig, rng=None) -> Scenario:
    """Each operator independently deploys an SBS at every room center with
    probability ``deployment_probability``; users sit inside the hotspot radius."""
    if config.layout != RANDOM:
        config = _replace(config, layout=RANDOM)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    buildings = make_buildings(config)
    p = config.deployment_probability
    cells = []
    for b in buildings:
        sites = b.room_centers()
        deployed = rng.uniform(size=(config.operators, len(sites))) < p
        for s, site in enumerate(sites):
            for k in range(config.operators):
                if deployed[k, s]:
                    cells.append(SmallCell(len(cells), k, b.id, site, config.tx_power_dbm))
    radius = config.hotspot_radius_m
    users = _attach_users(config, cells, buildings,
                          lambda cell, b: _uniform_in_hotspot(cell.position, radius, b, rng), rng)
    return Scenario(RANDOM, make_operators(config), buildings, tuple(cells), users,
                    config.prbs_per_operator, config.threshold, config.hotspot_radius_m)


def build_layout(config: ScenarioConfig, rng=None) -> Scenario:
    if config.layout == FIXED:
        return build_fixed_layout(config, rng)
    return build_random_layout(config, rng)


def _replace(config: ScenarioConfig, **changes) -> ScenarioConfig:
    return dataclasses.replace(config, **changes)


def compute_adjacency(cells, threshold_m: float) -> np.ndarray:
    """A[i, j] = 1 iff i != j and the two SBSs are within ``threshold_m``."""
    n = len(cells)
    if n == 0:
        return np.zeros((0, 0), dtype=np.int8)
    pos = np.array([c.position for c in cells], dtype=float)
    dist = np.hypot(pos[:, None, 0] - pos[None, :, 0], pos[:, None, 1] - pos[None, :, 1])
    adj = (dist <= threshold_m + 1e-9).astype(np.int8)
    np.fill_diagonal(adj, 0)
    return adj


def connected_components(adjacency, labels=None) -> list[Graph]:
    """Maximal connected vertex sets, ordered by their lowest vertex.

    ``labels`` maps matrix rows to vertex ids (defaults to row indices).
    """
    adj = np.asarray(adjacency)
    n = adj.shape[0]
    labels = list(range(n)) if labels is None else list(labels)
    seen = [False] * n
    graphs = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        comp = []
        queue = deque([start])
        while queue:
            i = queue.popleft()
            comp.append(i)
            for j in np.flatnonzero(adj[i]):
                if not seen[j]:
                    seen[j] = True
                    queue.append(int(j))
        comp.sort()
        edges = tuple((labels[i], labels[j]) for i in comp for j in comp if i < j and adj[i, j])
        graphs.append(Graph(tuple(labels[i] for i in comp), edges))
    return graphs


def count_walls(pos_a, pos_b, building: Building) -> int:
    """Number of interior wall segments crossed by the straight path a -> b."""
    ax, ay = pos_a
    bx, by = pos_b
    dx, dy = bx - ax, by - ay
    n = 0
    for (x0, y0), (x1, y1) in building.walls():
        if y0 == y1:  # horizontal
            if dy == 0 or (ay - y0) * (by - y0) > 0:
                continue
            t = (y0 - ay) / dy
            x = ax + t * dx
            if min(x0, x1) - 1e-9 <= x <= max(x0, x1) + 1e-9:
                n += 1
        else:  # vertical
            if dx == 0 or (ax - x0) * (bx - x0) > 0:
                continue
            t = (x0 - ax) / dx
            y = ay + t * dy
            if min(y0, y1) - 1e-9 <= y <= max(y0, y1) + 1e-9:
                n += 1
    return n

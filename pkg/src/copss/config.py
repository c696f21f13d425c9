"""Load scenario and run parameters from a YAML (or JSON) file.

Layout of the file, every key optional::

    scenario: {layout: random, buildings: 21, users_per_sbs: [1, 2], ...}
    channel:  {pathloss: {A: 43.3, B: 11.5, C: 20}, shadowing_sigma_db: 4,
               evm_pct: 4, noise_figure_db: 9, coherence_prbs: 4}
    link:     {mcs_table: table.yaml, max_retransmissions: 3, fer_steepness_db: 1}
    traffic:  {full_buffer_pct: 10, constant_rate_pct: 50, multimedia_pct: 40,
               rates_mbps: {constant_rate: 1, multimedia: 4}}
    run:      {ttis: 2000, drops: 20, seed: 0, algorithm: none, cqi_mode: coordinated}
"""
from __future__ import annotations

import dataclasses
import os
from pathlib import Path

import yaml

from . import traffic
from .channel import ChannelConfig
from .engine import RunParams
from .link import LinkConfig
from .topology import ConfigError, ScenarioConfig

SEED_ENV = "COPSS_SEED"


def _known(cls, d: dict, section: str) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    return d


def _tuples(d: dict, keys) -> dict:
    return {k: tuple(v) if k in keys and isinstance(v, list) else v for k, v in d.items()}


def channel_from_dict(d: dict) -> ChannelConfig:
    d = dict(d or {})
    pl = d.pop("pathloss", None) or {}
    for short, name in (("A", "pathloss_a"), ("B", "pathloss_b"), ("C", "pathloss_c")):
        if short in pl:
            d[name] = float(pl[short])
    return ChannelConfig(**_known(ChannelConfig, d, "channel"))


def link_from_dict(d: dict, base: Path | None = None) -> LinkConfig:
    d = dict(d or {})
    if "mcs_table" in d:
        path = Path(d.pop("mcs_table"))
        if base is not None and not path.is_absolute():
            path = base / path
        d["mcs_table_path"] = str(path)
    return LinkConfig(**_known(LinkConfig, d, "link"))


def scenario_from_dict(d: dict) -> ScenarioConfig:
    d = _tuples(dict(d or {}), {"users_per_sbs", "sharing_factor", "traffic_mix"})
    return ScenarioConfig(**_known(ScenarioConfig, d, "scenario"))


def traffic_from_dict(d: dict | None):
    """(mix, (constant rate, multimedia) in bit/s); None where not given."""
    d = dict(d or {})
    keys = ("full_buffer_pct", "constant_rate_pct", "multimedia_pct")
    unknown = set(d) - set(keys) - {"rates_mbps"}
    if unknown:
        raise ConfigError(f"unknown traffic keys: {sorted(unknown)}")
    mix = None
    if any(k in d for k in keys):
        mix = tuple(float(d.get(k, 0.0)) / 100.0 for k in keys)
    rates = None
    if "rates_mbps" in d:
        r = d["rates_mbps"]
        rates = (float(r.get(traffic.CONSTANT_RATE, 1.0)) * 1e6, float(r.get(traffic.MULTIMEDIA, 4.0)) * 1e6)
    return mix, rates


def load_config(path=None, env=None) -> tuple[ScenarioConfig, RunParams]:
    """Parse a config file; ``COPSS_SEED`` in ``env`` overrides the seed."""
    env = os.environ if env is None else env
    raw, base = {}, None
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    unknown = set(raw) - {"scenario", "channel", "link", "traffic", "run"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        sc = dict(raw.get("scenario") or {})
        mix, rates = traffic_from_dict(raw.get("traffic"))
        if mix is not None:
            sc["traffic_mix"] = mix
        scenario = scenario_from_dict(sc)
        run = dict(raw.get("run") or {})
        _known(RunParams, run, "run")
        if rates is not None:
            run["rates_bps"] = rates
        run["channel"] = channel_from_dict(raw.get("channel"))
        run["link"] = link_from_dict(raw.get("link"), base)
        if "rates_bps" in run:
            run["rates_bps"] = tuple(run["rates_bps"])
        if env.get(SEED_ENV):
            run["seed"] = int(env[SEED_ENV])
        run.setdefault("seed", scenario.seed)
        params = RunParams(**run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return scenario, params

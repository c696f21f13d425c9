"""Command line front end: ``copss run | sweep | report``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, sharing, traffic
from .config import SEED_ENV, load_config, scenario_from_dict
from .engine import ContractViolation, params_from_dict, params_to_dict, run
from .link import CQI_MODES
from .metrics import MetricsStore, cdf, gain_table, mean_vs_sharing, percentile
from .topology import LAYOUTS, ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("copss")


def parse_axis(text: str) -> list[float]:
    """``0:1:0.25`` -> [0, 0.25, 0.5, 0.75, 1]; ``0,0.5,1`` -> [0, 0.5, 1]."""
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(np.floor((hi - lo) / step + 1e-9))
            return [round(lo + i * step, 10) for i in range(n + 1)]
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad axis {text!r}, expected start:stop:step or a comma list") from None


def _overrides(args, scenario, params):
    sc, rp = {}, {}
    for name, key in (("layout", "layout"), ("buildings", "buildings"), ("users_per_sbs", "users_per_sbs")):
        v = getattr(args, name, None)
        if v is not None:
            sc[key] = tuple(v) if isinstance(v, list) else v
    for name in ("algorithm", "cqi_mode", "ttis", "drops", "seed", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            rp[name] = v
    if getattr(args, "sharing", None) is not None and not isinstance(args.sharing, str):
        rp["sharing_factor"] = args.sharing
    try:
        if sc:
            scenario = dataclasses.replace(scenario, **sc)
        if rp:
            params = dataclasses.replace(params, **rp)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return scenario, params


def resolve(args):
    scenario, params = load_config(args.scenario, env={})
    scenario, params = _overrides(args, scenario, params)
    if os.environ.get(SEED_ENV):
        params = dataclasses.replace(params, seed=int(os.environ[SEED_ENV]))
    return dataclasses.replace(scenario, seed=params.seed), params


def manifest(scenario, params) -> dict:
    return {"copss_version": __version__, "scenario": dataclasses.asdict(scenario),
            "run": params_to_dict(params),
            "drop_seeds": [[params.seed, d] for d in range(params.drops)]}


def load_manifest(path):
    try:
        m = json.loads(Path(path).read_text())
        return scenario_from_dict(m["scenario"]), params_from_dict(m["run"])
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad manifest {path}: {exc}") from exc


def manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _execute(scenario, params, out: Path):
    store = run(scenario, params)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.to_csv(out)
    manifest_path(out).write_text(json.dumps(manifest(scenario, params), indent=2, sort_keys=True) + "\n")
    return store


def cmd_run(args) -> int:
    if args.manifest:
        scenario, params = load_manifest(args.manifest)
        if args.workers:
            params = dataclasses.replace(params, workers=args.workers)
    else:
        scenario, params = resolve(args)
    out = Path(args.out)
    store = _execute(scenario, params, out)
    print(f"{out}: {len(store)} samples, mean {store.mean() / 1e6:.3f} Mb/s")
    return EXIT_OK


def cmd_sweep(args) -> int:
    factors = parse_axis(args.sharing)
    algorithms = args.algorithms.split(",")
    modes = args.cqi_modes.split(",")
    for a in algorithms:
        if a not in sharing.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    for m in modes:
        if m not in CQI_MODES:
            raise ConfigError(f"unknown CQI mode {m!r}")
    scenario, params = resolve(args)
    out_dir = Path(args.out_dir)
    points = []
    for a in algorithms:
        for m in modes:
            stores = []
            for s in factors:
                p = dataclasses.replace(params, algorithm=a, cqi_mode=m, sharing_factor=s)
                out = out_dir / f"{a}_{m}_S{s:.2f}.csv"
                stores.append(_execute(scenario, p, out))
                print(out)
            for cls in traffic.CLASSES:
                for s, v in mean_vs_sharing(stores, cls):
                    points.append((a, m, cls, s, v))
    with open(out_dir / "mean_vs_sharing.csv", "w") as f:
        f.write("algorithm,cqi_mode,class,sharing_factor,mean_throughput_bps\n")
        for a, m, cls, s, v in points:
            f.write(f"{a},{m},{cls},{s!r},{v!r}\n")
    return EXIT_OK


def cmd_report(args) -> int:
    stores = []
    for path in args.results:
        try:
            stores.append(MetricsStore.from_csv(path))
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    store = MetricsStore([s for st in stores for s in st.samples])
    cls = args.traffic_class
    lines = []
    if args.cdf:
        lines.append("value,probability")
        lines += [f"{v!r},{p!r}" for v, p in cdf(store.values(cls))]
    if args.gain:
        try:
            gains = gain_table(MetricsStore.from_csv(args.gain), store, args.percentile)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        lines.append("class,gain_bps")
        lines += [f"{c},{g!r}" for c, g in gains.items() if cls is None or c == cls]
    if not args.cdf and not args.gain:
        lines.append("class,samples,mean_bps,percentile,percentile_bps")
        classes = [cls] if cls else sorted({s.traffic_class for s in store.samples})
        for c in classes:
            v = store.values(c)
            if v.size:
                lines.append(f"{c},{v.size},{v.mean()!r},{args.percentile!r},{percentile(v, args.percentile)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="copss", description="Co-primary spectrum sharing small-cell simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", help="YAML or JSON config file")
        p.add_argument("--layout", choices=LAYOUTS)
        p.add_argument("--buildings", type=int)
        p.add_argument("--users-per-sbs", type=int, nargs=2, metavar=("MIN", "MAX"))
        p.add_argument("--cqi-mode", choices=CQI_MODES)
        p.add_argument("--ttis", type=int)
        p.add_argument("--drops", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)

    p = sub.add_parser("run", help="simulate one configuration")
    common(p)
    p.add_argument("--algorithm", choices=sharing.ALGORITHMS)
    p.add_argument("--sharing", type=float, help="sharing factor for every operator")
    p.add_argument("--manifest", help="replay a manifest written by an earlier run")
    p.add_argument("--out", required=True, help="result CSV; the manifest goes next to it")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one result file per point of the axes product")
    common(p)
    p.add_argument("--sharing", default="0:1:0.25", help="start:stop:step or comma list")
    p.add_argument("--algorithms", default=sharing.NONE, help="comma list")
    p.add_argument("--cqi-modes", default="coordinated", help="comma list")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="CDF, percentile and gain summaries of result files")
    p.add_argument("results", nargs="+")
    p.add_argument("--cdf", action="store_true", help="emit CDF points")
    p.add_argument("--class", dest="traffic_class", choices=traffic.CLASSES)
    p.add_argument("--percentile", type=float, default=0.05)
    p.add_argument("--gain", metavar="BASELINE", help="gain of the results over this baseline file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"copss: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"copss: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

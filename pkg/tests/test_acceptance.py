"""Acceptance criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines; the slow
statistical criteria (8 to 10) share cached simulation runs.
"""
import functools
import itertools
import math
import time

import networkx as nx
import numpy as np
import pytest
from scipy import stats

from copss import cli, engine, sharing
from copss.channel import apply_evm
from copss.engine import RunParams
from copss.link import COORDINATED, UNCOORDINATED, assumed_interferers, to_db
from copss.scheduling import SpectrumGrid
from copss.sharing import SbsReport
from copss.topology import FIXED, RANDOM, ScenarioConfig, build_fixed_layout
from sharing_cases import check_case, random_case

# desk-scale run sizes for the statistical criteria
DROPS = 20
FIXED_TTIS = 2000
RANDOM_TTIS = 1000
FIXED_BUILDINGS = 7
RANDOM_BUILDINGS = 3
CONFIDENCE = 0.95


def verdict(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------- statistics

def _paired(x, y):
    keys = sorted(k for k in x if k in y and np.isfinite(x[k]) and np.isfinite(y[k]))
    return np.array([x[k] for k in keys]), np.array([y[k] for k in keys])


def paired_bounds(x, y, scale=1.0):
    """One-sided 95% bounds on the mean of x - scale*y over common drops."""
    a, b = _paired(x, y)
    d = a - scale * b
    n = d.size
    half = stats.t.ppf(CONFIDENCE, n - 1) * d.std(ddof=1) / math.sqrt(n)
    return d.mean() - half, d.mean() + half, n


def greater(x, y, scale=1.0):
    """x > scale*y with 95% confidence (lower bound of the paired gap above 0)."""
    lo, _, _ = paired_bounds(x, y, scale)
    return lo > 0, lo


def not_below(x, y):
    """x >= y is not rejected at 95% (upper bound of the paired gap x - y at least 0)."""
    _, hi, _ = paired_bounds(x, y)
    return hi >= 0, hi


def welch_greater(x, y):
    a = np.array([v for v in x.values() if np.isfinite(v)])
    b = np.array([v for v in y.values() if np.isfinite(v)])
    res = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    return res.pvalue < 1 - CONFIDENCE, res.pvalue


# ---------------------------------------------------------------- cached runs

@functools.lru_cache(maxsize=None)
def simulate(layout, algorithm, s, cqi_mode=COORDINATED, users=(1, 2)):
    fixed = layout == FIXED
    cfg = ScenarioConfig(layout=layout, buildings=FIXED_BUILDINGS if fixed else RANDOM_BUILDINGS,
                         users_per_sbs=users)
    p = RunParams(ttis=FIXED_TTIS if fixed else RANDOM_TTIS, drops=DROPS, algorithm=algorithm,
                  sharing_factor=s, cqi_mode=cqi_mode)
    return engine.run(cfg, p)


def fb(store):
    return store.per_drop_mean("full_buffer")


def mm(store):
    return store.per_drop_mean("multimedia")


def mb(d):
    v = [x for x in d.values() if np.isfinite(x)]
    return np.mean(v) / 1e6


# ---------------------------------------------------------------- exact criteria

def test_criterion_01_evm_saturation():
    x = np.logspace(-3, 12, 20001)
    cap = to_db(apply_evm(x, 4.0)).max()
    at30 = to_db(apply_evm(1000.0, 4.0))
    ok = cap <= 27.96 and abs(at30 - 25.85) <= 0.01
    verdict(1, ok, f"max post-EVM SINR {cap:.4f} dB (limit 27.96), 30 dB input -> {at30:.4f} dB")


def test_criterion_02_cqi_example_count():
    grid = SpectrumGrid(3, 4, (0.5, 0.5, 0.5))

    def clean(mode):
        mask = assumed_interferers(mode, grid, np.array([0]), np.array([0.5]), np.array([[0, 1, 2]]),
                                   np.array([[0.5, 0.5, 0.5]]), np.array([0]))[0]
        return int((~mask.any(axis=0)).sum())
    unc, coo = clean(UNCOORDINATED), clean(COORDINATED)
    verdict(2, unc == 2 and coo == 7, f"uncoordinated {unc} (want 2), coordinated {coo} (want 7)")


def test_criterion_03_claim_example_grants():
    grid = SpectrumGrid(3, 4, (1.0, 1.0, 1.0))
    reports = [SbsReport(0, 0, 1.0), SbsReport(1, 1, 1.0), SbsReport(2, 2, 0.5)]
    full = np.ones((3, 3), int) - np.eye(3, dtype=int)
    cut = full.copy()
    cut[1, 2] = cut[2, 1] = 0
    band = list(grid.band(2))
    idx = lambda prbs: tuple(band.index(p) + 1 for p in prbs)  # 1-based index in OP3's band
    g = sharing.algo3_all(full, reports, grid)
    g_cut = sharing.algo3_all(cut, reports, grid)
    g4 = sharing.run_algorithm(sharing.CENTRALIZED_GRAPH, cut, reports, grid)
    ok = (idx(g[0].prbs) == (3,) and idx(g[1].prbs) == (4,)
          and 3 in set(idx(g_cut[0].prbs)) & set(idx(g_cut[1].prbs))
          and not set(g4[0].prbs) & set(g4[1].prbs))
    verdict(3, ok, f"full graph OP1 {idx(g[0].prbs)} OP2 {idx(g[1].prbs)}; cut edge OP1 {idx(g_cut[0].prbs)} "
                   f"OP2 {idx(g_cut[1].prbs)}; after avoidance {idx(g4[0].prbs)} / {idx(g4[1].prbs)}")


def test_criterion_04_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    problems, n = [], 100_000
    for i in range(n):
        problems += check_case(*random_case(rng), rng_seed=i)
    dt = time.perf_counter() - t0
    verdict(4, not problems and dt < 60, f"{n} report sets, {len(problems)} mismatches, {dt:.1f} s (limit 60 s)"
            + (f"; first: {problems[0]}" if problems else ""))


def test_criterion_05_orthogonality_exhaustive():
    q, n_ops = 4, 3
    grid = SpectrumGrid(n_ops, q, (1.0,) * n_ops)
    levels = [b / q for b in range(q + 1)]
    graphs = [g for g in nx.graph_atlas_g() if 1 <= g.number_of_nodes() <= 5 and nx.is_connected(g)]
    t0 = time.perf_counter()
    cases = collisions = 0
    for g in graphs:
        n = g.number_of_nodes()
        nbrs = [sorted(g.neighbors(v)) for v in range(n)]
        edges = list(g.edges())
        for ops in itertools.product(range(n_ops), repeat=n):
            options = [[SbsReport(v, ops[v], b) for b in levels] for v in range(n)]
            for reports in itertools.product(*options):
                grants = sharing.algo4_centralized(nbrs, reports, grid)
                cases += 1
                if len(grants) > 1:
                    for a, b in edges:
                        ga, gb = grants.get(a), grants.get(b)
                        if ga and gb and set(ga.prbs) & set(gb.prbs):
                            collisions += 1
    dt = time.perf_counter() - t0
    verdict(5, collisions == 0 and dt < 300,
            f"{len(graphs)} connected graphs, {cases} cases, {collisions} adjacent collisions, "
            f"{dt:.0f} s (limit 300 s)")


def test_criterion_06_equivalence_fully_connected():
    q = 16
    full = np.ones((3, 3), int) - np.eye(3, dtype=int)
    levels = [b / q for b in range(q + 1)]
    mismatches = cases = 0
    for s in levels:
        grid = SpectrumGrid(3, q, (s,) * 3)
        for bwu in itertools.product(levels, repeat=3):
            reports = [SbsReport(i, i, bwu[i]) for i in range(3)]
            out = [sharing.run_algorithm(a, full, reports, grid)
                   for a in (sharing.EQUAL, sharing.DECENTRALIZED, sharing.CENTRALIZED_GRAPH)]
            counts = [{v: sum(g.counts.values()) for v, g in o.items() if g} for o in out]
            cases += 1
            mismatches += not (counts[0] == counts[1] == counts[2])
    verdict(6, mismatches == 0, f"{cases} (S, BWU) combinations, {mismatches} count mismatches")


def test_criterion_07_full_load_nullity():
    sc = build_fixed_layout(ScenarioConfig(layout=FIXED, buildings=3, sharing_factor=1.0),
                            np.random.default_rng(0))
    grid = SpectrumGrid(3, sc.prbs_per_operator, sc.sharing_factors)
    rng = np.random.default_rng(0)
    loaned = 0
    for b in sc.buildings:
        cells = sc.cells_in(b.id)
        reports = [SbsReport(c.id, c.operator_id, 1.0) for c in cells]
        adj = sc.adjacency(b.id)
        for name in (sharing.RANDOM, sharing.EQUAL, sharing.DECENTRALIZED):
            for _ in range(10 if name == sharing.RANDOM else 1):
                grants = sharing.run_algorithm(name, adj, reports, grid, rng)
                loaned += sum(g.loaned for g in grants.values() if g)
    verdict(7, loaned == 0, f"{loaned} PRBs loaned with every SBS at BWU=1 (want 0)")


# ---------------------------------------------------------------- statistical criteria

@pytest.mark.slow
def test_criterion_08_coordination_necessity():
    unc = {s: simulate(FIXED, sharing.EQUAL, s, UNCOORDINATED) for s in (0.0, 0.5, 1.0)}
    coo = {s: simulate(FIXED, sharing.EQUAL, s, COORDINATED) for s in (0.0, 0.5, 1.0)}
    drop_ok, drop_lo = greater(mm(unc[0.0]), mm(unc[1.0]))
    gain_ok, gain_lo = greater(fb(coo[1.0]), fb(coo[0.0]), scale=1.25)
    line = ("uncoordinated multimedia S=0/0.5/1: "
            + "/".join(f"{mb(mm(unc[s])):.2f}" for s in (0.0, 0.5, 1.0))
            + f" Mb/s (S=0 minus S=1 lower bound {drop_lo / 1e6:.2f}); coordinated full buffer: "
            + "/".join(f"{mb(fb(coo[s])):.2f}" for s in (0.0, 0.5, 1.0))
            + f" Mb/s (S=1 minus 1.25*S=0 lower bound {gain_lo / 1e6:.2f})")
    verdict(8, drop_ok and gain_ok, line)


ORDER_FIXED = (sharing.NONE, sharing.RANDOM, sharing.EQUAL)
ORDER_RANDOM = (sharing.NONE, sharing.RANDOM, sharing.EQUAL, sharing.DECENTRALIZED, sharing.CENTRALIZED_GRAPH)


@pytest.mark.slow
def test_criterion_09_algorithm_ordering():
    parts, ok = [], True
    for layout, names in ((FIXED, ORDER_FIXED), (RANDOM, ORDER_RANDOM)):
        res = {a: fb(simulate(layout, a, 1.0)) for a in names}
        checks = []
        for i, (lo_name, hi_name) in enumerate(zip(names, names[1:])):
            strict = i < 2  # none < random < equal; the later steps are "<="
            good, bound = (greater if strict else not_below)(res[hi_name], res[lo_name])
            ok &= good
            rel = "<" if strict else "<="
            checks.append(f"{lo_name}{rel}{hi_name} {'ok' if good else 'violated'} ({bound / 1e6:+.2f})")
        means = ", ".join(f"{a} {mb(res[a]):.2f}" for a in names)
        parts.append(f"{layout}: {means} Mb/s; " + "; ".join(checks))
    verdict(9, ok, " | ".join(parts))


LOADS = ((1, 2), (1, 4), (1, 6))


@pytest.mark.slow
def test_criterion_10_load_degradation():
    res = {(a, u): fb(simulate(RANDOM, a, 1.0, COORDINATED, u)) for a in ORDER_RANDOM for u in LOADS}
    problems = []
    for a in ORDER_RANDOM:
        for hi, lo in zip(LOADS, LOADS[1:]):
            good, p = welch_greater(res[(a, hi)], res[(a, lo)])
            if not good:
                problems.append(f"{a} {hi}->{lo} p={p:.3f}")
    for a in ORDER_RANDOM[1:]:
        for u in LOADS:
            good, bound = greater(res[(a, u)], res[(sharing.NONE, u)])
            if not good:
                problems.append(f"{a} not above none at {u} ({bound / 1e6:+.2f})")
    table = "; ".join(f"{a} " + "/".join(f"{mb(res[(a, u)]):.2f}" for u in LOADS) for a in ORDER_RANDOM)
    verdict(10, not problems, f"full buffer Mb/s at loads 1-2/1-4/1-6: {table}"
            + (f"; problems: {', '.join(problems)}" if problems else ""))


def test_criterion_11_manifest_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv("COPSS_SEED", raising=False)
    same = []
    for name, extra in (("random", ["--layout", "random", "--algorithm", "centralized_graph", "--sharing", "0.5"]),
                        ("fixed", ["--layout", "fixed", "--algorithm", "equal", "--sharing", "1",
                                   "--cqi-mode", "uncoordinated"])):
        first = tmp_path / f"{name}.csv"
        assert cli.main(["run", "--buildings", "2", "--drops", "3", "--ttis", "400", "--seed", "5",
                         *extra, "--out", str(first)]) == 0
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name}_replay{rep}.csv"
            assert cli.main(["run", "--manifest", str(cli.manifest_path(first)), "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        same.append(outs[0] == outs[1] == first.read_bytes())
    verdict(11, all(same), f"replays byte-identical for {sum(same)}/{len(same)} configurations")

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from copss.channel import sinr_per_prb
from copss.link import (ACK, COORDINATED, DROPPED, NACK, NO_SHARING, UNCOORDINATED, CqiReport, HarqBank,
                        HarqProcess, McsTable, assumed_interferers, bits_per_prb, decode, effective_sinr,
                        estimate_cqi, frame_error_probability, latest_report, select_mcs, to_db)
from copss.scheduling import SpectrumGrid

TABLE = McsTable.default()


def cqi_example_mask(mode, bwu2=0.5, bwu3=0.5, own_bwu=0.5):
    """UE of OP0 served by SBS1; SBS2 (OP1) and SBS3 (OP2) detected."""
    grid = SpectrumGrid(3, 4, (0.5, 0.5, 0.5))
    return assumed_interferers(mode, grid, np.array([0]), np.array([own_bwu]), np.array([[0, 1, 2]]),
                               np.array([[own_bwu, bwu2, bwu3]]), np.array([0]))[0]


def clean_prbs(mask, mode):
    clean = ~mask.any(axis=0)
    if mode == NO_SHARING:
        clean[4:] = False  # other operators' PRBs are not reported at all
    return int(clean.sum())


def test_cqi_example_uncoordinated_two_clean():
    assert clean_prbs(cqi_example_mask(UNCOORDINATED), UNCOORDINATED) == 2


def test_cqi_example_coordinated_count():
    # own band 4, OP1 free 2 (anchored at band end), OP2 free 2 (anchored at start)
    assert clean_prbs(cqi_example_mask(COORDINATED), COORDINATED) == 8
    assert clean_prbs(cqi_example_mask(COORDINATED, bwu3=0.75), COORDINATED) == 7


def test_coordinated_full_load_equals_uncoordinated():
    a = cqi_example_mask(COORDINATED, 1.0, 1.0)
    b = cqi_example_mask(UNCOORDINATED)
    assert (a == b).all()


def test_unknown_bwu_falls_back_to_worst_case():
    a = cqi_example_mask(COORDINATED, math.nan, math.nan)
    assert (a == cqi_example_mask(UNCOORDINATED)).all()


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4), st.integers(0, 10_000))
def test_zero_sharing_modes_agree(o, b2, b3, seed):
    grid = SpectrumGrid(3, 4, (0.0, 0.0, 0.0))
    rng = np.random.default_rng(seed)
    rx = rng.uniform(1e-9, 1e-7, 3)
    fad = rng.exponential(size=(3, 2, 12))
    out = [estimate_cqi(0, m, grid, rx, fad, 0, 0, o / 4, [0, 1, 2], [o / 4, b2 / 4, b3 / 4], 1e-10, 4.0, 6).sinr
           for m in (NO_SHARING, UNCOORDINATED, COORDINATED)]
    for s in out[1:]:
        assert np.allclose(s[:4], out[0][:4])


@given(st.integers(0, 16), st.integers(0, 16), st.sampled_from([0.0, 0.25, 0.5, 1.0]), st.integers(0, 999))
def test_worst_case_ordering(b1, b2, s, seed):
    """coordinated >= uncoordinated >= truth whenever the truth is covered by the worst case."""
    grid = SpectrumGrid(3, 16, (s, s, s))
    rng = np.random.default_rng(seed)
    rx = rng.uniform(1e-9, 1e-7, (1, 3))
    fad = rng.exponential(size=(1, 3, 2, 48))
    args = (grid, np.array([0]), np.array([0.5]), np.array([[0, 1, 2]]), np.array([[0.5, b1 / 16, b2 / 16]]),
            np.array([0]))
    unc = assumed_interferers(UNCOORDINATED, *args)
    coo = assumed_interferers(COORDINATED, *args)
    assert not (coo & ~unc).any()
    truth = unc & (rng.uniform(size=unc.shape) < 0.5)
    f = lambda m: sinr_per_prb(rx, fad, m, np.array([0]), 1e-10, 4.0)
    assert (f(coo) >= f(unc) - 1e-12).all()
    assert (f(unc) <= f(truth) + 1e-12).all()


def test_no_sharing_reports_only_own_band():
    grid = SpectrumGrid(3, 4, (1.0, 1.0, 1.0))
    rep = estimate_cqi(7, NO_SHARING, grid, [1e-8, 1e-9, 1e-9], np.ones((3, 2, 12)), 0, 1,
                       0.0, [1, 0, 2], [0, 0, 0], 1e-12, 4.0, tti=12)
    assert np.isnan(rep.sinr[:4]).all() and np.isnan(rep.sinr[8:]).all()
    assert not np.isnan(rep.sinr[4:8]).any()
    assert (rep.generated_tti, rep.deliver_tti) == (12, 14)


def test_latest_report_respects_delay():
    reps = [CqiReport(0, np.zeros(1), t, t + 2) for t in (0, 6, 12)]
    assert latest_report(reps, 1) is None
    assert latest_report(reps, 8).generated_tti == 6
    assert latest_report(reps, 13).generated_tti == 6
    assert latest_report(reps, 14).generated_tti == 12


def test_effective_sinr():
    assert effective_sinr([5.0, 7.0], [1]) == 7.0
    assert effective_sinr([100.0, 300.0, 1.0], [0, 1]) == 200.0
    assert effective_sinr([100.0, 300.0, 1.0], [1, 0]) == 200.0
    with pytest.raises(ValueError):
        effective_sinr([1.0], [])


def test_select_mcs_edges():
    assert select_mcs(40.0).index == 15
    assert select_mcs(-30.0).index == 1
    for lvl in TABLE.levels:
        assert select_mcs(lvl.threshold_db).index == lvl.index


@given(st.floats(-30, 40), st.floats(-30, 40))
def test_select_mcs_monotone(a, b):
    lo, hi = sorted((a, b))
    assert select_mcs(lo).index <= select_mcs(hi).index


def test_table_scale_and_load(tmp_path):
    # 16 PRBs at the top MCS is about 10 Mb/s
    assert 9.5e6 < 16 * bits_per_prb(15, TABLE) * 1000 < 10.5e6
    p = tmp_path / "t.yaml"
    p.write_text("- {index: 1, efficiency: 0.5, threshold_db: 0}\n- {index: 2, efficiency: 1.0, threshold_db: 3}\n")
    t = McsTable.load(p)
    assert len(t) == 2 and t[2].efficiency == 1.0
    p.write_text("- {index: 1, efficiency: 1.0, threshold_db: 0}\n- {index: 2, efficiency: 0.5, threshold_db: 3}\n")
    with pytest.raises(ValueError):
        McsTable.load(p)


def test_fer_ten_percent_at_threshold():
    assert math.isclose(float(frame_error_probability(5.0, 5.0)), 0.1)
    assert frame_error_probability(40.0, 5.0) < 1e-9
    assert frame_error_probability(-30.0, 5.0) > 1 - 1e-9


def test_decode_ack_nack_and_drop():
    rng = np.random.default_rng(0)
    h = HarqProcess(max_retransmissions=3)
    h.start(1000, 10)
    assert decode(h, 10 ** 4, 10, rng) == ACK and not h.active
    h.start(1000, 15)
    outcomes = [decode(h, 1e-4, 15, rng) for _ in range(4)]
    assert outcomes == [NACK, NACK, NACK, DROPPED] and not h.active
    with pytest.raises(ValueError):
        decode(h, 1.0, 15, rng)


def test_chase_combining_doubles():
    h = HarqProcess()
    h.start(1000, 15)
    decode(h, 2.0, 15, np.random.default_rng(1))
    decode(h, 2.0, 15, np.random.default_rng(1))
    assert h.accumulated_sinr == 4.0
    assert math.isclose(to_db(h.accumulated_sinr) - to_db(2.0), 10 * math.log10(2))


def test_bank_matches_scalar():
    bank = HarqBank(3)
    bank.start(np.arange(3), np.array([100.0, 200.0, 300.0]), np.array([5, 5, 15]))
    bits, acked, dropped = bank.attempt(np.arange(3), np.array([1e3, 1e3, 1e-3]), np.array([0.5, 0.5, 0.5]), TABLE)
    assert bits.tolist() == [100.0, 200.0, 0.0]
    assert acked.tolist() == [True, True, False] and not dropped.any()
    assert bank.active.tolist() == [False, False, True] and bank.retx[2] == 1

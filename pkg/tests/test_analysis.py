import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepframe import analysis as A
from deepframe.codec import CATEGORIES, Mode
from deepframe.video_io import Frame
from oracles import bd_rate_oracle


def _curve(rates, psnrs):
    return [A.RDPoint(r, q) for r, q in zip(rates, psnrs)]


ANCHOR = _curve([1000, 1800, 3200, 6000], [30.0, 33.0, 36.0, 39.0])


def test_psnr_examples():
    a = np.zeros((4, 4))
    assert A.psnr(a, a) == math.inf
    b = a.copy()
    b[0, 0] = 255
    # MSE = 255^2 / 16  ->  10 log10(16)
    assert A.psnr(a, b) == pytest.approx(10 * math.log10(16))
    f = Frame.blank(16, 16, value=100)
    g = Frame.blank(16, 16, value=110)
    assert A.psnr(f, g) == pytest.approx(10 * math.log10(255**2 / 100))
    with pytest.raises(ValueError):
        A.psnr(a, np.zeros((4, 5)))


def test_mean_psnr_skips_identical_frames():
    f = Frame.blank(16, 16, value=100)
    g = Frame.blank(16, 16, value=110)
    assert A.mean_psnr([f, f], [f, g]) == pytest.approx(A.psnr(f, g))
    assert A.mean_psnr([f], [f]) == math.inf


def test_ms_ssim_identity_and_bounds(rng):
    a = rng.integers(0, 256, size=(176, 176)).astype(float)
    assert A.ms_ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    noisy = np.clip(a + rng.normal(0, 20, a.shape), 0, 255)
    v = A.ms_ssim(a, noisy)
    assert 0.0 <= v < 1.0
    worse = np.clip(a + rng.normal(0, 60, a.shape), 0, 255)
    assert A.ms_ssim(a, worse) < v


def test_ms_ssim_symmetric(rng):
    a = rng.integers(0, 256, size=(180, 200)).astype(float)
    b = np.clip(a + rng.normal(0, 10, a.shape), 0, 255)
    assert A.ms_ssim(a, b) == pytest.approx(A.ms_ssim(b, a), rel=1e-12)


def test_ms_ssim_small_frame_hint(rng):
    a = rng.random((64, 64)) * 255
    with pytest.raises(ValueError, match="scales=3"):
        A.ms_ssim(a, a)
    assert A.ms_ssim(a, a, scales=3) == pytest.approx(1.0)


def test_bd_rate_identical_and_uniform_shift():
    assert A.bd_rate(ANCHOR, ANCHOR) == pytest.approx(0.0, abs=1e-9)
    test = [A.RDPoint(0.9 * p.bitrate, p.quality) for p in ANCHOR]
    assert A.bd_rate(ANCHOR, test) == pytest.approx(-10.0, abs=1e-9)


def test_bd_rate_accepts_pairs_and_sign():
    pairs = [(p.bitrate * 1.2, p.quality) for p in ANCHOR]
    assert A.bd_rate(ANCHOR, pairs) == pytest.approx(20.0, abs=1e-9)


def test_bd_rate_matches_integration_oracle(rng):
    for _ in range(20):
        q = np.sort(rng.uniform(28, 42, 4))
        r = np.sort(rng.uniform(200, 5000, 4))
        q2 = np.sort(q + rng.uniform(-1, 1, 4))
        r2 = np.sort(r * rng.uniform(0.8, 1.2, 4))
        a, t = list(zip(r, q)), list(zip(r2, q2))
        if len(set(q2)) < 4:
            continue
        assert A.bd_rate(a, t) == pytest.approx(bd_rate_oracle(a, t), abs=0.05)


def test_bd_rate_infinite_quality_warns_and_is_dropped():
    pts = ANCHOR + [A.RDPoint(9000, math.inf)]
    with pytest.warns(RuntimeWarning, match="infinite"):
        assert A.bd_rate(pts, ANCHOR) == pytest.approx(0.0, abs=1e-9)


def test_bd_rate_errors():
    far = _curve([100, 200, 300, 400], [50.0, 51.0, 52.0, 53.0])
    with pytest.raises(ValueError, match="overlap"):
        A.bd_rate(ANCHOR, far)
    with pytest.raises(ValueError):
        A.RDPoint(0.0, 30.0)
    with pytest.raises(ValueError, match="distinct"):
        A.bd_rate(_curve([1, 2], [30.0, 30.0]), ANCHOR)


def test_bit_accounting_telescopes():
    anchor = {"Blk": 100, "Inter": 300, "Intra": 50, "Resi": 550, "Skip": 0}
    proposed = {"Blk": 110, "DNN": 20, "Inter": 250, "Intra": 40, "Resi": 520, "Skip": 5}
    acc = A.bit_accounting(A.BitReport(anchor, proposed))
    assert acc["DNN"] == pytest.approx(2.0)
    assert acc["SAO"] == 0.0
    total_a, total_p = sum(anchor.values()), sum(proposed.values())
    assert abs(acc["Sum"] - (total_p - total_a) / total_a * 100) < 1e-9


@given(st.lists(st.integers(0, 10**7), min_size=7, max_size=7), st.lists(st.integers(0, 10**7), min_size=7,
                                                                       max_size=7))
def test_bit_accounting_identity_property(a, p):
    if sum(a) == 0:
        return
    rep = A.BitReport(dict(zip(CATEGORIES, a)), dict(zip(CATEGORIES, p)))
    acc = A.bit_accounting(rep)
    assert abs(acc["Sum"] - (sum(p) - sum(a)) / sum(a) * 100) < 1e-9


def test_bit_report_validation():
    with pytest.raises(ValueError, match="unknown"):
        A.BitReport({"Foo": 1}, {})
    with pytest.raises(ValueError, match="zero"):
        A.bit_accounting(A.BitReport({}, {"Blk": 1}))


def test_mode_area_examples():
    m = np.array([[Mode.INTRA, Mode.DFP], [Mode.SKIP, Mode.INTER_BI]])
    area = A.mode_area([m])
    assert area == {"Intra": 25.0, "Inter": 25.0, "Skip": 25.0, "DFP": 25.0}
    area = A.mode_area([m, np.full((2, 2), Mode.DFP)], block_sizes=[16, 32])
    assert area["DFP"] == pytest.approx(100 * (256 + 4 * 1024) / (4 * 256 + 4 * 1024))
    assert sum(area.values()) == pytest.approx(100.0)


def test_timing_ratio():
    assert A.timing_ratio(150.0, 100.0) == 150.0
    with pytest.raises(ValueError):
        A.timing_ratio(1.0, 0.0)


def test_report_formatting():
    rows = A.bd_rows([("A", "s1", "LP", -1.0, -0.5, 0.2), ("A", "s2", "LP", -3.0, -1.5, 0.0)])
    assert rows[-1][:3] == ("Overall", "", "LP")
    assert rows[-1][3] == pytest.approx(-2.0)
    text = A.format_table(A.BD_HEADER, rows)
    assert text.splitlines()[0].split() == list(A.BD_HEADER)
    csv_text = A.to_csv(A.BD_HEADER, rows)
    assert csv_text.splitlines()[1] == "A,s1,LP,-1.000000,-0.500000,0.200000"
    assert A.area_rows({37: {"Intra": 1.0, "Inter": 2.0, "Skip": 3.0, "DFP": 94.0}})[3] == (37, "DFP", 94.0)
    assert [r[0] for r in A.timing_rows(2, 1, 3, 1)] == ["ΔT_Enc", "ΔT_Dec"]
    assert A.BITS_HEADER[-1] == "Sum" and len(A.bits_rows([("s", A.BitReport({"Blk": 1}, {"Blk": 2}))])[0]) == 9

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepframe.codec import (
    CATEGORIES,
    CodingConfig,
    DecodeError,
    Mode,
    WeightsMismatch,
    coding_order,
    decode,
    encode,
    lagrangian,
    parse_header,
    select_dfp_references,
)
from deepframe.codec import entropy as E
from deepframe.codec import gop, intra, motion, transform
from deepframe.codec.blocks import RDContext
from deepframe.codec.syntax import BlockContext, BlockDecision, decode_block_syntax, encode_block_syntax
from deepframe.predictor import FramePredictor, NetConfig
from deepframe.video_io import Frame, SyntheticSpec, generate_synthetic
from codec_helpers import roundtrip
from oracles import exp_golomb


def _clip(frames=5, size=(48, 32), velocity=(1.5, -0.5), seed=0, motion_kind="global"):
    spec = SyntheticSpec(seed=seed, motion=motion_kind, velocity=velocity, object_velocity=(-2.0, 1.0),
                         object_size=(16, 8), frames=frames, width=size[0], height=size[1], smoothness=1.0)
    return generate_synthetic(spec)[0]


@pytest.fixture(scope="module")
def toy_model():
    return FramePredictor(NetConfig.reduced(), seed=0)


# ---------------------------------------------------------------------------
# entropy


def test_exp_golomb_examples():
    assert E.ue_bits(0) == "1"
    assert E.ue_bits(1) == "010"
    assert E.ue_bits(3) == "00100"
    assert E.se_bits(1) == "010" and E.se_bits(-1) == "011"
    with pytest.raises(ValueError):
        E.ue_bits(-1)


@given(st.integers(0, 10**6))
def test_exp_golomb_matches_oracle(v):
    assert E.ue_bits(v) == exp_golomb(v)
    assert E.ue_len(v) == len(exp_golomb(v))


@given(st.integers(-10**6, 10**6))
def test_signed_mapping_is_a_bijection(v):
    assert E.se_unmap(E.se_map(v)) == v
    assert E.se_map(v) >= 0


def test_syntax_elements_roundtrip_with_exact_bit_accounting(rng):
    ops = []
    w = E.SyntaxWriter()
    for _ in range(100000):
        kind = int(rng.integers(0, 4))
        cat = CATEGORIES[int(rng.integers(0, len(CATEGORIES)))]
        if kind == 0:
            ctx, bit = int(rng.integers(0, E.N_CONTEXTS)), int(rng.random() < 0.2)
            w.flag(ctx, bit, cat)
            ops.append((kind, cat, ctx, bit))
        elif kind == 1:
            v = int(rng.geometric(0.3)) - 1
            w.ue(v, cat)
            ops.append((kind, cat, None, v))
        elif kind == 2:
            v = int(rng.integers(-300, 301))
            w.se(v, cat)
            ops.append((kind, cat, None, v))
        else:
            v = int(rng.integers(0, 256))
            w.fixed(v, 8, cat)
            ops.append((kind, cat, None, v))
    data = w.finish()
    assert w.total_bits == len(data) * 8
    r = E.SyntaxReader(data)
    for kind, cat, ctx, v in ops:
        got = (r.flag(ctx, cat) if kind == 0 else r.ue(cat) if kind == 1 else r.se(cat) if kind == 2
               else r.fixed(8, cat))
        assert got == v
    r.finish()
    assert r.bits == w.bits


def test_truncated_payload_reports_offset():
    w = E.SyntaxWriter()
    for v in range(200):
        w.ue(v, "Resi")
    data = w.finish()
    r = E.SyntaxReader(data[:10], base=100)
    with pytest.raises(DecodeError) as info:
        for _ in range(200):
            r.ue("Resi")
    assert info.value.offset >= 100
    assert "at byte" in str(info.value)


# ---------------------------------------------------------------------------
# transform


@pytest.mark.parametrize("n", [4, 8, 16])
def test_dct_is_orthonormal_and_invertible(rng, n):
    m = transform.dct_matrix(n)
    np.testing.assert_allclose(m @ m.T, np.eye(n), atol=1e-12)
    x = rng.normal(size=(n, n)) * 50
    np.testing.assert_allclose(transform.inverse_dct(transform.forward_dct(x)), x, atol=1e-10)


def test_dct_of_constant_is_dc_only():
    c = transform.forward_dct(np.full((8, 8), 10.0))
    assert c[0, 0] == pytest.approx(80.0)
    c[0, 0] = 0
    assert np.abs(c).max() < 1e-12


@given(st.integers(1, 51), st.integers(0, 2**31 - 1))
def test_quantisation_error_bounded_by_half_step(qp, seed):
    r = np.random.default_rng(seed)
    res = r.integers(-255, 256, size=(8, 8))
    levels = transform.transform_quantize(res, qp)
    coef = transform.forward_dct(res)
    assert np.abs(coef - levels * transform.qstep(qp)).max() <= transform.qstep(qp) / 2 + 1e-9


def test_qp0_is_lossless(rng):
    res = rng.integers(-255, 256, size=(16, 16))
    assert np.array_equal(transform.dequantize_inverse(transform.transform_quantize(res, 0), 0), res)


def test_qstep_examples():
    assert transform.qstep(4) == 1.0
    assert transform.qstep(10) == 2.0
    assert transform.qstep(22) == pytest.approx(8.0)


def test_zigzag_start():
    assert transform.zigzag(4)[:6].tolist() == [0, 1, 4, 8, 5, 2]
    assert sorted(transform.zigzag(8).tolist()) == list(range(64))


@given(st.integers(0, 2**31 - 1))
def test_run_levels_roundtrip(seed):
    r = np.random.default_rng(seed)
    lv = np.where(r.random((8, 8)) < 0.15, r.integers(-9, 10, size=(8, 8)), 0)
    assert np.array_equal(transform.from_run_levels(transform.run_levels(lv), 8), lv)


def test_run_level_overflow_rejected():
    with pytest.raises(ValueError):
        transform.from_run_levels([(63, 1), (0, 1)], 8)


# ---------------------------------------------------------------------------
# intra and motion


def test_intra_predictions():
    rec = np.zeros((32, 32), np.uint8)
    rec[15, 16:32] = 100
    rec[16:32, 15] = np.arange(16)
    assert (intra.predict(rec, 16, 16, 16, intra.VERTICAL) == 100).all()
    assert intra.predict(rec, 16, 16, 16, intra.HORIZONTAL)[:, 3].tolist() == list(range(16))
    assert intra.predict(rec, 16, 16, 16, intra.DC)[0, 0] == (1600 + 120 + 16) // 32
    assert (intra.predict(rec, 0, 0, 16, intra.DC) == intra.UNAVAILABLE).all()


@given(st.integers(-20, 20), st.integers(-20, 20), st.sampled_from([1, 2]), st.integers(0, 2**31 - 1))
def test_phase_planes_match_direct_interpolation(mvx, mvy, frac_bits, seed):
    r = np.random.default_rng(seed)
    plane = r.integers(0, 256, size=(24, 24), dtype=np.uint8)
    padded = motion.pad_plane(plane, 16)
    phases = motion.phase_planes(padded, frac_bits)
    one = 1 << frac_bits
    direct = motion.interp_block(padded, 16, 4, 4, 8, mvx, mvy, frac_bits)
    plane_ = phases[(mvy & (one - 1), mvx & (one - 1))]
    y0, x0 = 4 + 16 + (mvy >> frac_bits), 4 + 16 + (mvx >> frac_bits)
    assert np.array_equal(plane_[y0:y0 + 8, x0:x0 + 8], direct)


def test_half_pel_is_rounded_average():
    padded = np.array([[10, 13], [20, 40]], dtype=np.uint8)
    assert motion.interp_block(padded, 0, 0, 0, 1, 1, 0, 1)[0, 0] == 12  # (10 + 13 + 1) >> 1
    assert motion.interp_block(padded, 0, 0, 0, 1, 1, 1, 1)[0, 0] == 21  # (83 + 2) >> 2


def test_motion_search_recovers_planted_shift():
    frames = _clip(frames=2, size=(64, 64), velocity=(3.0, -2.0))
    ref = motion.RefPlanes(frames[0])
    surf = motion.sad_surfaces(frames[1].y, ref.y, motion.LUMA_MARGIN, 16, 8)
    mv, _, s = motion.best_integer_mv(surf[1, 1], (0, 0), 0.0, 8)
    # content moves by (+3, -2) so the block is found at (-3, +2) in the reference
    assert mv == (-6, 4)
    assert s == 0


def test_mv_tie_breaks_to_raster_first():
    surf = np.zeros((5, 5))
    mv, cost, _ = motion.best_integer_mv(surf, (0, 0), 0.0, 2)
    assert mv == (-4, -4) and cost == 0.0
    mv, _, _ = motion.best_integer_mv(surf, (0, 0), 1.0, 2)
    assert mv == (0, 0)


def test_median_predictor_examples():
    assert motion.median_predictor([None, None, None]) == (0, 0)
    assert motion.median_predictor([(4, 2), None, None]) == (4, 2)
    assert motion.median_predictor([(4, 2), (8, -2), None]) == (4, 0)
    assert motion.median_predictor([(4, 2), (8, -2), (6, 6)]) == (6, 2)


def test_out_of_range_vector_rejected():
    ref = motion.RefPlanes(Frame.blank(32, 32))
    with pytest.raises(ValueError, match="outside"):
        ref.predict(0, 0, 16, (-200, 0))


def test_sad_examples():
    assert motion.sad(np.zeros((2, 2), np.uint8), np.full((2, 2), 3, np.uint8)) == 12
    with pytest.raises(ValueError):
        motion.sad(np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# GOP structure and reference selection


def test_coding_orders():
    assert coding_order("LP", 4) == [0, 1, 2, 3]
    assert coding_order("RA", 9) == [0, 8, 4, 2, 1, 3, 6, 5, 7]
    assert coding_order("RA", 12) == [0, 8, 4, 2, 1, 3, 6, 5, 7, 10, 9, 11]
    assert sorted(coding_order("RA", 64)) == list(range(64))
    with pytest.raises(ValueError):
        coding_order("XX", 3)


def test_dfp_reference_examples():
    assert select_dfp_references(4, {0, 1, 2, 3, 8, 6, 5}) == (3, 5)
    assert select_dfp_references(3, {0, 1, 2}) == (1, 2)
    assert select_dfp_references(4, {0, 1}) is None
    assert select_dfp_references(1, {0}) is None
    assert select_dfp_references(2, {0, 4}) == (0, 4)


@given(st.integers(0, 40), st.sets(st.integers(0, 40), max_size=12))
def test_dfp_references_are_decoded_and_near(poc, decoded):
    decoded.discard(poc)
    refs = select_dfp_references(poc, decoded)
    if refs is None:
        return
    t1, t2 = refs
    assert t1 < t2 and t1 in decoded and t2 in decoded
    assert max(abs(poc - t1), abs(poc - t2)) <= gop.MAX_DFP_DISTANCE
    assert t1 < poc


def test_reference_lists():
    assert gop.reference_pocs("LP", 5, {0, 1, 2, 3, 4}) == [4, 3]
    assert gop.reference_pocs("RA", 4, {0, 8}) == [0, 8]
    assert gop.bi_allowed("RA", 4, [0, 8])
    assert not gop.bi_allowed("LP", 5, [4, 3])
    assert gop.bi_allowed("LD", 5, [4, 3])


# ---------------------------------------------------------------------------
# block syntax


def test_block_decisions_roundtrip(rng):
    sent, received, w, r, payload = roundtrip(rng, 3000)
    for (_, d), got in zip(sent, received):
        assert d.same_as(got)
    assert w.bits == r.bits
    assert sum(r.bits.values()) == 8 * len(payload)


def test_dfp_flag_cannot_be_written_without_references():
    w = E.SyntaxWriter()
    ctx = BlockContext(gop.FRAME_P, dfp_available=False, n_refs=2)
    with pytest.raises(AssertionError, match="DFP"):
        encode_block_syntax(w, BlockDecision(Mode.DFP), ctx)


@given(st.binary(min_size=4, max_size=64))
def test_parser_without_dfp_references_never_yields_dfp(data):
    ctx = BlockContext(gop.FRAME_P, dfp_available=False, n_refs=2, bi_allowed=True)
    r = E.SyntaxReader(data)
    try:
        for _ in range(4):
            assert decode_block_syntax(r, ctx).mode != Mode.DFP
    except DecodeError:
        pass


def test_lagrangian_examples():
    assert lagrangian(12) == pytest.approx(0.85)
    assert lagrangian(15) == pytest.approx(1.7)
    assert RDContext(27).lam_sad == pytest.approx(np.sqrt(0.85 * 32))


# ---------------------------------------------------------------------------
# encoder / decoder


@pytest.mark.parametrize("profile", ["LP", "LD", "RA"])
def test_encode_decode_bit_exact(profile):
    frames = _clip(frames=5)
    res = encode(frames, CodingConfig(profile=profile, qp=30, search=8, dfp=False))
    dec = decode(res.stream)
    assert all(a.same_pixels(b) for a, b in zip(res.recon, dec.frames))
    assert sum(res.category_bits().values()) == res.payload_bits
    assert dec.category_bits() == res.category_bits()
    assert res.category_bits()["DNN"] == 0


def test_lossless_qp0_reconstructs_source():
    frames = _clip(frames=3)
    res = encode(frames, CodingConfig(qp=0, search=4, dfp=False))
    assert all(a.same_pixels(b) for a, b in zip(frames, res.recon))


def test_dfp_stream_roundtrip_and_cost_never_worse(toy_model):
    frames = _clip(frames=4)
    res = encode(frames, CodingConfig(profile="LP", qp=37, search=8), model=toy_model)
    dec = decode(res.stream, model=toy_model)
    assert all(a.same_pixels(b) for a, b in zip(res.recon, dec.frames))
    assert dec.category_bits() == res.category_bits()
    for f in res.frames:
        assert np.all(f.best_cost <= f.cost_without_dfp)
        if f.dfp_refs is None:
            assert not np.any(f.modes == int(Mode.DFP))
    assert res.frames[0].dfp_refs is None and res.frames[1].dfp_refs is None
    assert res.frames[2].dfp_refs == (0, 1)


def test_decode_requires_matching_weights(toy_model):
    frames = _clip(frames=3)
    res = encode(frames, CodingConfig(qp=37, search=4), model=toy_model)
    with pytest.raises(WeightsMismatch):
        decode(res.stream)
    with pytest.raises(WeightsMismatch, match="hash"):
        decode(res.stream, model=FramePredictor(NetConfig.reduced(), seed=1))


def test_header_fields():
    res = encode(_clip(frames=2), CodingConfig(profile="RA", qp=22, search=4, dfp=False))
    h = parse_header(res.stream)
    assert (h.width, h.height, h.frames, h.profile, h.qp, h.block) == (48, 32, 2, "RA", 22, 16)
    assert h.weights_hash == bytes(8)


def test_corrupted_stream_reports_byte_offset():
    res = encode(_clip(frames=3), CodingConfig(qp=27, search=4, dfp=False))
    bad = bytearray(res.stream)
    pos = len(bad) - 20
    bad[pos] ^= 0xFF
    with pytest.raises(DecodeError) as info:
        decode(bytes(bad))
    assert 0 <= info.value.offset <= len(bad)
    with pytest.raises(DecodeError, match="magic"):
        decode(b"XXXX" + res.stream[4:])
    with pytest.raises(DecodeError, match="truncated"):
        decode(res.stream[:-5])


def test_encoder_rejects_bad_input():
    with pytest.raises(ValueError, match="multiple"):
        encode([Frame.blank(40, 32)], CodingConfig(dfp=False))
    with pytest.raises(ValueError, match="QP"):
        encode([Frame.blank(32, 32)], CodingConfig(qp=60))
    with pytest.raises(ValueError):
        encode([], CodingConfig())


def test_encoding_is_deterministic_across_threads():
    frames = _clip(frames=3, size=(64, 48))
    a = encode(frames, CodingConfig(qp=32, search=8, dfp=False, threads=1))
    b = encode(frames, CodingConfig(qp=32, search=8, dfp=False, threads=3))
    assert a.stream == b.stream

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepframe import trainer as TR
from deepframe.kvconfig import ConfigError
from deepframe.predictor import FramePredictor, NetConfig, temporal_index_constants
from deepframe.video_io import Frame, SyntheticSpec, generate_synthetic
from oracles import adamax_scalar


def _texture(rng, size):
    return rng.random((size, size, 3))


def _translating_triplet(rng, size=48, step=4, mode="bi"):
    big = rng.random((size + 4 * step, size + 4 * step, 3))
    patches = tuple(big[2 * step:2 * step + size, k * step:k * step + size].copy() for k in range(3))
    return TR.Triplet(patches, (0, 1, 2), mode, window=size)


def test_constant_gray_rejected_by_entropy():
    gray = np.full((32, 32, 3), 0.5)
    t = TR.Triplet((gray, gray.copy(), gray.copy()), (0, 1, 2))
    r = TR.curation_report(t)
    assert r["entropy"] == 0.0
    assert not TR.passes_filters(t)


def test_identical_patches_rejected(rng):
    p = _texture(rng, 32)
    assert not TR.passes_filters(TR.Triplet((p, p.copy(), p.copy()), (0, 1, 2)))


def test_translating_texture_accepted():
    rng = np.random.default_rng(4)
    t = _translating_triplet(rng, size=48, step=4)
    r = TR.curation_report(t)
    assert r["entropy"] >= TR.MIN_ENTROPY
    assert r["changed"]
    assert r["flow_max"] <= r["diagonal"]
    # a uniform shift gives every full block the same displacement, so it is judged by variance
    assert TR.passes_filters(t) == (r["flow_var"] > 0)


def test_curate_raises_when_nothing_survives():
    gray = np.full((32, 32, 3), 0.5)
    with pytest.raises(TR.DatasetExhausted):
        TR.curate([TR.Triplet((gray, gray, gray), (0, 1, 2))])


def test_flow_block_size():
    assert TR.flow_block_size(96) == 16
    assert TR.flow_block_size(24) == 8
    assert TR.flow_block_size(6) == 4


def test_triplet_validation(rng):
    p = _texture(rng, 8)
    with pytest.raises(ValueError):
        TR.Triplet((p, p, p), (0, 2, 1))
    with pytest.raises(ValueError):
        TR.Triplet((p, p, p), (0, 1, 2), mode="tri")
    with pytest.raises(ValueError):
        TR.Triplet((p, p, _texture(rng, 9)), (0, 1, 2))


@given(st.integers(0, 2**31 - 1), st.sampled_from(["bi", "uni"]))
def test_flip_is_an_involution(seed, mode):
    r = np.random.default_rng(seed)
    t = TR.Triplet(tuple(r.random((6, 6, 3)) for _ in range(3)), (0, 1, 2), mode, window=4,
                   offsets=((1, 0), (0, -1), (-1, 1)))
    for horizontal in (True, False):
        back = TR.flip(TR.flip(t, horizontal), horizontal)
        assert all(np.array_equal(a, b) for a, b in zip(back.patches, t.patches))
        assert back.offsets == t.offsets
        once = TR.flip(t, horizontal)
        # the flipped triplet's windows are the flips of the original windows
        axis = 1 if horizontal else 0
        for i in range(3):
            np.testing.assert_array_equal(once.crop(i), np.flip(t.crop(i), axis=axis))


@given(st.integers(0, 50), st.integers(1, 20), st.integers(1, 20), st.sampled_from(["bi", "uni"]))
def test_reverse_keeps_valid_constants(p0, g1, g2, mode):
    t = TR.Triplet(tuple(np.zeros((4, 4, 3)) for _ in range(3)), (p0, p0 + g1, p0 + g1 + g2), mode)
    r = TR.reverse_order(t)
    assert r.pocs[0] < r.pocs[1] < r.pocs[2]
    _, _, _, (t1, t2, tt) = r.views()
    expect = (-10.0, 10.0) if mode == "bi" else (-20.0, -10.0)
    assert temporal_index_constants(t1, t2, tt) == expect
    assert TR.reverse_order(r).pocs == t.pocs


def test_reverse_swaps_patch_order(rng):
    ps = tuple(rng.random((4, 4, 3)) for _ in range(3))
    r = TR.reverse_order(TR.Triplet(ps, (0, 1, 3)))
    assert r.pocs == (0, 2, 3)
    assert all(np.array_equal(a, b) for a, b in zip(r.patches, reversed(ps)))


def test_shift_references_moves_windows_linearly(rng):
    t = TR.Triplet(tuple(rng.random((12, 12, 3)) for _ in range(3)), (0, 1, 2), "uni", window=4)
    s = TR.shift_references(t, (1, -1))
    assert s.offsets == ((2, -2), (1, -1), (0, 0))
    assert TR.max_motion_shift(t) == 2
    with pytest.raises(ValueError):
        TR.shift_references(t, (5, 0)).crop(0)


def test_augment_is_deterministic_per_seed(rng):
    t = _translating_triplet(rng, size=16, step=1)
    a = TR.augment(t, np.random.default_rng(9))
    b = TR.augment(t, np.random.default_rng(9))
    assert a.pocs == b.pocs and a.offsets == b.offsets
    assert all(np.array_equal(x, y) for x, y in zip(a.patches, b.patches))


def test_adamax_first_step_moves_by_learning_rate():
    w = {"a": np.array([0.5, -2.0, 3.0])}
    st_ = TR.AdaMaxState()
    TR.adamax_step(w, {"a": np.array([0.3, -7.0, 1e-3])}, st_)
    # m_hat / u = sign(g) (up to eps) at t = 1
    np.testing.assert_allclose(w["a"], [0.5 - 0.001, -2.0 + 0.001, 3.0 - 0.001], atol=1e-10)


def test_adamax_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    grads = rng.normal(size=100)
    w = {"a": np.array([1.25])}
    state = TR.AdaMaxState()
    for g in grads:
        TR.adamax_step(w, {"a": np.array([g])}, state)
    assert abs(w["a"][0] - adamax_scalar(1.25, grads)) < 1e-12


def test_adamax_rejects_nonfinite_gradient():
    with pytest.raises(TR.TrainingDiverged):
        TR.adamax_step({"a": np.zeros(2)}, {"a": np.array([np.nan, 0.0])}, TR.AdaMaxState())


def test_train_config_requires_keys_and_validates():
    base = {"epochs": "1", "iterations_per_epoch": "2", "seed": "0", "stage": "pretrain"}
    cfg = TR.TrainConfig.from_kv(base)
    assert (cfg.lr, cfg.batch, cfg.loss.lambda_g) == (0.001, 16, 1.0)
    for key in base:
        with pytest.raises(ConfigError):
            TR.TrainConfig.from_kv({k: v for k, v in base.items() if k != key})
    with pytest.raises(ConfigError):
        TR.TrainConfig.from_kv({**base, "no_b1": "true", "no_temporal_index": "true"})
    with pytest.raises(ConfigError):
        TR.TrainConfig.from_kv({**base, "stage": "finetune"})
    assert TR.TrainConfig.from_kv({**base, "no_geometric_loss": "true"}).loss.lambda_g == 0.0


def test_compression_augment_variants_and_lossless_qp0():
    frames, _ = generate_synthetic(SyntheticSpec(seed=1, frames=3, width=32, height=32))
    variants = TR.compression_augment(frames, qp_set=(0, 37), configs=("LP",), search=4)
    assert set(variants) == {("LP", 0), ("LP", 37)}
    assert all(a.same_pixels(b) for a, b in zip(frames, variants[("LP", 0)]))
    assert not all(a.same_pixels(b) for a, b in zip(frames, variants[("LP", 37)]))


def test_paper_qp_set_has_thirteen_points():
    assert TR.TRAINING_QPS == (20, 22, 24, 26, 28, 30, 32, 34, 36, 38, 40, 42, 44)


def test_sample_variant_covers_raw_and_coded():
    raw = [Frame.blank(16, 16)]
    variants = {("LP", 22): "a", ("LP", 37): "b", ("RA", 22): "c"}
    rng = np.random.default_rng(0)
    seen = {TR.sample_variant(raw, variants, rng)[0] for _ in range(200)}
    assert seen == {"raw", "LP@22", "LP@37", "RA@22"}


def test_validation_split_is_disjoint_by_source():
    ts = [TR.Triplet(tuple(np.zeros((4, 4, 3)) for _ in range(3)), (0, 1, 2), source=f"s{i}") for i in range(200)]
    train, val = TR.split_by_source(ts)
    assert val and train
    assert not {t.source for t in train} & {t.source for t in val}


def _small_suite():
    return TR.synthetic_suite(TR.SuiteConfig(sources=10, width=48, height=48, frames=5, candidates_per_source=6,
                                             seed=3))


def test_synthetic_suite_is_deterministic_and_split():
    tr1, va1 = _small_suite()
    tr2, va2 = _small_suite()
    assert len(tr1) == len(tr2) and len(va1) == len(va2)
    assert all(np.array_equal(a.patches[0], b.patches[0]) for a, b in zip(tr1, tr2))
    assert not {t.source for t in tr1} & {t.source for t in va1}


def test_suite_config_from_kv():
    cfg = TR.SuiteConfig.from_kv({"suite_size": "64x48", "suite_uni_fraction": "0.7",
                                  "suite_compression_qps": "22,37"}, seed=5)
    assert (cfg.width, cfg.height, cfg.uni_fraction, cfg.compression_qps, cfg.seed) == (64, 48, 0.7, (22, 37), 5)


def test_training_is_deterministic_and_reduces_loss():
    train_set, val_set = _small_suite()
    cfg = TR.TrainConfig(iterations_per_epoch=6, batch=4, seed=1, val_every=3)
    a = TR.train(cfg, train_set, val_set)
    b = TR.train(cfg, train_set, val_set)
    assert a.losses == b.losses
    assert [r[0] for r in a.log] == [3, 6]
    for k, v in a.model.params.items():
        assert np.array_equal(v, b.model.params[k])


def test_training_writes_csv_log(tmp_path):
    train_set, val_set = _small_suite()
    cfg = TR.TrainConfig(iterations_per_epoch=2, batch=2, seed=0, val_every=1)
    TR.train(cfg, train_set, val_set, log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iteration,train_loss,val_psnr"
    assert len(lines) == 3


def test_empty_dataset_raises():
    with pytest.raises(TR.DatasetExhausted):
        TR.train(TR.TrainConfig(), [])


def test_ablation_harness_runs_every_variant():
    train_set, val_set = _small_suite()
    cfg = TR.TrainConfig(iterations_per_epoch=1, batch=2, seed=0, val_every=1)
    runs = TR.ablate(cfg, train_set, val_set)
    assert list(runs) == ["full", *TR.ABLATIONS]
    assert runs["no_temporal_index"].model.config.dummy_index
    assert not runs["no_b1"].model.config.use_b1
    assert not runs["no_b2_b10_skips"].model.config.use_b2_b10_skips
    rows = TR.ablation_table(runs)
    assert len(rows) == 1 and len(rows[0]) == 6


def test_evaluate_identity_prediction_is_infinite_psnr():
    # identical references and target with the averaging bias-only head reproduce the target
    p = np.random.default_rng(0).random((16, 16, 3))
    t = TR.Triplet((p, p.copy(), p.copy()), (0, 1, 2))
    model = FramePredictor(NetConfig.reduced(), seed=0)
    for name, arr in model.params.items():
        if name.startswith("b10.") and name.endswith("conv2.w"):
            arr[...] = 0.0
    assert TR.evaluate(model, [t]) > 100

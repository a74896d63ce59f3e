import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepframe import predictor as P
from deepframe.tensor import ShapeError
from deepframe.video_io import Frame
from oracles import central_diff, rel_err, synth_naive


def _field(rng, h, w, k):
    return P.KernelField(*(rng.normal(size=(h, w, k)) for _ in range(4)))


@given(st.integers(-1000, 1000), st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_temporal_index_case_table(t1, t2, t):
    if t1 < t < t2:
        assert P.temporal_index_constants(t1, t2, t) == (-10.0, 10.0)
    elif t1 < t2 < t:
        assert P.temporal_index_constants(t1, t2, t) == (-20.0, -10.0)
    else:
        with pytest.raises(ValueError):
            P.temporal_index_constants(t1, t2, t)


def test_temporal_index_examples():
    assert P.temporal_index_constants(0, 8, 4) == (-10.0, 10.0)
    assert P.temporal_index_constants(2, 3, 4) == (-20.0, -10.0)
    for bad in ((3, 2, 4), (0, 8, 8), (0, 8, 0), (4, 4, 5)):
        with pytest.raises(ValueError):
            P.temporal_index_constants(*bad)


def test_input_tensor_appends_constant_plane(rng):
    patch = rng.random((4, 6, 3))
    x = P.make_input_tensor(patch, -20.0)
    assert x.shape == (4, 6, 4)
    assert np.array_equal(x[..., :3], patch)
    assert np.all(x[..., 3] == -20.0)
    with pytest.raises(ShapeError):
        P.make_input_tensor(rng.random((4, 6, 2)), 0.0)


def test_synthesize_matches_oracle_on_examples(rng):
    for _ in range(5):
        p1, p2 = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        f = _field(rng, 16, 16, 5)
        np.testing.assert_allclose(P.synthesize(p1, p2, f), synth_naive(p1, p2, *f.as_tuple()), atol=1e-12)


@given(st.integers(1, 10), st.integers(1, 10), st.sampled_from([1, 3, 5, 7]), st.integers(0, 2**31 - 1))
def test_synthesize_oracle_property(h, w, k, seed):
    r = np.random.default_rng(seed)
    p1, p2 = r.random((h, w, 3)), r.random((h, w, 3))
    f = _field(r, h, w, k)
    np.testing.assert_allclose(P.synthesize(p1, p2, f), synth_naive(p1, p2, *f.as_tuple()), atol=1e-12)


def test_synthesize_delta_kernels_reproduce_reference(rng):
    p1, p2 = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    delta = np.zeros((8, 8, 5))
    delta[..., 2] = 1.0
    zero = np.zeros((8, 8, 5))
    np.testing.assert_allclose(P.synthesize(p1, p2, P.KernelField(delta, delta, zero, zero)), p1, atol=1e-15)
    # a one-tap shift to the right in the horizontal filter samples x + 1
    shift = np.zeros((8, 8, 5))
    shift[..., 3] = 1.0
    out = P.synthesize(p1, p2, P.KernelField(delta, shift, zero, zero))
    np.testing.assert_allclose(out[:, :-1], p1[:, 1:], atol=1e-15)
    np.testing.assert_allclose(out[:, -1], p1[:, -1], atol=1e-15)


def test_synthesize_uniform_kernels_sum_to_one_preserve_constant():
    c = np.full((6, 6, 3), 0.4)
    box = np.full((6, 6, 3), 1 / 3)
    half = np.sqrt(0.5) * box
    out = P.synthesize(c, c, P.KernelField(half, half, half, half))
    np.testing.assert_allclose(out, c, atol=1e-14)
    assert out.shape == (6, 6, 3)


def test_synthesize_rejects_mismatched_shapes(rng):
    p = rng.random((8, 8, 3))
    with pytest.raises(ShapeError):
        P.synthesize(p, rng.random((8, 9, 3)), _field(rng, 8, 8, 5))
    with pytest.raises(ShapeError):
        P.synthesize(p, p, _field(rng, 8, 7, 5))
    with pytest.raises(ShapeError):
        P.synthesize(p, p, _field(rng, 8, 8, 4))


def test_build_kernel_is_rank_one_outer_product(rng):
    f = _field(rng, 4, 5, 5)
    k = P.build_kernel(f, 2, x=3, y=1)
    np.testing.assert_array_equal(k, np.outer(f.fv2[1, 3], f.fh2[1, 3]))
    assert np.linalg.matrix_rank(k) == 1
    with pytest.raises(IndexError):
        P.build_kernel(f, 1, x=5, y=0)
    with pytest.raises(ValueError):
        P.build_kernel(f, 3, x=0, y=0)


def test_synthesize_backward_matches_finite_differences(rng):
    p1, p2 = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    f = _field(rng, 6, 6, 3)
    up = rng.normal(size=(6, 6, 3))

    def loss():
        return float(np.sum(up * P.synthesize(p1, p2, f)))

    g = P.synthesize_backward(p1, p2, f, up)
    for arr, d in zip(f.as_tuple(), g.as_tuple()):
        assert rel_err(d.ravel(), central_diff(loss, arr)).max() < 1e-4


def test_reduced_network_output_shapes():
    model = P.FramePredictor(P.NetConfig.reduced(), seed=0)
    x = np.zeros((2, 32, 48, 4))
    f = model.forward(x, x)
    for a in f.as_tuple():
        assert a.shape == (2, 32, 48, 5)


def test_production_network_output_shapes():
    model = P.FramePredictor(P.NetConfig.production(), seed=0)
    assert model.params["b2.main.conv1.w"].shape == (3, 3, 32, 64)
    assert model.params["b5.main.conv2.w"].shape == (3, 3, 512, 512)
    assert model.params["b10.fv1.conv2.w"].shape[-1] == 51
    x = np.zeros((1, 16, 16, 4))
    for a in model.forward(x, x).as_tuple():
        assert a.shape == (1, 16, 16, 51)


def test_forward_rejects_unaligned_and_bad_channels():
    model = P.FramePredictor(P.NetConfig.reduced(), seed=0)
    with pytest.raises(ShapeError, match="multiples of 16"):
        model.forward(np.zeros((1, 20, 16, 4)), np.zeros((1, 20, 16, 4)))
    with pytest.raises(ShapeError):
        model.forward(np.zeros((1, 16, 16, 3)), np.zeros((1, 16, 16, 3)))


def test_head_bias_alone_averages_references(rng):
    # the head bias is a centred tap of sqrt(1/2) in each 1-D filter
    model = P.FramePredictor(P.NetConfig.reduced(), seed=3)
    for name, arr in model.params.items():
        if name.startswith("b10.") and name.endswith("conv2.w"):
            arr[...] = 0.0
    p1, p2 = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    f = model.predict_field(P.ReferencePatchPair(p1, p2, 0, 2, 1))
    np.testing.assert_allclose(P.synthesize(p1, p2, f), 0.5 * (p1 + p2), atol=1e-14)


def test_dummy_index_model_ignores_temporal_position(rng):
    cfg = P.NetConfig.reduced().with_ablation("no_temporal_index")
    model = P.FramePredictor(cfg, seed=1)
    p1, p2 = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    a = model.predict_field(P.ReferencePatchPair(p1, p2, 0, 2, 1))
    b = model.predict_field(P.ReferencePatchPair(p1, p2, 0, 1, 2))
    for x, y in zip(a.as_tuple(), b.as_tuple()):
        assert np.array_equal(x, y)


def test_full_model_is_sensitive_to_temporal_position(rng):
    model = P.FramePredictor(P.NetConfig.reduced(), seed=1)
    p1, p2 = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    a = model.predict_field(P.ReferencePatchPair(p1, p2, 0, 2, 1))
    b = model.predict_field(P.ReferencePatchPair(p1, p2, 0, 1, 2))
    assert max(np.abs(x - y).max() for x, y in zip(a.as_tuple(), b.as_tuple())) > 1e-6


@pytest.mark.parametrize("ablation", [None, "no_b1", "no_b2_b10_skips"])
def test_weights_roundtrip_and_config_inference(tmp_path, ablation):
    cfg = P.NetConfig.reduced().with_ablation(ablation)
    model = P.FramePredictor(cfg, seed=5)
    path = tmp_path / "m.dfpw"
    model.save(path)
    back = P.FramePredictor.load(path)
    assert back.config == cfg
    for k, v in model.params.items():
        np.testing.assert_array_equal(back.params[k], v.astype(np.float32).astype(np.float64))


def test_load_params_rejects_mismatch():
    model = P.FramePredictor(P.NetConfig.reduced(), seed=0)
    other = P.FramePredictor(P.NetConfig.reduced().with_ablation("no_b1"), seed=0)
    with pytest.raises(ValueError, match="missing"):
        model.load_params(other.params)
    bad = dict(model.params)
    bad["b2.main.conv1.w"] = np.zeros((3, 3, 1, 1))
    with pytest.raises(ValueError, match="shape"):
        model.load_params(bad)


def test_unknown_ablation_rejected():
    with pytest.raises(ValueError):
        P.NetConfig.reduced().with_ablation("bogus")


@pytest.mark.parametrize("ablation", [None, "no_b1", "no_b2_b10_skips"])
def test_full_network_gradient_matches_finite_differences(ablation):
    """Reduced config, 32x32 inputs: every parameter tensor and both inputs, sampled entries."""
    rng = np.random.default_rng(11)
    model = P.FramePredictor(P.NetConfig.reduced().with_ablation(ablation), seed=2)
    # perturb all parameters so no unit sits exactly at a ReLU kink or a zero bias
    for arr in model.params.values():
        arr += rng.normal(scale=0.05, size=arr.shape)
    x1 = np.concatenate([rng.random((1, 32, 32, 3)), np.full((1, 32, 32, 1), -10.0)], axis=-1)
    x2 = np.concatenate([rng.random((1, 32, 32, 3)), np.full((1, 32, 32, 1), 10.0)], axis=-1)
    ups = [rng.normal(size=(1, 32, 32, 5)) for _ in range(4)]

    def f():
        out = model.forward(x1, x2, train=False)
        return float(sum(np.sum(u * o) for u, o in zip(ups, out.as_tuple())))

    model.forward(x1, x2, train=True)
    grads = model.backward(P.KernelField(*ups))
    worst = 0.0
    for name, arr in model.params.items():
        assert grads[name].shape == arr.shape
        idx = rng.choice(arr.size, size=min(arr.size, 4), replace=False)
        fd = central_diff(f, arr, eps=1e-6, index_list=idx)
        worst = max(worst, rel_err(grads[name].ravel()[idx], fd).max())
    assert worst < 1e-4


def test_predict_frame_pads_and_crops():
    model = P.FramePredictor(P.NetConfig.reduced(), seed=0)
    a = Frame.blank(40, 24, value=100)
    b = Frame.blank(40, 24, value=140)
    out = P.predict_frame(a, b, 0, 2, 1, model)
    assert (out.width, out.height, out.poc) == (40, 24, 1)
    assert out.u.shape == (12, 20)
    with pytest.raises(ValueError, match="differ in size"):
        P.predict_frame(a, Frame.blank(32, 24), 0, 2, 1, model)


def test_pad_to_multiple():
    t = np.arange(20 * 18 * 3, dtype=float).reshape(20, 18, 3)
    p = P.pad_to_multiple(t)
    assert p.shape == (32, 32, 3)
    assert np.array_equal(p[:20, :18], t)
    assert np.array_equal(p[31, 31], t[19, 17])
    assert P.pad_to_multiple(np.zeros((16, 32, 3))).shape == (16, 32, 3)

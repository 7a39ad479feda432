import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compcaps import capsnet, compress
from compcaps.capsnet import CapsNet, CapsNetConfig
from compcaps.compress import CompressionMask, apply_mask, build_mask, compression_report, variance_profile
from compcaps.dclstm import elimination_list
from compcaps.errors import DimensionError, ParameterError
from compcaps.tensor import Tensor


def test_build_mask_examples():
    m = build_mask([2], 4)
    np.testing.assert_array_equal(m.D, [1, 1, 0, 1])
    assert m.kept == 3 and m.rate == 0.25
    assert np.all(build_mask([], 8).D == 1)
    np.testing.assert_array_equal(build_mask([3, 0, 3], 5).D, [0, 1, 1, 0, 1])
    with pytest.raises(IndexError):
        build_mask([4], 4)
    with pytest.raises(IndexError):
        build_mask([-1], 4)
    with pytest.raises(ParameterError):
        build_mask([0, 1], 2)


def test_mask_invariants_checked():
    with pytest.raises(ParameterError):
        CompressionMask(np.array([1.0, 0.0]), 0.5, (0,))
    with pytest.raises(ParameterError):
        CompressionMask(np.array([1.0, 0.0, 1.0, 1.0]), 0.5, (1,))


def test_apply_mask_examples():
    np.testing.assert_array_equal(apply_mask(np.array([3.0, 4.0]), build_mask([1], 2)), [3.0, 0.0])
    u = np.random.default_rng(0).normal(size=(5, 8))
    out = apply_mask(u, build_mask([], 8))
    assert out.tobytes() == u.tobytes()
    t = apply_mask(Tensor(u), build_mask([], 8))
    assert t.data.tobytes() == u.tobytes()
    with pytest.raises(DimensionError):
        apply_mask(u, build_mask([], 4))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.data())
def test_mask_idempotent_and_perturbation_invariant(n, data):
    elim = data.draw(st.sets(st.integers(0, n - 1), max_size=n - 1))
    m = build_mask(elim, n)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    u = rng.normal(size=(3, n))
    once = apply_mask(u, m)
    np.testing.assert_array_equal(apply_mask(once, m), once)
    bumped = u.copy()
    bumped[:, list(elim)] += rng.normal(size=(3, len(elim)))
    np.testing.assert_array_equal(apply_mask(bumped, m), once)


def test_mask_equivalent_to_zeroed_weight_columns(rng):
    u = rng.normal(size=(2, 2))
    W = Tensor(rng.normal(size=(2, 3, 4, 2)))
    m = build_mask([1], 2)
    a = capsnet.predict_parents(Tensor(apply_mask(u, m)), W).data
    b = capsnet.predict_parents(Tensor(u), compress.zero_weight_columns(W, m)).data
    np.testing.assert_allclose(a, b, atol=1e-15)
    va, _ = capsnet.route(Tensor(a), 3)
    vb, _ = capsnet.route(Tensor(b), 3)
    np.testing.assert_allclose(va.data, vb.data, atol=1e-15)


def test_eliminated_coordinate_receives_no_weight_gradient(rng):
    cfg = CapsNetConfig(input_frames=12, input_dims=13, conv1_channels=2, conv1_kernel=3, conv2_channels=4,
                        conv2_kernel=3, capsule_dim=2, num_classes=3, class_capsule_dim=3,
                        decoder_widths=(5, 6), first_stage_width=64)
    net = CapsNet(cfg, rng)
    loss, _ = net.loss(Tensor(rng.normal(size=(2, 12, 13))), [0, 1], mask=build_mask([0], 2))
    loss.backward(net.parameters())
    assert np.all(net.W.grad[..., 0] == 0)
    assert np.any(net.W.grad[..., 1] != 0)


def test_compression_report():
    cfg = CapsNetConfig()
    r0 = compression_report(cfg, build_mask([], 8))
    assert r0["ratio"] == 1.0 and r0["params_before"] == r0["params_after"]
    r1 = compression_report(cfg, build_mask([5], 8))
    assert r1["ratio"] == 7 / 8
    assert r1["params_before"] == cfg.num_primary * 6 * 16 * 8
    ratios = [compression_report(cfg, build_mask(range(k), 8))["ratio"] for k in range(8)]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))
    with pytest.raises(DimensionError):
        compression_report(cfg, build_mask([], 4))


def test_variance_profile(rng):
    a = rng.normal(size=(50, 7, 4)) * np.array([1.0, 0.1, 2.0, 0.0])
    vp = variance_profile(a)
    np.testing.assert_allclose(vp.variances, a.reshape(-1, 4).var(axis=0), rtol=1e-12)
    assert vp.count == 50
    assert elimination_list(vp.variances, 0.5) == (1, 3)
    w = rng.uniform(0.1, 1, 50)
    got = variance_profile(a, w).variances
    ww = np.repeat(w, 7)
    rows = a.reshape(-1, 4)
    mu = (ww[:, None] * rows).sum(0) / ww.sum()
    np.testing.assert_allclose(got, (ww[:, None] * (rows - mu) ** 2).sum(0) / ww.sum(), rtol=1e-12)
    with pytest.raises(ParameterError):
        variance_profile(a[:1])
    with pytest.raises(ParameterError):
        variance_profile(a, -w)

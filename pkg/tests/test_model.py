import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ardn.model import (
    ModelConfig,
    attention_weights,
    build_model,
    denoise_forward,
    denoise_image,
    denoise_patch,
    forward_taps,
    noise_expectation,
    parameter_count,
    softmax_depth,
)
from ardn.nn_layers import Mode

from helpers import end_to_end_fd_errors, zero_model
from oracles import attention_pixel


def _count_formula(k, filters, trunk, bn_every, cin=1):
    first = filters * 9 * cin + filters
    rest = (k - 1) * (filters * 9 * trunk + filters)
    n_bn = len([i for i in range(1, k + 1) if i % bn_every == 0 and i < k])
    return first + rest + n_bn * 2 * filters


def test_default_parameter_count():
    cfg = ModelConfig()
    assert cfg.bn_layers == (3, 6, 9, 12, 15, 18)
    count = parameter_count(build_model(cfg, dtype=np.float32))
    assert count == 681_152 == 640 + 19 * 35_776 + 6 * 128
    assert abs(count - 681_000) / 681_000 < 5e-4


def test_single_layer_count():
    assert parameter_count(build_model(ModelConfig(num_layers=1))) == 640


def test_doubled_trunk_count():
    cfg = ModelConfig(filters=126, trunk_channels=124)
    count = parameter_count(build_model(cfg, dtype=np.float32))
    assert count == _count_formula(20, 126, 124, 3)
    assert count - 681_152 == 19 * 126 * 9 * 124 - 19 * 64 * 9 * 62 + (126 - 64) * (1 + 9 + 19 + 12)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(filters=64, trunk_channels=64)
    with pytest.raises(ValueError):
        ModelConfig(num_layers=0)


def test_same_seed_same_model():
    a, b = build_model(ModelConfig.reduced(4, 8), 5), build_model(ModelConfig.reduced(4, 8), 5)
    for (na, xa), (nb, xb) in zip(a.parameters().items(), b.parameters().items()):
        assert na == nb and xa.tobytes() == xb.tobytes()
    c = build_model(ModelConfig.reduced(4, 8), 6)
    assert c.convs[0].weights.tobytes() != a.convs[0].weights.tobytes()


def test_minimal_one_layer_model_by_hand(rs):
    cfg = ModelConfig(num_layers=1, filters=3, trunk_channels=1)
    m = build_model(cfg)
    assert not m.bns
    x = rs.standard_normal((1, 1, 4, 4))
    m.convs[0].weights[:] = 0
    m.convs[0].weights[1, 0, 1, 1] = 2.0   # residual tap = 2x
    m.convs[0].bias[:] = [0.0, 0.5, 0.0]
    (R, F), _ = forward_taps(m, x)
    np.testing.assert_allclose(R[:, 0], 2 * x[:, 0] + 0.5)
    assert not F.any()
    den, E, A, _ = denoise_forward(m, x)
    np.testing.assert_array_equal(A, 1.0)  # single layer, softmax over one entry
    np.testing.assert_allclose(den, x - (2 * x + 0.5))


def test_zero_model_taps_and_identity(rs):
    m = zero_model()
    x = rs.uniform(0, 1, (2, 1, 12, 12))
    (R, F), _ = forward_taps(m, x)
    assert not R.any() and not F.any()
    den, E, A = denoise_patch(m, x)
    np.testing.assert_array_equal(den, x)
    np.testing.assert_allclose(A, 0.25)


def test_identity_into_residual_channel(rs):
    m = build_model(ModelConfig.reduced(3, 8), 1)
    trunk = m.config.trunk_channels
    m.convs[0].weights[trunk] = 0
    m.convs[0].weights[trunk, 0, 1, 1] = 1
    m.convs[0].bias[trunk] = 0
    x = rs.standard_normal((1, 1, 9, 9))
    (R, _), _ = forward_taps(m, x)
    np.testing.assert_array_equal(R[:, 0], x[:, 0])


def test_constant_noise_estimate(rs):
    m = zero_model()
    c = 0.125
    for conv in m.convs:
        conv.bias[m.config.trunk_channels] = c
    x = rs.uniform(0, 1, (1, 1, 10, 10))
    den, E, _ = denoise_patch(m, x)
    np.testing.assert_allclose(E, c)
    np.testing.assert_allclose(den, x - c)


def test_uniform_attention_default_depth():
    A = attention_weights(np.full((1, 20, 3, 3), 0.3))
    np.testing.assert_allclose(A, 0.05)


def test_two_layer_attention_value():
    A = attention_weights(np.array([1000.0, -1000.0]).reshape(1, 2, 1, 1))
    assert abs(A[0, 0, 0, 0] - math.e / (math.e + 1)) < 1e-12
    assert abs(A[0, 0, 0, 0] - 0.7311) < 1e-4
    d = 0.37
    S = np.array([0.9, 0.9 - d]).reshape(1, 2, 1, 1)
    assert abs(softmax_depth(S)[0, 0, 0, 0] - 1 / (1 + math.exp(-d))) < 1e-12


def test_attention_matches_scalar_reference(rs):
    F = rs.uniform(-5, 5, (2, 6, 3, 4))
    A = attention_weights(F)
    for b in range(2):
        for y in range(3):
            for x in range(4):
                np.testing.assert_allclose(A[b, :, y, x], attention_pixel(F[b, :, y, x]), rtol=0, atol=1e-15)
    assert np.abs(A.sum(axis=1) - 1).max() < 1e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-50, 50), k=st.integers(1, 25))
def test_softmax_shift_invariance(seed, shift, k):
    S = np.random.default_rng(seed).uniform(-3, 3, (1, k, 2, 2))
    assert np.abs(softmax_depth(S + shift) - softmax_depth(S)).max() < 1e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 1e4))
def test_attention_in_open_unit_interval(seed, scale):
    F = np.random.default_rng(seed).standard_normal((1, 20, 3, 3)) * scale
    A = attention_weights(F)
    assert (A > 0).all() and (A < 1).all()
    assert np.abs(A.sum(axis=1) - 1).max() < 1e-6


def test_noise_expectation_degenerate_cases(rs):
    R = rs.standard_normal((1, 4, 3, 3))
    onehot = np.zeros_like(R)
    onehot[:, 2] = 1
    np.testing.assert_array_equal(noise_expectation(onehot, R)[:, 0], R[:, 2])
    uniform = np.full_like(R, 0.25)
    np.testing.assert_allclose(noise_expectation(uniform, R)[:, 0], R.mean(axis=1), atol=1e-15)


def test_noise_expectation_hand_computed():
    A = np.array([[[0.2, 0.5], [0.1, 1 / 3]], [[0.3, 0.25], [0.6, 1 / 3]], [[0.5, 0.25], [0.3, 1 / 3]]])[None]
    R = np.array([[[1.0, -2.0], [0.5, 3.0]], [[4.0, 0.0], [-1.0, 3.0]], [[-2.0, 8.0], [2.0, -6.0]]])[None]
    expected = np.array([[0.2 * 1 + 0.3 * 4 + 0.5 * -2, 0.5 * -2 + 0.25 * 0 + 0.25 * 8],
                         [0.1 * 0.5 + 0.6 * -1 + 0.3 * 2, (3 + 3 - 6) / 3]])
    assert np.abs(noise_expectation(A, R)[0, 0] - expected).max() < 1e-12


def test_denoise_is_composition(rs):
    m = build_model(ModelConfig.reduced(4, 8), 3)
    x = rs.uniform(0, 1, (2, 1, 12, 12))
    den, _, _ = denoise_patch(m, x)
    (R, F), _ = forward_taps(m, x)
    np.testing.assert_array_equal(den, x - noise_expectation(attention_weights(F), R))


@pytest.mark.parametrize("mode", [Mode.TRAIN, Mode.EVAL])
def test_end_to_end_gradient(mode):
    errors = end_to_end_fd_errors(mode=mode)
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-4, (worst, errors[worst])


def test_zero_model_image_identity(rs):
    m = zero_model()
    img = rs.uniform(-0.1, 1.1, (50, 70))
    np.testing.assert_array_equal(denoise_image(m, img, tile=64), np.clip(img, 0, 1))


@pytest.mark.parametrize("pad_mode", ["zero", "reflect"])
def test_tiled_matches_untiled_k20(rs, pad_mode):
    m = build_model(ModelConfig.reduced(20, 6), 2)
    img = rs.uniform(0, 1, (128, 128))
    whole = denoise_image(m, img, tile=1024, clamp=False, pad_mode=pad_mode)
    tiled = denoise_image(m, img, tile=64, overlap=20, clamp=False, pad_mode=pad_mode)
    assert np.abs(whole - tiled)[20:-20, 20:-20].max() < 1e-6
    assert np.abs(whole - tiled).max() < 1e-6


def test_constant_image_no_seams():
    m = build_model(ModelConfig.reduced(4, 8), 9)
    img = np.full((96, 96), 0.4)
    whole = denoise_image(m, img, tile=1024, clamp=False, pad_mode="zero")
    tiled = denoise_image(m, img, tile=48, overlap=20, clamp=False, pad_mode="zero")
    assert np.abs(whole - tiled)[20:-20, 20:-20].max() < 1e-6
    interior = tiled[20:-20, 20:-20]
    assert np.ptp(interior) < 1e-12


def test_denoise_image_argument_errors():
    m = zero_model()
    with pytest.raises(ValueError):
        denoise_image(m, np.zeros((10, 10)), tile=40, overlap=20)
    with pytest.raises(ValueError):
        denoise_image(m, np.zeros((10, 10)), overlap=10)
    with pytest.raises(ValueError):
        denoise_image(m, np.zeros((1, 10, 10)))


def test_float32_model_close_to_float64(rs):
    m = build_model(ModelConfig.reduced(4, 8), 4)
    x = rs.uniform(0, 1, (1, 1, 16, 16))
    d64 = denoise_patch(m, x)[0]
    d32 = denoise_patch(m.astype(np.float32), x.astype(np.float32))[0]
    assert d32.dtype == np.float32
    assert np.abs(d64 - d32).max() < 1e-4

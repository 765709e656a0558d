import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semcom import channel as ch
from semcom.errors import ConfigError, NumericError, ShapeError
from semcom.nn import Tensor

DRAWS = 100_000


@pytest.mark.parametrize("snr", [0.0, 3.0, 10.0])
def test_noise_variance_within_two_percent(snr):
    cfg = ch.ChannelConfig(snr, n_x=10, n_k=10, seed=int(snr) + 1)
    x = np.zeros((DRAWS // 10, 10))
    noise = ch.awgn_transmit(x, cfg, cfg.rng())
    target = 10 ** (-snr / 10)
    assert abs(noise.var() / target - 1.0) < 0.02


def test_noiseless_sentinel_is_exact():
    cfg = ch.ChannelConfig(math.inf, n_x=4, n_k=8)
    x = np.random.default_rng(0).normal(size=(5, 4))
    np.testing.assert_array_equal(ch.awgn_transmit(x, cfg, cfg.rng()), x)
    assert cfg.noise_var == 0.0


def test_power_normalize_examples():
    np.testing.assert_allclose(ch.power_normalize(np.ones((1, 4))), np.ones((1, 4)), atol=1e-15)
    np.testing.assert_allclose(ch.power_normalize(np.array([[2.0, 0.0]])), [[math.sqrt(2), 0.0]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 40)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_power_normalize_unit_mean_power(x):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        with pytest.raises(NumericError):
            ch.power_normalize(x)
        return
    y = ch.power_normalize(x)
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(np.mean(y**2, axis=1), 1.0, rtol=0, atol=1e-12)


def test_power_normalize_zero_sample_errors():
    with pytest.raises(NumericError):
        ch.power_normalize(np.zeros((2, 3)))


def test_compression_rate_examples():
    assert ch.compression_rate(64, 64) == 1.0
    assert ch.compression_rate(78, 784) == pytest.approx(0.0995, abs=5e-5)
    assert ch.compression_rate(80, 100) == 0.8
    assert ch.channel_dim(64, 0.25) == 16


def test_same_seed_reproducible_and_mean_vanishes():
    cfg = ch.ChannelConfig(0.0, n_x=8, n_k=8, seed=5)
    x = np.zeros((5000, 8))
    a = ch.awgn_transmit(x, cfg, cfg.rng())
    np.testing.assert_array_equal(a, ch.awgn_transmit(x, cfg, cfg.rng()))
    other = ch.awgn_transmit(x, cfg, np.random.default_rng(99))
    assert not np.array_equal(a, other)
    assert abs(a.mean()) < 0.02


def test_channel_gradient_is_identity():
    cfg = ch.ChannelConfig(5.0, n_x=3, n_k=3)
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    y = ch.awgn_transmit(x, cfg, cfg.rng())
    g = np.arange(6.0).reshape(2, 3)
    y.backward(g)
    np.testing.assert_array_equal(x.grad, g)


def test_quantizer_is_straight_through_and_256_levels():
    cfg = ch.ChannelConfig(math.inf, n_x=4, n_k=4, quantize=True)
    x = Tensor(np.array([[-9.0, -0.3, 0.01, 3.99]]), requires_grad=True)
    y = ch.awgn_transmit(x, cfg, cfg.rng())
    step = 8.0 / 255
    levels = (y.data + 4.0) / step
    np.testing.assert_allclose(levels, np.round(levels), atol=1e-9)
    assert y.data[0, 0] == -4.0
    y.backward(np.ones((1, 4)))
    np.testing.assert_array_equal(x.grad, np.ones((1, 4)))


def test_shape_and_config_errors():
    cfg = ch.ChannelConfig(10.0, n_x=4, n_k=8)
    with pytest.raises(ShapeError):
        ch.awgn_transmit(np.zeros((1, 5)), cfg, cfg.rng())
    with pytest.raises(ConfigError):
        ch.ChannelConfig(10.0, n_x=9, n_k=8)
    with pytest.raises(ConfigError):
        ch.ChannelConfig(float("nan"))

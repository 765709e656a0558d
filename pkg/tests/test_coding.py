import math

import numpy as np
import pytest

from semcom import channel as ch
from semcom import coding, data
from semcom.errors import ConfigError, ShapeError
from semcom.nn import Model, Tensor, sequential
from semcom.nn import layers as L


def _sample(z=0, logits=(0.0, 0.0)):
    return coding.TrainingSample(np.zeros(2), Tensor(np.ones(2)), z, Tensor(np.array(logits)))


def test_bouncy_lambda():
    assert coding.lambda_s(0.25) == 0.75
    assert coding.lambda_s(1.0) == 0.0
    with pytest.raises(ValueError):
        coding.lambda_s(1.5)


def test_esd_hand_value():
    cfg = coding.LossConfig(lam=0.5, alpha=2.0)
    assert coding.semantic_distortion(_sample(), cfg).item() == pytest.approx(1.0 + math.log(2) / 2, abs=1e-12)


def test_lambda_endpoints():
    only_ob = coding.LossConfig(lam=1.0)
    s = coding.TrainingSample(np.zeros(2), Tensor(np.ones(2)), None, None)
    assert coding.semantic_distortion(s, only_ob).item() == 1.0
    only_pr = coding.LossConfig(lam=0.0, alpha=5.0)
    assert coding.semantic_distortion(_sample(), only_pr).item() == pytest.approx(math.log(2), abs=1e-12)


def test_perfect_reconstruction_only_task_term_remains():
    s = coding.TrainingSample(np.ones(3), Tensor(np.ones(3)), 1, Tensor(np.array([0.0, 50.0])))
    assert coding.semantic_distortion(s, coding.LossConfig(lam=0.3)).item() == pytest.approx(0.0, abs=1e-12)


def test_continuous_family_uses_mse():
    cfg = coding.LossConfig.for_task(coding.CONTINUOUS, 0.5)
    s = coding.TrainingSample(np.zeros(2), Tensor(np.zeros(2)), np.ones(2), Tensor(np.zeros(2)))
    assert coding.semantic_distortion(s, cfg).item() == pytest.approx(0.5)


def test_list_and_batched_forms_agree():
    rng = np.random.default_rng(0)
    k, k_hat = rng.random((4, 3)), rng.random((4, 3))
    z, logits = rng.integers(0, 2, 4), rng.normal(size=(4, 2))
    cfg = coding.LossConfig(lam=0.4, alpha=1.3)
    batched = coding.esd_batch(coding.TrainingSample(k, Tensor(k_hat), z, Tensor(logits)), cfg).item()
    listed = coding.esd_batch([coding.TrainingSample(k[i], Tensor(k_hat[i]), z[i], Tensor(logits[i]))
                               for i in range(4)], cfg).item()
    assert batched == pytest.approx(listed, abs=1e-12)
    with pytest.raises(ValueError):
        coding.esd_batch([], cfg)


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        coding.LossConfig(lam=1.2)
    with pytest.raises(ConfigError):
        coding.LossConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        coding.LossConfig(d_pr="hinge")


def test_calibrate_alpha():
    assert coding.calibrate_alpha([2.0, 2.0], [1.0, 3.0]) == 1.0
    assert coding.calibrate_alpha([0.5], [2.0]) == 4.0
    assert coding.calibrate_alpha([0.0], [2.0]) == 1.0


def test_build_coders_dims():
    pair = coding.build_coders((8, 8, 1), 0.25, np.random.default_rng(0))
    assert pair.n_x == 16 and pair.cr == 0.25
    conv = coding.build_coders((8, 8, 1), 0.25, np.random.default_rng(0), arch="conv")
    assert conv.encoder.layers[0].kind == "conv2d"
    x = conv.encoder.forward(np.random.default_rng(1).random((3, 8, 8, 1))).data
    np.testing.assert_allclose(np.mean(x**2, axis=1), 1.0, atol=1e-12)


def test_coder_validation_rules():
    rng = np.random.default_rng(0)
    good = coding.build_coders((4,), 0.5, rng)
    with_act = sequential([("dense", 2), "relu", "power_norm"], (4,), rng)
    with pytest.raises(ConfigError):
        coding.CoderPair(with_act, good.decoder, 0.5)
    no_norm = sequential([("dense", 2)], (4,), rng)
    with pytest.raises(ConfigError):
        coding.CoderPair(no_norm, good.decoder, 0.5)
    wide = sequential([("dense", 3), "power_norm"], (4,), rng)
    with pytest.raises(ShapeError):
        coding.CoderPair(wide, good.decoder, 0.5)
    dec_norm = Model([L.dense(2, 4, rng), L.power_norm()], (2,))
    with pytest.raises(ConfigError):
        coding.CoderPair(good.encoder, dec_norm, 0.5)


def test_pragmatic_training_and_colocated_sanity():
    ds = data.synth_dataset("two_class_digits_8x8", 256, seed=1)
    train, test = ds.split(0.25, seed=0)
    phi, report = coding.train_pragmatic(train, epochs=10, test=test)
    assert report["test_score"] >= 0.95
    assert all(not p.requires_grad for p in phi.parameters())
    pair = coding.build_coders(ds.shape, 0.25, np.random.default_rng(0))
    chan = ch.ChannelConfig(10.0, n_x=pair.n_x, n_k=64, seed=3)
    before = coding.evaluate(pair, phi, test, chan)["psnr"]
    hist = coding.train_colocated(pair, phi, train, chan, coding.LossConfig(lam=0.75), epochs=15)
    assert hist[-1] < hist[0]
    out = coding.evaluate(pair, phi, test, chan)
    assert out["accuracy"] >= 0.9 and out["psnr"] > before + 3


def test_mask_task_scores_iou():
    ds = data.synth_dataset("mask_shapes", 200, seed=0)
    phi, report = coding.train_pragmatic(ds, arch="linear", epochs=15)
    assert report["task_kind"] == coding.CONTINUOUS
    assert report["train_score"] > 0.5


def test_reconstruction_pretraining_lowers_lambda_one_loss():
    ds = data.synth_dataset("two_class_digits_8x8", 128, seed=2)
    pair = coding.build_coders(ds.shape, 0.25, np.random.default_rng(1))
    chan = ch.ChannelConfig(10.0, n_x=pair.n_x, n_k=64, seed=0)
    before = coding.reconstruction_loss(pair, ds.images, chan)
    pair, blob, hist = coding.pretrain_reconstruction(pair, ds, chan, epochs=5)
    assert coding.reconstruction_loss(pair, ds.images, chan) < before
    assert len(hist) == 5 and blob[:4] == b"SLNN"

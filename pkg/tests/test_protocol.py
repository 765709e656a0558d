import math
import subprocess
import sys

import numpy as np
import pytest

import oracles
from protocol_checks import (TRANSMITTER_ALLOWED, equivalence_error, protocol_round, random_setup,
                             symbol_violations, transmitter_closure)
from semcom import coding
from semcom.channel import ChannelConfig
from semcom.data import synth_dataset
from semcom.errors import ProtocolError
from semcom.nn import Adam, Tensor, model_to_bytes, sequential
from semcom.nn.layers import Model, dense
from semcom.protocol import wire
from semcom.protocol.receiver import Receiver, receiver_process_batch
from semcom.protocol.session import SessionConfig, SessionError, run_training
from semcom.protocol.transmitter import transmitter_apply_feedback, transmitter_send_batch
from semcom.schedule import batch_schedule



@pytest.mark.parametrize("seed", range(10))
def test_split_gradients_match_monolithic_oracle(seed):
    assert equivalence_error(seed) <= 1e-9


def test_lambda_one_never_evaluates_phi():
    enc, dec, phi, k, z, _, _, _, _ = random_setup(5)

    class Boom:
        def forward(self, *a, **kw):
            raise AssertionError("phi used at lambda = 1")

    chan = ChannelConfig(10.0, int(np.prod(enc.output_shape)), int(np.prod(enc.input_shape)))
    protocol_round(enc, dec, Boom(), k, None, coding.LossConfig(lam=1.0), chan)


# ---------------------------------------------------------------- privacy


def test_transmitter_import_closure_is_task_free():
    closure = transmitter_closure()
    assert closure <= TRANSMITTER_ALLOWED, closure - TRANSMITTER_ALLOWED
    assert "semcom.nn.losses" not in closure and "semcom.coding" not in closure


def test_transmitter_code_path_references_no_task_symbols():
    assert symbol_violations() == {}


def test_transmitter_runtime_modules():
    code = "import sys, semcom.protocol.transmitter; print('\\n'.join(m for m in sys.modules if m.startswith('semcom')))"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout.split()
    assert set(out) <= TRANSMITTER_ALLOWED, set(out) - TRANSMITTER_ALLOWED


def test_feedback_frame_carries_only_gradient_and_symbols():
    assert [f.name for f in wire.Feedback.__dataclass_fields__.values()] == ["epoch", "batch_id", "grad_y", "y"]


# ---------------------------------------------------------------- sessions


@pytest.fixture(scope="module")
def tiny():
    data = synth_dataset("two_class_digits_8x8", 96, 1)
    train, test = data.split(0.25, 1)
    phi, _ = coding.train_pragmatic(train, "linear", epochs=5, seed=0)
    return train, test, phi


def _session(tiny, transport="inproc", epochs=3, seed=0, handoff=False):
    train, test, phi = tiny
    pair = coding.build_coders(train.shape, 0.25, np.random.default_rng(seed))
    chan = ChannelConfig(10.0, pair.n_x, 64, seed=4)
    cfg = coding.LossConfig.for_task("discrete", 0.75)
    scfg = SessionConfig(max_epochs=epochs, transport=transport, seed=seed, timeout=20)
    return run_training(pair, phi, train, test, chan, cfg, scfg, handoff=handoff)


def test_inproc_and_tcp_train_identical_parameters(tiny):
    a = _session(tiny, "inproc")
    b = _session(tiny, "tcp")
    np.testing.assert_array_equal(a.pair.encoder.get_flat(), b.pair.encoder.get_flat())
    np.testing.assert_array_equal(a.pair.decoder.get_flat(), b.pair.decoder.get_flat())
    assert a.history == b.history


def test_session_history_shape(tiny):
    res = _session(tiny, epochs=2)
    assert [h["epoch"] for h in res.history] == [0, 1]
    assert {"esd", "alpha", "psnr", "accuracy", "stop"} <= set(res.history[0])


def test_zero_epochs_is_a_valid_empty_session(tiny):
    res = _session(tiny, epochs=0)
    assert res.history == []


def test_handoff_ships_encoder_params(tiny):
    res = _session(tiny, epochs=1, handoff=True)
    assert len(res.history) == 1


def test_out_of_order_batch_is_rejected():
    data = synth_dataset("two_class_digits_8x8", 8, 1)
    dec = sequential([("dense", 64), ("reshape", (8, 8, 1))], (16,), np.random.default_rng(0))
    rx = Receiver(dec, None, data, None, coding.LossConfig(lam=1.0))
    rx._esd, rx._eval = [], []
    msg = wire.DataBatch(0, 1, np.arange(2), np.zeros((2, 16)))
    with pytest.raises(ProtocolError):
        rx.process(msg)


def test_session_failure_reports_last_good_checkpoint(tiny, monkeypatch):
    from semcom.protocol import transmitter as tx_mod

    calls = {"n": 0}
    real = tx_mod.transmitter_send_batch

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] > 5:
            raise ProtocolError("injected link failure")
        return real(*a, **kw)

    monkeypatch.setattr(tx_mod, "transmitter_send_batch", flaky)
    with pytest.raises(SessionError) as info:
        _session(tiny, epochs=3)
    err = info.value
    assert isinstance(err.__cause__, ProtocolError)
    assert err.checkpoint is not None
    assert err.checkpoint.encoder.input_shape == (8, 8, 1)


def test_metrics_report_roundtrip_preserves_inf():
    m = wire.MetricsReport(3, {"psnr": math.inf, "esd": 0.5, "stop": False})
    back, _ = wire.decode_frame(wire.encode_frame(m))
    assert back.metrics["psnr"] == math.inf and back == m


def test_encoder_params_frame_roundtrip():
    enc = sequential(["flatten", ("dense", 4), "power_norm"], (2, 2, 1), np.random.default_rng(1))
    msg = wire.EncoderParams(model_to_bytes(enc))
    back, n = wire.decode_frame(wire.encode_frame(msg))
    assert back == msg and n == len(wire.encode_frame(msg))


def test_receiver_gradient_is_taken_before_decoder_update():
    # the fed-back gradient must come from the pre-update decoder
    rng = np.random.default_rng(3)
    dec = sequential([("dense", 4)], (2,), rng)
    y = rng.normal(size=(3, 2))
    k = rng.random((3, 4))
    ref = dec.copy()
    out = ref.forward(Tensor(y, requires_grad=True))
    expected = 2.0 * (out.data - k) / 4 @ ref.layers[0].params["weight"].data.T
    msg = wire.DataBatch(0, 0, np.arange(3), y)
    fb, _ = receiver_process_batch(dec, None, msg, k, None, coding.LossConfig(lam=1.0), Adam(dec.parameters(), eta=0.5))
    np.testing.assert_allclose(fb.grad_y, expected, atol=1e-12)


# ---------------------------------------------------------------- per-operation examples


def _dense_encoder(rng, n_in=4, n_x=2):
    return sequential([("dense", n_x), "power_norm"], (n_in,), rng, "encoder")


def test_noiseless_channel_delivers_f32_of_x():
    rng = np.random.default_rng(0)
    enc = _dense_encoder(rng)
    chan = ChannelConfig(math.inf, 2, 4)
    msg, x = transmitter_send_batch(enc, rng.random((3, 4)), chan, rng, 0, 0, np.arange(3))
    rx, _ = wire.decode_frame(wire.encode_frame(msg))
    np.testing.assert_array_equal(rx.y, oracles.f32(x.data))


def test_data_batch_frame_length():
    b, n_x = 5, 3
    msg = wire.DataBatch(0, 0, np.arange(b), np.zeros((b, n_x)))
    frame = wire.encode_frame(msg)
    # header 12 | epoch, batch_id, count | indices | rank + dims | data | crc
    assert len(frame) == 12 + 12 + 4 * b + 1 + 8 + b * n_x * 4 + 4


def test_same_seed_same_data_batch_bytes():
    def frame():
        rng = np.random.default_rng(1)
        enc = _dense_encoder(rng)
        chan = ChannelConfig(5.0, 2, 4, seed=9)
        msg, _ = transmitter_send_batch(enc, np.ones((2, 4)), chan, chan.rng(), 0, 0, np.arange(2))
        return wire.encode_frame(msg)

    assert frame() == frame()


def test_same_y_twice_gives_identical_feedback_bytes():
    rng = np.random.default_rng(2)
    dec = sequential([("dense", 4)], (2,), rng)
    msg = wire.DataBatch(0, 0, np.arange(2), rng.normal(size=(2, 2)))
    k = rng.random((2, 4))
    frames = []
    for _ in range(2):
        fb, _ = receiver_process_batch(dec.copy(), None, msg, k, None, coding.LossConfig(lam=1.0),
                                       Adam(dec.parameters()))
        frames.append(wire.encode_frame(fb))
    assert frames[0] == frames[1]


def test_zero_feedback_leaves_encoder_unchanged():
    rng = np.random.default_rng(3)
    enc = _dense_encoder(rng)
    before = enc.get_flat()
    chan = ChannelConfig(10.0, 2, 4)
    msg, x = transmitter_send_batch(enc, rng.random((2, 4)), chan, rng, 0, 0, np.arange(2))
    fb = wire.Feedback(0, 0, np.zeros((2, 2)), msg.y)
    transmitter_apply_feedback(enc, Adam(enc.parameters()), fb, x)
    np.testing.assert_array_equal(enc.get_flat(), before)


def test_single_dense_encoder_hand_chain_rule():
    # X = k W + b for one sample; dL/dW = k^T g, dL/db = g
    w = np.array([[1.0], [2.0]])
    enc = Model([dense(2, 1, None, w.copy(), np.zeros(1))], (2,))
    k = np.array([[3.0, -1.0]])
    chan = ChannelConfig(math.inf, 1, 2)
    msg, x = transmitter_send_batch(enc, k, chan, np.random.default_rng(0), 0, 0, np.arange(1))
    g = np.array([[0.5]])
    opt = Adam(enc.parameters(), eta=0.0)
    transmitter_apply_feedback(enc, opt, wire.Feedback(0, 0, g, msg.y), x)
    np.testing.assert_allclose(enc.layers[0].params["weight"].grad, [[1.5], [-0.5]], atol=0)
    np.testing.assert_allclose(enc.layers[0].params["bias"].grad, [0.5], atol=0)


def _adam(params, grads, state, eta=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    for i, (p, g) in enumerate(zip(params, grads)):
        rho, nu = state.get(i, (0.0, 0.0))
        rho = b1 * rho + (1 - b1) * g
        nu = b2 * nu + (1 - b2) * g * g
        state[i] = (rho, nu)
        p -= eta * rho / np.sqrt(nu + eps)


def test_one_epoch_matches_monolithic_training():
    data = synth_dataset("two_class_digits_8x8", 40, 3)
    phi, _ = coding.train_pragmatic(data, "linear", epochs=3, seed=0)
    pair = coding.build_coders(data.shape, 0.25, np.random.default_rng(4))
    e_spec, d_spec, p_spec = oracles.spec_of(pair.encoder), oracles.spec_of(pair.decoder), oracles.spec_of(phi)
    chan = ChannelConfig(10.0, pair.n_x, 64, seed=6)
    cfg = coding.LossConfig.for_task("discrete", 0.6, 2.0)
    scfg = SessionConfig(max_epochs=1, batch_size=8, seed=2, auto_alpha=False)
    res = run_training(pair, phi, data, None, chan, cfg, scfg)

    noise_rng = np.random.default_rng(chan.seed)
    e_state, d_state = {}, {}
    for idx in batch_schedule(len(data), 8, 2, 0):
        noise = noise_rng.normal(0.0, math.sqrt(chan.noise_var), size=(len(idx), pair.n_x))
        eg, dg, _ = oracles.monolithic_gradients(e_spec, d_spec, p_spec, data.images[idx], data.labels[idx],
                                                 0.6, 2.0, noise)
        for spec, grads, state in ((e_spec, eg, e_state), (d_spec, dg, d_state)):
            params = [l[1][n] for l in spec for n in sorted(l[1])]
            flat = [g[n] for g in grads if g is not None for n in sorted(g)]
            _adam(params, flat, state)
    ref_enc = np.concatenate([l[1][n].ravel() for l in e_spec for n in sorted(l[1])])
    ref_dec = np.concatenate([l[1][n].ravel() for l in d_spec for n in sorted(l[1])])
    np.testing.assert_allclose(res.pair.encoder.get_flat(), ref_enc, atol=1e-6, rtol=0)
    np.testing.assert_allclose(res.pair.decoder.get_flat(), ref_dec, atol=1e-6, rtol=0)


def test_feedback_path_never_touches_the_channel(monkeypatch):
    import semcom.channel

    enc, dec, phi, k, z, lam, alpha, task, _ = random_setup(3)
    chan = ChannelConfig(10.0, int(np.prod(enc.output_shape)), int(np.prod(enc.input_shape)), seed=1)
    rng = np.random.default_rng(0)
    msg, x = transmitter_send_batch(enc, k, chan, rng, 0, 0, np.arange(len(k)))

    def forbidden(*a, **kw):
        raise AssertionError("feedback went through the noisy channel")

    monkeypatch.setattr(semcom.channel, "awgn_transmit", forbidden)
    fb, _ = receiver_process_batch(dec, phi, msg, k, z, coding.LossConfig.for_task(task, lam, alpha),
                                   Adam(dec.parameters()))
    transmitter_apply_feedback(enc, Adam(enc.parameters()), fb, x)

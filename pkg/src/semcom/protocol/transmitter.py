"""Transmitter endpoint.

Holds the encoder and the shared library images, nothing else. It never sees
the receiver's task, targets, or loss: the only learning signal is the
per-sample gradient w.r.t. the channel output carried by Feedback frames.
"""

import logging

import numpy as np

from .. import channel as ch
from ..errors import ProtocolError
from ..nn import Adam, model_from_bytes
from ..schedule import batch_schedule
from . import wire

log = logging.getLogger(__name__)


def transmitter_send_batch(encoder, k, chan, rng, epoch, batch_id, indices, eval=False):
    """Encode ``k``, pass it through the channel and frame the result.

    Returns ``(DataBatch, x)`` where ``x`` is the encoder output Tensor with its
    graph, kept for the feedback step.
    """
    x = encoder.forward(k)
    y = ch.awgn_transmit(x.data, chan, rng)
    return wire.DataBatch(epoch, batch_id, np.asarray(indices), y, eval), x


def transmitter_apply_feedback(encoder, opt, fb, x):
    """Chain the fed-back ``grad_y`` through the cached encoder graph and step.

    The channel adds noise only, so dL/dX equals dL/dY. Per-sample gradients
    are averaged over the batch here.
    """
    grad = np.asarray(fb.grad_y, dtype=np.float64).reshape(x.shape)
    encoder.zero_grad()
    x.backward(grad / x.shape[0])
    opt.step()


class Transmitter:
    def __init__(self, encoder, train_images, test_images, chan, batch_size=32, seed=0, lr=1e-3):
        self.encoder = encoder
        self.train_images = np.asarray(train_images, dtype=np.float64)
        self.test_images = None if test_images is None else np.asarray(test_images, dtype=np.float64)
        self.chan = chan
        self.rng = np.random.default_rng(chan.seed)
        self.batch_size = batch_size
        self.seed = seed
        self.lr = lr
        self.opt = Adam(encoder.parameters(), eta=lr)
        self.checkpoint = (None, encoder.copy())

    def load_params(self, msg):
        self.encoder = model_from_bytes(msg.blob, name="encoder")
        self.opt = Adam(self.encoder.parameters(), eta=self.lr)
        self.checkpoint = (None, self.encoder.copy())

    def _expect(self, link, cls):
        msg = wire.read_frame(link)
        if not isinstance(msg, cls):
            raise ProtocolError(f"expected {cls.__name__}, got {type(msg).__name__}")
        return msg

    def run(self, link, max_epochs, await_params=False):
        """Drive the lock-step session until ``max_epochs`` or the receiver says stop."""
        if await_params:
            self.load_params(self._expect(link, wire.EncoderParams))
        for epoch in range(max_epochs):
            wire.write_frame(link, wire.Control(wire.ControlCode.START, epoch))
            sched = batch_schedule(len(self.train_images), self.batch_size, self.seed, epoch)
            for batch_id, idx in enumerate(sched):
                msg, x = transmitter_send_batch(self.encoder, self.train_images[idx], self.chan, self.rng,
                                                epoch, batch_id, idx)
                wire.write_frame(link, msg)
                fb = self._expect(link, wire.Feedback)
                if (fb.epoch, fb.batch_id) != (epoch, batch_id):
                    raise ProtocolError(f"feedback for {(fb.epoch, fb.batch_id)}, expected {(epoch, batch_id)}")
                transmitter_apply_feedback(self.encoder, self.opt, fb, x)
            batch_id = len(sched)
            if self.test_images is not None:
                for start in range(0, len(self.test_images), 256):
                    idx = np.arange(start, min(start + 256, len(self.test_images)))
                    msg, _ = transmitter_send_batch(self.encoder, self.test_images[idx], self.chan, self.rng,
                                                    epoch, batch_id, idx, eval=True)
                    wire.write_frame(link, msg)
                    batch_id += 1
            wire.write_frame(link, wire.Control(wire.ControlCode.STOP_EPOCH, epoch))
            report = self._expect(link, wire.MetricsReport)
            self.checkpoint = (epoch, self.encoder.copy())
            log.debug("epoch %d: %s", epoch, report.metrics)
            if report.metrics.get("stop"):
                break
        wire.write_frame(link, wire.Control(wire.ControlCode.SHUTDOWN, 0))
        return self.encoder

"""Receiver endpoint: decoder, frozen pragmatic function, labels, and the loss."""

import logging
import math

import numpy as np

from .. import coding
from ..data import psnr
from ..errors import ProtocolError
from ..nn import Adam, Tensor, model_to_bytes
from ..nn import tensor as T
from . import wire

log = logging.getLogger(__name__)


def receiver_process_batch(decoder, phi, msg, k, z, cfg, opt):
    """Decode one DataBatch, update the decoder and build the Feedback frame.

    Both gradients come from a single backward pass of the summed per-sample
    distortion, so the decoder step and the fed-back ``grad_y`` are taken at
    the same parameters. The decoder gradient is rescaled to the batch mean.
    Returns ``(Feedback, esd)``.
    """
    y = Tensor(msg.y, requires_grad=True)
    k_hat = decoder.forward(y)
    z_hat = coding.pragmatic_apply(phi, k_hat) if cfg.lam < 1.0 else None
    per = coding.per_sample_distortion(coding.TrainingSample(k, k_hat, z, z_hat), cfg)
    decoder.zero_grad()
    T.total(per).backward()
    b = y.shape[0]
    for p in decoder.parameters():
        if p.grad is not None:
            p.grad = p.grad / b
    opt.step()
    return wire.Feedback(msg.epoch, msg.batch_id, y.grad, msg.y), float(per.data.mean())


class Receiver:
    def __init__(self, decoder, phi, train, test, loss_cfg, task_kind=coding.DISCRETE, lr=1e-3,
                 auto_alpha=True, patience=10, min_delta=1e-5):
        self.decoder = decoder
        self.phi = phi
        self.train = train
        self.test = test
        self.cfg = loss_cfg
        self.task_kind = task_kind
        self.opt = Adam(decoder.parameters(), eta=lr)
        self.auto_alpha = auto_alpha and 0.0 < loss_cfg.lam < 1.0
        self.patience = patience
        self.min_delta = min_delta
        self.history = []
        # decoder copies keyed by last completed epoch (None = initial)
        self.checkpoints = {None: decoder.copy()}
        self._best = math.inf
        self._stale = 0
        self._expected = (0, 0)

    def _calibrate(self, msg, k, z):
        k_hat = self.decoder.forward(Tensor(msg.y))
        z_hat = coding.pragmatic_apply(self.phi, k_hat)
        d_ob, d_pr = coding.distortion_terms(coding.TrainingSample(k, k_hat, z, z_hat), self.cfg)
        self.cfg = coding.LossConfig(self.cfg.lam, coding.calibrate_alpha(d_ob.data, d_pr.data),
                                     self.cfg.d_ob, self.cfg.d_pr)
        self.auto_alpha = False
        log.info("alpha calibrated to %.6g", self.cfg.alpha)

    def _check_order(self, msg):
        if (msg.epoch, msg.batch_id) != self._expected:
            raise ProtocolError(f"batch {(msg.epoch, msg.batch_id)} out of order, expected {self._expected}")
        self._expected = (msg.epoch, msg.batch_id + 1)

    def process(self, msg):
        self._check_order(msg)
        k = self.train.images[msg.indices]
        z = None if self.cfg.lam == 1.0 else self.train.labels[msg.indices]
        if self.auto_alpha:
            self._calibrate(msg, k, z)
        fb, esd = receiver_process_batch(self.decoder, self.phi, msg, k, z, self.cfg, self.opt)
        self._esd.append((esd, len(msg.indices)))
        return fb

    def evaluate(self, msg):
        self._check_order(msg)
        self._eval.append((msg.indices, self.decoder.forward(msg.y).data))

    def end_epoch(self, epoch):
        esd = sum(e * n for e, n in self._esd) / max(1, sum(n for _, n in self._esd))
        row = {"epoch": epoch, "esd": esd, "alpha": self.cfg.alpha}
        if self._eval:
            idx = np.concatenate([i for i, _ in self._eval])
            recon = np.concatenate([r for _, r in self._eval])
            row["psnr"] = psnr(self.test.images[idx], recon)
            if self.phi is not None and self.test.labels is not None:
                key = "accuracy" if self.task_kind == coding.DISCRETE else "iou"
                row[key] = coding.task_score(self.phi, recon, self.test.labels[idx], self.task_kind)
        if self._best - esd < self.min_delta:
            self._stale += 1
        else:
            self._stale = 0
        self._best = min(self._best, esd)
        row["stop"] = self._stale >= self.patience
        self.history.append(row)
        self.checkpoints[epoch] = self.decoder.copy()
        self.checkpoints.pop(epoch - 2, None)
        return row

    def run(self, link, encoder_for_handoff=None):
        """Serve the session; returns the per-epoch metrics history."""
        if encoder_for_handoff is not None:
            wire.write_frame(link, wire.EncoderParams(model_to_bytes(encoder_for_handoff)))
        while True:
            msg = wire.read_frame(link)
            if isinstance(msg, wire.Control):
                if msg.code is wire.ControlCode.SHUTDOWN:
                    return self.history
                if msg.code is wire.ControlCode.START:
                    if msg.epoch != len(self.history):
                        raise ProtocolError(f"epoch {msg.epoch} started out of order")
                    self._expected = (msg.epoch, 0)
                    self._esd, self._eval = [], []
                else:
                    row = self.end_epoch(msg.epoch)
                    wire.write_frame(link, wire.MetricsReport(msg.epoch, row))
            elif isinstance(msg, wire.DataBatch):
                if msg.eval:
                    self.evaluate(msg)
                else:
                    wire.write_frame(link, self.process(msg))
            else:
                raise ProtocolError(f"receiver cannot handle {type(msg).__name__}")

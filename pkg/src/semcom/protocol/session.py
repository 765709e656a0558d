"""Run both endpoints of a training session over one transport."""

import logging
import threading
from dataclasses import dataclass, field

from .. import coding
from ..errors import ConfigError, SemcomError, TransportError
from . import transport
from .receiver import Receiver
from .transmitter import Transmitter

log = logging.getLogger(__name__)


@dataclass
class SessionConfig:
    max_epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    patience: int = 10
    min_delta: float = 1e-5
    auto_alpha: bool = True
    transport: str = "inproc"
    host: str = "127.0.0.1"
    port: int = 0
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("max_epochs >= 0, batch_size >= 1 and patience >= 1 required")
        if self.transport not in ("inproc", "tcp"):
            raise ConfigError(f"unknown transport {self.transport!r}")


class SessionError(SemcomError):
    """A session died; ``checkpoint`` holds the last complete epoch's coders."""

    def __init__(self, message, checkpoint=None, last_epoch=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.last_epoch = last_epoch


@dataclass
class TrainingResult:
    pair: coding.CoderPair
    history: list = field(default_factory=list)
    alpha: float = 1.0


def _links(cfg):
    if cfg.transport == "inproc":
        return transport.inproc_pair(cfg.timeout)
    listener = transport.TcpListener(cfg.host, cfg.port, cfg.timeout)
    box = {}

    def accept():
        box["rx"] = listener.accept()

    t = threading.Thread(target=accept, daemon=True)
    t.start()
    tx = transport.tcp_connect(cfg.host, listener.port, cfg.timeout)
    t.join(cfg.timeout)
    listener.close()
    if "rx" not in box:
        tx.close()
        raise TransportError("receiver never accepted the connection")
    return tx, box["rx"]


def run_training(pair, phi, train, test, chan, loss_cfg, cfg=None, handoff=False):
    """Train ``pair`` with the split protocol; transmitter and receiver run in two threads.

    With ``handoff`` the receiver first ships its (pretrained) encoder to the
    transmitter as an EncoderParams frame.
    """
    cfg = cfg or SessionConfig()
    tx_link, rx_link = _links(cfg)
    tx = Transmitter(pair.encoder, train.images, None if test is None else test.images, chan,
                     cfg.batch_size, cfg.seed, cfg.lr)
    rx = Receiver(pair.decoder, phi, train, test, loss_cfg, pair.task_kind, cfg.lr,
                  cfg.auto_alpha, cfg.patience, cfg.min_delta)
    errors = {}

    def run_rx():
        try:
            rx.run(rx_link, pair.encoder if handoff else None)
        except BaseException as exc:  # noqa: BLE001 - reported to the caller below
            errors["receiver"] = exc
            rx_link.close()

    def run_tx():
        try:
            tx.run(tx_link, cfg.max_epochs, await_params=handoff)
        except BaseException as exc:  # noqa: BLE001
            errors["transmitter"] = exc
            tx_link.close()

    threads = [threading.Thread(target=run_rx, name="receiver"), threading.Thread(target=run_tx, name="transmitter")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    tx_link.close()
    rx_link.close()

    if errors:
        # a peer's own failure beats the TransportError it causes on the other side
        ranked = sorted(errors.values(), key=lambda e: isinstance(e, TransportError))
        first = ranked[0]
        if not isinstance(first, Exception):
            raise first
        epoch, encoder = tx.checkpoint
        decoder = rx.checkpoints.get(epoch, rx.checkpoints[None])
        ckpt = coding.CoderPair(encoder, decoder, pair.cr, pair.task_kind)
        raise SessionError(f"session failed: {first}", ckpt, epoch) from first

    trained = coding.CoderPair(tx.encoder, rx.decoder, pair.cr, pair.task_kind, dict(pair.meta))
    return TrainingResult(trained, rx.history, rx.cfg.alpha)

"""Semantic coders, the pragmatic function and the semantic-distortion loss.

The per-sample distortion is

    L(T) = lam * alpha * D_ob(K, K_hat) + (1 - lam) * D_pr(Z, Z_hat)

with D_ob the mean squared error and D_pr either cross entropy (class
labels) or mean squared error (masks). Both terms are penalties; the
continuous form therefore adds, never subtracts, the mask term.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from .data import accuracy, iou, psnr
from .errors import ConfigError, ShapeError
from .nn import Adam, Model, Tensor, conv_kernel_size, model_from_bytes, model_to_bytes, sequential
from .nn import tensor as T
from .nn.layers import ACTIVATIONS
from .nn.losses import ce_per_sample, mse_per_sample
from .schedule import batch_schedule

DISCRETE = "discrete"
CONTINUOUS = "continuous"


def lambda_s(cr):
    """Default trade-off weight ``1 - cr``."""
    if not 0 <= cr <= 1:
        raise ValueError(f"cr must lie in [0, 1], got {cr}")
    return 1.0 - cr


@dataclass
class LossConfig:
    lam: float = 0.5
    alpha: float = 1.0
    d_ob: str = "mse"
    d_pr: str = "cross_entropy"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.d_ob != "mse":
            raise ConfigError("d_ob must be 'mse'")
        if self.d_pr not in ("cross_entropy", "mse"):
            raise ConfigError(f"unknown d_pr {self.d_pr!r}")

    @classmethod
    def for_task(cls, task_kind, lam, alpha=1.0):
        return cls(lam=lam, alpha=alpha, d_pr="cross_entropy" if task_kind == DISCRETE else "mse")

    @property
    def task_kind(self):
        return DISCRETE if self.d_pr == "cross_entropy" else CONTINUOUS


@dataclass
class TrainingSample:
    """One (K, K_hat, Z, Z_hat) tuple; fields may also carry a leading batch axis."""

    k: np.ndarray
    k_hat: Tensor
    z: object = None
    z_hat: Tensor = None


@dataclass
class CoderPair:
    encoder: Model
    decoder: Model
    cr: float
    task_kind: str = DISCRETE
    meta: dict = field(default_factory=dict)
    # False only for evaluation-time pass-through coders
    checked: bool = True

    def __post_init__(self):
        if self.checked:
            self.validate()

    @property
    def n_x(self):
        return int(np.prod(self.encoder.output_shape))

    @property
    def source_shape(self):
        return self.encoder.input_shape

    def validate(self):
        if self.decoder.input_shape != (self.n_x,):
            raise ShapeError(f"decoder input {self.decoder.input_shape} != encoder output ({self.n_x},)")
        if tuple(self.decoder.output_shape) != tuple(self.encoder.input_shape):
            raise ShapeError(f"decoder output {self.decoder.output_shape} != source {self.encoder.input_shape}")
        for m in (self.encoder, self.decoder):
            if any(layer.kind in ACTIVATIONS for layer in m.layers):
                raise ConfigError(f"{m.name} contains activation layers; coders must be activation-free")
        kinds = [layer.kind for layer in self.encoder.layers]
        if not kinds or kinds[-1] != "power_norm" or kinds.count("power_norm") != 1:
            raise ConfigError("encoder must end in exactly one power_norm layer")
        if any(layer.kind == "power_norm" for layer in self.decoder.layers):
            raise ConfigError("decoder may not contain power_norm")

    def copy(self):
        return CoderPair(self.encoder.copy(), self.decoder.copy(), self.cr, self.task_kind, dict(self.meta), self.checked)


def build_coders(source_shape, cr, rng, arch="dense", task_kind=DISCRETE):
    """Activation-free encoder/decoder pair at compression rate ``cr``.

    ``dense``: one fully connected layer each way.
    ``conv``: a 4-channel convolution (kernel from :func:`conv_kernel_size`)
    before the dense projection.
    """
    source_shape = tuple(source_shape)
    n_k = int(np.prod(source_shape))
    n_x = ch.channel_dim(n_k, cr)
    if arch == "dense":
        enc_specs = ["flatten", ("dense", n_x), "power_norm"]
    elif arch == "conv":
        k = min(conv_kernel_size(n_x, cr), source_shape[0], source_shape[1])
        enc_specs = [("conv2d", 4, k, 1, k // 2), "flatten", ("dense", n_x), "power_norm"]
    else:
        raise ConfigError(f"unknown coder arch {arch!r}")
    encoder = sequential(enc_specs, source_shape, rng, name="encoder")
    decoder = sequential([("dense", n_k), ("reshape", source_shape)], (n_x,), rng, name="decoder")
    return CoderPair(encoder, decoder, ch.compression_rate(n_x, n_k), task_kind)


def build_pragmatic(source_shape, rng, n_classes=2, task_kind=DISCRETE, arch="mlp", hidden=32):
    source_shape = tuple(source_shape)
    n_k = int(np.prod(source_shape))
    out = n_classes if task_kind == DISCRETE else n_k
    if arch == "linear":
        specs = ["flatten", ("dense", out)]
    elif arch == "mlp":
        specs = ["flatten", ("dense", hidden), "relu", ("dense", out)]
    else:
        raise ConfigError(f"unknown pragmatic arch {arch!r}")
    if task_kind == CONTINUOUS:
        specs += ["sigmoid", ("reshape", source_shape)]
    return sequential(specs, source_shape, rng, name="phi")


# ---------------------------------------------------------------- losses


def distortion_terms(t, cfg):
    """Per-sample (D_ob, D_pr) tensors. D_pr is None when lam == 1."""
    d_ob = mse_per_sample(t.k_hat, np.asarray(t.k, dtype=np.float64))
    if cfg.lam == 1.0:
        return d_ob, None
    if cfg.d_pr == "cross_entropy":
        d_pr = ce_per_sample(t.z_hat, t.z)
    else:
        d_pr = mse_per_sample(t.z_hat, np.asarray(t.z, dtype=np.float64))
    return d_ob, d_pr


def per_sample_distortion(t, cfg):
    """(B,) tensor of semantic distortions for a batched sample."""
    if not 0.0 <= cfg.lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {cfg.lam}")
    d_ob, d_pr = distortion_terms(t, cfg)
    loss = T.mul(d_ob, cfg.lam * cfg.alpha)
    if d_pr is not None:
        loss = T.add(loss, T.mul(d_pr, 1.0 - cfg.lam))
    return loss


def _batched(t):
    k = np.asarray(t.k, dtype=np.float64)
    k_hat = t.k_hat if isinstance(t.k_hat, Tensor) else Tensor(t.k_hat)
    if k_hat.data.ndim == k.ndim + 1:
        return t
    z_hat = t.z_hat
    if z_hat is not None:
        z_hat = T.reshape(z_hat if isinstance(z_hat, Tensor) else Tensor(z_hat), (1,) + np.shape(_data(z_hat)))
    z = None if t.z is None else np.asarray(t.z)[None, ...] if np.ndim(t.z) else np.array([t.z])
    return TrainingSample(k[None, ...], T.reshape(k_hat, (1,) + k_hat.shape), z, z_hat)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def semantic_distortion(t, cfg):
    """Scalar distortion of a single (unbatched) training sample."""
    return T.total(per_sample_distortion(_batched(t), cfg))


def esd_batch(samples, cfg):
    """Batch-mean semantic distortion.

    ``samples`` is either a list of single samples or one batched sample.
    """
    if isinstance(samples, TrainingSample):
        return T.mean(per_sample_distortion(samples, cfg))
    if not samples:
        raise ValueError("empty batch")
    parts = [semantic_distortion(s, cfg) for s in samples]
    acc = parts[0]
    for p in parts[1:]:
        acc = T.add(acc, p)
    return T.mul(acc, 1.0 / len(parts))


def calibrate_alpha(d_ob, d_pr):
    """Scale making ``alpha * d_ob`` equal to ``d_pr`` (falls back to 1)."""
    d_ob, d_pr = float(np.mean(d_ob)), float(np.mean(d_pr))
    if d_ob <= 0 or d_pr <= 0 or not math.isfinite(d_pr / d_ob):
        return 1.0
    return d_pr / d_ob


# ---------------------------------------------------------------- pragmatic


def pragmatic_apply(phi, k_hat):
    """Run the (frozen) pragmatic function on reconstructions."""
    return phi.forward(k_hat)


def predict(phi, images, task_kind=DISCRETE, batch_size=256):
    outs = []
    for i in range(0, len(images), batch_size):
        outs.append(phi.forward(images[i:i + batch_size]).data)
    out = np.concatenate(outs)
    return out.argmax(axis=1) if task_kind == DISCRETE else out


def task_score(phi, recon, labels, task_kind):
    """Accuracy (discrete) or mean per-image IoU (continuous)."""
    pred = predict(phi, recon, task_kind)
    if task_kind == DISCRETE:
        return accuracy(pred, labels)
    return float(np.mean([iou(p, q) for p, q in zip(pred, labels)]))


def train_pragmatic(dataset, arch="mlp", epochs=30, seed=0, test=None, batch_size=32, lr=5e-3):
    """Supervised training of the receiver's pragmatic function, returned frozen.

    Returns ``(phi, report)`` with train/test task scores.
    """
    if len(dataset) == 0 or dataset.labels is None:
        raise ValueError("train_pragmatic needs a non-empty labeled dataset")
    task_kind = CONTINUOUS if dataset.is_mask_task else DISCRETE
    rng = np.random.default_rng(seed)
    n_classes = max(2, dataset.n_classes) if task_kind == DISCRETE else 0
    phi = build_pragmatic(dataset.shape, rng, n_classes, task_kind, arch)
    opt = Adam(phi.parameters(), eta=lr)
    for epoch in range(epochs):
        for idx in batch_schedule(len(dataset), batch_size, seed, epoch):
            out = phi.forward(dataset.images[idx])
            if task_kind == DISCRETE:
                loss = T.mean(ce_per_sample(out, dataset.labels[idx]))
            else:
                loss = T.mean(mse_per_sample(out, dataset.labels[idx]))
            phi.zero_grad()
            loss.backward()
            opt.step()
    phi.freeze()
    report = {"task_kind": task_kind, "train_score": task_score(phi, dataset.images, dataset.labels, task_kind)}
    if test is not None and len(test):
        report["test_score"] = task_score(phi, test.images, test.labels, task_kind)
    return phi, report


# ---------------------------------------------------------------- co-located training


def colocated_step(pair, phi, k, z, cfg, chan, rng, opt_enc, opt_dec):
    """One end-to-end step with encoder, channel and decoder in one graph."""
    x = pair.encoder.forward(k)
    y = ch.awgn_transmit(x, chan, rng)
    k_hat = pair.decoder.forward(y)
    z_hat = pragmatic_apply(phi, k_hat) if cfg.lam < 1.0 else None
    loss = esd_batch(TrainingSample(k, k_hat, z, z_hat), cfg)
    pair.encoder.zero_grad()
    pair.decoder.zero_grad()
    loss.backward()
    opt_enc.step()
    opt_dec.step()
    return loss.item()


def train_colocated(pair, phi, dataset, chan, cfg, epochs, batch_size=32, seed=0, lr=1e-3):
    """Monolithic training of both coders (receiver-local pretraining, retrained baselines).

    Returns the list of per-epoch mean losses.
    """
    rng = np.random.default_rng(chan.seed)
    opt_enc = Adam(pair.encoder.parameters(), eta=lr)
    opt_dec = Adam(pair.decoder.parameters(), eta=lr)
    history = []
    for epoch in range(epochs):
        losses = []
        for idx in batch_schedule(len(dataset), batch_size, seed, epoch):
            z = None if dataset.labels is None else dataset.labels[idx]
            losses.append(colocated_step(pair, phi, dataset.images[idx], z, cfg, chan, rng, opt_enc, opt_dec))
        history.append(float(np.mean(losses)))
    return history


def reconstruction_loss(pair, images, chan, seed=0):
    """Mean D_ob over ``images`` through the channel (lam = 1 ESD)."""
    rng = np.random.default_rng(seed)
    x = pair.encoder.forward(images)
    y = ch.awgn_transmit(x.data, chan, rng)
    k_hat = pair.decoder.forward(y)
    return float(np.mean(mse_per_sample(k_hat, images).data))


def pretrain_reconstruction(pair, dataset, chan, epochs, batch_size=32, seed=0, lr=1e-3):
    """Receiver-local pretraining on reconstruction only.

    Returns ``(pair, encoder_blob, history)``. The returned pair's encoder is
    reloaded from the blob so both ends hold the same float32-rounded weights.
    """
    cfg = LossConfig(lam=1.0, alpha=1.0, d_pr="cross_entropy" if pair.task_kind == DISCRETE else "mse")
    history = train_colocated(pair, None, dataset, chan, cfg, epochs, batch_size, seed, lr)
    blob = model_to_bytes(pair.encoder)
    pair.encoder = model_from_bytes(blob, name="encoder")
    return pair, blob, history


def evaluate(pair, phi, dataset, chan, seed=0, batch_size=256):
    """Accuracy/IoU and PSNR of the full chain on ``dataset``."""
    rng = np.random.default_rng(seed)
    recon = []
    for i in range(0, len(dataset), batch_size):
        k = dataset.images[i:i + batch_size]
        y = ch.awgn_transmit(pair.encoder.forward(k).data, chan, rng)
        recon.append(pair.decoder.forward(y).data)
    recon = np.concatenate(recon)
    out = {"psnr": psnr(dataset.images, recon)}
    if phi is not None and dataset.labels is not None:
        key = "accuracy" if pair.task_kind == DISCRETE else "iou"
        out[key] = task_score(phi, recon, dataset.labels, pair.task_kind)
    return out

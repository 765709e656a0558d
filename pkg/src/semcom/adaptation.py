"""CycleGAN data adaptation: map observed images S into the library domain.

Generators ``g_k: S -> K`` and ``g_s: K -> S`` are trained against
discriminators ``d_k`` (on K) and ``d_s`` (on S). The objective is

    L = L_gan(g_s, d_s) + L_gan(g_k, d_k) + lambda_cyc * L_cycle

minimized by the generators and maximized by the discriminators, where
``L_gan = E log D(real) + E log(1 - D(G(source)))``. Training happens at the
transmitter only and needs no labels.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import match_images
from .errors import ConfigError, NumericError, ShapeError
from .nn import Adam, Tensor, load_model, save_model, sequential
from .nn import tensor as T
from .nn.losses import l1_per_sample
from .schedule import batch_schedule

log = logging.getLogger(__name__)

EPS_P = 1e-7


@dataclass
class CganBundle:
    g_k: object
    g_s: object
    d_k: object
    d_s: object

    NAMES = ("g_k", "g_s", "d_k", "d_s")

    def models(self):
        return [getattr(self, n) for n in self.NAMES]

    def copy(self):
        return CganBundle(*(m.copy() for m in self.models()))

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for n in self.NAMES:
            save_model(getattr(self, n), directory / f"{n}.slnn")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        return cls(*(load_model(directory / f"{n}.slnn", n) for n in cls.NAMES))


def _resample_operator(in_shape, out_shape):
    """Matrix M with ``flatten(match_images(x)) == flatten(x) @ M``."""
    n_in = int(np.prod(in_shape))
    if tuple(in_shape) == tuple(out_shape):
        return np.eye(n_in)
    basis = np.eye(n_in).reshape((n_in,) + tuple(in_shape))
    return match_images(basis, out_shape).reshape(n_in, -1)


def build_generator(in_shape, out_shape, rng, arch="dense", identity=True, name="g"):
    """Two-layer generator without activations.

    ``dense``: two fully connected layers. With ``identity=True`` the first
    layer starts as the bilinear resampling operator and the second as the
    identity, so the untrained generator equals the resampling baseline.
    ``conv``: two 3x3 same-padding convolutions (requires equal H, W).
    """
    in_shape, out_shape = tuple(in_shape), tuple(out_shape)
    n_out = int(np.prod(out_shape))
    if arch == "dense":
        g = sequential(["flatten", ("dense", n_out), ("dense", n_out), ("reshape", out_shape)], in_shape, rng, name)
        if identity:
            g.layers[1].params["weight"].data = _resample_operator(in_shape, out_shape)
            g.layers[2].params["weight"].data = np.eye(n_out)
        return g
    if arch == "conv":
        if in_shape[:2] != out_shape[:2]:
            raise ConfigError("conv generators need equal spatial size; use arch='dense'")
        g = sequential([("conv2d", out_shape[2], 3, 1, 1), ("conv2d", out_shape[2], 3, 1, 1)], in_shape, rng, name)
        if identity:
            for i, layer in enumerate(g.layers):
                w = np.zeros_like(layer.params["weight"].data)
                c_in = w.shape[2]
                for c in range(w.shape[3]):
                    w[1, 1, c % c_in, c] = 1.0 if (i == 1 or c_in == w.shape[3]) else 1.0 / c_in
                layer.params["weight"].data = w
        return g
    raise ConfigError(f"unknown generator arch {arch!r}")


def build_discriminator(shape, rng, hidden=32, name="d"):
    return sequential(["flatten", ("dense", hidden), "tanh", ("dense", 1), "sigmoid"], shape, rng, name)


def build_bundle(lib_shape, obs_shape, rng, arch="dense", hidden=32, identity=True):
    return CganBundle(
        g_k=build_generator(obs_shape, lib_shape, rng, arch, identity, "g_k"),
        g_s=build_generator(lib_shape, obs_shape, rng, arch, identity, "g_s"),
        d_k=build_discriminator(lib_shape, rng, hidden, "d_k"),
        d_s=build_discriminator(obs_shape, rng, hidden, "d_s"),
    )


def _check_prob(p):
    if not np.all(np.isfinite(p.data)) or np.any(p.data < 0.0) or np.any(p.data > 1.0):
        raise NumericError("discriminator output outside [0, 1]")
    return p


def _log_term(p, negate_inside):
    p = _check_prob(p)
    if negate_inside:
        p = T.sub(1.0, p)
    return T.mean(T.log_clamped(p, EPS_P))


def gan_loss(g, d, real_batch, source_batch, fake=None):
    """``mean log D(real) + mean log(1 - D(G(source)))``.

    Pass ``fake`` to reuse already generated samples (e.g. detached ones).
    """
    if fake is None:
        fake = g.forward(source_batch)
    return T.add(_log_term(d.forward(real_batch), False), _log_term(d.forward(fake), True))


def cycle_loss(g_k, g_s, k_batch, s_batch):
    """``E|G_K(G_S(K)) - K|_1 + E|G_S(G_K(S)) - S|_1`` with per-pixel mean absolute error."""
    k_batch = np.asarray(k_batch, dtype=np.float64)
    s_batch = np.asarray(s_batch, dtype=np.float64)
    if len(k_batch) == 0 or len(s_batch) == 0:
        raise ValueError("cycle_loss needs non-empty batches")
    k_cyc = g_k.forward(g_s.forward(k_batch))
    s_cyc = g_s.forward(g_k.forward(s_batch))
    return T.add(T.mean(l1_per_sample(k_cyc, k_batch)), T.mean(l1_per_sample(s_cyc, s_batch)))


def cgan_terms(bundle, k_batch, s_batch):
    """(L_gan_S, L_gan_K, L_cycle) as graph tensors."""
    gan_s = gan_loss(bundle.g_s, bundle.d_s, s_batch, k_batch)
    gan_k = gan_loss(bundle.g_k, bundle.d_k, k_batch, s_batch)
    return gan_s, gan_k, cycle_loss(bundle.g_k, bundle.g_s, k_batch, s_batch)


def cgan_total(bundle, k_batch, s_batch, lambda_cyc=10.0):
    gan_s, gan_k, cyc = cgan_terms(bundle, k_batch, s_batch)
    return T.add(T.add(gan_s, gan_k), T.mul(cyc, lambda_cyc))


def generator_step(bundle, k_batch, s_batch, opt_g, lambda_cyc=10.0):
    loss = cgan_total(bundle, k_batch, s_batch, lambda_cyc)
    for m in bundle.models():
        m.zero_grad()
    loss.backward()
    opt_g.step()
    return loss.item()


def discriminator_step(bundle, k_batch, s_batch, opt_d):
    fake_s = Tensor(bundle.g_s.forward(k_batch).data)
    fake_k = Tensor(bundle.g_k.forward(s_batch).data)
    adv = T.add(gan_loss(None, bundle.d_s, s_batch, None, fake_s), gan_loss(None, bundle.d_k, k_batch, None, fake_k))
    for m in (bundle.d_k, bundle.d_s):
        m.zero_grad()
    T.mul(adv, -1.0).backward()
    opt_d.step()
    return adv.item()


def discriminator_accuracy(d, g, real, source):
    """Fraction of real/generated samples ``d`` labels correctly at threshold 0.5."""
    p_real = d.forward(real).data.reshape(-1)
    p_fake = d.forward(g.forward(source).data).data.reshape(-1)
    return float((np.sum(p_real > 0.5) + np.sum(p_fake <= 0.5)) / (p_real.size + p_fake.size))


def train_cgan(bundle, lib_images, obs_images, epochs, batch_size=32, seed=0, lr=2e-4, beta1=0.5,
               lambda_cyc=10.0, patience=None, min_delta=1e-5, on_epoch=None):
    """Alternating generator/discriminator updates on unlabeled batches.

    Each step draws ``batch_size`` library and observed images, takes one Adam
    step on both generators (minimizing the full objective) and then one on
    both discriminators (maximizing the adversarial terms). Returns
    ``(bundle, history)`` where history holds per-epoch mean objective values.
    """
    lib_images = np.asarray(lib_images, dtype=np.float64)
    obs_images = np.asarray(obs_images, dtype=np.float64)
    if len(lib_images) == 0 or len(obs_images) == 0:
        raise ValueError("train_cgan needs non-empty library and observed datasets")
    if lib_images.shape[1:] != bundle.g_s.input_shape or obs_images.shape[1:] != bundle.g_k.input_shape:
        raise ShapeError("dataset shapes do not match the bundle")
    opt_g = Adam(bundle.g_k.parameters() + bundle.g_s.parameters(), eta=lr, beta1=beta1)
    opt_d = Adam(bundle.d_k.parameters() + bundle.d_s.parameters(), eta=lr, beta1=beta1)
    history = []
    best, stale = np.inf, 0
    for epoch in range(epochs):
        lib_sched = batch_schedule(len(lib_images), batch_size, seed, epoch)
        obs_sched = batch_schedule(len(obs_images), batch_size, seed + 1, epoch)
        g_losses, d_losses = [], []
        for ki, si in zip(lib_sched, obs_sched):
            k, s = lib_images[ki], obs_images[si]
            g_losses.append(generator_step(bundle, k, s, opt_g, lambda_cyc))
            d_losses.append(discriminator_step(bundle, k, s, opt_d))
        row = {"epoch": epoch, "cgan": float(np.mean(g_losses)), "adversarial": float(np.mean(d_losses))}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row, bundle)
        if patience is not None:
            if best - row["cgan"] < min_delta:
                stale += 1
            else:
                stale = 0
            best = min(best, row["cgan"])
            if stale >= patience:
                break
    return bundle, history


def adapt(g_k, s):
    """Convert observed images into the library domain (deterministic)."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[1:] != g_k.input_shape:
        raise ShapeError(f"g_k expects (N, {g_k.input_shape}), got {s.shape}",
                         expected=g_k.input_shape, actual=s.shape[1:])
    out = [g_k.forward(s[i:i + 256]).data for i in range(0, len(s), 256)]
    return np.concatenate(out) if out else np.zeros((0,) + tuple(g_k.output_shape))

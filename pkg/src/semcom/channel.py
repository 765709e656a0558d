"""Power-normalized AWGN channel and compression-rate bookkeeping.

Signal power is fixed at 1 by the encoder's terminal ``power_norm`` layer, so
the noise variance is ``10 ** (-snr_db / 10)``. ``snr_db = inf`` is the
noiseless sentinel.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import tensor as T
from .nn.tensor import Tensor

QUANT_LEVELS = 256
QUANT_CLIP = 4.0


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    n_x: int = 16
    n_k: int = 64
    seed: int = 0
    quantize: bool = False

    def __post_init__(self):
        if self.n_x < 1 or self.n_k < 1:
            raise ConfigError("channel dimensions must be >= 1")
        if self.n_x > self.n_k:
            raise ConfigError(f"n_x={self.n_x} exceeds n_k={self.n_k}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ConfigError(f"invalid snr_db {self.snr_db}")

    @property
    def noiseless(self):
        return self.snr_db == math.inf

    @property
    def noise_var(self):
        return 0.0 if self.noiseless else 10.0 ** (-self.snr_db / 10.0)

    @property
    def cr(self):
        return compression_rate(self.n_x, self.n_k)

    def rng(self):
        return np.random.default_rng(self.seed)


def compression_rate(n_x, n_k):
    if n_x <= 0 or n_k <= 0:
        raise ValueError("dimensions must be positive")
    return n_x / n_k


def channel_dim(n_k, cr):
    """Symbols per source item for a target compression rate (at least 1)."""
    if not 0 < cr <= 1:
        raise ConfigError(f"cr must lie in (0, 1], got {cr}")
    return max(1, int(round(cr * n_k)))


def power_normalize(x):
    """Rescale each sample so its mean per-symbol power is 1 (differentiable)."""
    if not isinstance(x, Tensor):
        return T.power_norm(Tensor(x)).data
    return T.power_norm(x)


def quantize_8bit(x):
    """Uniform 256-level quantizer on [-QUANT_CLIP, QUANT_CLIP]."""
    step = 2 * QUANT_CLIP / (QUANT_LEVELS - 1)
    q = np.round((np.clip(x, -QUANT_CLIP, QUANT_CLIP) + QUANT_CLIP) / step)
    return q * step - QUANT_CLIP


def awgn_noise(shape, cfg, rng):
    if cfg.noiseless:
        return np.zeros(shape)
    return rng.normal(0.0, math.sqrt(cfg.noise_var), size=shape)


def awgn_transmit(x, cfg, rng):
    """``Y = X + N`` on arrays or Tensors.

    With a Tensor the noise enters as a constant, so the Jacobian w.r.t. X is
    the identity. The optional 8-bit quantizer is straight-through.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim < 2 or int(np.prod(data.shape[1:])) != cfg.n_x:
        raise ShapeError(f"channel expects (B, {cfg.n_x}) symbols, got {data.shape}",
                         expected=(cfg.n_x,), actual=data.shape[1:])
    sent = quantize_8bit(data) if cfg.quantize else data
    y = sent + awgn_noise(data.shape, cfg, rng)
    if isinstance(x, Tensor):
        return T.straight_through(x, y)
    return y

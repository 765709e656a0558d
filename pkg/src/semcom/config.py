"""Run configuration: INI-style sections plus ``section.key=value`` overrides.

Example::

    [dataset]
    synth = two_class_digits_8x8
    n = 512

    [channel]
    snr_db = 10
    cr = 0.25

Every value has a default, so an empty file is a valid config. Unknown
sections or keys are rejected.
"""

import configparser
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

ENV_OUTPUT_DIR = "SEMCOM_OUTPUT_DIR"
ENV_LOG_LEVEL = "SEMCOM_LOG_LEVEL"


@dataclass
class DataSection:
    synth: str = "two_class_digits_8x8"
    n: int = 512
    seed: int = 1
    shifted: bool = False
    images: str = ""
    labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    test_fraction: float = 0.25


def _observed_default():
    return DataSection(synth="shifted_blobs", seed=2, shifted=True)


@dataclass
class ChannelSection:
    snr_db: float = 10.0
    cr: float = 0.25
    quantize: bool = False
    seed: int = 3


@dataclass
class LossSection:
    # empty lambda means the default 1 - CR
    lam: str = ""
    alpha: str = "auto"


@dataclass
class TrainingSection:
    max_epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    lr: float = 1e-3
    patience: int = 10
    min_delta: float = 1e-5
    arch: str = "dense"
    phi_arch: str = "mlp"
    phi_epochs: int = 20
    phi_lr: float = 5e-3
    recon_epochs: int = 0
    cgan_epochs: int = 300
    cgan_batch: int = 32
    cgan_lr: float = 2e-4
    cgan_arch: str = "dense"
    lambda_cyc: float = 10.0
    pad_n: int = 1000
    pad_epochs: int = 100


@dataclass
class TransportSection:
    mode: str = "inproc"
    host: str = "127.0.0.1"
    port: int = 0
    timeout: float = 60.0


@dataclass
class OutputSection:
    dir: str = "runs/default"
    log_level: str = "INFO"


@dataclass
class RunConfig:
    dataset: DataSection = field(default_factory=DataSection)
    observed: DataSection = field(default_factory=_observed_default)
    channel: ChannelSection = field(default_factory=ChannelSection)
    loss: LossSection = field(default_factory=LossSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    transport: TransportSection = field(default_factory=TransportSection)
    output: OutputSection = field(default_factory=OutputSection)

    # config-file key -> dataclass attribute
    ALIASES = {"lambda": "lam"}

    def validate(self):
        c = self.channel
        if not 0.0 < c.cr <= 1.0:
            raise ConfigError(f"channel.cr must lie in (0, 1], got {c.cr}")
        if math.isnan(c.snr_db) or c.snr_db == -math.inf:
            raise ConfigError("channel.snr_db must be finite or inf (noiseless)")
        if self.loss.lam:
            lam = float(self.loss.lam)
            if not 0.0 <= lam <= 1.0:
                raise ConfigError(f"loss.lambda must lie in [0, 1], got {lam}")
        if self.loss.alpha != "auto" and not float(self.loss.alpha) > 0:
            raise ConfigError("loss.alpha must be 'auto' or a positive number")
        t = self.training
        if t.max_epochs < 0 or t.batch_size < 1 or t.patience < 1 or t.cgan_epochs < 0 or t.cgan_batch < 1:
            raise ConfigError("epochs must be >= 0; batch sizes and patience >= 1")
        if self.transport.mode not in ("inproc", "tcp"):
            raise ConfigError(f"transport.mode must be inproc or tcp, got {self.transport.mode!r}")
        for d in (self.dataset, self.observed):
            if not 0.0 <= d.test_fraction < 1.0 or d.n < 1:
                raise ConfigError("test_fraction must lie in [0, 1) and n >= 1")
        return self

    @property
    def lam(self):
        return float(self.loss.lam) if self.loss.lam else 1.0 - self.channel.cr

    @property
    def alpha(self):
        return None if self.loss.alpha == "auto" else float(self.loss.alpha)

    @property
    def output_dir(self):
        return Path(self.output.dir)

    def to_dict(self):
        out = {}
        for f in fields(self):
            sect = asdict(getattr(self, f.name))
            out[f.name] = {("lambda" if k == "lam" else k): v for k, v in sect.items()}
        return out

    def to_ini(self):
        cp = configparser.ConfigParser()
        for name, sect in self.to_dict().items():
            cp[name] = {k: str(v) for k, v in sect.items()}
        lines = []
        for name in cp.sections():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in cp[name].items()]
            lines.append("")
        return "\n".join(lines)

    def set(self, section, key, value):
        sect = getattr(self, section, None)
        if sect is None or section not in {f.name for f in fields(self)}:
            raise ConfigError(f"unknown config section {section!r}")
        attr = self.ALIASES.get(key, key)
        types = {f.name: f.type for f in fields(sect)}
        if attr not in types:
            raise ConfigError(f"unknown key {section}.{key}")
        setattr(sect, attr, _convert(value, types[attr], f"{section}.{key}"))


def _convert(value, typ, where):
    if not isinstance(value, str):
        return value
    value = value.strip()
    try:
        if typ in (bool, "bool"):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ in (int, "int"):
            return int(value)
        if typ in (float, "float"):
            return float(value)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r} as {getattr(typ, '__name__', typ)}") from None
    return value


def load_config(path=None, overrides=()):
    """Build a validated :class:`RunConfig` from an optional file and overrides.

    ``overrides`` are ``section.key=value`` strings applied after the file.
    ``SEMCOM_OUTPUT_DIR`` and ``SEMCOM_LOG_LEVEL`` win over both.
    """
    cfg = RunConfig()
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in cp.sections():
            for key, value in cp[section].items():
                cfg.set(section, key, value)
    for item in overrides:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        cfg.set(section, key.strip(), value)
    if os.environ.get(ENV_OUTPUT_DIR):
        cfg.output.dir = os.environ[ENV_OUTPUT_DIR]
    if os.environ.get(ENV_LOG_LEVEL):
        cfg.output.log_level = os.environ[ENV_LOG_LEVEL]
    return cfg.validate()

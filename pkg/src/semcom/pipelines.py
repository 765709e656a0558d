"""End-to-end flows shared by the command line and the acceptance suite.

Each ``run_*`` function takes a :class:`~semcom.config.RunConfig`, does its
work deterministically from the seeds in that config and returns a report
dict. Writing files is left to :func:`write_outputs`.
"""

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import adaptation, coding, similarity
from .channel import ChannelConfig
from .data import Dataset, load_idx, match_images, synth_dataset
from .errors import ConfigError
from .nn import load_model, save_model, sequential
from .protocol.session import SessionConfig, run_training

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "loss", "acc", "psnr", "iou")


# ---------------------------------------------------------------- building blocks


def load_data(section):
    """(train, test) datasets described by a config data section."""
    if section.images:
        full = load_idx(section.images, section.labels or None)
        if section.test_images:
            return full, load_idx(section.test_images, section.test_labels or None)
        return full.split(section.test_fraction, section.seed)
    return synth_dataset(section.synth, section.n, section.seed, section.shifted).split(
        section.test_fraction, section.seed)


def task_kind_of(dataset):
    return coding.CONTINUOUS if dataset.is_mask_task else coding.DISCRETE


def channel_for(cfg, pair):
    n_k = int(np.prod(pair.source_shape))
    return ChannelConfig(cfg.channel.snr_db, pair.n_x, n_k, cfg.channel.seed, cfg.channel.quantize)


def loss_for(cfg, task_kind):
    return coding.LossConfig.for_task(task_kind, cfg.lam, cfg.alpha or 1.0)


def session_for(cfg):
    t, tr = cfg.training, cfg.transport
    return SessionConfig(max_epochs=t.max_epochs, batch_size=t.batch_size, seed=t.seed, lr=t.lr,
                         patience=t.patience, min_delta=t.min_delta, auto_alpha=cfg.alpha is None,
                         transport=tr.mode, host=tr.host, port=tr.port, timeout=tr.timeout)


def train_phi(cfg, train, test):
    t = cfg.training
    return coding.train_pragmatic(train, t.phi_arch, t.phi_epochs, t.seed, test, t.batch_size, t.phi_lr)


def train_coders(cfg, train, test, phi):
    """Pretrain (optionally) and train a coder pair with the split protocol.

    Returns ``(TrainingResult, recon_history)``.
    """
    kind = task_kind_of(train)
    pair = coding.build_coders(train.shape, cfg.channel.cr, np.random.default_rng(cfg.training.seed),
                               cfg.training.arch, kind)
    chan = channel_for(cfg, pair)
    recon = []
    if cfg.training.recon_epochs > 0:
        pair, _, recon = coding.pretrain_reconstruction(pair, train, chan, cfg.training.recon_epochs,
                                                        cfg.training.batch_size, cfg.training.seed, cfg.training.lr)
    result = run_training(pair, phi, train, test, chan, loss_for(cfg, kind), session_for(cfg),
                          handoff=cfg.training.recon_epochs > 0)
    return result, recon


def identity_coders(shape):
    """Pass-through encoder/decoder (flatten / reshape) at CR = 1.

    They skip the power normalization on purpose, so a noiseless channel
    reproduces the input exactly. For evaluation only.
    """
    n_k = int(np.prod(shape))
    rng = np.random.default_rng(0)
    enc = sequential(["flatten"], shape, rng, "encoder")
    dec = sequential([("reshape", tuple(shape))], (n_k,), rng, "decoder")
    return coding.CoderPair(enc, dec, 1.0, checked=False)


def history_rows(history):
    """Map per-epoch metric dicts onto the CSV columns."""
    return [{"epoch": h.get("epoch"), "loss": h.get("esd"), "acc": h.get("accuracy"),
             "psnr": h.get("psnr"), "iou": h.get("iou")} for h in history]


# ---------------------------------------------------------------- flows


def run_pretrain_phi(cfg, out_dir=None):
    train, test = load_data(cfg.dataset)
    phi, report = train_phi(cfg, train, test)
    if out_dir is not None:
        save_model(phi, Path(out_dir) / "phi.slnn")
    return {"summary": report}, phi


def run_pretrain_recon(cfg, out_dir=None):
    train, test = load_data(cfg.dataset)
    pair = coding.build_coders(train.shape, cfg.channel.cr, np.random.default_rng(cfg.training.seed),
                               cfg.training.arch, task_kind_of(train))
    chan = channel_for(cfg, pair)
    epochs = cfg.training.recon_epochs or cfg.training.max_epochs
    pair, _, hist = coding.pretrain_reconstruction(pair, train, chan, epochs, cfg.training.batch_size,
                                                   cfg.training.seed, cfg.training.lr)
    if out_dir is not None:
        save_coders(pair, out_dir)
    history = [{"epoch": i, "esd": v} for i, v in enumerate(hist)]
    return {"history": history, "summary": coding.evaluate(pair, None, test, chan, cfg.channel.seed)}, pair


def run_train(cfg, out_dir=None, phi=None):
    """Pragmatic pretraining (unless ``phi`` given) followed by split-protocol training."""
    train, test = load_data(cfg.dataset)
    phi_report = None
    if phi is None:
        phi, phi_report = train_phi(cfg, train, test)
    result, recon = train_coders(cfg, train, test, phi)
    summary = {"epochs": len(result.history), "alpha": result.alpha, "cr": result.pair.cr,
               "n_x": result.pair.n_x, "lambda": cfg.lam}
    if result.history:
        last = result.history[-1]
        summary.update({k: last[k] for k in ("esd", "psnr", "accuracy", "iou") if k in last})
    if out_dir is not None:
        save_coders(result.pair, out_dir)
        save_model(phi, Path(out_dir) / "phi.slnn")
    report = {"history": result.history, "summary": summary, "phi": phi_report}
    if recon:
        report["recon_history"] = recon
    return report, result.pair, phi


def save_coders(pair, out_dir):
    out_dir = Path(out_dir)
    save_model(pair.encoder, out_dir / "encoder.slnn")
    save_model(pair.decoder, out_dir / "decoder.slnn")


def load_coders(model_dir, cr=None, task_kind=coding.DISCRETE):
    model_dir = Path(model_dir)
    enc = load_model(model_dir / "encoder.slnn", "encoder")
    dec = load_model(model_dir / "decoder.slnn", "decoder")
    n_x = int(np.prod(enc.output_shape))
    return coding.CoderPair(enc, dec, cr or n_x / int(np.prod(enc.input_shape)), task_kind)


def run_eval(cfg, pair, phi, snrs):
    """Frozen coders over the channel at each SNR in ``snrs``."""
    _, test = load_data(cfg.dataset)
    if tuple(test.shape) != tuple(pair.source_shape):
        test = Dataset(match_images(test.images, pair.source_shape), test.labels, test.name)
    rows = []
    for snr in snrs:
        n_k = int(np.prod(pair.source_shape))
        chan = ChannelConfig(snr, pair.n_x, n_k, cfg.channel.seed, cfg.channel.quantize)
        row = {"snr_db": snr, "cr": pair.cr}
        row.update(coding.evaluate(pair, phi, test, chan, cfg.channel.seed))
        rows.append(row)
    return {"rows": rows, "summary": {"points": len(rows)}}


def train_bundle(cfg, lib, obs, on_epoch=None):
    t = cfg.training
    bundle = adaptation.build_bundle(lib.shape, obs.shape, np.random.default_rng(t.seed), t.cgan_arch)
    return adaptation.train_cgan(bundle, lib.images, obs.images, t.cgan_epochs, t.cgan_batch, t.seed,
                                 t.cgan_lr, lambda_cyc=t.lambda_cyc, on_epoch=on_epoch)


def run_da_train(cfg, out_dir=None):
    lib, _ = load_data(cfg.dataset)
    obs, _ = load_data(cfg.observed)
    bundle, hist = train_bundle(cfg, lib, obs)
    if out_dir is not None:
        bundle.save(Path(out_dir) / "cgan")
    return {"history": hist, "summary": {"epochs": len(hist)}}, bundle


def run_da_apply(bundle, images):
    return adaptation.adapt(bundle.g_k, images)


def run_da_eval(cfg, on_cgan_epoch=None):
    """Accuracy on the observed test split for the three deployment options.

    ``no_da``      library-trained coders and phi on resampled observations
    ``da``         the same frozen models on ``g_k`` adapted observations
    ``retrained``  coders and phi trained from scratch on labelled observations
    """
    lib_tr, lib_te = load_data(cfg.dataset)
    obs_tr, obs_te = load_data(cfg.observed)
    if obs_te.labels is None or len(obs_te) == 0:
        raise ConfigError("da-eval needs a labelled observed test split")
    kind = task_kind_of(lib_tr)
    key = "accuracy" if kind == coding.DISCRETE else "iou"

    phi, _ = train_phi(cfg, lib_tr, lib_te)
    lib_result, _ = train_coders(cfg, lib_tr, lib_te, phi)
    pair = lib_result.pair
    chan = channel_for(cfg, pair)
    resampled = Dataset(match_images(obs_te.images, lib_tr.shape), obs_te.labels)
    no_da = coding.evaluate(pair, phi, resampled, chan, cfg.channel.seed)

    bundle, cgan_hist = train_bundle(cfg, lib_tr, obs_tr, on_cgan_epoch)
    adapted = Dataset(adaptation.adapt(bundle.g_k, obs_te.images), obs_te.labels)
    da = coding.evaluate(pair, phi, adapted, chan, cfg.channel.seed)

    phi_obs, _ = train_phi(cfg, obs_tr, obs_te)
    obs_result, _ = train_coders(cfg, obs_tr, obs_te, phi_obs)
    retrained = coding.evaluate(obs_result.pair, phi_obs, obs_te, channel_for(cfg, obs_result.pair),
                                cfg.channel.seed)
    summary = {"metric": key, "no_da": no_da[key], "da": da[key], "retrained": retrained[key],
               "psnr_no_da": no_da["psnr"], "psnr_da": da["psnr"], "psnr_retrained": retrained["psnr"],
               "cgan_epochs": len(cgan_hist)}
    return {"history": cgan_hist, "summary": summary}, bundle


def run_pad(cfg):
    lib, _ = load_data(cfg.dataset)
    obs, _ = load_data(cfg.observed)
    n = min(cfg.training.pad_n, len(lib), len(obs))
    eps, d_a = similarity.proxy_a_distance(lib, obs, n, cfg.training.seed, cfg.training.pad_epochs)
    return {"summary": {"n": n, "epsilon": eps, "d_a": d_a}}


# ---------------------------------------------------------------- outputs


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else "-inf" if x < 0 else "nan"
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.generic):
        return _json_safe(x.item())
    return x


def write_outputs(out_dir, command, cfg, report, rows=None):
    """Write ``report.json`` (config echo + report) and ``metrics.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": cfg.to_dict(), **report}
    (out_dir / "report.json").write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")
    (out_dir / "config.ini").write_text(cfg.to_ini())
    if rows is None:
        rows = history_rows(report.get("history") or [])
    columns = list(CSV_COLUMNS) if rows and set(rows[0]) <= set(CSV_COLUMNS) else None
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        cols = columns or (list(rows[0]) if rows else list(CSV_COLUMNS))
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
    return out_dir / "report.json"

"""Command line entry point: ``semcom <subcommand> [--config FILE] [--set section.key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 protocol error, 4 numeric error.
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import pipelines
from .adaptation import CganBundle
from .config import load_config
from .errors import ConfigError, DatasetError, NumericError, ProtocolError, SemcomError, ShapeError
from .nn import load_model
from .protocol.session import SessionError

EXIT_OK, EXIT_CONFIG, EXIT_PROTOCOL, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("semcom")


def _parse_snrs(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        out.append(math.inf if tok in ("inf", "noiseless") else float(tok))
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="semcom", description="Semantic communication simulator.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with run settings")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--transport", choices=("inproc", "tcp"), help="link between the two endpoints")
    common.add_argument("--host", help="TCP host for the receiver listener")
    common.add_argument("--port", type=int, help="TCP port (0 picks a free one)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="split-protocol training of the coders")
    t.add_argument("--phi", type=Path, help="use this pretrained pragmatic function")

    e = sub.add_parser("eval", parents=[common], help="evaluate frozen coders over an SNR grid")
    e.add_argument("--models", type=Path, help="directory with encoder/decoder/phi .slnn files")
    e.add_argument("--identity", action="store_true", help="pass-through coders at CR = 1")
    e.add_argument("--snr", default=None, help="comma separated SNRs in dB ('inf' = noiseless)")

    sub.add_parser("pretrain-phi", parents=[common], help="train the receiver's pragmatic function")
    sub.add_parser("pretrain-recon", parents=[common], help="reconstruction-only coder pretraining")
    sub.add_parser("da-train", parents=[common], help="train the CycleGAN adaptation bundle")
    a = sub.add_parser("da-apply", parents=[common], help="adapt observed images with a trained bundle")
    a.add_argument("--bundle", type=Path, required=True, help="directory written by da-train")
    sub.add_parser("da-eval", parents=[common], help="compare No DA / DA / Retrained")
    sub.add_parser("pad", parents=[common], help="proxy A-distance between dataset and observed")
    return p


def _run(args, cfg, out):
    cmd = args.command
    if cmd == "train":
        phi = load_model(args.phi, "phi") if args.phi else None
        report, _, _ = pipelines.run_train(cfg, out, phi)
        return report, None
    if cmd == "eval":
        snrs = _parse_snrs(args.snr) if args.snr else [cfg.channel.snr_db]
        if args.identity:
            train, _ = pipelines.load_data(cfg.dataset)
            pair, phi = pipelines.identity_coders(train.shape), None
        elif args.models:
            pair = pipelines.load_coders(args.models)
            phi_path = args.models / "phi.slnn"
            phi = load_model(phi_path, "phi") if phi_path.exists() else None
        else:
            raise ConfigError("eval needs --models DIR or --identity")
        report = pipelines.run_eval(cfg, pair, phi, snrs)
        return report, report["rows"]
    if cmd == "pretrain-phi":
        return pipelines.run_pretrain_phi(cfg, out)[0], None
    if cmd == "pretrain-recon":
        return pipelines.run_pretrain_recon(cfg, out)[0], None
    if cmd == "da-train":
        report = pipelines.run_da_train(cfg, out)[0]
        return report, [{"epoch": h["epoch"], "loss": h["cgan"]} for h in report["history"]]
    if cmd == "da-apply":
        bundle = CganBundle.load(args.bundle)
        obs, _ = pipelines.load_data(cfg.observed)
        adapted = pipelines.run_da_apply(bundle, obs.images)
        np.save(out / "adapted.npy", adapted)
        return {"summary": {"count": len(adapted), "shape": list(adapted.shape[1:])}}, []
    if cmd == "da-eval":
        report, bundle = pipelines.run_da_eval(cfg)
        bundle.save(out / "cgan")
        s = report["summary"]
        rows = [{"method": m, s["metric"]: s[k], "psnr": s["psnr_" + k]} for m, k in
                (("No DA", "no_da"), ("DA", "da"), ("Retrained", "retrained"))]
        return report, rows
    if cmd == "pad":
        report = pipelines.run_pad(cfg)
        s = report["summary"]
        print(f"epsilon={s['epsilon']!r}")
        print(f"d_a={s['d_a']!r}")
        print(f"n={s['n']}")
        return report, []
    raise ConfigError(f"unknown command {cmd!r}")


def exit_code(exc):
    """Exit status for an exception; session failures are classified by their cause."""
    while isinstance(exc, SessionError) and exc.__cause__ is not None:
        exc = exc.__cause__
    if isinstance(exc, (ConfigError, DatasetError, ShapeError, OSError)):
        return EXIT_CONFIG
    if isinstance(exc, ProtocolError):
        return EXIT_PROTOCOL
    if isinstance(exc, (NumericError, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_PROTOCOL


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        flags = {"mode": args.transport, "host": args.host, "port": args.port}
        extra = [f"transport.{k}={v}" for k, v in flags.items() if v is not None]
        cfg = load_config(args.config, args.overrides + extra)
        if args.out is not None:
            cfg.output.dir = str(args.out)
        logging.basicConfig(level=getattr(logging, cfg.output.log_level.upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s")
        out = cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        report, rows = _run(args, cfg, out)
        path = pipelines.write_outputs(out, args.command, cfg, report, rows)
        log.info("report written to %s", path)
        return EXIT_OK
    except (SemcomError, ValueError, ArithmeticError, OSError) as exc:
        code = exit_code(exc)
        log.error("%s: %s", {EXIT_CONFIG: "configuration error", EXIT_PROTOCOL: "protocol error"}.get(
            code, "numeric error"), exc)
        return code


if __name__ == "__main__":
    sys.exit(main())

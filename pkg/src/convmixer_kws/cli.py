"""Command-line surface: synth-data, train, eval, count, features, augment."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np


def _add_bank_args(p, need_data=True):
    if need_data:
        p.add_argument("--data", required=True, help="dataset root (speech-commands layout)")
    p.add_argument("--noise", required=True, help="noise bank directory")
    p.add_argument("--rir", required=True, help="impulse-response bank directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convmixer-kws", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic dataset + banks")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=200)

    p = sub.add_parser("train", help="curriculum multi-condition training")
    _add_bank_args(p)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=True, help="output directory (checkpoints, metrics.csv)")
    p.add_argument("--no-mixer", action="store_true", help="ablate the MLP mixing layers")
    p.add_argument(
        "--no-curriculum", action="store_true",
        help="train on the full hardest-stage condition mix from epoch 1",
    )
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--max-epochs", type=int, help="override the epoch budget")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="condition-matrix evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_bank_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report directory (default: checkpoint directory)")

    p = sub.add_parser("count", help="print parameter and MAC counts")
    p.add_argument("--config", help="flat key = value config file")

    p = sub.add_parser("features", help="dump the 98x64 feature matrix of a WAV as CSV")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("augment", help="apply noise/reverb to a WAV for listening")
    p.add_argument("--wav", required=True)
    p.add_argument("--snr", default="clean", help="target SNR in dB, or `clean`")
    p.add_argument("--rir", choices=["on", "off"], default="off")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", help="noise bank directory (required unless --snr clean)")
    p.add_argument("--rir-dir", help="impulse-response bank directory (required with --rir on)")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_configs(path):
    from .config import build_configs, load_config_file

    return build_configs(load_config_file(path) if path else {})


def cmd_synth_data(args) -> int:
    from .synth import SynthConfig, synth_dataset

    dirs = synth_dataset(args.out, SynthConfig(n_classes=args.classes, per_class=args.per_class, seed=args.seed))
    print(f"dataset: {dirs['data']}\nnoise bank: {dirs['noise']}\nrir bank: {dirs['rir']}")
    return 0


def cmd_train(args) -> int:
    from .audio import build_manifest, load_bank
    from .trainer import train

    model_cfg, train_cfg = _load_configs(args.config)
    if args.no_mixer:
        model_cfg.mixer_enabled = False
    if args.no_curriculum:
        train_cfg.curriculum = False
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.max_epochs is not None:
        train_cfg.max_epochs = args.max_epochs
    manifest = build_manifest(args.data)
    noise_bank = load_bank(args.noise)
    rir_bank = load_bank(args.rir)
    log = None if args.quiet else print
    result = train(manifest, noise_bank, rir_bank, model_cfg, train_cfg, args.out, log=log)
    print(f"best checkpoint: {result.best_path}\nmetrics: {result.csv_path}")
    return 0


def cmd_eval(args) -> int:
    from .audio import build_manifest, load_bank
    from .evaluate import evaluate_matrix, report
    from .model import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    manifest = build_manifest(args.data)
    result = evaluate_matrix(
        model, manifest, load_bank(args.noise), load_bank(args.rir), args.seed
    )
    out_dir = args.out or str(Path(args.checkpoint).parent)
    csv_path, txt_path = report(result, out_dir)
    print(Path(txt_path).read_text(), end="")
    print(f"report: {csv_path}")
    return 0


def cmd_count(args) -> int:
    from .model import build_model, count_macs, count_params

    model_cfg, _ = _load_configs(args.config)
    model = build_model(model_cfg, np.random.default_rng(0))
    params = count_params(model)
    macs = count_macs(model)
    print(f"params: {params} ({params / 1000.0:.1f}K)")
    print(f"macs:   {macs} ({macs / 1e6:.1f}M)")
    return 0


def cmd_features(args) -> int:
    from .audio import read_wav
    from .frontend import FrontendConfig, log_mel_fbank, pad_or_trim

    feat = log_mel_fbank(pad_or_trim(read_wav(args.wav)), FrontendConfig())
    with open(args.out, "w") as fh:
        for row in feat:
            fh.write(",".join(f"{v:.6f}" for v in row) + "\n")
    print(f"wrote {feat.shape[0]}x{feat.shape[1]} features to {args.out}")
    return 0


def cmd_augment(args) -> int:
    from .audio import load_bank, read_wav, write_wav
    from .augment import Condition, apply_condition
    from .frontend import pad_or_trim

    snr = None if args.snr == "clean" else int(args.snr)
    reverberant = args.rir == "on"
    if snr is not None and not args.noise:
        raise ValueError("--noise is required unless --snr clean")
    if reverberant and not args.rir_dir:
        raise ValueError("--rir-dir is required with --rir on")
    cond = Condition(snr_db=snr, reverberant=reverberant)
    noise_bank = load_bank(args.noise) if snr is not None else []
    rir_bank = load_bank(args.rir_dir) if reverberant else []
    w = pad_or_trim(read_wav(args.wav))
    out = apply_condition(w, cond, noise_bank, rir_bank, np.random.default_rng(args.seed))
    write_wav(args.out, out, float32=True)
    print(f"wrote {args.out} ({cond.name()})")
    return 0


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "count": cmd_count,
    "features": cmd_features,
    "augment": cmd_augment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

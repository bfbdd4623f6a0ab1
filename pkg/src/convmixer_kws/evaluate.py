"""Condition-matrix evaluation and report emission.

The matrix mirrors the deployment protocol: one clean column (no noise, no
reverb) and four far-field columns where every clip is reverberated and mixed
at 20/0/-5/-10 dB. 20 dB is deliberately a level never seen in training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import CLIP_SAMPLES, DatasetManifest, SILENCE_INDEX, sample_segment
from .augment import Condition, apply_condition
from .frontend import FrontendConfig, log_mel_fbank, mel_filter_matrix, pad_or_trim
from .model import ConvMixer, count_macs, count_params
from .trainer import ClipStore

EVAL_CONDITIONS: list[tuple[str, Condition]] = [
    ("clean", Condition(snr_db=None, reverberant=False)),
    ("20dB", Condition(snr_db=20, reverberant=True)),
    ("0dB", Condition(snr_db=0, reverberant=True)),
    ("-5dB", Condition(snr_db=-5, reverberant=True)),
    ("-10dB", Condition(snr_db=-10, reverberant=True)),
]

REPORT_HEADER = "model,params_k,macs_m,clean,20dB,0dB,-5dB,-10dB"


@dataclass
class EvalResult:
    accuracies: dict[str, float] = field(default_factory=dict)
    n_samples: dict[str, int] = field(default_factory=dict)
    params: int = 0
    macs: int = 0
    model_name: str = "convmixer"

    def validate(self):
        names = [name for name, _ in EVAL_CONDITIONS]
        missing = [n for n in names if n not in self.accuracies]
        if missing:
            raise ValueError(f"evaluation result missing conditions: {missing}")
        bad = {k: v for k, v in self.accuracies.items() if not 0.0 <= v <= 1.0}
        if bad:
            raise ValueError(f"accuracies outside [0, 1]: {bad}")


def evaluate(
    model: ConvMixer,
    manifest: DatasetManifest,
    condition: Condition,
    noise_bank,
    rir_bank,
    seed: int,
    frontend_cfg: FrontendConfig | None = None,
    split: str = "test",
    store: ClipStore | None = None,
) -> float:
    """Top-1 accuracy on a split under one fixed condition.

    Each clip gets exactly one noise/RIR draw derived from (seed, clip index),
    so results are a pure function of (checkpoint, manifest, condition, seed).
    """
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"{split} split is empty")
    fcfg = frontend_cfg or FrontendConfig()
    fb = mel_filter_matrix(fcfg)
    store = store or ClipStore()
    feats = np.empty((len(entries), fcfg.n_frames, fcfg.n_mels), dtype=np.float32)
    labels = np.empty(len(entries), dtype=np.int64)
    for idx, entry in enumerate(entries):
        rng = np.random.default_rng((seed, 23, idx))
        w = store.get(entry.path)
        if entry.label == SILENCE_INDEX:
            w = sample_segment(w, CLIP_SAMPLES, rng)
        else:
            w = pad_or_trim(w)
        w = apply_condition(w, condition, noise_bank, rir_bank, rng)
        feats[idx] = log_mel_fbank(w, fcfg, fb=fb)
        labels[idx] = entry.label
    correct = 0
    for lo in range(0, len(entries), 256):
        logits = model.forward(feats[lo : lo + 256], training=False)
        correct += int((logits.data.argmax(axis=1) == labels[lo : lo + 256]).sum())
    return correct / len(entries)


def evaluate_matrix(
    model: ConvMixer,
    manifest: DatasetManifest,
    noise_bank,
    rir_bank,
    seed: int,
    frontend_cfg: FrontendConfig | None = None,
    split: str = "test",
) -> EvalResult:
    store = ClipStore()
    result = EvalResult(params=count_params(model), macs=count_macs(model))
    n = len(manifest.split(split))
    for name, cond in EVAL_CONDITIONS:
        result.accuracies[name] = evaluate(
            model, manifest, cond, noise_bank, rir_bank, seed,
            frontend_cfg=frontend_cfg, split=split, store=store,
        )
        result.n_samples[name] = n
    result.validate()
    return result


def report(result: EvalResult, out_dir) -> tuple[str, str]:
    """Write the result as CSV and an aligned text table; returns both paths."""
    result.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    txt_path = out_dir / "report.txt"

    names = [name for name, _ in EVAL_CONDITIONS]
    row = [
        result.model_name,
        f"{result.params / 1000.0:.1f}",
        f"{result.macs / 1e6:.1f}",
    ] + [f"{100.0 * result.accuracies[n]:.2f}" for n in names]
    csv_path.write_text(REPORT_HEADER + "\n" + ",".join(row) + "\n")

    cols = ["Model", "Params (K)", "MACs (M)"] + names
    widths = [max(len(c), len(v)) for c, v in zip(cols, row)]
    header = "  ".join(c.rjust(w) for c, w in zip(cols, widths))
    line = "  ".join(v.rjust(w) for v, w in zip(row, widths))
    txt_path.write_text(header + "\n" + "-" * len(header) + "\n" + line + "\n")
    return str(csv_path), str(txt_path)

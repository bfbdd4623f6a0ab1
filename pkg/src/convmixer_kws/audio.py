"""WAV reading/writing, dataset manifests, and noise/RIR banks.

The dataset layout follows the speech-commands convention: one directory per
word full of 16 kHz WAV clips, `validation_list.txt` / `testing_list.txt`
naming relative paths, and a `_background_noise_/` directory of long noise
recordings used to synthesize the silence class.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000
BACKGROUND_DIR = "_background_noise_"

COMMAND_WORDS = ["up", "down", "left", "right", "yes", "no", "on", "off", "go", "stop"]
LABEL_NAMES = COMMAND_WORDS + ["silence", "unknown"]
SILENCE_INDEX = LABEL_NAMES.index("silence")
UNKNOWN_INDEX = LABEL_NAMES.index("unknown")


@dataclass
class Waveform:
    """Mono audio: float samples (nominal [-1, 1]) at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str  # train | validation | test


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    label_names: list[str] = field(default_factory=lambda: list(LABEL_NAMES))

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def read_wav(path) -> Waveform:
    """Load a PCM16 or IEEE float32 WAV as float64 samples in [-1, 1].

    Only 16 kHz mono input is accepted (first channel of multichannel files
    is taken); other rates are rejected rather than resampled so the feature
    pipeline stays bit-reproducible.
    """
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise ValueError(f"malformed WAV header in {path}: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise ValueError(f"unsupported sample rate {rate} Hz in {path} (expected {SAMPLE_RATE})")
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported sample format {data.dtype} in {path}")
    if not np.all(np.isfinite(samples)):
        raise ValueError(f"non-finite samples in {path}")
    return Waveform(samples=samples, sample_rate=SAMPLE_RATE)


def write_wav(path, w: Waveform, *, float32: bool = False):
    """Write PCM16 (default) or float32 WAV. PCM16 clips to [-1, 1)."""
    if float32:
        wavfile.write(str(path), w.sample_rate, w.samples.astype(np.float32))
    else:
        q = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(str(path), w.sample_rate, q)


def sample_segment(w: Waveform, length: int, rng: np.random.Generator) -> Waveform:
    """Contiguous random crop of exactly `length` samples."""
    n = len(w.samples)
    if n < length:
        raise ValueError(f"clip of {n} samples is shorter than requested {length}")
    offset = int(rng.integers(0, n - length + 1))
    return Waveform(samples=w.samples[offset : offset + length].copy(), sample_rate=w.sample_rate)


def _read_list_file(path: Path) -> set[str]:
    if not path.is_file():
        raise ValueError(f"missing split list file: {path}")
    out = set()
    for line in path.read_text().splitlines():
        line = line.strip().replace("\\", "/")
        if line:
            out.add(line)
    return out


def build_manifest(root, validation_list=None, testing_list=None) -> DatasetManifest:
    """Scan a speech-commands style tree into a labeled, split manifest.

    Files named by the testing list go to test, by the validation list to
    validation, the rest to train. The ten command words map to indices 0-9,
    every other word directory maps to `unknown`, and `silence` entries are
    synthesized as references into the background-noise directory (one entry
    per split slot; the actual 1 s crop is drawn at load time). Per split,
    the silence count is the average per-command-word count of that split.
    """
    root = Path(root)
    validation_list = Path(validation_list) if validation_list else root / "validation_list.txt"
    testing_list = Path(testing_list) if testing_list else root / "testing_list.txt"
    val_set = _read_list_file(validation_list)
    test_set = _read_list_file(testing_list)
    overlap = val_set & test_set
    if overlap:
        raise ValueError(f"overlapping splits: {sorted(overlap)[:3]} appear in both lists")

    word_dirs = sorted(
        d for d in root.iterdir() if d.is_dir() and d.name != BACKGROUND_DIR
    )
    entries: list[ManifestEntry] = []
    split_counts: dict[str, dict[int, int]] = {
        "train": {}, "validation": {}, "test": {},
    }
    for d in word_dirs:
        wavs = sorted(p for p in d.iterdir() if p.suffix == ".wav")
        if not wavs:
            raise ValueError(f"word directory is empty: {d}")
        label = (
            COMMAND_WORDS.index(d.name) if d.name in COMMAND_WORDS else UNKNOWN_INDEX
        )
        for p in wavs:
            rel = f"{d.name}/{p.name}"
            if rel in test_set:
                split = "test"
            elif rel in val_set:
                split = "validation"
            else:
                split = "train"
            entries.append(ManifestEntry(path=str(p), label=label, split=split))
            counts = split_counts[split]
            counts[label] = counts.get(label, 0) + 1

    background = sorted((root / BACKGROUND_DIR).glob("*.wav")) if (root / BACKGROUND_DIR).is_dir() else []
    if background:
        for split, counts in split_counts.items():
            cmd_counts = [counts.get(i, 0) for i in range(len(COMMAND_WORDS))]
            present = [c for c in cmd_counts if c > 0]
            n_silence = int(round(sum(present) / len(present))) if present else 0
            for i in range(n_silence):
                entries.append(
                    ManifestEntry(
                        path=str(background[i % len(background)]),
                        label=SILENCE_INDEX,
                        split=split,
                    )
                )
    return DatasetManifest(entries=entries)


def load_bank(directory) -> list[Waveform]:
    """Load every WAV in a flat directory (noise or impulse-response bank)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"bank directory does not exist: {directory}")
    clips = [read_wav(p) for p in sorted(directory.glob("*.wav"))]
    if not clips:
        raise ValueError(f"bank directory has no WAV files: {directory}")
    return clips

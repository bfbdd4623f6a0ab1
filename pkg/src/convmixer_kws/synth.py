"""Synthetic desk-scale dataset generator.

Keyword surrogates are amplitude-modulated harmonic tones whose fundamentals
are spaced by a fixed ratio, written in the speech-commands directory layout
(split lists, an extra non-command word for the `unknown` class, and a
`_background_noise_/` directory). Alongside the dataset it emits a noise bank
(broadband plus tonal interference, so low SNRs are genuinely confusable)
and a bank of synthetic exponential-decay room impulse responses.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CLIP_SAMPLES, COMMAND_WORDS, SAMPLE_RATE, BACKGROUND_DIR, Waveform, write_wav

UNKNOWN_WORD = "zig"  # surrogate for the unknown class; not a command word
FUNDAMENTAL_BASE_HZ = 260.0
FUNDAMENTAL_RATIO = 1.45


@dataclass
class SynthConfig:
    n_classes: int = 4
    per_class: int = 200
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    n_noise_clips: int = 12
    n_rirs: int = 9


def class_fundamental(index: int) -> float:
    """Fundamental of surrogate class `index`; adjacent classes differ by >= 1.3x."""
    return FUNDAMENTAL_BASE_HZ * FUNDAMENTAL_RATIO**index


def _tone_clip(rng: np.random.Generator, fundamental: float) -> np.ndarray:
    t = np.arange(CLIP_SAMPLES) / SAMPLE_RATE
    f0 = fundamental * (1.0 + rng.uniform(-0.03, 0.03))
    x = np.zeros(CLIP_SAMPLES)
    for h, weight in ((1, 1.0), (2, 0.5), (3, 0.25)):
        x += weight * np.sin(2.0 * np.pi * h * f0 * t + rng.uniform(0.0, 2.0 * np.pi))
    am_rate = rng.uniform(4.0, 10.0)
    am_depth = rng.uniform(0.4, 0.9)
    env = (1.0 - am_depth) + am_depth * 0.5 * (1.0 + np.sin(2.0 * np.pi * am_rate * t + rng.uniform(0.0, 2.0 * np.pi)))
    ramp = np.minimum(1.0, np.minimum(t, t[::-1]) / 0.01)  # 10 ms fade in/out
    amp = rng.uniform(0.15, 0.4)
    x *= env * ramp * amp / np.max(np.abs(x))
    return x


def _pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freq = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    spec[1:] /= np.sqrt(freq[1:])
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x / np.max(np.abs(x))


def _tonal_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Beeping interference: gated random-frequency carriers."""
    t = np.arange(n) / SAMPLE_RATE
    x = np.zeros(n)
    n_beeps = int(rng.integers(4, 9))
    for _ in range(n_beeps):
        f = rng.uniform(200.0, 3000.0)
        start = int(rng.integers(0, max(1, n - SAMPLE_RATE // 4)))
        length = int(rng.integers(SAMPLE_RATE // 10, SAMPLE_RATE // 3))
        stop = min(n, start + length)
        x[start:stop] += np.sin(2.0 * np.pi * f * t[: stop - start] + rng.uniform(0, 2 * np.pi))
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def _babble_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Sum of slowly drifting tones; spectrally busy but non-stationary."""
    t = np.arange(n) / SAMPLE_RATE
    x = np.zeros(n)
    for _ in range(8):
        f = rng.uniform(150.0, 2500.0)
        drift = rng.uniform(-30.0, 30.0)
        x += np.sin(2.0 * np.pi * (f + drift * t) * t + rng.uniform(0, 2 * np.pi))
    return x / np.max(np.abs(x))


def _rir(rng: np.random.Generator) -> np.ndarray:
    length = int(rng.uniform(0.15, 0.45) * SAMPLE_RATE)
    tau = rng.uniform(0.04, 0.18) * SAMPLE_RATE
    t = np.arange(length)
    tail = rng.standard_normal(length) * np.exp(-t / tau) * 0.4
    direct = int(rng.integers(0, 200))
    tail[:direct] *= 0.05  # predelay before the direct path
    tail[direct] = 1.0
    return tail


def synth_dataset(out_dir, cfg: SynthConfig | None = None) -> dict[str, str]:
    """Write dataset + noise bank + RIR bank; returns their directories."""
    cfg = cfg or SynthConfig()
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    noise_dir = out_dir / "noise"
    rir_dir = out_dir / "rir"
    for d in (data_dir, noise_dir, rir_dir):
        d.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    words = COMMAND_WORDS[: cfg.n_classes] + [UNKNOWN_WORD]
    val_lines: list[str] = []
    test_lines: list[str] = []
    for k, word in enumerate(words):
        word_dir = data_dir / word
        word_dir.mkdir(exist_ok=True)
        names = [f"{word}_{i:04d}.wav" for i in range(cfg.per_class)]
        for name in names:
            clip = _tone_clip(rng, class_fundamental(k))
            write_wav(word_dir / name, Waveform(samples=clip))
        order = rng.permutation(cfg.per_class)
        n_test = int(round(cfg.per_class * cfg.test_fraction))
        n_val = int(round(cfg.per_class * cfg.val_fraction))
        test_lines += [f"{word}/{names[i]}" for i in order[:n_test]]
        val_lines += [f"{word}/{names[i]}" for i in order[n_test : n_test + n_val]]
    (data_dir / "testing_list.txt").write_text("\n".join(sorted(test_lines)) + "\n")
    (data_dir / "validation_list.txt").write_text("\n".join(sorted(val_lines)) + "\n")

    bg_dir = data_dir / BACKGROUND_DIR
    bg_dir.mkdir(exist_ok=True)
    bg_len = 10 * SAMPLE_RATE
    makers = [
        lambda: rng.standard_normal(bg_len) / 4.0,
        lambda: _pink_noise(rng, bg_len),
        lambda: rng.standard_normal(bg_len) / 4.0,
        lambda: _pink_noise(rng, bg_len),
    ]
    for i, make in enumerate(makers):
        write_wav(bg_dir / f"background_{i}.wav", Waveform(samples=0.3 * make()))

    noise_len = 3 * SAMPLE_RATE
    kinds = [
        lambda: rng.standard_normal(noise_len) / 4.0,
        lambda: _pink_noise(rng, noise_len),
        lambda: _tonal_noise(rng, noise_len),
        lambda: _babble_noise(rng, noise_len),
    ]
    for i in range(cfg.n_noise_clips):
        clip = kinds[i % len(kinds)]()
        write_wav(noise_dir / f"noise_{i:02d}.wav", Waveform(samples=0.5 * clip))

    for i in range(cfg.n_rirs):
        write_wav(rir_dir / f"rir_{i:02d}.wav", Waveform(samples=_rir(rng)), float32=True)

    return {"data": str(data_dir), "noise": str(noise_dir), "rir": str(rir_dir)}

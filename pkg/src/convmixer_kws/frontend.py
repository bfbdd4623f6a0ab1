"""Waveform-to-feature pipeline: 98x64 log-mel filterbank plus the
training-time feature augmentations (time shift, spectrogram masking, mixup).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import CLIP_SAMPLES, SAMPLE_RATE, Waveform

N_FRAMES = 98
N_MELS = 64
MAX_TIME_SHIFT = 1600  # +-100 ms at 16 kHz
MAX_MASK = 25


@dataclass
class FrontendConfig:
    window_ms: int = 25
    hop_ms: int = 10
    n_mels: int = N_MELS
    n_fft: int = 512
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10

    @property
    def window_samples(self) -> int:
        return self.window_ms * SAMPLE_RATE // 1000

    @property
    def hop_samples(self) -> int:
        return self.hop_ms * SAMPLE_RATE // 1000

    @property
    def n_frames(self) -> int:
        return (CLIP_SAMPLES - self.window_samples) // self.hop_samples + 1

    def validate(self):
        if self.window_samples > self.n_fft:
            raise ValueError(f"n_fft={self.n_fft} smaller than window of {self.window_samples} samples")
        if not (0 <= self.fmin < self.fmax <= SAMPLE_RATE / 2):
            raise ValueError(f"need 0 <= fmin < fmax <= {SAMPLE_RATE // 2}, got [{self.fmin}, {self.fmax}]")


def pad_or_trim(w: Waveform, target: int = CLIP_SAMPLES) -> Waveform:
    """Right-pad with zeros or truncate to exactly `target` samples."""
    x = w.samples
    if len(x) < target:
        x = np.concatenate([x, np.zeros(target - len(x), dtype=x.dtype)])
    elif len(x) > target:
        x = x[:target].copy()
    else:
        x = x.copy()
    return Waveform(samples=x, sample_rate=w.sample_rate)


def time_shift(w: Waveform, rng: np.random.Generator, max_shift: int = MAX_TIME_SHIFT) -> Waveform:
    """Shift by s ~ U[-max_shift, +max_shift] samples; positive s delays."""
    x = w.samples
    n = len(x)
    s = int(rng.integers(-max_shift, max_shift + 1))
    if s > 0:
        out = np.concatenate([np.zeros(s, dtype=x.dtype), x[: n - s]])
    elif s < 0:
        out = np.concatenate([x[-s:], np.zeros(-s, dtype=x.dtype)])
    else:
        out = x.copy()
    return Waveform(samples=out, sample_rate=w.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FrontendConfig) -> np.ndarray:
    """Filter center frequencies: equally spaced on the mel scale in (fmin, fmax)."""
    pts = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(pts[1:-1])


def mel_filter_matrix(cfg: FrontendConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft//2 + 1)."""
    cfg.validate()
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * (SAMPLE_RATE / cfg.n_fft)
    pts = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        lo, center, hi = pts[m], pts[m + 1], pts[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.where(fb.sum(axis=1) == 0.0)[0]
    if empty.size:
        raise ValueError(
            f"n_mels={cfg.n_mels} too large for FFT resolution: filter {empty[0]} is empty"
        )
    return fb


def log_mel_fbank(w: Waveform, cfg: FrontendConfig | None = None, fb: np.ndarray | None = None) -> np.ndarray:
    """Log-mel energies of a 1 s clip, shape (frames, mels) = (98, 64).

    Frame t covers samples [hop*t, hop*t + window); each frame is Hann
    windowed, zero-padded to n_fft, and squared-magnitude projected through
    the mel filterbank; values are ln(energy + log_floor).
    """
    cfg = cfg or FrontendConfig()
    x = w.samples
    if len(x) != CLIP_SAMPLES:
        raise ValueError(f"log_mel_fbank expects {CLIP_SAMPLES} samples, got {len(x)}")
    win = cfg.window_samples
    hop = cfg.hop_samples
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    spec = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    if fb is None:
        fb = mel_filter_matrix(cfg)
    mel = power @ fb.T
    return np.log(mel + cfg.log_floor).astype(np.float32)


def spec_augment(feat: np.ndarray, rng: np.random.Generator, max_mask: int = MAX_MASK) -> np.ndarray:
    """One time mask and one frequency mask, filled with the pre-mask mean."""
    t_len, f_len = feat.shape
    out = feat.copy()
    fill = feat.mean()
    tw = int(rng.integers(0, max_mask + 1))
    t0 = int(rng.integers(0, t_len - tw + 1))
    fw = int(rng.integers(0, max_mask + 1))
    f0 = int(rng.integers(0, f_len - fw + 1))
    out[t0 : t0 + tw, :] = fill
    out[:, f0 : f0 + fw] = fill
    return out


def mixup(
    a: np.ndarray,
    b: np.ndarray,
    ya: np.ndarray,
    yb: np.ndarray,
    rng: np.random.Generator,
    alpha: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of two feature/target pairs with lam ~ Beta(alpha, alpha)."""
    if a.shape != b.shape:
        raise ValueError(f"mixup: feature shapes differ, {a.shape} vs {b.shape}")
    lam = float(rng.beta(alpha, alpha))
    feat = lam * a + (1.0 - lam) * b
    target = lam * np.asarray(ya) + (1.0 - lam) * np.asarray(yb)
    return feat.astype(a.dtype), target

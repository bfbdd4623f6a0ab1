"""Training-condition augmentation: additive noise at a target SNR, far-field
reverberation by impulse-response convolution, and the per-stage condition
sets of the difficulty curriculum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .audio import Waveform, sample_segment

STAGE_SNRS = [None, 0, -5, -10]  # cumulative introduction order; None = clean
N_STAGES = 5


@dataclass(frozen=True)
class Condition:
    """One augmentation draw: optional SNR in dB (None = clean) + reverb flag."""

    snr_db: int | None = None
    reverberant: bool = False

    def name(self) -> str:
        base = "clean" if self.snr_db is None else f"{self.snr_db}dB"
        return base + ("+rir" if self.reverberant else "")


@dataclass
class ConditionSet:
    """Uniformly weighted SNR conditions plus an independent reverb fraction."""

    conditions: list[Condition] = field(default_factory=lambda: [Condition()])
    rir_fraction: float = 0.0

    def sample(self, rng: np.random.Generator) -> Condition:
        base = self.conditions[int(rng.integers(0, len(self.conditions)))]
        reverberant = bool(rng.random() < self.rir_fraction) if self.rir_fraction else False
        return Condition(snr_db=base.snr_db, reverberant=reverberant)


def _effective_length(x: np.ndarray) -> int:
    """Length up to the last nonzero sample; trailing zeros are padding."""
    nz = np.flatnonzero(x)
    return int(nz[-1]) + 1 if nz.size else 0


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Add noise scaled so the component powers realize `snr_db` exactly.

    Powers are mean squared amplitudes; the clean power is measured over the
    region before any trailing zero padding so right-padding does not bias
    the target level. No clipping normalization is applied.
    """
    if len(clean.samples) != len(noise.samples):
        raise ValueError(
            f"mix_at_snr: length mismatch {len(clean.samples)} vs {len(noise.samples)}"
        )
    c = clean.samples.astype(np.float64)
    n = noise.samples.astype(np.float64)
    eff = _effective_length(c)
    if eff == 0:
        raise ValueError("mix_at_snr: clean signal has zero power")
    p_clean = float(np.mean(c[:eff] ** 2))
    p_noise = float(np.mean(n**2))
    if p_noise == 0.0:
        raise ValueError("mix_at_snr: noise signal has zero power")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(samples=c + gain * n, sample_rate=clean.sample_rate)


def apply_rir(w: Waveform, rir: Waveform) -> Waveform:
    """Convolve with a peak-normalized impulse response, aligned at its peak.

    The output is the full linear convolution truncated to len(w) starting at
    the direct-path peak, so a pure-delay impulse leaves the signal in place.
    """
    h = rir.samples.astype(np.float64)
    peak = float(np.max(np.abs(h)))
    if peak == 0.0:
        raise ValueError("apply_rir: impulse response is all zeros")
    h = h / peak
    k = int(np.argmax(np.abs(h)))
    wet = fftconvolve(w.samples.astype(np.float64), h, mode="full")
    return Waveform(samples=wet[k : k + len(w.samples)], sample_rate=w.sample_rate)


def stage_conditions(stage: int) -> ConditionSet:
    """Condition mix for a curriculum stage.

    Stage 0 is clean only; stages 1-3 add 0, -5, -10 dB cumulatively; stage 4
    keeps the stage-3 SNR set and reverberates half the draws.
    """
    if not 0 <= stage < N_STAGES:
        raise ValueError(f"stage must be in [0, {N_STAGES - 1}], got {stage}")
    n_snrs = min(stage + 1, len(STAGE_SNRS))
    conds = [Condition(snr_db=s) for s in STAGE_SNRS[:n_snrs]]
    return ConditionSet(conditions=conds, rir_fraction=0.5 if stage == 4 else 0.0)


def apply_condition(
    w: Waveform,
    cond: Condition,
    noises: list[Waveform],
    rirs: list[Waveform],
    rng: np.random.Generator,
) -> Waveform:
    """Reverberate (if flagged) then mix noise (if an SNR is set).

    The RIR and noise clip are uniform draws from their banks; noise shorter
    than the clip is tiled before a random crop.
    """
    out = w
    if cond.reverberant:
        if not rirs:
            raise ValueError("apply_condition: reverberant condition needs a nonempty RIR bank")
        out = apply_rir(out, rirs[int(rng.integers(0, len(rirs)))])
    if cond.snr_db is not None:
        if not noises:
            raise ValueError("apply_condition: noisy condition needs a nonempty noise bank")
        noise = noises[int(rng.integers(0, len(noises)))]
        need = len(out.samples)
        seg = noise
        if len(seg.samples) < need:
            reps = -(-need // len(seg.samples))
            seg = Waveform(samples=np.tile(seg.samples, reps), sample_rate=seg.sample_rate)
        seg = sample_segment(seg, need, rng)
        out = mix_at_snr(out, seg, cond.snr_db)
    return out

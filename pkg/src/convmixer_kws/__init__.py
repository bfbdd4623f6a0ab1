"""Small-footprint keyword spotting for noisy far-field audio."""

from .audio import (
    DatasetManifest,
    LABEL_NAMES,
    Waveform,
    build_manifest,
    load_bank,
    read_wav,
    sample_segment,
    write_wav,
)
from .augment import Condition, ConditionSet, apply_condition, apply_rir, mix_at_snr, stage_conditions
from .frontend import FrontendConfig, log_mel_fbank, mixup, pad_or_trim, spec_augment, time_shift
from .model import (
    ConvMixer,
    ModelConfig,
    build_model,
    count_macs,
    count_params,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import (
    CurriculumController,
    CurriculumState,
    TrainConfig,
    curriculum_update,
    lr_at_epoch,
    minmax_norm,
    progress_criterion,
    train,
)
from .evaluate import EvalResult, evaluate, evaluate_matrix, report
from .synth import SynthConfig, synth_dataset

__all__ = [name for name in dir() if not name.startswith("_")]

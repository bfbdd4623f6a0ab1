"""Curriculum multi-condition training.

The controller tracks per-stage validation accuracy/loss histories, min-max
normalizes both, and scores each epoch with c = norm(acc) - norm(loss). An
epoch with c >= best saves a checkpoint and resets patience; ten consecutive
worse epochs roll the model back to the saved best and advance to the next,
harder condition stage. Five stages (clean -> 0 -> -5 -> -10 dB -> +reverb)
and the run is done.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audio import (
    CLIP_SAMPLES,
    SILENCE_INDEX,
    DatasetManifest,
    ManifestEntry,
    Waveform,
    read_wav,
)
from .augment import N_STAGES, apply_condition, stage_conditions
from .frontend import FrontendConfig, log_mel_fbank, mel_filter_matrix, mixup, pad_or_trim, spec_augment, time_shift
from .model import ConvMixer, ModelConfig, build_model, copy_weights, load_checkpoint, save_checkpoint


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    base_lr: float = 6e-3
    lr_decay: float = 0.85
    decay_interval: int = 4
    decay_start_epoch: int = 5
    max_epochs: int = 200
    patience: int = 10
    mixup_alpha: float = 0.5
    seed: int = 0
    curriculum: bool = True
    epochs_per_stage: int = 0  # 0 = no per-stage cap

    def validate(self):
        positive = [
            self.batch_size, self.base_lr, self.lr_decay, self.decay_interval,
            self.decay_start_epoch, self.max_epochs, self.patience, self.mixup_alpha,
        ]
        if any(v <= 0 for v in positive):
            raise ValueError(f"train config fields must be positive: {self}")


@dataclass
class CurriculumState:
    stage: int = 0
    epoch_in_run: int = 0
    acc_history: list[float] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)
    bst_crit: float = 0.0
    epochs_since_best: int = 0
    best_checkpoint_path: str = ""


def minmax_norm(history: list[float], a_m: float) -> float:
    """Min-max position of the latest value within its history.

    Zero for a single-element history or a degenerate (constant) one.
    """
    if not history:
        raise ValueError("minmax_norm: empty history")
    if a_m != history[-1]:
        raise ValueError("minmax_norm: a_m must be the last element of the history")
    lo, hi = min(history), max(history)
    if len(history) == 1 or hi == lo:
        return 0.0
    return (a_m - lo) / (hi - lo)


def progress_criterion(state: CurriculumState) -> float:
    """c = norm(latest val accuracy) - norm(latest val loss), in [-1, 1]."""
    if not state.acc_history or len(state.acc_history) != len(state.loss_history):
        raise ValueError("progress_criterion: histories must be nonempty and equal length")
    return minmax_norm(state.acc_history, state.acc_history[-1]) - minmax_norm(
        state.loss_history, state.loss_history[-1]
    )


def curriculum_update(state: CurriculumState, c: float, patience: int = 10, n_stages: int = N_STAGES) -> str:
    """Advance the stage machine by one observed epoch criterion.

    Returns one of 'save_best', 'continue', 'advance_stage', 'finish'. A tie
    (c == bst_crit) counts as improvement: it saves and resets patience.
    """
    if c >= state.bst_crit:
        state.bst_crit = max(state.bst_crit, c)
        state.epochs_since_best = 0
        return "save_best"
    state.epochs_since_best += 1
    if state.epochs_since_best < patience:
        return "continue"
    state.stage += 1
    state.epoch_in_run = 0
    state.acc_history = []
    state.loss_history = []
    state.bst_crit = 0.0
    state.epochs_since_best = 0
    return "finish" if state.stage >= n_stages else "advance_stage"


class CurriculumController:
    def __init__(self, patience: int = 10, n_stages: int = N_STAGES):
        self.patience = patience
        self.n_stages = n_stages
        self.state = CurriculumState()

    def observe(self, acc: float, loss: float) -> tuple[float, str]:
        st = self.state
        st.epoch_in_run += 1
        st.acc_history.append(acc)
        st.loss_history.append(loss)
        c = progress_criterion(st)
        return c, curriculum_update(st, c, self.patience, self.n_stages)

    def force_advance(self) -> str:
        """Stage cap hit: behave exactly like patience exhaustion."""
        st = self.state
        st.stage += 1
        st.epoch_in_run = 0
        st.acc_history = []
        st.loss_history = []
        st.bst_crit = 0.0
        st.epochs_since_best = 0
        return "finish" if st.stage >= self.n_stages else "advance_stage"


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Decay by lr_decay every decay_interval epochs after decay_start_epoch."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    k = max(0, (epoch - cfg.decay_start_epoch) // cfg.decay_interval)
    return cfg.base_lr * cfg.lr_decay**k


class AdamState:
    """First/second moment buffers keyed by parameter name."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}


def adam_step(params, state: AdamState, lr: float):
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {p.name}")
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def one_hot(label: int, n_classes: int = 12) -> np.ndarray:
    y = np.zeros(n_classes, dtype=np.float32)
    y[label] = 1.0
    return y


def train_step(model: ConvMixer, opt: AdamState, feats: np.ndarray, targets: np.ndarray, lr: float) -> float:
    """One optimization step; aborts on a non-finite loss or gradient."""
    for p in model.parameters():
        p.zero_grad()
    with ad.Tape() as tape:
        logits = model.forward(feats, training=True)
        loss = ad.bce_with_logits(logits, targets)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite training loss {value}")
    tape.backward(loss)
    adam_step(model.parameters(), opt, lr)
    return value


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    lr: float
    train_loss: float
    val_loss: float
    val_acc: float
    c: float
    bst_crit: float
    event: str  # none | save | advance


METRIC_COLUMNS = ["epoch", "stage", "lr", "train_loss", "val_loss", "val_acc", "c", "bst_crit", "event"]


def write_metrics_csv(records: list[EpochRecord], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in records:
            writer.writerow([
                r.epoch, r.stage, f"{r.lr:.8f}", f"{r.train_loss:.6f}",
                f"{r.val_loss:.6f}", f"{r.val_acc:.6f}", f"{r.c:.6f}",
                f"{r.bst_crit:.6f}", r.event,
            ])


class ClipStore:
    """In-memory waveform cache; entries are immutable once loaded."""

    def __init__(self):
        self._cache: dict[str, Waveform] = {}

    def get(self, path: str) -> Waveform:
        if path not in self._cache:
            self._cache[path] = read_wav(path)
        return self._cache[path]


def _load_entry(entry: ManifestEntry, store: ClipStore, rng: np.random.Generator) -> Waveform:
    """Silence entries are fresh 1 s crops of their background clip."""
    w = store.get(entry.path)
    if entry.label == SILENCE_INDEX:
        from .audio import sample_segment

        return sample_segment(w, CLIP_SAMPLES, rng)
    return pad_or_trim(w)


def _epoch_pool(train_entries, epoch: int, seed: int) -> list[ManifestEntry]:
    """Per-epoch sample pool: all command-word clips, a balanced subsample of
    `unknown`, all silence slots. Shuffled."""
    commands = [e for e in train_entries if e.label < 10]
    unknown = [e for e in train_entries if e.label == 11]
    silence = [e for e in train_entries if e.label == SILENCE_INDEX]
    rng = np.random.default_rng((seed, 11, epoch))
    per_word = {}
    for e in commands:
        per_word[e.label] = per_word.get(e.label, 0) + 1
    avg = int(round(np.mean(list(per_word.values())))) if per_word else 0
    if unknown and avg and len(unknown) > avg:
        idx = rng.choice(len(unknown), size=avg, replace=False)
        unknown = [unknown[i] for i in sorted(idx)]
    pool = commands + unknown + silence
    order = rng.permutation(len(pool))
    return [pool[i] for i in order]


@dataclass
class TrainResult:
    model: ConvMixer
    records: list[EpochRecord]
    csv_path: str
    best_path: str


def train(
    manifest: DatasetManifest,
    noise_bank,
    rir_bank,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir,
    frontend_cfg: FrontendConfig | None = None,
    log=None,
) -> TrainResult:
    """Run the staged multi-condition loop end to end.

    Per epoch: draw a condition per sample from the current stage's set,
    augment (reverb/noise), extract features, mask + mixup, optimize with
    Adam under the decayed learning rate; then score the epoch on the
    validation split under the same condition mix (fixed per-stage seed) and
    let the controller decide whether to save, wait, or advance.
    """
    train_cfg.validate()
    fcfg = frontend_cfg or FrontendConfig()
    fb = mel_filter_matrix(fcfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_path = out_dir / "best.ckpt"
    csv_path = out_dir / "metrics.csv"

    seed = train_cfg.seed
    model = build_model(model_cfg, np.random.default_rng(seed))
    opt = AdamState(list(model.parameters()))
    store = ClipStore()
    controller = CurriculumController(
        patience=train_cfg.patience,
        n_stages=N_STAGES if train_cfg.curriculum else 1,
    )

    train_entries = manifest.split("train")
    val_entries = manifest.split("validation")
    if not val_entries:
        raise ValueError("validation split is empty")

    def cond_stage() -> int:
        return controller.state.stage if train_cfg.curriculum else N_STAGES - 1

    val_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def validation_batch(stage: int) -> tuple[np.ndarray, np.ndarray]:
        if stage not in val_cache:
            cset = stage_conditions(stage)
            feats = np.empty((len(val_entries), fcfg.n_frames, fcfg.n_mels), dtype=np.float32)
            labels = np.empty(len(val_entries), dtype=np.int64)
            for j, entry in enumerate(val_entries):
                rng = np.random.default_rng((seed, 19, stage, j))
                w = _load_entry(entry, store, rng)
                w = apply_condition(w, cset.sample(rng), noise_bank, rir_bank, rng)
                feats[j] = log_mel_fbank(w, fcfg, fb=fb)
                labels[j] = entry.label
            val_cache[stage] = (feats, labels)
        return val_cache[stage]

    def validate(stage: int) -> tuple[float, float]:
        feats, labels = validation_batch(stage)
        correct = 0
        loss_sum = 0.0
        for lo in range(0, len(labels), 256):
            chunk = feats[lo : lo + 256]
            lab = labels[lo : lo + 256]
            logits = model.forward(chunk, training=False)
            pred = logits.data.argmax(axis=1)
            correct += int((pred == lab).sum())
            targets = np.zeros_like(logits.data)
            targets[np.arange(len(lab)), lab] = 1.0
            z = logits.data
            elems = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
            loss_sum += float(elems.mean()) * len(lab)
        return correct / len(labels), loss_sum / len(labels)

    records: list[EpochRecord] = []
    n_advances = 0
    save_checkpoint(model, best_path)  # stage-0 fallback before the first epoch
    controller.state.best_checkpoint_path = str(best_path)

    for epoch in range(1, train_cfg.max_epochs + 1):
        stage = cond_stage()
        cset = stage_conditions(stage)
        lr = lr_at_epoch(epoch, train_cfg)
        pool = _epoch_pool(train_entries, epoch, seed)

        loss_sum = 0.0
        n_seen = 0
        bs = train_cfg.batch_size
        for b0 in range(0, len(pool), bs):
            batch = pool[b0 : b0 + bs]
            feats = np.empty((len(batch), fcfg.n_frames, fcfg.n_mels), dtype=np.float32)
            targets = np.empty((len(batch), model_cfg.n_classes), dtype=np.float32)
            for i, entry in enumerate(batch):
                rng = np.random.default_rng((seed, 13, epoch, b0 + i))
                w = _load_entry(entry, store, rng)
                w = time_shift(w, rng)
                w = apply_condition(w, cset.sample(rng), noise_bank, rir_bank, rng)
                feats[i] = spec_augment(log_mel_fbank(w, fcfg, fb=fb), rng)
                targets[i] = one_hot(entry.label, model_cfg.n_classes)
            rng_b = np.random.default_rng((seed, 17, epoch, b0))
            perm = rng_b.permutation(len(batch))
            for i in range(len(batch)):
                feats[i], targets[i] = mixup(
                    feats[i], feats[perm[i]], targets[i], targets[perm[i]],
                    rng_b, alpha=train_cfg.mixup_alpha,
                )
            try:
                loss = train_step(model, opt, feats, targets, lr)
            except TrainingDiverged:
                dump = {
                    "epoch": epoch, "stage": stage, "lr": lr,
                    "records": [asdict(r) for r in records],
                }
                (out_dir / "abort_state.json").write_text(json.dumps(dump, indent=2))
                raise
            loss_sum += loss * len(batch)
            n_seen += len(batch)

        val_acc, val_loss = validate(stage)
        prev_bst = controller.state.bst_crit
        c, decision = controller.observe(val_acc, val_loss)
        display_bst = controller.state.bst_crit if decision in ("save_best", "continue") else prev_bst
        event = "none"
        if decision == "save_best":
            save_checkpoint(model, best_path)
            event = "save"
        elif decision in ("advance_stage", "finish"):
            best = load_checkpoint(best_path)
            copy_weights(best, model)
            event = "advance" if decision == "advance_stage" else "none"
            if decision == "advance_stage":
                n_advances += 1
        if (
            decision in ("save_best", "continue")
            and train_cfg.epochs_per_stage
            and controller.state.epoch_in_run >= train_cfg.epochs_per_stage
        ):
            decision = controller.force_advance()
            best = load_checkpoint(best_path)
            copy_weights(best, model)
            if decision == "advance_stage":
                event = "advance"
                n_advances += 1

        records.append(
            EpochRecord(
                epoch=epoch, stage=stage, lr=lr,
                train_loss=loss_sum / max(1, n_seen),
                val_loss=val_loss, val_acc=val_acc, c=c,
                bst_crit=display_bst, event=event,
            )
        )
        if log:
            r = records[-1]
            log(
                f"epoch {r.epoch:3d} stage {r.stage} lr {r.lr:.5f} "
                f"train {r.train_loss:.4f} val {r.val_loss:.4f} acc {r.val_acc:.4f} "
                f"c {r.c:+.3f} {r.event}"
            )
        if decision == "finish":
            break

    else:
        # epoch budget exhausted mid-stage: final model is the stage best
        best = load_checkpoint(best_path)
        copy_weights(best, model)

    write_metrics_csv(records, csv_path)
    return TrainResult(model=model, records=records, csv_path=str(csv_path), best_path=str(best_path))

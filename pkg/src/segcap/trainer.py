"""Training orchestration: data loading per step kind, deterministic batch
sampling, the epoch loop with CSV logging, per-epoch checkpoints, and
bit-identical resumption.

Randomness is a pure function of (seed, purpose, step kind, epoch,
iteration), so an interrupted run continued from its last epoch checkpoint
replays exactly the batches and dropout masks the uninterrupted run would
have seen. Training runs in float32, which is also the checkpoint payload
precision, so parameters and optimizer moments survive a save/load cycle
unchanged.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus
from .bpe import STYLE_ASR, STYLE_CAP, Vocabulary
from .checkpoint import load_model, save_model, transfer_weights
from .errors import CheckpointError, ConfigError, DataError
from .model import Model, ModelConfig
from .objectives import (Schedule, StepKind, TrainBatch, caption_batch,
                         make_schedule, mass_batch, pair_batch,
                         run_training_step, sample_alignment_pair,
                         sample_ordering_pair)
from .optim import OptimizerState, lr_schedule
from .rng import rng_for

LOG_COLUMNS = ("epoch", "iteration", "step_kind", "loss", "lr", "wall_ms")


@dataclass
class TrainSettings:
    strategy: str
    arch: str
    vocab_path: str
    out_dir: Path
    epochs: int = 200
    iterations_per_epoch: int = 3125
    batch_size: int = 32
    seed: int = 0
    mask_ratio: float = 0.5
    hide_fraction: float = 0.25
    lr_max: float = 1e-4
    warmup_steps: int = 4000
    dropout: float = 0.1
    embed_dim: int = 128
    heads: int = 8
    ffw_dim: int = 0
    max_text_positions: int = 241
    max_video_positions: int = 40
    video_feature_dim: int = 128
    cap_data: str | None = None
    asr_data: str | None = None
    pair_data: str | None = None
    init_checkpoint: str | None = None
    resume: str = "auto"

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig.from_arch(
            self.arch, vocab_size,
            embed_dim=self.embed_dim, heads=self.heads, ffw_dim=self.ffw_dim,
            max_text_positions=self.max_text_positions,
            max_video_positions=self.max_video_positions,
            dropout=self.dropout, video_feature_dim=self.video_feature_dim)


class TrainData:
    """Tokenized corpora indexed the way the step kinds consume them."""

    def __init__(self, settings: TrainSettings, schedule: Schedule, vocab: Vocabulary):
        self.vocab = vocab
        self.frames = corpus.FrameStore()
        self.cap_seqs: list[list[int]] = []
        self.asr_records: list[tuple[list[int], corpus.SegmentRecord]] = []
        self.videos: list[list[corpus.SegmentRecord]] = []
        self.pairs: list[tuple[list[int], list[int], corpus.SegmentRecord]] = []

        needs_cap_lines = any(k.mass and k.source == "cap" for k in schedule.steps)
        needs_asr = any((k.mass and k.source == "asr") or k.task for k in schedule.steps)
        needs_pairs = any(not k.mass and k.task is None for k in schedule.steps)
        needs_align = any(k.task for k in schedule.steps)

        def clip(ids):
            return ids[: corpus.MAX_TEXT_SUBWORDS]

        if needs_cap_lines:
            if not settings.cap_data:
                raise ConfigError("strategy needs cap_data")
            for rec in corpus.load_segments(settings.cap_data, "cap-text"):
                ids = clip(vocab.encode(rec.caption or ""))
                if len(ids) >= 2:
                    self.cap_seqs.append(ids)
            if not self.cap_seqs:
                raise DataError(f"{settings.cap_data}: no usable caption lines")
        if needs_asr:
            if not settings.asr_data:
                raise ConfigError("strategy needs asr_data")
            for rec in corpus.load_segments(settings.asr_data, "asr+video"):
                ids = clip(vocab.encode(rec.asr_text()))
                if len(ids) >= 2:
                    self.asr_records.append((ids, rec))
            if not self.asr_records:
                raise DataError(f"{settings.asr_data}: no usable transcript segments")
        if needs_align:
            by_video: dict[str, list[tuple[int, list[int], corpus.SegmentRecord]]] = {}
            for ids, rec in self.asr_records:
                if rec.frame_count > 0:
                    by_video.setdefault(rec.video_id, []).append((rec.seg_index, ids, rec))
            for vid in sorted(by_video):
                segs = sorted(by_video[vid], key=lambda s: s[0])
                if len(segs) >= 3:
                    self.videos.append([(ids, rec) for _, ids, rec in segs])
            if not self.videos:
                raise DataError("alignment tasks need videos with >= 3 framed segments")
        if needs_pairs:
            if not settings.pair_data:
                raise ConfigError("strategy needs pair_data")
            for rec in corpus.load_segments(settings.pair_data, "asr+video+cap"):
                asr_ids = clip(vocab.encode(rec.asr_text()))
                cap_ids = clip(vocab.encode(rec.caption or ""))
                if asr_ids and cap_ids:
                    self.pairs.append((asr_ids, cap_ids, rec))
            if not self.pairs:
                raise DataError(f"{settings.pair_data}: no usable supervised pairs")


class Sampler:
    """Deterministic batches: shuffled per epoch, cycled as needed."""

    def __init__(self, settings: TrainSettings, data: TrainData, feature_dim: int):
        self.s = settings
        self.data = data
        self.feature_dim = feature_dim

    def _take(self, n_items: int, kind: StepKind, epoch: int, iteration: int) -> list[int]:
        perm = rng_for(self.s.seed, "shuffle", kind.label, epoch).permutation(n_items)
        base = iteration * self.s.batch_size
        return [int(perm[(base + k) % n_items]) for k in range(self.s.batch_size)]

    def batch_for(self, kind: StepKind, epoch: int, iteration: int) -> TrainBatch:
        rng = rng_for(self.s.seed, "mask", kind.label, epoch, iteration)
        if kind.task is not None:
            return self._pair_task_batch(kind, epoch, iteration)
        if kind.mass:
            if kind.source == "cap":
                idx = self._take(len(self.data.cap_seqs), kind, epoch, iteration)
                seqs = [self.data.cap_seqs[i] for i in idx]
                return mass_batch(seqs, STYLE_CAP, rng, self.s.mask_ratio,
                                  batch_size=self.s.batch_size)
            idx = self._take(len(self.data.asr_records), kind, epoch, iteration)
            seqs = [self.data.asr_records[i][0] for i in idx]
            frames = None
            feature_dim = None
            if kind.video:
                frames = [self.data.frames.rows(self.data.asr_records[i][1]) for i in idx]
                feature_dim = self.feature_dim
            return mass_batch(seqs, STYLE_ASR, rng, self.s.mask_ratio, frames=frames,
                              feature_dim=feature_dim,
                              hide_fraction=self.s.hide_fraction if kind.hide else 0.0,
                              batch_size=self.s.batch_size)
        # supervised caption directions
        idx = self._take(len(self.data.pairs), kind, epoch, iteration)
        chosen = [self.data.pairs[i] for i in idx]
        frames = None
        feature_dim = None
        if kind.video:
            frames = [self.data.frames.rows(rec) for _, _, rec in chosen]
            feature_dim = self.feature_dim
        if kind.source == "asr":
            sources = [asr for asr, _, _ in chosen]
            targets = [cap for _, cap, _ in chosen]
            src_style, tgt_style = STYLE_ASR, STYLE_CAP
        else:
            sources = [cap for _, cap, _ in chosen]
            targets = [asr for asr, _, _ in chosen]
            src_style, tgt_style = STYLE_CAP, STYLE_ASR
        return caption_batch(sources, targets, src_style, tgt_style, frames=frames,
                             feature_dim=feature_dim, batch_size=self.s.batch_size)

    def _pair_task_batch(self, kind: StepKind, epoch: int, iteration: int) -> TrainBatch:
        rng = rng_for(self.s.seed, "sample", kind.label, epoch, iteration)
        videos = self.data.videos
        triples = []
        for k in range(self.s.batch_size):
            video = videos[int(rng.integers(0, len(videos)))]
            if kind.task == "align":
                drawn = sample_alignment_pair(len(video), rng, positive=(k % 2 == 0))
            else:
                drawn = sample_ordering_pair(len(video), rng)
            if drawn is None:
                continue
            i, j, label = drawn
            ids = video[i][0]
            frames = self.data.frames.rows(video[j][1])
            triples.append((ids, frames, label))
        return pair_batch(triples, feature_dim=self.feature_dim,
                          batch_size=self.s.batch_size)


def train(settings: TrainSettings, finetune: bool = False) -> Path:
    """Run the configured strategy; returns the final checkpoint path."""
    allowed = ("UniD", "BiD", "BiDalt") if finetune else ("MASS", "MASSvid",
                                                          "MASSdrop", "MASSalign")
    if settings.strategy not in allowed:
        raise ConfigError(f"strategy {settings.strategy!r} is not valid here; "
                          f"expected one of {allowed}")
    vocab = Vocabulary.load(settings.vocab_path)
    cfg = settings.model_config(vocab.size)
    schedule = make_schedule(settings.strategy, cfg.multimodal,
                             settings.iterations_per_epoch, settings.epochs)
    data = TrainData(settings, schedule, vocab)
    sampler = Sampler(settings, data, cfg.video_feature_dim)

    out = Path(settings.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    latest = out / "latest.ckpt"
    log_path = out / "train_log.csv"

    start_epoch = 0
    model = Model.init(cfg, seed=settings.seed, dtype=np.float32)
    opt = OptimizerState.for_params(model.params, lr_max=settings.lr_max,
                                    warmup=settings.warmup_steps)
    if settings.resume == "auto" and latest.exists():
        model, extra, kv = load_model(latest, dtype=np.float32)
        if model.config != cfg:
            raise CheckpointError("resume checkpoint architecture differs from config")
        opt = OptimizerState.for_params(model.params, lr_max=settings.lr_max,
                                        warmup=settings.warmup_steps)
        for name in model.params:
            if f"adam.m.{name}" in extra:
                opt.m[name] = extra[f"adam.m.{name}"].astype(np.float32)
                opt.v[name] = extra[f"adam.v.{name}"].astype(np.float32)
        opt.t = int(kv.get("train.adam_t", "0"))
        start_epoch = int(kv.get("train.completed_epochs", "0"))
    elif settings.init_checkpoint:
        transfer_weights(model, settings.init_checkpoint)

    new_log = start_epoch == 0 or not log_path.exists()
    log_fh = open(log_path, "w" if new_log else "a", newline="", encoding="utf-8")
    writer = csv.writer(log_fh)
    if new_log:
        writer.writerow(LOG_COLUMNS)

    try:
        for epoch in range(start_epoch, settings.epochs):
            for it in range(settings.iterations_per_epoch):
                for kind in schedule.steps:
                    batch = sampler.batch_for(kind, epoch, it)
                    drop_rng = rng_for(settings.seed, "dropout", kind.label, epoch, it)
                    t0 = time.perf_counter()
                    loss = run_training_step(kind, batch, model, opt, rng=drop_rng)
                    wall_ms = 1000.0 * (time.perf_counter() - t0)
                    lr = lr_schedule(max(1, opt.t), settings.lr_max, settings.warmup_steps)
                    writer.writerow([epoch, it, kind.label, f"{loss:.6f}",
                                     f"{lr:.8g}", f"{wall_ms:.1f}"])
            log_fh.flush()
            _save_state(model, opt, epoch + 1, settings, out / f"epoch_{epoch + 1}.ckpt")
            _save_state(model, opt, epoch + 1, settings, latest)
    finally:
        log_fh.close()

    from .report import write_training_curves

    write_training_curves(log_path, out / "train_loss.png")
    return latest


def _save_state(model: Model, opt: OptimizerState, completed_epochs: int,
                settings: TrainSettings, path: Path) -> None:
    extra_tensors = {}
    for name in model.params:
        extra_tensors[f"adam.m.{name}"] = opt.m[name]
        extra_tensors[f"adam.v.{name}"] = opt.v[name]
    extra_config = {
        "train.completed_epochs": str(completed_epochs),
        "train.adam_t": str(opt.t),
        "train.strategy": settings.strategy,
        "train.seed": str(settings.seed),
    }
    save_model(model, path, extra_config=extra_config, extra_tensors=extra_tensors)


def epoch_mean_losses(log_path) -> dict[int, float]:
    """Mean loss per epoch from a training log CSV."""
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    with open(log_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            e = int(row["epoch"])
            sums[e] = sums.get(e, 0.0) + float(row["loss"])
            counts[e] = counts.get(e, 0) + 1
    return {e: sums[e] / counts[e] for e in sorted(sums)}

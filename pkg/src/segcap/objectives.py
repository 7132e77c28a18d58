"""Training objectives: span masking, the pretraining and finetuning
strategies, alternation schedules, pair sampling for the binary alignment
and ordering tasks, and the single-step training update.

One iteration of a strategy executes each of its step kinds once, in
order, as separate optimizer updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bpe, corpus
from . import tensor as T
from .errors import ConfigError, ContractError
from .model import Ctx, Model, cls_logits, decode_forward, encode
from .optim import OptimizerState, adam_step

MASK_RATIO = 0.5
HIDE_FRACTION = 0.25

PRETRAIN_STRATEGIES = ("MASS", "MASSvid", "MASSdrop", "MASSalign")
FINETUNE_STRATEGIES = ("UniD", "BiD", "BiDalt")


@dataclass(frozen=True)
class StepKind:
    """One training objective: which streams go in and what comes out."""

    label: str
    source: str | None  # "asr" | "cap"; None for the binary tasks
    target: str | None  # "asr" | "cap"; None for the binary tasks
    video: bool
    task: str | None = None  # "align" | "order"
    hide: bool = False  # text-encoder output hidden from the decoder

    @property
    def mass(self) -> bool:
        return self.target is not None and self.source == self.target


CAP2CAP = StepKind("cap2cap", "cap", "cap", video=False)
ASR2ASR = StepKind("asr2asr", "asr", "asr", video=False)
ASRVID2ASR = StepKind("asr+vid2asr", "asr", "asr", video=True)
ASRVID2ASR_HIDE = StepKind("asr+vid2asr", "asr", "asr", video=True, hide=True)
ALIGN = StepKind("align", None, None, video=True, task="align")
ORDER = StepKind("order", None, None, video=True, task="order")
ASR2CAP = StepKind("asr2cap", "asr", "cap", video=False)
CAP2ASR = StepKind("cap2asr", "cap", "asr", video=False)
ASRVID2CAP = StepKind("asr+vid2cap", "asr", "cap", video=True)
CAPVID2ASR = StepKind("cap+vid2asr", "cap", "asr", video=True)


@dataclass(frozen=True)
class Schedule:
    strategy: str
    steps: tuple[StepKind, ...]
    iterations_per_epoch: int = 3125
    epochs: int = 200


def make_schedule(strategy: str, multimodal: bool,
                  iterations_per_epoch: int = 3125,
                  epochs: int | None = None) -> Schedule:
    """Step list executed once per iteration for the named strategy."""
    pretrain = strategy in PRETRAIN_STRATEGIES
    if not pretrain and strategy not in FINETUNE_STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if strategy in ("MASSvid", "MASSdrop", "MASSalign", "BiDalt") and not multimodal:
        raise ConfigError(f"strategy {strategy} needs a multimodal architecture")
    steps = {
        "MASS": (CAP2CAP, ASR2ASR),
        "MASSvid": (CAP2CAP, ASRVID2ASR),
        "MASSdrop": (CAP2CAP, ASRVID2ASR_HIDE),
        "MASSalign": (CAP2CAP, ASR2ASR, ALIGN, ORDER),
        "UniD": (ASRVID2CAP,) if multimodal else (ASR2CAP,),
        "BiD": (ASRVID2CAP, CAP2ASR) if multimodal else (ASR2CAP, CAP2ASR),
        "BiDalt": (ASRVID2CAP, CAPVID2ASR),
    }[strategy]
    if epochs is None:
        epochs = 200 if pretrain else 30
    return Schedule(strategy=strategy, steps=steps,
                    iterations_per_epoch=iterations_per_epoch, epochs=epochs)


# ---------------------------------------------------------------------------
# span masking


def sample_mass_span(length: int, ratio: float = MASK_RATIO,
                     rng: np.random.Generator | None = None) -> tuple[int, int]:
    """Pick the contiguous span to hide: length max(1, round(ratio*L)),
    uniformly placed."""
    if length < 2:
        raise ContractError("spans need sequences of length >= 2")
    span_len = max(1, round(ratio * length))
    start = int(rng.integers(0, length - span_len + 1))
    return start, span_len


@dataclass
class MassExample:
    encoder_ids: list[int]  # input with the span replaced by MASK
    dec_ids: list[int]  # BOS then the span shifted right by one
    dec_positions: list[int]  # absolute positions of the span
    targets: list[int]  # the hidden span


def build_mass_example(ids: list[int], span: tuple[int, int]) -> MassExample:
    start, span_len = span
    if start < 0 or start + span_len > len(ids):
        raise ContractError("span outside the sequence")
    hidden = list(ids[start : start + span_len])
    encoder_ids = list(ids)
    encoder_ids[start : start + span_len] = [bpe.MASK] * span_len
    return MassExample(
        encoder_ids=encoder_ids,
        dec_ids=[bpe.BOS] + hidden[:-1],
        dec_positions=list(range(start, start + span_len)),
        targets=hidden,
    )


# ---------------------------------------------------------------------------
# pair sampling for the binary tasks


def negative_partners(anchor: int, n_segments: int, min_distance: int = 2) -> list[int]:
    """Segment indices usable as negatives for `anchor`: same video, at
    least `min_distance` segments away."""
    return [j for j in range(n_segments) if abs(j - anchor) >= min_distance]


def sample_alignment_pair(n_segments: int, rng: np.random.Generator,
                          positive: bool) -> tuple[int, int, int] | None:
    """(asr index, frames index, label); None when the video is too short
    to form a negative."""
    if n_segments < 3:
        return None
    if positive:
        i = int(rng.integers(0, n_segments))
        return i, i, 1
    anchors = [i for i in range(n_segments) if negative_partners(i, n_segments)]
    i = anchors[int(rng.integers(0, len(anchors)))]
    partners = negative_partners(i, n_segments)
    j = partners[int(rng.integers(0, len(partners)))]
    return i, j, 0


def sample_ordering_pair(n_segments: int,
                         rng: np.random.Generator) -> tuple[int, int, int] | None:
    """(asr index, frames index, label); label 1 when the transcript comes
    before the clip (i < j). Swapping the indices flips the label."""
    if n_segments < 3:
        return None
    anchors = [i for i in range(n_segments) if negative_partners(i, n_segments)]
    i = anchors[int(rng.integers(0, len(anchors)))]
    partners = negative_partners(i, n_segments)
    j = partners[int(rng.integers(0, len(partners)))]
    return i, j, 1 if i < j else 0


# ---------------------------------------------------------------------------
# batches


@dataclass
class TrainBatch:
    """Everything one training step consumes."""

    enc: corpus.Batch
    dec_ids: np.ndarray | None = None
    dec_positions: np.ndarray | None = None
    dec_style: int | None = None
    targets: np.ndarray | None = None
    loss_mask: np.ndarray | None = None
    labels: np.ndarray | None = None  # binary task labels
    hide_text: np.ndarray | None = None  # per-example decoder-side text hiding


def _pad_decoder(rows_ids, rows_pos, rows_tgt) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = len(rows_ids)
    width = max(len(r) for r in rows_ids)
    ids = np.full((n, width), bpe.PAD, dtype=np.int64)
    pos = np.zeros((n, width), dtype=np.int64)
    tgt = np.full((n, width), bpe.PAD, dtype=np.int64)
    msk = np.zeros((n, width), dtype=bool)
    for i, (r, p, t) in enumerate(zip(rows_ids, rows_pos, rows_tgt)):
        ids[i, : len(r)] = r
        pos[i, : len(p)] = p
        tgt[i, : len(t)] = t
        msk[i, : len(t)] = True
    return ids, pos, tgt, msk


def mass_batch(seqs: list[list[int]], style: int, rng: np.random.Generator,
               ratio: float = MASK_RATIO,
               frames: list[np.ndarray | None] | None = None,
               feature_dim: int | None = None,
               hide_fraction: float = 0.0,
               batch_size: int = 32) -> TrainBatch:
    """Mask a span in each sequence and set up its reconstruction."""
    examples = [build_mass_example(s, sample_mass_span(len(s), ratio, rng)) for s in seqs]
    enc_examples = [
        (ex.encoder_ids, None if frames is None else frames[i])
        for i, ex in enumerate(examples)
    ]
    enc = corpus.make_batch(enc_examples, style=style, batch_size=batch_size,
                            feature_dim=feature_dim)
    ids, pos, tgt, msk = _pad_decoder([ex.dec_ids for ex in examples],
                                      [ex.dec_positions for ex in examples],
                                      [ex.targets for ex in examples])
    hide = None
    if hide_fraction > 0.0:
        hide = rng.random(len(seqs)) < hide_fraction
    return TrainBatch(enc=enc, dec_ids=ids, dec_positions=pos, dec_style=style,
                      targets=tgt, loss_mask=msk, hide_text=hide)


def caption_batch(sources: list[list[int]], targets: list[list[int]],
                  source_style: int, target_style: int,
                  frames: list[np.ndarray | None] | None = None,
                  feature_dim: int | None = None,
                  batch_size: int = 32,
                  max_target: int = corpus.MAX_TEXT_SUBWORDS) -> TrainBatch:
    """Full-sequence generation: decoder predicts target wrapped in BOS/EOS."""
    enc_examples = [
        (src, None if frames is None else frames[i]) for i, src in enumerate(sources)
    ]
    enc = corpus.make_batch(enc_examples, style=source_style, batch_size=batch_size,
                            feature_dim=feature_dim)
    rows_ids, rows_pos, rows_tgt = [], [], []
    for tgt in targets:
        tgt = list(tgt)[:max_target]
        rows_ids.append([bpe.BOS] + tgt)
        rows_pos.append(list(range(len(tgt) + 1)))
        rows_tgt.append(tgt + [bpe.EOS])
    ids, pos, tgt, msk = _pad_decoder(rows_ids, rows_pos, rows_tgt)
    return TrainBatch(enc=enc, dec_ids=ids, dec_positions=pos, dec_style=target_style,
                      targets=tgt, loss_mask=msk)


def pair_batch(pairs: list[tuple[list[int], np.ndarray, int]],
               feature_dim: int, batch_size: int = 32) -> TrainBatch:
    """Alignment/ordering batch: (asr ids, frames, label) triples."""
    enc = corpus.make_batch([(ids, fr) for ids, fr, _ in pairs], style=bpe.STYLE_ASR,
                            batch_size=batch_size, feature_dim=feature_dim)
    labels = np.array([lab for _, _, lab in pairs], dtype=np.float64)
    return TrainBatch(enc=enc, labels=labels)


# ---------------------------------------------------------------------------
# one update


def run_training_step(kind: StepKind, batch: TrainBatch, model: Model,
                      opt: OptimizerState,
                      rng: np.random.Generator | None = None) -> float:
    """Forward, backward and one Adam update for a single step kind."""
    params, cfg = model.params, model.config
    if kind.video and batch.enc.frames is None:
        raise ContractError(f"step {kind.label} needs video frames in the batch")
    T.zero_grads(params)
    ctx = Ctx(train=cfg.dropout > 0.0 and rng is not None, rng=rng)
    use_video = kind.video and batch.enc.frames is not None
    enc_out = encode(params, cfg, ctx,
                     text_ids=batch.enc.text_ids, style=batch.enc.style,
                     text_mask=batch.enc.text_mask,
                     frames=batch.enc.frames if use_video else None,
                     video_mask=batch.enc.video_mask if use_video else None)
    if kind.task is not None:
        z = cls_logits(kind.task, enc_out, params, cfg, ctx)
        loss = T.binary_cross_entropy_with_logits(z, batch.labels)
    else:
        text_gate = None
        if kind.hide and batch.hide_text is not None:
            text_gate = 1.0 - batch.hide_text.astype(np.float64)
        logits = decode_forward(params, cfg, ctx, batch.dec_ids, batch.dec_style,
                                enc_out, positions=batch.dec_positions,
                                text_gate=text_gate)
        loss = T.masked_cross_entropy(logits, batch.targets, batch.loss_mask)
    T.backward(loss)
    grads = {name: p.grad for name, p in params.items()}
    adam_step(params, grads, opt)
    return float(loss.data)


def token_accuracy(model: Model, batch: TrainBatch, use_video: bool = True) -> float:
    """Teacher-forced argmax accuracy over the loss-masked positions."""
    params, cfg = model.params, model.config
    ctx = Ctx()
    enc_out = encode(params, cfg, ctx,
                     text_ids=batch.enc.text_ids, style=batch.enc.style,
                     text_mask=batch.enc.text_mask,
                     frames=batch.enc.frames if use_video else None,
                     video_mask=batch.enc.video_mask if use_video else None)
    logits = decode_forward(params, cfg, ctx, batch.dec_ids, batch.dec_style,
                            enc_out, positions=batch.dec_positions)
    pred = logits.data.argmax(axis=-1)
    msk = batch.loss_mask
    return float((pred[msk] == batch.targets[msk]).mean())

"""Caption generation: beam search with length-normalized scores.

The search is written against a step function mapping a batch of prefixes
to next-token log-probabilities, so it can be driven by the real decoder
or by a toy model in tests. Beam width 1 reproduces greedy argmax decoding
token for token; all ties break toward the smaller token id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bpe
from .errors import ContractError
from .model import Ctx, EncoderOutput, Model, decode_forward, encode

StepFn = Callable[[list[list[int]]], np.ndarray]


@dataclass
class Hypothesis:
    ids: tuple[int, ...]  # starts with BOS; may end with EOS
    logp: float
    finished: bool

    @property
    def generated(self) -> int:
        return len(self.ids) - 1

    @property
    def score(self) -> float:
        return self.logp / max(1, self.generated)


def _rank_key(h: Hypothesis):
    # higher normalized score first, then lexicographically smaller tokens
    return (-h.score, h.ids)


def beam_search(step_fn: StepFn, beam_width: int, max_len: int = 32,
                bos: int = bpe.BOS, eos: int = bpe.EOS) -> Hypothesis:
    """Best hypothesis under length-normalized log-probability ranking."""
    if beam_width < 1:
        raise ContractError("beam width must be >= 1")
    beams = [Hypothesis(ids=(bos,), logp=0.0, finished=False)]
    for _ in range(max_len):
        live = [h for h in beams if not h.finished]
        if not live:
            break
        logprobs = np.asarray(step_fn([list(h.ids) for h in live]))
        candidates = [h for h in beams if h.finished]
        for h, lp in zip(live, logprobs):
            order = np.lexsort((np.arange(lp.shape[0]), -lp))[:beam_width]
            for tok in order:
                tok = int(tok)
                nxt = Hypothesis(ids=h.ids + (tok,), logp=h.logp + float(lp[tok]),
                                 finished=tok == eos)
                if nxt.generated >= max_len:
                    nxt = Hypothesis(ids=nxt.ids, logp=nxt.logp, finished=True)
                candidates.append(nxt)
        beams = sorted(candidates, key=_rank_key)[:beam_width]
    finished = [h for h in beams if h.finished]
    pool = finished if finished else beams
    return min(pool, key=_rank_key)


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def decoder_step_fn(model: Model, enc: EncoderOutput, style: int) -> StepFn:
    """Step function over the trained decoder for a single encoded segment."""

    def step(prefixes: list[list[int]]) -> np.ndarray:
        n = len(prefixes)
        ids = np.asarray(prefixes, dtype=np.int64)
        enc_n = _tile_encoder(enc, n)
        logits = decode_forward(model.params, model.config, Ctx(), ids, style, enc_n)
        last = logits.data[:, -1, :]
        out = np.empty_like(last)
        for i in range(n):
            out[i] = _log_softmax(last[i])
        return out

    return step


def _tile_encoder(enc: EncoderOutput, n: int) -> EncoderOutput:
    from . import tensor as T

    def tile_t(t):
        if t is None:
            return None
        return T.constant(np.repeat(t.data, n, axis=0)) if t.data.shape[0] == 1 else t

    def tile_m(m):
        if m is None:
            return None
        return np.repeat(m, n, axis=0) if m.shape[0] == 1 else m

    return EncoderOutput(text_states=tile_t(enc.text_states),
                         video_states=tile_t(enc.video_states),
                         text_mask=tile_m(enc.text_mask),
                         video_mask=tile_m(enc.video_mask))


def generate_caption(model: Model, asr_ids: list[int],
                     frames: np.ndarray | None = None,
                     beam_width: int = 4, max_len: int = 32,
                     style: int = bpe.STYLE_CAP) -> list[int]:
    """Encode one segment and decode its caption; returns generated token
    ids without BOS/EOS."""
    from . import corpus

    batch = corpus.make_batch([(asr_ids, frames)], style=bpe.STYLE_ASR,
                              batch_size=1,
                              feature_dim=model.config.video_feature_dim
                              if (frames is not None and model.config.multimodal) else None)
    use_video = model.config.multimodal and batch.frames is not None
    enc = encode(model.params, model.config, Ctx(),
                 text_ids=batch.text_ids, style=batch.style,
                 text_mask=batch.text_mask,
                 frames=batch.frames if use_video else None,
                 video_mask=batch.video_mask if use_video else None)
    best = beam_search(decoder_step_fn(model, enc, style), beam_width, max_len)
    out = [t for t in best.ids[1:] if t != bpe.EOS]
    return out

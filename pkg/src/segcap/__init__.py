"""Segment-level caption models for instructional video.

A self-contained stack: tensor autograd, BPE subwords, timed-transcript
segmentation, a two-stream transformer with cross-modal attention, masked
seq2seq pretraining with alignment/ordering auxiliaries, beam decoding,
and the caption metric suite (BLEU, ROUGE-L, CIDEr-D).
"""

from .bpe import Vocabulary, train_bpe
from .corpus import AsrSegment, TagTable, TimedToken, segment_asr, standardize_tag
from .errors import SegcapError
from .metrics import EvalReport, agreement_pool, bleu, cider_d, constant_baseline, evaluate, rouge_l
from .model import Model, ModelConfig
from .objectives import Schedule, StepKind, make_schedule

__version__ = "0.1.0"

__all__ = [
    "AsrSegment", "EvalReport", "Model", "ModelConfig", "Schedule",
    "SegcapError", "StepKind", "TagTable", "TimedToken", "Vocabulary",
    "agreement_pool", "bleu", "cider_d", "constant_baseline", "evaluate",
    "make_schedule", "rouge_l", "segment_asr", "standardize_tag", "train_bpe",
]

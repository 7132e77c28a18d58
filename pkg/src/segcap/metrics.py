"""Caption evaluation: corpus BLEU-n, ROUGE-L, CIDEr-D, the constant-tag
baseline, and the annotator-agreement pooling protocol.

Conventions: BLEU and ROUGE-L are reported on a 0-100 scale; CIDEr-D is
native 0-10 (the report also carries a x100 column for tables that use
percentage-like scaling). Texts are compared as lowercase whitespace
tokens. Scoring takes exactly one reference per candidate.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import TagTable
from .errors import DataError

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0


def tokens_of(text: str) -> list[str]:
    return text.lower().split()


def _ngrams(toks: list[str], n: int) -> Counter:
    return Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def bleu(candidates: list[str], references: list[str], n: int = 4) -> float:
    """Corpus-level BLEU with clipped modified precision, geometric mean
    over orders 1..n and the brevity penalty exp(1 - r/c) when c < r."""
    if len(candidates) != len(references):
        raise DataError("candidate and reference lists differ in length")
    if not candidates:
        raise DataError("cannot score an empty corpus")
    cand_toks = [tokens_of(c) for c in candidates]
    ref_toks = [tokens_of(r) for r in references]
    log_sum = 0.0
    for order in range(1, n + 1):
        matched = 0
        total = 0
        for c, r in zip(cand_toks, ref_toks):
            cg = _ngrams(c, order)
            rg = _ngrams(r, order)
            matched += sum(min(cnt, rg[g]) for g, cnt in cg.items())
            total += max(0, len(c) - order + 1)
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c_len = sum(len(c) for c in cand_toks)
    r_len = sum(len(r) for r in ref_toks)
    if c_len == 0:
        return 0.0
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(log_sum / n)


# ---------------------------------------------------------------------------
# ROUGE-L


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l_pair(candidate: str, reference: str, beta: float = ROUGE_BETA) -> float:
    """LCS F-measure for one pair, on 0-100."""
    c = tokens_of(candidate)
    r = tokens_of(reference)
    if not c or not r:
        return 0.0
    lcs = _lcs_length(c, r)
    if lcs == 0:
        return 0.0
    prec = lcs / len(c)
    rec = lcs / len(r)
    return 100.0 * (1 + beta * beta) * prec * rec / (rec + beta * beta * prec)


def rouge_l(candidates: list[str], references: list[str]) -> float:
    if len(candidates) != len(references):
        raise DataError("candidate and reference lists differ in length")
    if not candidates:
        raise DataError("cannot score an empty corpus")
    return sum(rouge_l_pair(c, r) for c, r in zip(candidates, references)) / len(candidates)


# ---------------------------------------------------------------------------
# CIDEr-D


def _tfidf(counts: Counter, df: Counter, log_n: float) -> tuple[dict, float]:
    vec = {}
    norm_sq = 0.0
    for gram, cnt in counts.items():
        w = cnt * (log_n - math.log(max(1.0, df[gram])))
        vec[gram] = w
        norm_sq += w * w
    return vec, math.sqrt(norm_sq)


def cider_d_pair_scores(candidates: list[str], references: list[str],
                        n: int = 4, sigma: float = CIDER_SIGMA) -> list[float]:
    """Per-segment CIDEr-D (native 0-10 scale).

    Document frequencies come from the reference corpus; candidate weights
    are clipped at the reference weight before the cosine; each order's
    similarity is damped by a Gaussian penalty on the token-length gap.
    """
    if len(candidates) != len(references):
        raise DataError("candidate and reference lists differ in length")
    if not candidates:
        raise DataError("cannot score an empty corpus")
    cand_toks = [tokens_of(c) for c in candidates]
    ref_toks = [tokens_of(r) for r in references]
    log_n_docs = math.log(len(references))
    dfs = []
    for order in range(1, n + 1):
        df: Counter = Counter()
        for r in ref_toks:
            for gram in set(_ngrams(r, order)):
                df[gram] += 1
        dfs.append(df)
    scores = []
    for c, r in zip(cand_toks, ref_toks):
        total = 0.0
        penalty = math.exp(-((len(c) - len(r)) ** 2) / (2.0 * sigma * sigma))
        for order in range(1, n + 1):
            df = dfs[order - 1]
            cv, cn = _tfidf(_ngrams(c, order), df, log_n_docs)
            rv, rn = _tfidf(_ngrams(r, order), df, log_n_docs)
            if cn == 0.0 or rn == 0.0:
                continue
            dot = sum(min(w, rv.get(g, 0.0)) * rv.get(g, 0.0) for g, w in cv.items())
            total += penalty * dot / (cn * rn)
        scores.append(10.0 * total / n)
    return scores


def cider_d(candidates: list[str], references: list[str]) -> float:
    scores = cider_d_pair_scores(candidates, references)
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# reports


@dataclass
class SegmentScore:
    video_id: str
    seg_index: int
    candidate: str
    reference: str
    rouge_l: float
    cider_d: float


@dataclass
class EvalReport:
    bleu1: float
    bleu4: float
    rouge_l: float
    cider_d: float  # native 0-10
    count: int
    segments: list[SegmentScore] = field(default_factory=list)

    @property
    def cider_d_x100(self) -> float:
        return 100.0 * self.cider_d

    @classmethod
    def empty(cls) -> "EvalReport":
        return cls(bleu1=0.0, bleu4=0.0, rouge_l=0.0, cider_d=0.0, count=0)

    def rows(self) -> list[tuple[str, float]]:
        return [("BLEU-1", self.bleu1), ("BLEU-4", self.bleu4),
                ("ROUGE-L", self.rouge_l), ("CIDEr-D", self.cider_d),
                ("CIDEr-D(x100)", self.cider_d_x100)]


def evaluate(candidates: list[str], references: list[str],
             ids: list[tuple[str, int]] | None = None) -> EvalReport:
    """Score a prediction corpus against one reference per segment."""
    if not candidates:
        return EvalReport.empty()
    per_cider = cider_d_pair_scores(candidates, references)
    segs = []
    for k, (c, r) in enumerate(zip(candidates, references)):
        vid, idx = ids[k] if ids else ("", k)
        segs.append(SegmentScore(video_id=vid, seg_index=idx, candidate=c,
                                 reference=r, rouge_l=rouge_l_pair(c, r),
                                 cider_d=per_cider[k]))
    return EvalReport(
        bleu1=bleu(candidates, references, n=1),
        bleu4=bleu(candidates, references, n=4),
        rouge_l=rouge_l(candidates, references),
        cider_d=sum(per_cider) / len(per_cider),
        count=len(candidates),
        segments=segs,
    )


def constant_baseline(references: list[str], constant: str,
                      ids: list[tuple[str, int]] | None = None,
                      tags: TagTable | None = None) -> EvalReport:
    """Score the degenerate predictor that emits `constant` everywhere."""
    table = tags or TagTable.default()
    refs = [table.standardize(r) for r in references]
    cand = table.standardize(constant)
    return evaluate([cand] * len(refs), refs, ids)


def agreement_pool(annotations: dict[str, list[list[tuple[str, str]]]],
                   tags: TagTable | None = None) -> EvalReport:
    """Pool double annotations into (groundtruth, prediction) pairs.

    `annotations` maps a video id to its annotation sets, each a list of
    (segment start key, tag). For every pair of annotators of one video and
    every start key both used, the first annotator's tag becomes the
    reference and the second's the prediction. Videos with zero overlap
    contribute nothing; an empty pool yields an all-zero report.
    """
    table = tags or TagTable.default()
    refs: list[str] = []
    cands: list[str] = []
    ids: list[tuple[str, int]] = []
    for video_id in sorted(annotations):
        sets = annotations[video_id]
        indexed = []
        for ann in sets:
            by_start: dict[str, str] = {}
            for start, tag in ann:
                by_start.setdefault(start, tag)
            indexed.append(by_start)
        for a in range(len(indexed)):
            for b in range(a + 1, len(indexed)):
                for start in indexed[a]:
                    if start in indexed[b]:
                        refs.append(table.standardize(indexed[a][start]))
                        cands.append(table.standardize(indexed[b][start]))
                        ids.append((video_id, len(ids)))
    if not refs:
        return EvalReport.empty()
    return evaluate(cands, refs, ids)

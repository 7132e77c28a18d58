"""Data model and ingestion: timed-transcript segmentation, frame pairing,
tag standardization, record readers/writers, and batch assembly.

File formats
------------
Segment files are line-oriented JSON. A transcript+video record is
``{video_id, seg_index, tokens: [{w, t}], frames_path, frame_offset,
frame_count}`` (frames_path may be null for text-only data); a caption-text
record is ``{text}``; a supervised record adds ``{caption}``.

Frame-feature files are binary little-endian: magic ``MMF1``, dim (u32),
count (u32), then count x dim float32 rows. One row per second of video.

A tag table file holds ``canonical<TAB>variant`` lines.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from . import bpe
from .errors import ContractError, DataError

GAP_THRESHOLD = 2.0
MAX_SEGMENT_WORDS = 320
MAX_TEXT_SUBWORDS = 240
MAX_VIDEO_FRAMES = 40

FRAME_MAGIC = b"MMF1"


@dataclass(frozen=True)
class TimedToken:
    w: str
    t: float


@dataclass
class AsrSegment:
    tokens: list[TimedToken]
    video_id: str = ""
    seg_index: int = 0

    @property
    def start(self) -> float:
        return self.tokens[0].t if self.tokens else 0.0

    @property
    def end(self) -> float:
        return self.tokens[-1].t if self.tokens else 0.0

    def text(self) -> str:
        return " ".join(tok.w for tok in self.tokens)


@dataclass
class SegmentRecord:
    """One parsed line of a segment file, frames still on disk."""

    video_id: str
    seg_index: int
    tokens: list[TimedToken]
    frames_path: str | None = None
    frame_offset: int = 0
    frame_count: int = 0
    caption: str | None = None

    def asr_text(self) -> str:
        return " ".join(tok.w for tok in self.tokens)


def segment_asr(tokens: list[TimedToken], gap_threshold: float = GAP_THRESHOLD,
                max_len: int = MAX_SEGMENT_WORDS) -> list[AsrSegment]:
    """Split a timed token stream into segments.

    A boundary is placed where consecutive tokens are more than
    `gap_threshold` seconds apart (a gap of exactly the threshold does not
    split), or where the running segment has reached `max_len` words. The
    concatenation of the output equals the input.
    """
    for a, b in zip(tokens, tokens[1:]):
        if b.t < a.t:
            raise DataError("token timestamps must be non-decreasing")
    segments: list[AsrSegment] = []
    current: list[TimedToken] = []
    for tok in tokens:
        if current and (tok.t - current[-1].t > gap_threshold or len(current) >= max_len):
            segments.append(AsrSegment(current))
            current = []
        current.append(tok)
    if current:
        segments.append(AsrSegment(current))
    for i, seg in enumerate(segments):
        seg.seg_index = i
    return segments


def pair_frames(segment: AsrSegment, feature_count: int,
                max_frames: int = MAX_VIDEO_FRAMES) -> tuple[int, int]:
    """Return (offset, count) of the 1-per-second feature rows concurrent
    with the segment, truncated to the first `max_frames`. Zero overlap is
    valid and yields (0, 0)."""
    if not segment.tokens or feature_count <= 0:
        return 0, 0
    first = int(np.ceil(segment.start))
    last = int(np.floor(segment.end))
    first = max(first, 0)
    last = min(last, feature_count - 1)
    if last < first:
        return 0, 0
    count = min(last - first + 1, max_frames)
    return first, count


# ---------------------------------------------------------------------------
# tag standardization


class TagTable:
    """Variant -> canonical tag mapping; unknown tags pass through."""

    def __init__(self, groups: dict[str, Iterable[str]]):
        self._canon: dict[str, str] = {}
        for canonical, variants in groups.items():
            self._canon[canonical] = canonical
            for v in variants:
                existing = self._canon.get(v)
                if existing is not None and existing != canonical:
                    raise DataError(f"tag variant {v!r} mapped to both "
                                    f"{existing!r} and {canonical!r}")
                self._canon[v] = canonical

    def standardize(self, tag: str) -> str:
        key = " ".join(tag.lower().split())
        return self._canon.get(key, key)

    @classmethod
    def default(cls) -> "TagTable":
        return cls({
            "intro": ["introduction", "opening"],
            "outro": ["closing", "closure", "conclusion", "ending",
                      "end of video", "video closing"],
            "result": ["finished result", "final result", "results"],
        })

    @classmethod
    def load(cls, path) -> "TagTable":
        groups: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'canonical<TAB>variant'")
                groups.setdefault(parts[0], []).append(parts[1])
        return cls(groups)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for variant, canonical in sorted(self._canon.items()):
                if variant != canonical:
                    fh.write(f"{canonical}\t{variant}\n")


def standardize_tag(tag: str, table: TagTable) -> str:
    return table.standardize(tag)


# ---------------------------------------------------------------------------
# frame-feature files


def write_frame_features(path, features: np.ndarray) -> None:
    arr = np.ascontiguousarray(features, dtype="<f4")
    if arr.ndim != 2:
        raise ContractError("frame features must be a 2-D [count, dim] array")
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<II", arr.shape[1], arr.shape[0]))
        fh.write(arr.tobytes())


def read_frame_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FRAME_MAGIC:
            raise DataError(f"{path}: bad frame-file magic {magic!r}")
        dim, count = struct.unpack("<II", fh.read(8))
        payload = fh.read(4 * dim * count)
    if len(payload) != 4 * dim * count:
        raise DataError(f"{path}: truncated frame payload")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()


class FrameStore:
    """Caches frame-feature files and serves row slices for records."""

    def __init__(self):
        self._files: dict[str, np.ndarray] = {}

    def rows(self, record: SegmentRecord) -> np.ndarray | None:
        if not record.frames_path or record.frame_count <= 0:
            return None
        feats = self._files.get(record.frames_path)
        if feats is None:
            feats = read_frame_features(record.frames_path)
            self._files[record.frames_path] = feats
        lo = record.frame_offset
        hi = lo + record.frame_count
        if hi > feats.shape[0]:
            raise DataError(
                f"{record.frames_path}: record wants rows [{lo},{hi}) of {feats.shape[0]}"
            )
        return feats[lo:hi]


# ---------------------------------------------------------------------------
# segment files

KINDS = ("asr+video", "cap-text", "asr+video+cap")


def _parse_tokens(raw, where: str) -> list[TimedToken]:
    if not isinstance(raw, list):
        raise DataError(f"{where}: field 'tokens' must be a list")
    toks = []
    for item in raw:
        if not isinstance(item, dict) or "w" not in item or "t" not in item:
            raise DataError(f"{where}: field 'tokens' entries need 'w' and 't'")
        toks.append(TimedToken(w=str(item["w"]), t=float(item["t"])))
    return toks


def load_segments(path, kind: str) -> Iterator[SegmentRecord]:
    """Stream records from a segment file; malformed lines raise DataError
    naming the offending field and line number."""
    if kind not in KINDS:
        raise ContractError(f"unknown segment kind {kind!r}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc.msg})") from exc
            if kind == "cap-text":
                if "text" not in obj:
                    raise DataError(f"{where}: missing field 'text'")
                yield SegmentRecord(video_id=str(obj.get("video_id", "")),
                                    seg_index=int(obj.get("seg_index", 0)),
                                    tokens=[], caption=str(obj["text"]))
                continue
            for fieldname in ("video_id", "seg_index", "tokens"):
                if fieldname not in obj:
                    raise DataError(f"{where}: missing field '{fieldname}'")
            rec = SegmentRecord(
                video_id=str(obj["video_id"]),
                seg_index=int(obj["seg_index"]),
                tokens=_parse_tokens(obj["tokens"], where),
                frames_path=obj.get("frames_path") or None,
                frame_offset=int(obj.get("frame_offset", 0)),
                frame_count=int(obj.get("frame_count", 0)),
            )
            if kind == "asr+video+cap":
                if "caption" not in obj:
                    raise DataError(f"{where}: missing field 'caption'")
                rec.caption = str(obj["caption"])
            yield rec


def write_segments(path, records: Iterable[SegmentRecord], kind: str) -> int:
    """Companion writer for `load_segments`; returns the record count."""
    if kind not in KINDS:
        raise ContractError(f"unknown segment kind {kind!r}")
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if kind == "cap-text":
                obj = {"text": rec.caption or ""}
            else:
                obj = {
                    "video_id": rec.video_id,
                    "seg_index": rec.seg_index,
                    "tokens": [{"w": t.w, "t": t.t} for t in rec.tokens],
                    "frames_path": rec.frames_path,
                    "frame_offset": rec.frame_offset,
                    "frame_count": rec.frame_count,
                }
                if kind == "asr+video+cap":
                    obj["caption"] = rec.caption or ""
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    """Encoder-side arrays: CLS-prefixed right-padded text plus optional
    frame features, with boolean masks covering the real positions."""

    text_ids: np.ndarray
    text_mask: np.ndarray
    style: int
    frames: np.ndarray | None = None
    video_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.text_ids.shape[0]


def make_batch(examples: list[tuple[list[int], np.ndarray | None]], style: int,
               batch_size: int = 32, max_text: int = MAX_TEXT_SUBWORDS,
               max_frames: int = MAX_VIDEO_FRAMES,
               feature_dim: int | None = None) -> Batch:
    """Assemble tokenized examples (ids, frames-or-None) into one padded batch.

    Text is truncated to `max_text` subwords, CLS is prepended, and rows are
    right-padded with PAD up to the longest row. Frames are right-padded with
    zero rows. Masks mark exactly the non-padding positions.
    """
    if not examples:
        raise ContractError("make_batch needs at least one example")
    if len(examples) > batch_size:
        raise ContractError(f"{len(examples)} examples exceed batch size {batch_size}")
    ids = [list(e[0])[:max_text] for e in examples]
    frames = [e[1] if e[1] is not None else None for e in examples]
    n = len(examples)
    width = max(len(r) for r in ids) + 1  # +1 for CLS
    text = np.full((n, width), bpe.PAD, dtype=np.int64)
    tmask = np.zeros((n, width), dtype=bool)
    for i, row in enumerate(ids):
        text[i, 0] = bpe.CLS
        text[i, 1 : 1 + len(row)] = row
        tmask[i, : 1 + len(row)] = True

    lengths = [0 if f is None else min(f.shape[0], max_frames) for f in frames]
    lv = max(lengths)
    if feature_dim is None:
        dims = [f.shape[1] for f in frames if f is not None]
        feature_dim = dims[0] if dims else None
    if feature_dim is None:
        # purely text batch: no example even carries an (empty) frame array
        return Batch(text_ids=text, text_mask=tmask, style=style)
    vid = np.zeros((n, lv, feature_dim), dtype=np.float64)
    vmask = np.zeros((n, lv), dtype=bool)
    for i, f in enumerate(frames):
        k = lengths[i]
        if k:
            if f.shape[1] != feature_dim:
                raise DataError(f"frame feature dim {f.shape[1]} != expected {feature_dim}")
            vid[i, :k] = f[:k]
            vmask[i, :k] = True
    return Batch(text_ids=text, text_mask=tmask, style=style,
                 frames=vid, video_mask=vmask)

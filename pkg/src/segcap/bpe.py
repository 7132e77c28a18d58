"""Byte-pair-encoding subword vocabulary: training, encode/decode, file I/O.

Words are split into characters with a `</w>` marker fused onto the final
character, so decoding can restore word boundaries. Merges are learned
greedily by pair frequency with a lexicographic tie-break, which makes
training deterministic for a given corpus and budget.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .errors import DataError

PAD, BOS, EOS, MASK, CLS, UNK = 0, 1, 2, 3, 4, 5
RESERVED = ("<pad>", "<bos>", "<eos>", "<mask>", "<cls>", "<unk>")

STYLE_ASR = 0
STYLE_CAP = 1

_END = "</w>"


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + _END,)


def normalize(text: str) -> str:
    """Lowercase and collapse whitespace; applied before any tokenization."""
    return " ".join(text.lower().split())


@dataclass
class Vocabulary:
    merges: list[tuple[str, str]]
    id_to_subword: list[str]
    subword_to_id: dict[str, int] = field(default_factory=dict)
    _merge_rank: dict[tuple[str, str], int] = field(default_factory=dict)
    _word_cache: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.subword_to_id:
            self.subword_to_id = {s: i for i, s in enumerate(self.id_to_subword)}
        if not self._merge_rank:
            self._merge_rank = {pair: i for i, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.id_to_subword)

    def encode(self, text: str) -> list[int]:
        """Token ids for `text`. Unknown characters map to UNK; reserved ids
        never appear for ordinary text."""
        out: list[int] = []
        for word in normalize(text).split():
            cached = self._word_cache.get(word)
            if cached is None:
                cached = tuple(self._encode_word(word))
                self._word_cache[word] = cached
            out.extend(cached)
        return out

    def _encode_word(self, word: str) -> list[int]:
        symbols = list(_word_symbols(word))
        while len(symbols) > 1:
            best_rank = None
            best_at = -1
            for i in range(len(symbols) - 1):
                rank = self._merge_rank.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_at = i
            if best_rank is None:
                break
            merged: list[str] = []
            i = 0
            pair = (symbols[best_at], symbols[best_at + 1])
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return [self.subword_to_id.get(s, UNK) for s in symbols]

    def decode(self, ids: Iterable[int]) -> str:
        """Inverse of encode up to whitespace normalization; reserved tokens
        are dropped."""
        pieces: list[str] = []
        for i in ids:
            i = int(i)
            if i < 0 or i >= self.size:
                raise DataError(f"token id {i} outside vocabulary of size {self.size}")
            if i < len(RESERVED):
                continue
            pieces.append(self.id_to_subword[i])
        text = "".join(pieces).replace(_END, " ")
        return " ".join(text.split())

    # -- persistence ---------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"segcap-bpe v1 merges={len(self.merges)} size={self.size}\n")
            for left, right in self.merges:
                fh.write(f"{left} {right}\n")
            for i, sub in enumerate(self.id_to_subword):
                fh.write(f"{i}\t{sub}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split()
            if len(header) != 4 or header[0] != "segcap-bpe" or header[1] != "v1":
                raise DataError(f"{path}: not a vocabulary file")
            n_merges = int(header[2].split("=")[1])
            size = int(header[3].split("=")[1])
            merges = []
            for _ in range(n_merges):
                left, right = fh.readline().rstrip("\n").split(" ")
                merges.append((left, right))
            id_to_subword = [""] * size
            for _ in range(size):
                line = fh.readline().rstrip("\n")
                idx, sub = line.split("\t")
                id_to_subword[int(idx)] = sub
        vocab = cls(merges=merges, id_to_subword=id_to_subword)
        for i, name in enumerate(RESERVED):
            if vocab.id_to_subword[i] != name:
                raise DataError(f"{path}: reserved id {i} is not {name}")
        return vocab


def train_bpe(corpus: Iterable[str], target_size: int) -> Vocabulary:
    """Learn merges greedily until `target_size` ids exist or no pair occurs
    at least twice. Ties between equally frequent pairs break toward the
    lexicographically smaller pair."""
    word_freq: Counter[str] = Counter()
    for line in corpus:
        for word in normalize(line).split():
            word_freq[word] += 1
    if not word_freq:
        raise DataError("cannot train a vocabulary on an empty corpus")

    words: list[tuple[list[str], int]] = [
        [list(_word_symbols(w)), f] for w, f in sorted(word_freq.items())
    ]
    base = sorted({s for symbols, _ in words for s in symbols})
    floor = len(RESERVED) + len(base)
    if target_size < floor:
        raise DataError(
            f"target size {target_size} below reserved+base character count {floor}"
        )

    subwords = list(RESERVED) + base
    merges: list[tuple[str, str]] = []
    while len(subwords) < target_size:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for symbols, freq in words:
            for i in range(len(symbols) - 1):
                pair_freq[(symbols[i], symbols[i + 1])] += freq
        if not pair_freq:
            break
        best = min(pair_freq.items(), key=lambda kv: (-kv[1], kv[0]))
        if best[1] < 2:
            break
        pair = best[0]
        joined = pair[0] + pair[1]
        for entry in words:
            symbols = entry[0]
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
                    symbols[i : i + 2] = [joined]
                else:
                    i += 1
        merges.append(pair)
        subwords.append(joined)
    return Vocabulary(merges=merges, id_to_subword=subwords)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(text)


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.decode(ids)

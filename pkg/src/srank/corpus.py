"""Click phrases and the frequency-thresholded item vocabulary."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .catalog import EMBEDDING_WEEK, ClickSession, DataError

DEFAULT_MIN_PHRASE_COUNT = 16


@dataclass(frozen=True)
class PhraseCorpus:
    phrases: tuple[tuple[str, ...], ...]

    @property
    def phrase_count(self) -> int:
        return len(self.phrases)

    @property
    def token_count(self) -> int:
        return sum(len(p) for p in self.phrases)

    def __len__(self) -> int:
        return len(self.phrases)


@dataclass(frozen=True)
class VocabEntry:
    index: int
    phrase_count: int


@dataclass(frozen=True)
class Vocabulary:
    """Item ids kept for embedding training.

    Indices are dense and ordered by descending phrase count, ties by item id.
    """

    entries: dict[str, VocabEntry]
    min_phrase_count: int = DEFAULT_MIN_PHRASE_COUNT

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self.entries

    @property
    def item_ids(self) -> list[str]:
        """Item ids in index order."""
        return sorted(self.entries, key=lambda k: self.entries[k].index)

    @property
    def counts(self) -> list[int]:
        return [self.entries[i].phrase_count for i in self.item_ids]

    @classmethod
    def from_counts(cls, counts: dict[str, int], min_phrase_count: int) -> "Vocabulary":
        kept = sorted(
            ((item, n) for item, n in counts.items() if n >= min_phrase_count),
            key=lambda kv: (-kv[1], kv[0]),
        )
        entries = {item: VocabEntry(i, n) for i, (item, n) in enumerate(kept)}
        return cls(entries, min_phrase_count)


def extract_phrases(sessions: Iterable[ClickSession]) -> PhraseCorpus:
    phrases = []
    for s in sessions:
        if s.period != EMBEDDING_WEEK:
            raise DataError(
                f"session {s.session_id!r} is tagged {s.period!r}; "
                "only embedding_week sessions may feed the embedding corpus"
            )
        if len(s.clicks) >= 2:
            phrases.append(tuple(s.clicks))
    return PhraseCorpus(tuple(phrases))


def phrase_counts(corpus: PhraseCorpus) -> Counter:
    """Number of distinct phrases each item appears in."""
    counts: Counter = Counter()
    for phrase in corpus.phrases:
        counts.update(set(phrase))
    return counts


def build_vocabulary(corpus: PhraseCorpus, min_phrase_count: int = DEFAULT_MIN_PHRASE_COUNT) -> Vocabulary:
    if min_phrase_count < 1:
        raise ValueError("min_phrase_count must be >= 1")
    return Vocabulary.from_counts(phrase_counts(corpus), min_phrase_count)


def filter_phrases(corpus: PhraseCorpus, vocab: Vocabulary) -> PhraseCorpus:
    kept = []
    for phrase in corpus.phrases:
        filtered = tuple(tok for tok in phrase if tok in vocab.entries)
        if len(filtered) >= 2:
            kept.append(filtered)
    return PhraseCorpus(tuple(kept))


def write_phrases(corpus: PhraseCorpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for phrase in corpus.phrases:
            fh.write(" ".join(phrase))
            fh.write("\n")


def read_phrases(path: str | Path) -> PhraseCorpus:
    with open(path, encoding="utf-8") as fh:
        return PhraseCorpus(tuple(tuple(line.split()) for line in fh if line.strip()))


def write_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in vocab.item_ids:
            e = vocab.entries[item]
            fh.write(f"{item}\t{e.index}\t{e.phrase_count}\n")


def read_vocabulary(path: str | Path, min_phrase_count: int = DEFAULT_MIN_PHRASE_COUNT) -> Vocabulary:
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"malformed vocabulary line {lineno}")
            entries[parts[0]] = VocabEntry(int(parts[1]), int(parts[2]))
    if sorted(e.index for e in entries.values()) != list(range(len(entries))):
        raise DataError("vocabulary indices are not dense")
    return Vocabulary(entries, min_phrase_count)


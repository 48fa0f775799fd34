"""Edit-distance relevance ranker for preselecting bias phrases.

Every phrase is scored against word-aligned segments of the hypothesis with
the same number of words as the phrase; the score is the negated minimum
character edit distance, normalized by the phrase's character length.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .textcore import char_edit_distance, normalize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BiasList:
    """Ordered, normalized bias phrases that remember their original positions."""

    phrases: tuple[str, ...]
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.phrases) != len(self.indices):
            raise ValueError("phrases and indices differ in length")
        for p in self.phrases:
            if not p:
                raise ValueError("empty bias phrase")

    @classmethod
    def from_phrases(cls, phrases: Iterable[str]) -> "BiasList":
        normed = [normalize(p) for p in phrases]
        normed = [p for p in normed if p]
        return cls(tuple(normed), tuple(range(len(normed))))

    @classmethod
    def load(cls, path: str | Path) -> "BiasList":
        """Read one phrase per line (UTF-8); blank lines are skipped."""
        text = Path(path).read_text(encoding="utf-8")
        bl = cls.from_phrases(text.splitlines())
        if bl.duplicates:
            logger.warning("bias list %s has %d duplicate phrases", path, len(bl.duplicates))
        return bl

    def dump(self, path: str | Path) -> None:
        Path(path).write_text("".join(p + "\n" for p in self.phrases), encoding="utf-8")

    @property
    def duplicates(self) -> list[str]:
        return sorted(p for p, c in Counter(self.phrases).items() if c > 1)

    def subset(self, positions: Sequence[int]) -> "BiasList":
        return BiasList(
            tuple(self.phrases[i] for i in positions),
            tuple(self.indices[i] for i in positions),
        )

    def __len__(self) -> int:
        return len(self.phrases)

    def __getitem__(self, i: int) -> str:
        return self.phrases[i]

    def __iter__(self):
        return iter(self.phrases)


@dataclass(frozen=True)
class RankedPhrase:
    phrase: str
    original_index: int
    weight: float


def hypothesis_segments(n_words: int, hyp_words: Sequence[str]) -> list[str]:
    """All runs of ``n_words`` consecutive hypothesis words, joined by spaces."""
    if len(hyp_words) <= n_words:
        return [" ".join(hyp_words)]
    return [" ".join(hyp_words[i : i + n_words]) for i in range(len(hyp_words) - n_words + 1)]


def _min_distance(phrase: str, segments: Iterable[str]) -> int:
    best = None
    n = len(phrase)
    for seg in segments:
        # |len(a) - len(b)| is a lower bound on the distance
        if best is not None and abs(len(seg) - n) >= best:
            continue
        d = char_edit_distance(phrase, seg)
        if best is None or d < best:
            best = d
            if best == 0:
                break
    return best


def relevance_weight(phrase: str, hypothesis: str) -> float:
    phrase = normalize(phrase)
    if not phrase:
        raise ValueError("empty phrase")
    hyp_words = normalize(hypothesis).split()
    segs = hypothesis_segments(len(phrase.split()), hyp_words)
    return -_min_distance(phrase, segs) / len(phrase) + 0.0


def preselect(bias_list: BiasList, hypothesis: str, k: int) -> list[RankedPhrase]:
    """Top-``k`` phrases by relevance weight; ties go to the smaller original index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(bias_list) == 0:
        raise ValueError("empty bias list")
    hyp_words = normalize(hypothesis).split()
    seg_cache: dict[int, list[str]] = {}
    scored = []
    for phrase, idx in zip(bias_list.phrases, bias_list.indices):
        m = phrase.count(" ") + 1
        if m not in seg_cache:
            seg_cache[m] = hypothesis_segments(m, hyp_words)
        w = -_min_distance(phrase, seg_cache[m]) / len(phrase) + 0.0
        scored.append(RankedPhrase(phrase, idx, w))
    scored.sort(key=lambda rp: (-rp.weight, rp.original_index))
    return scored[:k]


def preselect_list(bias_list: BiasList, hypothesis: str, k: int) -> BiasList:
    """Like :func:`preselect` but returns the chosen phrases as a BiasList."""
    ranked = preselect(bias_list, hypothesis, k)
    return BiasList(tuple(r.phrase for r in ranked), tuple(r.original_index for r in ranked))

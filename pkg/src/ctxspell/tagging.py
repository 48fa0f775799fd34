"""BILO tag / context-index targets and their decoding back into text."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

from .textcore import DEFAULT_CHUNK, normalize, tokenize, word_align


class Tag(IntEnum):
    # O first so that argmax ties resolve to "outside"
    O = 0
    B = 1
    I = 2
    L = 3


N_TAGS = len(Tag)


@dataclass(frozen=True)
class TagTarget:
    """Per-token class and bias index (0 = none, k >= 1 = k-th phrase)."""

    cls: tuple[int, ...]
    cind: tuple[int, ...]
    usable: bool = True

    def __len__(self) -> int:
        return len(self.cls)

    @property
    def all_outside(self) -> bool:
        return all(c == Tag.O for c in self.cls)


@dataclass(frozen=True)
class CorrectionSpan:
    token_start: int
    token_end: int
    phrase_index: int


def check_wellformed(target: TagTarget) -> None:
    """Raise ValueError unless ``target`` is a clean BILO sequence."""
    if len(target.cls) != len(target.cind):
        raise ValueError("cls and cind differ in length")
    prev = Tag.O
    run_index = 0
    for c, k in zip(target.cls, target.cind):
        c = Tag(c)
        if (c == Tag.O) != (k == 0):
            raise ValueError("cind must be 0 exactly on O positions")
        if c in (Tag.I, Tag.L):
            if prev not in (Tag.B, Tag.I):
                raise ValueError(f"{c.name} without a preceding B or I")
            if k != run_index:
                raise ValueError("cind changes inside a span")
        if c == Tag.B:
            run_index = k
        prev = c


def span_tags(n: int) -> list[Tag]:
    if n == 1:
        return [Tag.B]
    return [Tag.B] + [Tag.I] * (n - 2) + [Tag.L]


def aligned_hyp_words(ref_words: list[str], hyp_words: list[str], span: tuple[int, int]) -> tuple[int, int] | None:
    """Half-open range of hypothesis words aligned to reference words ``span``.

    Hypothesis insertions inside the range, and insertions directly next to
    it, are absorbed into the range.  ``None`` means the span was deleted.
    """
    pairs = word_align(ref_words, hyp_words).pairs
    lo, hi = span
    pos = [p for p, (r, h) in enumerate(pairs) if r is not None and lo <= r < hi and h is not None]
    if not pos:
        return None
    first, last = pos[0], pos[-1]
    while first > 0 and pairs[first - 1][0] is None:
        first -= 1
    while last + 1 < len(pairs) and pairs[last + 1][0] is None:
        last += 1
    hyps = [h for _, h in pairs[first : last + 1] if h is not None]
    return min(hyps), max(hyps) + 1


def build_targets(
    reference: str,
    hypothesis: str,
    name_word_span: tuple[int, int],
    bias_list: Sequence[str],
    anti: bool = False,
    chunk: int = DEFAULT_CHUNK,
) -> TagTarget:
    """Tag the hypothesis tokens that stand for the reference name.

    With ``anti=True`` the result is all-outside regardless of the list.
    """
    hyp = tokenize(hypothesis, chunk)
    n = len(hyp.tokens)
    outside = TagTarget((Tag.O,) * n, (0,) * n)
    if anti:
        return outside
    ref_words = normalize(reference).split()
    lo, hi = name_word_span
    if not 0 <= lo < hi <= len(ref_words):
        raise ValueError(f"bad name span {name_word_span} for {len(ref_words)} words")
    phrase = " ".join(ref_words[lo:hi])
    normed = [normalize(p) for p in bias_list]
    if phrase not in normed:
        raise ValueError("phrase not in bias list")
    k = normed.index(phrase) + 1

    rng = aligned_hyp_words(ref_words, list(hyp.words), name_word_span)
    if rng is None:
        return TagTarget(outside.cls, outside.cind, usable=False)
    t0 = hyp.token_span_of_word[rng[0]][0]
    t1 = hyp.token_span_of_word[rng[1] - 1][1]
    cls = [Tag.O] * n
    cind = [0] * n
    cls[t0:t1] = span_tags(t1 - t0)
    cind[t0:t1] = [k] * (t1 - t0)
    return TagTarget(tuple(cls), tuple(cind))


def _tag(c) -> Tag:
    return Tag[c] if isinstance(c, str) else Tag(int(c))


def _run_index(run: list[int], b_value: int) -> int:
    counts: dict[int, int] = {}
    for v in run:
        counts[v] = counts.get(v, 0) + 1
    top = max(counts.values())
    tied = [v for v in run if counts[v] == top]
    return b_value if b_value in tied else tied[0]


def extract_spans(cls: Sequence, cind: Sequence[int]) -> list[CorrectionSpan]:
    """Decode maximal ``B I* L?`` runs into spans, leniently.

    I or L with no open run is read as O.  A run's phrase index is the
    majority cind over the run (ties go to the value at B); runs whose index
    comes out 0 are dropped.
    """
    if len(cls) != len(cind):
        raise ValueError("cls and cind differ in length")
    spans: list[CorrectionSpan] = []
    start = None

    def close(end: int) -> None:
        k = _run_index([int(v) for v in cind[start:end]], int(cind[start]))
        if k > 0:
            spans.append(CorrectionSpan(start, end, k))

    for t, c in enumerate(cls):
        c = _tag(c)
        if c == Tag.B:
            if start is not None:
                close(t)
            start = t
        elif c == Tag.I:
            continue
        elif c == Tag.L:
            if start is not None:
                close(t + 1)
                start = None
        else:
            if start is not None:
                close(t)
                start = None
    if start is not None:
        close(len(cls))
    return spans


def apply_correction(
    hypothesis: str,
    spans: Sequence[CorrectionSpan],
    bias_list: Sequence[str],
    chunk: int = DEFAULT_CHUNK,
) -> str:
    """Replace the words under each span with its bias phrase.

    Spans are snapped outwards to whole words.  When two spans touch the same
    word, the left one wins.
    """
    hyp = tokenize(hypothesis, chunk)
    words = list(hyp.words)
    ranges: list[tuple[int, int, str]] = []
    last_word = -1
    for sp in sorted(spans, key=lambda s: s.token_start):
        if not 1 <= sp.phrase_index <= len(bias_list):
            raise ValueError("bad context index")
        if not 0 <= sp.token_start < sp.token_end <= len(hyp.tokens):
            raise ValueError(f"span {sp} outside the hypothesis")
        w0 = hyp.word_of_token[sp.token_start]
        w1 = hyp.word_of_token[sp.token_end - 1] + 1
        if w0 <= last_word:
            continue
        ranges.append((w0, w1, normalize(bias_list[sp.phrase_index - 1])))
        last_word = w1 - 1
    for w0, w1, phrase in reversed(ranges):
        words[w0:w1] = phrase.split()
    return " ".join(words)

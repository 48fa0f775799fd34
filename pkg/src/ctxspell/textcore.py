"""Tokenization, string distances and word alignment shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

DEFAULT_CHUNK = 3

# Marker for an unaligned position in a WordAlignment pair.
GAP = None


def normalize(text: str) -> str:
    """Lowercase and collapse runs of whitespace."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class TokenizedText:
    """Chunked tokens of a lowercased text plus the word/token bookkeeping."""

    words: tuple[str, ...]
    tokens: tuple[str, ...]
    word_of_token: tuple[int, ...]
    token_span_of_word: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.tokens)


def chunk_word(word: str, chunk: int = DEFAULT_CHUNK) -> list[str]:
    return [word[i : i + chunk] for i in range(0, len(word), chunk)]


def tokenize(text: str, chunk: int = DEFAULT_CHUNK) -> TokenizedText:
    """Split ``text`` into words and chop every word into ``chunk``-character pieces.

    >>> tokenize("Call John").tokens
    ('cal', 'l', 'joh', 'n')
    """
    if chunk < 1:
        raise ValueError("chunk size must be positive")
    words = text.lower().split()
    tokens: list[str] = []
    word_of_token: list[int] = []
    spans: list[tuple[int, int]] = []
    for w, word in enumerate(words):
        start = len(tokens)
        pieces = chunk_word(word, chunk)
        tokens.extend(pieces)
        word_of_token.extend([w] * len(pieces))
        spans.append((start, len(tokens)))
    return TokenizedText(tuple(words), tuple(tokens), tuple(word_of_token), tuple(spans))


def detokenize(tt: TokenizedText) -> str:
    return " ".join("".join(tt.tokens[s:e]) for s, e in tt.token_span_of_word)


@lru_cache(maxsize=1 << 20)
def char_edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert, delete and substitute costs.

    Works on any pair of hashable sequences (strings, tuples of symbols).
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class WordAlignment:
    """Ordered (ref index | GAP, hyp index | GAP) pairs of a minimal word alignment."""

    pairs: tuple[tuple[int | None, int | None], ...]
    cost: int = field(default=0)

    def hyp_for_ref(self) -> dict[int, int]:
        return {r: h for r, h in self.pairs if r is not None and h is not None}

    def ref_for_hyp(self) -> dict[int, int]:
        return {h: r for r, h in self.pairs if r is not None and h is not None}


def word_align(ref_words: list[str], hyp_words: list[str]) -> WordAlignment:
    """Minimal word-level edit alignment between reference and hypothesis.

    The backtrace prefers a diagonal step (match or substitution) over a
    deletion, and a deletion over an insertion, so that among equal-cost
    alignments substitutions win and gaps are placed as early as possible
    when read from the left.
    """
    n, m = len(ref_words), len(hyp_words)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref_words[i - 1]
        row, above = d[i], d[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                above[j - 1] + (ri != hyp_words[j - 1]),
                above[j] + 1,
                row[j - 1] + 1,
            )
    pairs: list[tuple[int | None, int | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref_words[i - 1] != hyp_words[j - 1]):
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            pairs.append((i - 1, GAP))
            i -= 1
        else:
            pairs.append((GAP, j - 1))
            j -= 1
    pairs.reverse()
    return WordAlignment(tuple(pairs), d[n][m])


def alignment_cost(ref_words: list[str], hyp_words: list[str], alignment: WordAlignment) -> int:
    """Edit cost implied by ``alignment``: every gap and mismatched pair costs 1."""
    cost = 0
    for r, h in alignment.pairs:
        if r is None or h is None:
            cost += 1
        elif ref_words[r] != hyp_words[h]:
            cost += 1
    return cost

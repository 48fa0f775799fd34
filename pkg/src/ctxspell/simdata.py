"""Deterministic synthetic stand-in for decoded ASR training data.

References are built from carrier templates around person names.  The
"ASR hypothesis" corrupts the name (phonetically near confusions or single
character slips) and, rarely, carrier words.  Pseudo-acoustic frames encode
the *reference* pronunciation, so acoustics carry what the hypothesis lost.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._names import FIRST_NAMES
from .ranker import BiasList
from .textcore import char_edit_distance, normalize, word_align

COVERAGES = (25, 50, 75, 100)

TEMPLATES = (
    "call {name} at {time}",
    "send a message to {name}",
    "schedule a meeting with {name} {day}",
    "remind {name} about the report",
    "text {name} that i am running late",
    "what did {name} say in the meeting",
    "share the document with {name}",
    "is {name} joining the call",
    "set up a call with {name} and the team",
    "forward this email to {name}",
    "ask {name} to review the slides",
    "{name} is presenting next",
)
TIMES = ("ten a.m.", "noon", "three p.m.", "nine thirty", "four fifteen", "eleven a.m.", "two o'clock")
DAYS = ("tomorrow", "today", "on monday", "on friday", "next week")

# ---- pseudo phonemes ------------------------------------------------------

SYMBOLS = (
    # vowel classes and vowel groups
    "A", "E", "I", "O", "U", "AI", "AU", "EE", "OO", "OU", "OI",
    # r-coloured vowels
    "AR", "ER", "OR",
    # single consonants
    "B", "D", "F", "G", "H", "J", "K", "L", "M", "N", "P", "R", "S", "T", "V", "W", "Y", "Z",
    # consonant digraphs
    "CH", "SH", "TH", "NG", "KW", "ZH", "TS",
    # stand-in for words with no letters
    "SIL",
)
assert len(SYMBOLS) == 40
SYMBOL_ID = {s: i for i, s in enumerate(SYMBOLS)}

# Longest match wins; order within a length does not matter.
GROUP_RULES = {
    "tch": ("CH",),
    "sch": ("SH",),
    "ph": ("F",), "ck": ("K",), "sh": ("SH",), "ch": ("CH",), "th": ("TH",), "ng": ("NG",),
    "qu": ("KW",), "zh": ("ZH",), "tz": ("TS",), "wh": ("W",), "gh": ("G",), "kn": ("N",),
    "ai": ("AI",), "ay": ("AI",), "ei": ("AI",), "ey": ("EE",), "au": ("AU",), "aw": ("AU",),
    "ee": ("EE",), "ea": ("EE",), "ie": ("EE",), "oo": ("OO",), "ou": ("OU",), "ow": ("OU",),
    "oi": ("OI",), "oy": ("OI",),
    "ar": ("AR",), "er": ("ER",), "ir": ("ER",), "ur": ("ER",), "yr": ("ER",), "or": ("OR",),
}
LETTER_RULES = {
    "a": ("A",), "e": ("E",), "i": ("I",), "o": ("O",), "u": ("U",),
    "b": ("B",), "d": ("D",), "f": ("F",), "g": ("G",), "h": ("H",), "j": ("J",), "k": ("K",),
    "l": ("L",), "m": ("M",), "n": ("N",), "p": ("P",), "q": ("K",), "r": ("R",), "s": ("S",),
    "t": ("T",), "v": ("V",), "w": ("W",), "x": ("K", "S"), "z": ("Z",),
}
VOWELS = set("aeiouy")


def pseudo_phonemes(word: str) -> tuple[int, ...]:
    """Map a word to symbol ids with a fixed rule table.

    Steps: keep letters only, collapse doubled letters, drop a final ``e``
    after a consonant in words of 4+ letters, then scan left to right taking
    the longest letter group in ``GROUP_RULES``.  Otherwise ``h`` after a
    vowel (or word-final) is silent, ``c`` is S before e/i/y else K, ``y`` is
    a consonant word-initially and the vowel I elsewhere.  Words without
    letters map to the single symbol SIL; the empty string maps to ().
    """
    if not word:
        return ()
    letters = [c for c in word.lower() if "a" <= c <= "z"]
    if not letters:
        return (SYMBOL_ID["SIL"],)
    collapsed = [letters[0]]
    for c in letters[1:]:
        if c != collapsed[-1]:
            collapsed.append(c)
    if len(collapsed) >= 4 and collapsed[-1] == "e" and collapsed[-2] not in VOWELS:
        collapsed.pop()
    w = "".join(collapsed)
    out: list[str] = []
    i = 0
    while i < len(w):
        for n in (3, 2):
            if w[i : i + n] in GROUP_RULES:
                out.extend(GROUP_RULES[w[i : i + n]])
                i += n
                break
        else:
            c = w[i]
            if c == "h" and i > 0 and (w[i - 1] in VOWELS or i == len(w) - 1):
                pass
            elif c == "c":
                out.append("S" if w[i + 1 : i + 2] in ("e", "i", "y") else "K")
            elif c == "y":
                out.append("Y" if i == 0 else "I")
            else:
                out.extend(LETTER_RULES[c])
            i += 1
    if not out:
        out = ["SIL"]
    return tuple(SYMBOL_ID[s] for s in out)


def phoneme_distance(a: str, b: str) -> int:
    return char_edit_distance(pseudo_phonemes(a), pseudo_phonemes(b))


# ---- config and records ---------------------------------------------------


@dataclass
class SimConfig:
    n_names: int = 200
    n_train: int = 2000
    n_test: int = 300
    p_name_corrupt: float = 0.04
    p_carrier_noise: float = 0.02
    frames_per_phoneme: int = 2
    frame_noise_sigma: float = 0.5
    d_acoustic_in: int = 32
    max_jitter: int = 2
    pair_draws: int = 8
    n_pseudo_names: int = 300
    eval_list_size: int = 300
    seed: int = 0

    def __post_init__(self):
        for name in ("p_name_corrupt", "p_carrier_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.n_names < 2 or self.n_names > len(FIRST_NAMES):
            raise ValueError(f"n_names must be in [2, {len(FIRST_NAMES)}]")
        if self.frames_per_phoneme < 1 or self.d_acoustic_in < 1:
            raise ValueError("frames_per_phoneme and d_acoustic_in must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Utterance:
    id: str
    reference: str
    hypothesis: str
    name: str
    name_word_span: tuple[int, int]
    frames: np.ndarray
    word_frame_spans: list[tuple[int, int]]
    exact_spans: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.name_word_span = tuple(self.name_word_span)
        self.word_frame_spans = [tuple(s) for s in self.word_frame_spans]
        self.exact_spans = [tuple(s) for s in self.exact_spans]
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.size == 0:
            self.frames = self.frames.reshape(0, self.frames.shape[-1] if self.frames.ndim == 2 else 0)
        if self.frames.ndim != 2:
            raise ValueError(f"{self.id}: frames must be a matrix")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def has_alignment(self) -> bool:
        return self.n_frames > 0 and len(self.word_frame_spans) == len(self.hypothesis.split())

    def validate(self) -> None:
        ref_words = self.reference.split()
        lo, hi = self.name_word_span
        if not 0 <= lo < hi <= len(ref_words):
            raise ValueError(f"{self.id}: name span out of range")
        if " ".join(ref_words[lo:hi]) != self.name:
            raise ValueError(f"{self.id}: name span does not cover the name")
        for spans in (self.word_frame_spans, self.exact_spans):
            prev = 0
            for s, e in spans:
                if not (0 <= s < e <= self.n_frames) or s < prev:
                    raise ValueError(f"{self.id}: frame spans not sorted within [0, T)")
                prev = s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["name_word_span"] = list(self.name_word_span)
        d["frames"] = self.frames.tolist()
        d["word_frame_spans"] = [list(s) for s in self.word_frame_spans]
        d["exact_spans"] = [list(s) for s in self.exact_spans]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Utterance":
        keys = {f.name for f in fields(cls)}
        missing = {"id", "reference", "hypothesis", "name", "name_word_span"} - set(d)
        if missing or set(d) - keys:
            raise ValueError(f"bad utterance record: missing {sorted(missing)}, unknown {sorted(set(d) - keys)}")
        d = dict(d)
        d.setdefault("frames", [])
        d.setdefault("word_frame_spans", [])
        return cls(**d)


def write_jsonl(utts: Sequence[Utterance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            fh.write(json.dumps(u.to_dict(), separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[Utterance]:
    """Load utterances; a malformed line raises ValueError naming its line number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                u = Utterance.from_dict(json.loads(line))
                u.validate()
            except (ValueError, TypeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            out.append(u)
    return out


# ---- corruption -----------------------------------------------------------

LETTERS = "abcdefghijklmnopqrstuvwxyz"


def char_slip(word: str, rng: np.random.Generator) -> str:
    """One random letter insertion, deletion or substitution that changes ``word``."""
    while True:
        op = rng.integers(3) if len(word) > 1 else rng.choice([0, 2])
        if op == 0:
            pos = int(rng.integers(len(word) + 1))
            out = word[:pos] + LETTERS[rng.integers(26)] + word[pos:]
        elif op == 1:
            pos = int(rng.integers(len(word)))
            out = word[:pos] + word[pos + 1 :]
        else:
            pos = int(rng.integers(len(word)))
            out = word[:pos] + LETTERS[rng.integers(26)] + word[pos + 1 :]
        if out and out != word:
            return out


def confusable_name(name: str, inventory: Sequence[str], rng: np.random.Generator) -> str:
    """Another inventory name drawn with probability proportional to exp(-phoneme distance)."""
    others, p = _confusion_weights(name, tuple(inventory))
    return others[int(rng.choice(len(others), p=p))]


@lru_cache(maxsize=4096)
def _confusion_weights(name: str, inventory: tuple[str, ...]) -> tuple[list[str], np.ndarray]:
    others = [n for n in inventory if n != name]
    logits = np.array([-phoneme_distance(name, n) for n in others], dtype=np.float64)
    p = np.exp(logits - logits.max())
    return others, p / p.sum()


def corrupt_name(name: str, inventory: Sequence[str], rng: np.random.Generator, p_name_corrupt: float) -> str:
    if len(inventory) < 2:
        raise ValueError("inventory needs at least two names")
    if rng.random() < p_name_corrupt:
        return confusable_name(name, inventory, rng)
    if rng.random() < 0.5:
        return char_slip(name, rng)
    return name


def build_refhyp_pairs(inventory: Sequence[str], rng: np.random.Generator, draws: int = 8) -> dict[str, list[str]]:
    """Distinct hypothesis variants per name from ``draws`` forced corruptions.

    A forced corruption is a confusable inventory name or a character slip,
    with equal odds.
    """
    pairs: dict[str, list[str]] = {}
    for name in inventory:
        seen: list[str] = []
        for _ in range(draws):
            v = confusable_name(name, inventory, rng) if rng.random() < 0.5 else char_slip(name, rng)
            if v != name and v not in seen:
                seen.append(v)
        pairs[name] = seen
    return pairs


# ---- pseudo acoustics -----------------------------------------------------


def make_codebook(cfg: SimConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 7919])
    return rng.standard_normal((len(SYMBOLS), cfg.d_acoustic_in))


def synth_frames(
    reference: str, cfg: SimConfig, rng: np.random.Generator, codebook: np.ndarray | None = None
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Frames for the reference words plus each word's exact half-open frame span."""
    if codebook is None:
        codebook = make_codebook(cfg)
    rows: list[np.ndarray] = []
    spans: list[tuple[int, int]] = []
    t = 0
    for word in reference.split():
        start = t
        for sym in pseudo_phonemes(word):
            block = np.repeat(codebook[sym][None, :], cfg.frames_per_phoneme, axis=0)
            if cfg.frame_noise_sigma > 0:
                block = block + rng.normal(0.0, cfg.frame_noise_sigma, size=block.shape)
            rows.append(block)
            t += cfg.frames_per_phoneme
        spans.append((start, t))
    if not rows:
        return np.zeros((0, cfg.d_acoustic_in)), spans
    # rounding keeps the JSON form short and its round trip exact
    frames = np.round(np.concatenate(rows), 4)
    return frames, spans


def nearest_symbols(frames: np.ndarray, codebook: np.ndarray) -> list[int]:
    d = ((frames[:, None, :] - codebook[None, :, :]) ** 2).sum(-1)
    return d.argmin(axis=1).tolist()


def jitter_alignment(
    exact_spans: Sequence[tuple[int, int]],
    ref_words: Sequence[str],
    hyp_words: Sequence[str],
    n_frames: int,
    rng: np.random.Generator,
    max_shift: int = 2,
) -> list[tuple[int, int]]:
    """Rough per-hypothesis-word frame spans.

    Aligned words inherit their reference word's span with both edges moved
    by up to ``max_shift`` frames; inserted words get a one-frame span at
    the midpoint of the nearest aligned neighbour.  Spans are then clipped
    and forced to be non-empty, sorted and non-overlapping.  With more
    hypothesis words than frames the trailing words share the last frame.
    """
    n = len(hyp_words)
    if n == 0:
        return []
    ref_of_hyp = word_align(list(ref_words), list(hyp_words)).ref_for_hyp()
    raw: list[tuple[int, int] | None] = []
    for h in range(n):
        r = ref_of_hyp.get(h)
        if r is None:
            raw.append(None)
            continue
        s, e = exact_spans[r]
        if max_shift > 0:
            s += int(rng.integers(-max_shift, max_shift + 1))
            e += int(rng.integers(-max_shift, max_shift + 1))
        raw.append((s, e))
    for h in range(n):
        if raw[h] is None:
            nb = next((raw[j] for j in range(h - 1, -1, -1) if raw[j] is not None), None)
            if nb is None:
                nb = next((raw[j] for j in range(h + 1, n) if raw[j] is not None), (0, n_frames))
            mid = (nb[0] + nb[1]) // 2
            raw[h] = (mid, mid + 1)
    out: list[tuple[int, int]] = []
    prev_end = 0
    for h, (s, e) in enumerate(raw):
        room = n - 1 - h  # frames to keep free for later words
        s = min(max(s, prev_end, 0), max(n_frames - room - 1, prev_end), n_frames - 1)
        e = min(max(e, s + 1), max(n_frames - room, s + 1), n_frames)
        out.append((s, e))
        prev_end = e
    return out


# ---- corpus -----------------------------------------------------------------


def _pseudo_names(n: int, exclude: set[str], seed: int) -> list[str]:
    onsets = ["b", "br", "d", "f", "g", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "ch", "th", "tr"]
    nuclei = ["a", "e", "i", "o", "u", "ai", "ee", "oo"]
    codas = ["", "", "n", "l", "r", "s", "m", "x"]
    rng = np.random.default_rng([seed, 104729])
    out: list[str] = []
    seen = set(exclude)
    while len(out) < n:
        k = int(rng.integers(2, 4))
        name = "".join(
            onsets[rng.integers(len(onsets))] + nuclei[rng.integers(len(nuclei))] + codas[rng.integers(len(codas))]
            for _ in range(k)
        )
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


@dataclass
class SimDataset:
    config: SimConfig
    inventory: list[str]
    pool: list[str]
    pairs: dict[str, list[str]]
    train: list[Utterance]
    test: list[Utterance]

    @property
    def test_names(self) -> list[str]:
        return sorted({u.name for u in self.test})


def make_utterance(
    uid: str, cfg: SimConfig, inventory: Sequence[str], codebook: np.ndarray, rng: np.random.Generator
) -> Utterance:
    template = TEMPLATES[rng.integers(len(TEMPLATES))]
    name = inventory[rng.integers(len(inventory))]
    pre, post = template.split("{name}")
    post = post.format(time=TIMES[rng.integers(len(TIMES))], day=DAYS[rng.integers(len(DAYS))])
    pre_words, post_words = pre.split(), post.split()
    ref_words = pre_words + [name] + post_words
    span = (len(pre_words), len(pre_words) + 1)
    hyp_name = corrupt_name(name, inventory, rng, cfg.p_name_corrupt)
    hyp_words = [w if rng.random() >= cfg.p_carrier_noise else char_slip(w, rng) for w in pre_words]
    hyp_words.append(hyp_name)
    hyp_words += [w if rng.random() >= cfg.p_carrier_noise else char_slip(w, rng) for w in post_words]
    reference = " ".join(ref_words)
    hypothesis = normalize(" ".join(hyp_words))
    frames, exact = synth_frames(reference, cfg, rng, codebook)
    rough = jitter_alignment(exact, ref_words, hypothesis.split(), frames.shape[0], rng, cfg.max_jitter)
    return Utterance(uid, reference, hypothesis, name, span, frames, rough, exact)


def gen_corpus(cfg: SimConfig, split: str, inventory: Sequence[str], codebook: np.ndarray) -> Iterator[Utterance]:
    """Yield ``n_train`` or ``n_test`` utterances, each seeded from (seed, split, index)."""
    count = {"train": cfg.n_train, "test": cfg.n_test}[split]
    split_id = {"train": 1, "test": 2}[split]
    for i in range(count):
        rng = np.random.default_rng([cfg.seed, split_id, i])
        yield make_utterance(f"{split}-{i:06d}", cfg, inventory, codebook, rng)


def generate(cfg: SimConfig) -> SimDataset:
    rng = np.random.default_rng([cfg.seed, 0])
    order = rng.permutation(len(FIRST_NAMES))
    inventory = [FIRST_NAMES[i] for i in order[: cfg.n_names]]
    leftover = [FIRST_NAMES[i] for i in order[cfg.n_names :]]
    pool = inventory + leftover + _pseudo_names(cfg.n_pseudo_names, set(FIRST_NAMES), cfg.seed)
    pairs = build_refhyp_pairs(inventory, np.random.default_rng([cfg.seed, 3]), cfg.pair_draws)
    codebook = make_codebook(cfg)
    train = list(gen_corpus(cfg, "train", inventory, codebook))
    test = list(gen_corpus(cfg, "test", inventory, codebook))
    return SimDataset(cfg, inventory, pool, pairs, train, test)


def build_eval_biaslists(
    test_names: Sequence[str],
    coverage: int,
    list_size: int,
    distractor_pool: Sequence[str],
    rng: np.random.Generator,
) -> BiasList:
    """Bias list holding floor(coverage% of the test names) plus distractors up to ``list_size``."""
    if coverage not in COVERAGES:
        raise ValueError(f"coverage must be one of {COVERAGES}")
    names = sorted(set(test_names))
    n_cov = math.floor(coverage * len(names) / 100)
    if list_size < n_cov:
        raise ValueError("list_size smaller than the number of covered names")
    covered = [names[i] for i in sorted(rng.choice(len(names), size=n_cov, replace=False))]
    return _with_distractors(covered, set(names), list_size, distractor_pool, rng)


def build_anti_biaslist(
    test_names: Sequence[str], list_size: int, distractor_pool: Sequence[str], rng: np.random.Generator
) -> BiasList:
    """A bias list without any test name (the zero-coverage anti-context set)."""
    return _with_distractors([], set(test_names), list_size, distractor_pool, rng)


def _with_distractors(covered, forbidden, list_size, pool, rng) -> BiasList:
    candidates = sorted({p for p in pool if p not in forbidden})
    n_dis = min(list_size - len(covered), len(candidates))
    distractors = [candidates[i] for i in rng.choice(len(candidates), size=n_dis, replace=False)]
    phrases = covered + distractors
    perm = rng.permutation(len(phrases))
    return BiasList.from_phrases([phrases[i] for i in perm])

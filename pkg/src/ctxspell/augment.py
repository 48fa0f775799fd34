"""Training-pair construction with bias-list sampling and anti-context augmentation."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .model import ModelInput, build_audio_mask
from .simdata import Utterance
from .tagging import TagTarget, aligned_hyp_words, build_targets
from .textcore import DEFAULT_CHUNK, char_edit_distance, normalize, tokenize

ANTI_MODES = ("remove", "remove_and_confuse")


@dataclass
class AugmentConfig:
    n_bmax: int = 10
    p_anti: float = 0.3
    p_replace: float = 0.5
    n_similar: int = 2
    # up to n_hard of the sampled distractors come from the phrases nearest
    # the ground truth, so training lists resemble preselected ones
    n_hard: int = 0
    hard_pool: int = 20

    def __post_init__(self):
        if self.n_bmax < 1:
            raise ValueError("n_bmax must be >= 1")
        for name in ("p_anti", "p_replace"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.n_similar < 0 or self.n_hard < 0 or self.hard_pool < 1:
            raise ValueError("n_similar, n_hard must be >= 0 and hard_pool >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown augment config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Example:
    """An utterance paired with a sampled bias list, before tagging."""

    reference: str
    hypothesis: str
    name: str
    name_word_span: tuple[int, int]
    frames: np.ndarray
    word_frame_spans: list[tuple[int, int]]
    bias_list: list[str]
    anti: bool = False

    @classmethod
    def from_utterance(cls, utt: Utterance, bias_list: Sequence[str]) -> "Example":
        return cls(
            utt.reference, utt.hypothesis, utt.name, tuple(utt.name_word_span),
            utt.frames, list(utt.word_frame_spans), list(bias_list),
        )

    @property
    def target_output(self) -> str:
        """Text the corrector should produce for this example."""
        return normalize(self.hypothesis if self.anti else self.reference)


def sample_bias_list(gt_phrase: str, pool: Sequence[str], cfg: AugmentConfig, rng: np.random.Generator) -> tuple[list[str], int]:
    """Sample N_b ~ U[1, n_bmax] distractors and insert ``gt_phrase`` at a random slot.

    Returns the list and the 0-based position of the ground truth.
    """
    gt = normalize(gt_phrase)
    candidates = [p for p in pool if normalize(p) != gt]
    n_b = int(rng.integers(1, cfg.n_bmax + 1))
    n_b = min(n_b, len(candidates))
    n_hard = min(cfg.n_hard, n_b)
    if n_hard:
        near = _nearest(gt, tuple(candidates), cfg.hard_pool)
        hard = [near[i] for i in rng.choice(len(near), size=min(n_hard, len(near)), replace=False)]
        rest = [c for c in candidates if c not in set(hard)]
        picked = hard + [rest[i] for i in rng.choice(len(rest), size=n_b - len(hard), replace=False)]
        picked = [picked[i] for i in rng.permutation(len(picked))]
    else:
        picked = [candidates[i] for i in rng.choice(len(candidates), size=n_b, replace=False)]
    pos = int(rng.integers(n_b + 1))
    picked.insert(pos, gt)
    return picked, pos


@lru_cache(maxsize=8192)
def _nearest(gt: str, candidates: tuple[str, ...], n: int) -> list[str]:
    """The ``n`` candidates with the smallest character edit distance to ``gt`` (ties by pool order)."""
    order = sorted(range(len(candidates)), key=lambda i: (char_edit_distance(gt, candidates[i]), i))
    return [candidates[i] for i in order[:n]]


def _respan_frames(spans: list[tuple[int, int]], lo: int, hi: int, n_new: int) -> list[tuple[int, int]]:
    """Replace word spans [lo, hi) by ``n_new`` spans splitting their combined frame range."""
    if hi - lo == n_new:
        return list(spans)
    s, e = spans[lo][0], spans[hi - 1][1]
    width = max(e - s, n_new)
    cuts = [s + (width * k) // n_new for k in range(n_new + 1)]
    new = [(cuts[k], max(cuts[k + 1], cuts[k] + 1)) for k in range(n_new)]
    return spans[:lo] + new + spans[hi:]


def replace_hypothesis(
    ex: Example, pairs: Mapping[str, Sequence[str]], rng: np.random.Generator, p_replace: float = 1.0
) -> Example:
    """Swap the hypothesis words aligned to the name for a sampled variant.

    Frames stay untouched: they describe the reference audio.
    """
    variants = pairs.get(ex.name)
    if not variants or rng.random() >= p_replace:
        return ex
    hyp_words = ex.hypothesis.split()
    rng_words = aligned_hyp_words(ex.reference.split(), hyp_words, ex.name_word_span)
    if rng_words is None:
        return ex
    variant = normalize(variants[int(rng.integers(len(variants)))])
    lo, hi = rng_words
    new_words = hyp_words[:lo] + variant.split() + hyp_words[hi:]
    spans = ex.word_frame_spans
    if len(spans) == len(hyp_words):
        spans = _respan_frames(spans, lo, hi, len(variant.split()))
    return replace(ex, hypothesis=" ".join(new_words), word_frame_spans=spans)


def make_anti_example(
    ex: Example,
    pairs: Mapping[str, Sequence[str]],
    mode: str,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> Example:
    """Drop the ground truth from the bias list; optionally add confusable variants."""
    if mode not in ANTI_MODES:
        raise ValueError(f"mode must be one of {ANTI_MODES}")
    gt = normalize(ex.name)
    bias = [p for p in ex.bias_list if normalize(p) != gt]
    if mode == "remove_and_confuse":
        pool = [v for v in dict.fromkeys(normalize(v) for v in pairs.get(ex.name, ())) if v != gt and v not in bias]
        n = min(cfg.n_similar, len(pool))
        for i in rng.choice(len(pool), size=n, replace=False) if n else ():
            bias.insert(int(rng.integers(len(bias) + 1)), pool[int(i)])
    return replace(ex, bias_list=bias, anti=True)


@dataclass
class TrainingExample:
    example: Example
    inputs: ModelInput
    target: TagTarget
    s_k: int


def build_training_example(
    utt: Utterance,
    pool: Sequence[str],
    pairs: Mapping[str, Sequence[str]],
    cfg: AugmentConfig,
    rng: np.random.Generator,
    s_kmax: int = 2,
    acoustic: bool = True,
    chunk: int = DEFAULT_CHUNK,
) -> TrainingExample:
    """Sample list -> maybe replace hypothesis -> maybe anti-context -> targets -> audio mask."""
    bias, _ = sample_bias_list(utt.name, pool, cfg, rng)
    original = Example.from_utterance(utt, bias)
    ex = replace_hypothesis(original, pairs, rng, cfg.p_replace)
    if rng.random() < cfg.p_anti:
        # anti-context examples keep the original hypothesis; the replacement
        # draw above is still consumed so the stream layout does not change
        mode = ANTI_MODES[int(rng.integers(2))]
        ex = make_anti_example(original, pairs, mode, cfg, rng)
    target = build_targets(ex.reference, ex.hypothesis, ex.name_word_span, ex.bias_list, anti=ex.anti, chunk=chunk)
    s_k = int(rng.integers(1, s_kmax + 1))
    inputs = make_model_input(ex.hypothesis, ex.bias_list, ex.frames if acoustic else None,
                              ex.word_frame_spans if acoustic else None, s_k, chunk)
    inputs.cls, inputs.cind = target.cls, target.cind
    return TrainingExample(ex, inputs, target, s_k)


def make_model_input(
    hypothesis: str,
    bias_list: Sequence[str],
    frames: np.ndarray | None,
    word_frame_spans: Sequence[tuple[int, int]] | None,
    s_k: int,
    chunk: int = DEFAULT_CHUNK,
) -> ModelInput:
    tt = tokenize(hypothesis, chunk)
    phrases = [list(tokenize(p, chunk).tokens) for p in bias_list]
    mask = None
    if frames is not None:
        if word_frame_spans is None or len(word_frame_spans) != len(tt.words):
            raise ValueError("rough alignment must give one frame span per hypothesis word")
        mask = build_audio_mask(word_frame_spans, tt.word_of_token, frames.shape[0], s_k).allowed
    return ModelInput(tt, phrases, frames, mask)

"""Single-utterance correction: preselect, tag, decode spans, rewrite."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import torch

from .model import PHRASE_START, CorrectionModel, build_audio_mask
from .ranker import BiasList, preselect_list
from .tagging import CorrectionSpan, apply_correction, extract_spans
from .textcore import normalize, tokenize

COMPONENTS = ("acoustics_adapter", "text_encoder", "bias_encoder", "decoder")


class EmbeddingCache(Protocol):
    def get(self, phrase: str) -> torch.Tensor | None: ...

    def put(self, phrase: str, row: torch.Tensor) -> None: ...


class Timers:
    """Accumulated wall-clock seconds per named component."""

    def __init__(self):
        self.seconds: dict[str, float] = defaultdict(float)

    @contextmanager
    def scope(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] += time.perf_counter() - t0

    def reset(self) -> None:
        self.seconds.clear()


@dataclass
class Correction:
    text: str
    spans: list[CorrectionSpan]
    bias_list: BiasList  # the preselected phrases the spans index into
    cls: list[int]
    cind: list[int]
    cls_logits: torch.Tensor
    cind_logits: torch.Tensor


class Corrector:
    """Runs the full inference pipeline of one model on one utterance at a time.

    Bias phrases are always embedded one phrase per call, so an embedding
    does not depend on which other phrases happen to be encoded alongside it
    and cached rows are bit-identical to fresh ones.
    """

    def __init__(
        self,
        model: CorrectionModel,
        k: int = 16,
        r: float = 1.0,
        cache: EmbeddingCache | None = None,
        timers: Timers | None = None,
    ):
        if not 0.0 <= r <= 1.0:
            raise ValueError("r must be in [0, 1]")
        self.model = model.eval()
        self.k = k
        self.r = r
        self.cache = cache
        self.timers = timers or Timers()

    @property
    def chunk(self) -> int:
        return self.model.cfg.chunk

    def phrase_embeddings(self, phrases: Sequence[str]) -> torch.Tensor:
        rows = []
        phr = self.model.token_to_id[PHRASE_START]
        for p in phrases:
            row = self.cache.get(p) if self.cache is not None else None
            if row is None:
                ids = [phr] + self.model.token_ids(tokenize(p, self.chunk).tokens)
                t = torch.tensor([ids])
                row = self.model.encode_bias(t, torch.ones_like(t, dtype=torch.bool))[0]
                if self.cache is not None:
                    self.cache.put(p, row)
            rows.append(row)
        return torch.stack(rows)

    @torch.no_grad()
    def predict(
        self,
        hypothesis: str,
        bias: BiasList,
        frames: np.ndarray | None = None,
        word_frame_spans: Sequence[tuple[int, int]] | None = None,
    ) -> Correction:
        """Tag ``hypothesis`` against an already preselected bias list."""
        if len(bias) == 0:
            raise ValueError("empty bias list")
        model = self.model
        tt = tokenize(hypothesis, self.chunk)
        if not tt.tokens:
            empty = torch.zeros(0)
            return Correction("", [], bias, [], [], empty, empty)
        ids = torch.tensor([model.token_ids(tt.tokens)])
        tmask = torch.ones_like(ids, dtype=torch.bool)
        adapted = amask = None
        if model.acoustic:
            if frames is None or word_frame_spans is None:
                if self.r != 0.0:
                    raise ValueError("acoustic model needs frames and a rough alignment unless r == 0")
                frames = np.zeros((1, model.cfg.d_acoustic_in))
                word_frame_spans = [(0, 1)] * len(tt.words)
            with self.timers.scope("acoustics_adapter"):
                fr = torch.as_tensor(np.asarray(frames), dtype=model.dtype)[None]
                adapted = model.adapt_acoustics(fr)
                mask = build_audio_mask(word_frame_spans, tt.word_of_token, fr.shape[1], model.cfg.s_kmax)
                amask = torch.as_tensor(mask.allowed)[None]
        ea = model.cfg.variant == "ea"
        with self.timers.scope("text_encoder"):
            hidden = model.encode_text(ids, tmask, *((adapted, amask) if ea else (None, None)), r=self.r)
        with self.timers.scope("bias_encoder"):
            emb = self.phrase_embeddings(bias.phrases)[None]
        with self.timers.scope("decoder"):
            da = model.cfg.variant == "da"
            cls_logits, cind_logits = model.decode(
                hidden, tmask, emb, torch.ones(1, len(bias), dtype=torch.bool),
                *((adapted, amask) if da else (None, None)), r=self.r,
            )
        # argmax takes the first maximum, i.e. ties resolve toward O / index 0
        cls = cls_logits[0].argmax(-1).tolist()
        cind = cind_logits[0].argmax(-1).tolist()
        spans = extract_spans(cls, cind)
        text = apply_correction(hypothesis, spans, bias.phrases, self.chunk)
        return Correction(text, spans, bias, cls, cind, cls_logits[0], cind_logits[0])

    def correct(
        self,
        hypothesis: str,
        bias_list: BiasList,
        frames: np.ndarray | None = None,
        word_frame_spans: Sequence[tuple[int, int]] | None = None,
    ) -> Correction:
        """Preselect the top-k phrases of ``bias_list`` and correct ``hypothesis``."""
        if len(bias_list) == 0:
            raise ValueError("empty bias list")
        chosen = preselect_list(bias_list, normalize(hypothesis), self.k)
        return self.predict(hypothesis, chosen, frames, word_frame_spans)

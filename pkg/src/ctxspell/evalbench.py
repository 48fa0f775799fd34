"""Name recall / WER metrics, coverage sweeps, latency breakdown and the embedding cache."""

from __future__ import annotations

import json
import re
import statistics
import threading
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import torch

from .inference import COMPONENTS, Corrector, Timers
from .ranker import BiasList, preselect_list
from .simdata import Utterance
from .textcore import normalize, word_align


def contains_phrase(text: str, phrase: str) -> bool:
    """Whole-word containment after normalization."""
    return re.search(r"(?<!\S)" + re.escape(normalize(phrase)) + r"(?!\S)", normalize(text)) is not None


def name_recall(outputs: Sequence[str], utterances: Sequence[Utterance]) -> float:
    if len(outputs) != len(utterances):
        raise ValueError("outputs and utterances differ in length")
    if not outputs:
        raise ValueError("no utterances")
    hits = sum(contains_phrase(o, u.name) for o, u in zip(outputs, utterances))
    return 100.0 * hits / len(outputs)


def wer(outputs: Sequence[str], references: Sequence[str]) -> float:
    if len(outputs) != len(references):
        raise ValueError("outputs and references differ in length")
    n_ref = sum(len(normalize(r).split()) for r in references)
    if n_ref == 0:
        raise ValueError("empty reference corpus")
    errors = sum(word_align(normalize(r).split(), normalize(o).split()).cost for o, r in zip(outputs, references))
    return 100.0 * errors / n_ref


def false_correction_rate(outputs: Sequence[str], utterances: Sequence[Utterance]) -> float:
    """Percent of utterances whose output differs from the raw hypothesis."""
    if len(outputs) != len(utterances):
        raise ValueError("outputs and utterances differ in length")
    changed = sum(normalize(o) != normalize(u.hypothesis) for o, u in zip(outputs, utterances))
    return 100.0 * changed / len(outputs)


# ---- cache ------------------------------------------------------------------


class BiasEmbeddingCache:
    """LRU map from phrase to embedding row; thread-safe."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._rows: OrderedDict[str, torch.Tensor] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, phrase: str) -> torch.Tensor | None:
        with self._lock:
            row = self._rows.get(phrase)
            if row is None:
                self.misses += 1
                return None
            self._rows.move_to_end(phrase)
            self.hits += 1
            return row

    def put(self, phrase: str, row: torch.Tensor) -> None:
        with self._lock:
            self._rows[phrase] = row.detach()
            self._rows.move_to_end(phrase)
            while len(self._rows) > self.capacity:
                self._rows.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._rows.clear()
            self.hits = self.misses = 0

    def __contains__(self, phrase: str) -> bool:
        with self._lock:
            return phrase in self._rows

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


# ---- coverage sweep ---------------------------------------------------------


@dataclass
class Row:
    system: str
    coverage: int
    name_recall: float
    wer: float
    n_utts: int
    n_names: int


@dataclass
class EvalReport:
    rows: list[Row] = field(default_factory=list)
    outputs: dict[str, dict[int, list[str]]] = field(default_factory=dict)

    def get(self, system: str, coverage: int) -> Row:
        for r in self.rows:
            if r.system == system and r.coverage == coverage:
                return r
        raise KeyError((system, coverage))

    @property
    def systems(self) -> list[str]:
        return list(dict.fromkeys(r.system for r in self.rows))

    @property
    def coverages(self) -> list[int]:
        return sorted({r.coverage for r in self.rows})

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=1)

    def render(self) -> str:
        covs = self.coverages
        head = f"{'Model':<24}" + "".join(f"{f'{c}% Recall':>13}{'WER':>8}" for c in covs)
        lines = [head, "-" * len(head)]
        for s in self.systems:
            cells = "".join(f"{self.get(s, c).name_recall:>13.1f}{self.get(s, c).wer:>8.1f}" for c in covs)
            lines.append(f"{s:<24}{cells}")
        return "\n".join(lines)


BASELINE = "baseline"


def coverage_sweep(
    models: Mapping[str, Corrector],
    test: Sequence[Utterance],
    lists: Mapping[int, BiasList],
    k: int = 16,
    keep_outputs: bool = False,
) -> EvalReport:
    """Recall and WER of the raw hypotheses and of every model at every coverage.

    Preselection is done once per utterance and coverage and shared by all
    models.
    """
    report = EvalReport()
    refs = [u.reference for u in test]
    n_names = len({u.name for u in test})
    for cov in sorted(lists):
        hyps = [u.hypothesis for u in test]
        report.rows.append(Row(BASELINE, cov, name_recall(hyps, test), wer(hyps, refs), len(test), n_names))
        chosen = [preselect_list(lists[cov], u.hypothesis, k) for u in test]
        for name, corr in models.items():
            outs = [
                corr.predict(u.hypothesis, bl, u.frames, u.word_frame_spans).text for u, bl in zip(test, chosen)
            ]
            report.rows.append(Row(name, cov, name_recall(outs, test), wer(outs, refs), len(test), n_names))
            if keep_outputs:
                report.outputs.setdefault(name, {})[cov] = outs
    return report


# ---- latency ----------------------------------------------------------------


@dataclass
class LatencyBreakdown:
    ms_per_utt: dict[str, float]
    proportion: dict[str, float]
    n_utts: int
    cache_capacity: int | None = None
    cache_hit_rate: float | None = None
    passes: list[dict[str, float]] = field(default_factory=list)
    # bias-encoder ms for one list: first encoding (cold cache) and the repeat
    list_cold_ms: float | None = None
    list_warm_ms: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def render(self) -> str:
        names = {"acoustics_adapter": "Acoustics adapter", "text_encoder": "Text encoder",
                 "bias_encoder": "Bias encoder", "decoder": "Decoder"}
        cols = [c for c in COMPONENTS if c in self.ms_per_utt]
        head = "".join(f"{names[c]:>20}" for c in cols)
        pct = "".join(f"{100 * self.proportion[c]:>19.1f}%" for c in cols)
        ms = "".join(f"{self.ms_per_utt[c]:>18.3f}ms" for c in cols)
        return "\n".join([head, pct, ms])


def _breakdown(seconds: Mapping[str, float], n: int, components: Sequence[str]) -> tuple[dict, dict]:
    total = sum(seconds.get(c, 0.0) for c in components) or 1.0
    ms = {c: 1000.0 * seconds.get(c, 0.0) / max(n, 1) for c in components}
    prop = {c: seconds.get(c, 0.0) / total for c in components}
    return ms, prop


def bench_latency(
    corrector: Corrector,
    test: Sequence[Utterance],
    bias_list: BiasList,
    warmup: int = 10,
    runs: int = 3,
) -> LatencyBreakdown:
    """Median-of-``runs`` per-component time over ``test`` after ``warmup`` utterances.

    Preselection happens outside the timed region.  With a cache on the
    corrector it is emptied after warmup, so the first pass starts cold and
    later passes reuse the session's phrases; per-pass numbers are kept in
    ``passes``.  ``list_cold_ms``/``list_warm_ms`` time embedding the first
    timed utterance's list into an empty cache and then again.
    """
    torch.set_num_threads(1)
    components = [c for c in COMPONENTS if corrector.model.acoustic or c != "acoustics_adapter"]
    chosen = [preselect_list(bias_list, u.hypothesis, corrector.k) for u in test]
    timers = corrector.timers
    for u, bl in list(zip(test, chosen))[:warmup]:
        corrector.predict(u.hypothesis, bl, u.frames, u.word_frame_spans)
    timed = list(zip(test, chosen))[warmup:]
    if corrector.cache is not None:
        corrector.cache.clear()
    passes = []
    for _ in range(runs):
        timers.reset()
        for u, bl in timed:
            corrector.predict(u.hypothesis, bl, u.frames, u.word_frame_spans)
        passes.append({c: timers.seconds.get(c, 0.0) for c in components})
    med = {c: statistics.median(p[c] for p in passes) for c in components}
    ms, prop = _breakdown(med, len(timed), components)
    cache = corrector.cache
    hit_rate = getattr(cache, "hit_rate", None)
    cold = warm = None
    if cache is not None and timed:
        phrases = timed[0][1].phrases
        cold_runs, warm_runs = [], []
        for _ in range(runs):
            cache.clear()
            for bucket in (cold_runs, warm_runs):
                t0 = time.perf_counter()
                with torch.no_grad():
                    corrector.phrase_embeddings(phrases)
                bucket.append(1000.0 * (time.perf_counter() - t0))
        cold, warm = statistics.median(cold_runs), statistics.median(warm_runs)
    return LatencyBreakdown(
        ms, prop, len(timed),
        cache_capacity=getattr(cache, "capacity", None),
        cache_hit_rate=hit_rate,
        passes=[{c: 1000.0 * v / max(len(timed), 1) for c, v in p.items()} for p in passes],
        list_cold_ms=cold,
        list_warm_ms=warm,
    )

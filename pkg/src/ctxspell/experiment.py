"""Desk-scale comparison protocol: text-only vs partially adapted EA vs no-anti."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import model as M
from . import simdata as sd
from .augment import AugmentConfig
from .evalbench import BASELINE, EvalReport, coverage_sweep, false_correction_rate
from .inference import Corrector
from .train import BatchStream, TrainConfig, build_vocab, fit, partial_adapt


@dataclass
class ProtocolConfig:
    preset: str = "desk"
    text_steps: int = 2200
    adapt_steps: int = 1000
    batch_size: int = 32
    k: int = 4
    list_size: int = 300
    n_hard: int = 3
    sim: dict = field(default_factory=dict)


@dataclass
class SeedResult:
    seed: int
    report: EvalReport
    false_rate: dict[str, float]
    seconds: float
    losses: dict[str, list[float]] = field(default_factory=dict)
    models: dict[str, M.CorrectionModel] = field(default_factory=dict, repr=False)

    def recall(self, system: str, coverage: int) -> float:
        return self.report.get(system, coverage).name_recall


def run_seed(seed: int, cfg: ProtocolConfig, log=print) -> SeedResult:
    t0 = time.perf_counter()
    torch.manual_seed(seed)
    ds = sd.generate(sd.SimConfig.from_dict({**cfg.sim, "seed": seed}))
    texts = [u.reference for u in ds.train] + [u.hypothesis for u in ds.train] + list(ds.pool)
    texts += [v for vs in ds.pairs.values() for v in vs]
    mcfg = M.preset(cfg.preset, vocab=build_vocab(texts, M.preset(cfg.preset).chunk), variant="text")
    rng = np.random.default_rng([seed, 99])
    lists = {c: sd.build_eval_biaslists(ds.test_names, c, cfg.list_size, ds.pool, rng) for c in sd.COVERAGES}
    anti_list = sd.build_anti_biaslist(ds.test_names, cfg.list_size, ds.pool, rng)

    def stream(aug):
        return lambda m: BatchStream(m, ds.train, ds.pool, ds.pairs, aug, cfg.batch_size, seed=seed)

    models, losses = {}, {}
    aug = AugmentConfig(n_hard=cfg.n_hard)
    for name, a in (("text", aug), ("no_anti", replace(aug, p_anti=0.0))):
        m = M.CorrectionModel(mcfg, seed=seed)
        losses[name] = fit(m, stream(a)(m), TrainConfig(steps=cfg.text_steps, seed=seed, log_every=0)).losses
        models[name] = m
        log(f"seed {seed}: trained {name} ({time.perf_counter() - t0:.0f}s)")
    ea, res = partial_adapt(models["text"], "ea", stream(aug), TrainConfig(steps=cfg.adapt_steps, seed=seed, log_every=0))
    models["ea"], losses["ea"] = ea, res.losses
    log(f"seed {seed}: adapted ea ({time.perf_counter() - t0:.0f}s)")

    correctors = {n: Corrector(m, k=cfg.k) for n, m in models.items()}
    report = coverage_sweep({n: correctors[n] for n in ("text", "ea")}, ds.test, lists, k=cfg.k)
    false_rate = {
        n: false_correction_rate([correctors[n].correct(u.hypothesis, anti_list).text for u in ds.test], ds.test)
        for n in ("text", "no_anti")
    }
    return SeedResult(seed, report, false_rate, time.perf_counter() - t0, losses, models)


def median_table(results: list[SeedResult]) -> dict[str, dict[int, float]]:
    systems = [BASELINE, "text", "ea"]
    return {
        s: {c: statistics.median(r.recall(s, c) for r in results) for c in sd.COVERAGES}
        for s in systems
    }


def summary(results: list[SeedResult]) -> dict:
    return {
        "recall": median_table(results),
        "false_rate": {n: statistics.median(r.false_rate[n] for r in results) for n in ("text", "no_anti")},
        "seconds": [r.seconds for r in results],
        "seeds": [r.seed for r in results],
    }


__all__ = ["ProtocolConfig", "SeedResult", "run_seed", "median_table", "summary"]

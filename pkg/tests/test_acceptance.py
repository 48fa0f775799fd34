"""One test per acceptance criterion; each records a PASS/FAIL line.

Criterion 7 trains three seeds at desk scale and takes most of the run time.
"""

import json
import math
import random
import time

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from ctxspell import cli
from ctxspell import evalbench as E
from ctxspell import simdata as sd
from ctxspell import train as T
from ctxspell.augment import AugmentConfig
from ctxspell.experiment import ProtocolConfig, run_seed, summary
from ctxspell.inference import Corrector
from ctxspell.model import CorrectionModel, ModelInput, collate, preset
from ctxspell.ranker import BiasList, preselect, relevance_weight
from ctxspell.tagging import apply_correction, build_targets, extract_spans
from ctxspell.textcore import normalize

from oracles import brute_relevance
from test_model import _groups, random_input, run, tiny_cfg


def test_1_ranker_oracle(verdict):
    rnd = random.Random(1)
    letters = "abcdejnos"

    def word():
        return "".join(rnd.choice(letters) for _ in range(rnd.randint(1, 6)))

    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        phrase = " ".join(word() for _ in range(rnd.randint(1, 2)))
        hyp = " ".join(word() for _ in range(rnd.randint(1, 8)))
        mismatches += relevance_weight(phrase, hyp) != brute_relevance(phrase, hyp)
    for _ in range(50):
        phrases = list(dict.fromkeys(" ".join(word() for _ in range(rnd.randint(1, 2))) for _ in range(20)))
        hyp = " ".join(word() for _ in range(rnd.randint(1, 8)))
        k = rnd.randint(1, len(phrases))
        brute = sorted(range(len(phrases)), key=lambda i: (-brute_relevance(phrases[i], hyp), i))[:k]
        got = [r.original_index for r in preselect(BiasList.from_phrases(phrases), hyp, k)]
        mismatches += got != brute
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and secs < 10
    verdict(1, ok, f"ranker vs brute force: {mismatches} mismatches, {secs:.1f}s")
    assert ok


def test_2_tagging_round_trip(verdict):
    ds = sd.generate(sd.SimConfig(n_train=0, n_test=3000, p_carrier_noise=0.0, seed=2))
    substituted = [
        u for u in ds.test
        if len(u.hypothesis.split()) == len(u.reference.split())
        and u.hypothesis.split()[u.name_word_span[0]] != u.name
    ][:1000]
    rnd = random.Random(2)
    good = 0
    for u in substituted:
        bias = rnd.sample([n for n in ds.inventory if n != u.name], 4) + [u.name]
        rnd.shuffle(bias)
        t = build_targets(u.reference, u.hypothesis, u.name_word_span, bias)
        good += apply_correction(u.hypothesis, extract_spans(t.cls, t.cind), bias) == normalize(u.reference)
    ok = len(substituted) == 1000 and good == 1000
    verdict(2, ok, f"round trip {good}/{len(substituted)} substituted names")
    assert ok


def test_3_r0_identity(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for variant in ("ea", "da"):
        base = CorrectionModel(tiny_cfg(), seed=0).double().eval()
        acoustic = CorrectionModel(tiny_cfg(variant), seed=1).double().eval()
        acoustic.load_shared(base)
        for _ in range(100):
            item = random_input(rng)
            item.frames = item.frames.astype(np.float64)
            ref = run(base, [ModelInput(item.tokens, item.bias_phrases)])
            got = run(acoustic, [item], r=0.0)
            for key in ("cls_logits", "cind_logits"):
                worst = max(worst, torch.max(torch.abs(ref[key] - got[key])).item())
    ok = worst <= 1e-12
    verdict(3, ok, f"max |logit difference| at r=0 over 2x100 inputs: {worst:.1e}")
    assert ok


def test_4_gradient_checks(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst, groups_seen = 0.0, set()
    for variant in ("ea", "da"):
        model = CorrectionModel(tiny_cfg(variant), seed=0).double().eval()
        items = [random_input(rng, n_bias=3) for _ in range(2)]
        for it in items:
            it.frames = it.frames.astype(np.float64)
            n = len(it.tokens.tokens)
            it.cls = rng.integers(0, 4, size=n).tolist()
            it.cind = rng.integers(0, 4, size=n).tolist()
        batch = collate(model, items)

        def objective():
            out = model(batch, r=0.7)
            return T.loss_from_logits(out["cls_logits"], out["cind_logits"], batch.cls, batch.cind, batch.token_mask)

        model.zero_grad()
        objective().backward()
        eps = 1e-6
        for key, params in _groups(model).items():
            groups_seen.add(key)
            for _, p in params:
                flat = p.data.view(-1)
                for i in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                    old = flat[i].item()
                    with torch.no_grad():
                        flat[i] = old + eps
                        up = objective().item()
                        flat[i] = old - eps
                        down = objective().item()
                        flat[i] = old
                    numeric = (up - down) / (2 * eps)
                    analytic = p.grad.view(-1)[i].item()
                    worst = max(worst, abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6))
    secs = time.perf_counter() - t0
    ok = worst < 1e-3 and secs < 60 and {"adapter", "acoustic_attention", "bias_attention", "heads"} <= groups_seen
    verdict(4, ok, f"worst relative gradient error {worst:.1e} over {sorted(groups_seen)}, {secs:.1f}s")
    assert ok


def test_5_partial_adaptation_freeze(verdict):
    ds = sd.generate(sd.SimConfig(n_names=30, n_train=200, n_test=0, n_pseudo_names=30, d_acoustic_in=8, seed=5))
    texts = [u.reference for u in ds.train] + [u.hypothesis for u in ds.train] + ds.pool
    texts += [v for vs in ds.pairs.values() for v in vs]
    cfg = preset("desk", d_model=16, n_heads=2, d_ff=32, d_acoustic_in=8, d_adapter_hidden=16,
                 vocab=T.build_vocab(texts, 3))
    base = CorrectionModel(cfg, seed=0)

    def stream(m):
        return T.BatchStream(m, ds.train, ds.pool, ds.pairs, AugmentConfig(), 8, seed=5)

    T.fit(base, stream(base), T.TrainConfig(steps=20, log_every=0))
    snapshot = {n: t.clone() for n, t in base.state_dict().items()}
    adapted, _ = T.partial_adapt(base, "ea", stream, T.TrainConfig(steps=500, log_every=0))
    state = adapted.state_dict()
    changed = [n for n, t in snapshot.items() if not torch.equal(state[n], t)]
    fresh = T.start_acoustic(base, "ea").state_dict()
    moved = [n for n in adapted.new_component_names() if not torch.equal(state[n], fresh[n])]
    ok = not changed and bool(moved)
    verdict(5, ok, f"500 steps: {len(changed)} shared tensors changed, {len(moved)} acoustic tensors trained")
    assert ok


def test_6_mask_and_permutation(verdict):
    rng = np.random.default_rng(6)
    model = CorrectionModel(tiny_cfg("ea"), seed=2).double().eval()
    leak, perm_err = 0.0, 0.0
    for _ in range(50):
        item = random_input(rng, s_k=1)
        item.frames = item.frames.astype(np.float64)
        batch = collate(model, [item])
        attn = model.text_encoder.layers[0].acoustic_attn.attn
        attn.keep_probs = True
        with torch.no_grad():
            model(batch, r=1.0)
        attn.keep_probs = False
        blocked = ~batch.audio_mask[0]
        if blocked.any():
            leak = max(leak, attn.last_probs[0][:, blocked].abs().max().item())

        perm = rng.permutation(len(item.bias_phrases))
        other = ModelInput(item.tokens, [item.bias_phrases[i] for i in perm], item.frames, item.audio_mask)
        a, b = run(model, [item]), run(model, [other])
        perm_err = max(
            perm_err,
            torch.max(torch.abs(a["cls_logits"] - b["cls_logits"])).item(),
            torch.max(torch.abs(a["cind_logits"][..., 0] - b["cind_logits"][..., 0])).item(),
            torch.max(torch.abs(a["cind_logits"][..., 1:][..., perm] - b["cind_logits"][..., 1:])).item(),
        )
    ok = leak == 0.0 and perm_err <= 1e-12
    verdict(6, ok, f"masked attention max {leak:.1e}; permutation error {perm_err:.1e} on 50 instances")
    assert ok


# ---- criterion 7 ----------------------------------------------------------------------------------


def smoothed_rise(losses, width=50, window=500) -> float:
    """Largest end/start ratio of the width-step moving average across any window."""
    s = np.convolve(np.asarray(losses, dtype=float), np.ones(width) / width, mode="valid")
    span = min(window, len(s) - 1)
    return float((s[span:] / s[:-span]).max())


@pytest.fixture(scope="module")
def protocol():
    cfg = ProtocolConfig()
    results = [run_seed(seed, cfg, log=print) for seed in (0, 1, 2)]
    return cfg, results


def test_7_desk_scale_learning(verdict, protocol):
    cfg, results = protocol
    summ = summary(results)
    print(json.dumps(summ, indent=1))
    rec = summ["recall"]
    total = sum(summ["seconds"])
    base_ok = all(45 <= r.recall(E.BASELINE, 100) <= 55 for r in results)
    gain = rec["text"][100] - rec[E.BASELINE][100]
    a = gain >= 15
    b = all(rec["ea"][c] >= rec["text"][c] for c in sd.COVERAGES) and rec["ea"][25] > rec["text"][25]
    c = summ["false_rate"]["no_anti"] > summ["false_rate"]["text"]
    rises = {(r.seed, name): smoothed_rise(losses) for r in results for name, losses in r.losses.items()}
    worst_run = max(rises, key=rises.get)
    rise = rises[worst_run]
    smooth = rise <= 1.1
    text0 = Corrector(results[0].models["text"], k=cfg.k)
    joe = text0.correct("call joe at ten", BiasList.from_phrases(["sam", "john", "dong"])).text
    fast = total < 30 * 60
    ea_row = " ".join(f"{c}%:{rec['ea'][c]:.1f}/{rec['text'][c]:.1f}" for c in sd.COVERAGES)
    detail = (
        f"(a) text gain {gain:+.1f} {'ok' if a else 'FAIL'}; "
        f"(b) ea/text {ea_row} {'ok' if b else 'FAIL'}; "
        f"(c) false rate no-anti {summ['false_rate']['no_anti']:.1f} vs anti {summ['false_rate']['text']:.1f} "
        f"{'ok' if c else 'FAIL'}; baseline in 45-55 {'ok' if base_ok else 'FAIL'}; "
        f"loss rise {rise:.3f} (seed {worst_run[0]} {worst_run[1]}) {'ok' if smooth else 'FAIL'}; "
        f"'call joe at ten' -> {joe!r}; {total / 60:.1f} min"
    )
    ok = a and b and c and base_ok and smooth and fast and joe == "call john at ten"
    verdict(7, ok, detail)
    assert ok


def test_8_loss_analytics(verdict):
    worst = 0.0
    rng = np.random.default_rng(8)
    for n_b in (1, 4, 9, 30):
        L = 7
        cls = torch.full((3, L, 4), 0.25, dtype=torch.float64)
        cind = torch.full((3, L, n_b + 1), 1.0 / (n_b + 1), dtype=torch.float64)
        y_cls = torch.as_tensor(rng.integers(0, 4, (3, L)))
        y_cind = torch.as_tensor(rng.integers(0, n_b + 1, (3, L)))
        mask = torch.as_tensor(rng.random((3, L)) < 0.8)
        mask[0, 0] = True
        value = T.loss(T.LossInputs(cls, cind, y_cls, y_cind, mask)).item()
        worst = max(worst, abs(value - (math.log(4) + math.log(n_b + 1))))
    y_cls = torch.tensor([[0, 1, 2, 3, 0]])
    y_cind = torch.tensor([[0, 2, 2, 2, 0]])
    one_hot = T.loss(T.LossInputs(
        torch.nn.functional.one_hot(y_cls, 4).double(), torch.nn.functional.one_hot(y_cind, 3).double(),
        y_cls, y_cind, torch.ones(1, 5, dtype=torch.bool),
    )).item()
    ok = worst <= 1e-9 and one_hot == 0.0
    verdict(8, ok, f"uniform loss error {worst:.1e}; one-hot loss {one_hot + 0.0}")
    assert ok


def test_9_cache(verdict):
    torch.manual_seed(0)
    ds = sd.generate(sd.SimConfig(n_train=0, n_test=40, seed=9))
    texts = [u.reference for u in ds.test] + [u.hypothesis for u in ds.test] + ds.pool
    model = CorrectionModel(preset("desk", vocab=T.build_vocab(texts, 3)), seed=0).eval()
    bias = BiasList.from_phrases(ds.pool[:600])
    assert len(bias) == 600

    plain, cached = Corrector(model, k=600), Corrector(model, k=600, cache=E.BiasEmbeddingCache(1000))
    identical = all(
        torch.equal(plain.correct(u.hypothesis, bias).cind_logits, cached.correct(u.hypothesis, bias).cind_logits)
        for u in ds.test[:10]
    )
    no_cache = E.bench_latency(Corrector(model, k=600), ds.test[:15], bias, warmup=5, runs=1)
    with_cache = E.bench_latency(Corrector(model, k=600, cache=E.BiasEmbeddingCache(1000)), ds.test[:15], bias,
                                 warmup=5, runs=3)
    ratio = with_cache.list_warm_ms / with_cache.list_cold_ms
    largest = max(no_cache.proportion, key=no_cache.proportion.get)
    ok = identical and ratio < 0.1 and largest == "bias_encoder"
    verdict(9, ok, f"cache outputs identical: {identical}; second pass {100 * ratio:.1f}% of first; "
                   f"largest uncached component {largest} ({100 * no_cache.proportion[largest]:.1f}%)")
    assert ok


def test_10_determinism(verdict, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 10,
        "sim": {"n_names": 30, "n_train": 60, "n_test": 20, "n_pseudo_names": 40, "d_acoustic_in": 8},
        "model": {"preset": "desk", "d_model": 16, "n_heads": 2, "d_ff": 32, "d_adapter_hidden": 16},
        "train": {"steps": 20, "batch_size": 8, "log_every": 5},
        "eval": {"list_size": 40},
    }))
    runner = CliRunner()
    for tag in ("a", "b"):
        for args in (["gen-data", "--config", cfg, "--out", tmp_path / f"data_{tag}"],
                     ["train", "--config", cfg, "--data", tmp_path / f"data_{tag}", "--out", tmp_path / f"text_{tag}"],
                     ["train", "--config", cfg, "--data", tmp_path / f"data_{tag}", "--variant", "ea", "--partial",
                      "--base", tmp_path / f"text_{tag}" / "model.ckpt", "--out", tmp_path / f"ea_{tag}"]):
            res = runner.invoke(cli.main, [str(a) for a in args], catch_exceptions=False)
            assert res.exit_code == 0, res.output
    differ = []
    for kind in ("data", "text", "ea"):
        for f in sorted((tmp_path / f"{kind}_a").rglob("*")):
            twin = tmp_path / f"{kind}_b" / f.relative_to(tmp_path / f"{kind}_a")
            if f.is_file() and f.read_bytes() != twin.read_bytes():
                differ.append(str(f.relative_to(tmp_path)))
    ok = not differ
    verdict(10, ok, f"gen-data and train outputs byte-identical across runs; differing files: {differ or 'none'}")
    assert ok

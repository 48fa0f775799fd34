"""Command line entry point: gen-data, train, correct, eval, bench, protocol.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import click
import numpy as np
import torch

from . import model as M
from . import simdata as sd
from .augment import AugmentConfig
from .evalbench import BiasEmbeddingCache, bench_latency, coverage_sweep, false_correction_rate
from .inference import Corrector
from .ranker import BiasList
from .train import BatchStream, TrainConfig, TrainingDiverged, build_vocab, fit, partial_adapt

logger = logging.getLogger("ctxspell")

EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageFailure(click.ClickException):
    exit_code = EXIT_USAGE


class RuntimeFailure(click.ClickException):
    exit_code = EXIT_RUNTIME


# ---- configuration ---------------------------------------------------------------


@dataclass
class EvalOptions:
    k: int = 4
    list_size: int = 300
    coverages: list[int] = field(default_factory=lambda: list(sd.COVERAGES))

    def __post_init__(self):
        if self.k < 1 or self.list_size < 1:
            raise ValueError("k and list_size must be positive")
        bad = [c for c in self.coverages if c not in sd.COVERAGES]
        if bad:
            raise ValueError(f"coverages must be drawn from {sd.COVERAGES}, got {bad}")


@dataclass
class RunConfig:
    """Every knob of a run.  ``seed`` is the only seed; sections may not set their own."""

    seed: int = 0
    sim: sd.SimConfig = field(default_factory=sd.SimConfig)
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(n_hard=3))
    model: dict = field(default_factory=lambda: {"preset": "desk"})
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=2500))
    eval: EvalOptions = field(default_factory=EvalOptions)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        seed = int(d.get("seed", 0))
        for section in ("sim", "train"):
            if "seed" in d.get(section, {}):
                raise ValueError(f"set the seed at top level, not in '{section}'")
        sim = sd.SimConfig.from_dict({**d.get("sim", {}), "seed": seed})
        aug = AugmentConfig.from_dict(d.get("augment", {}))
        train = TrainConfig.from_dict({"steps": 2500, **d.get("train", {}), "seed": seed})
        ev = d.get("eval", {})
        unknown = set(ev) - {f.name for f in fields(EvalOptions)}
        if unknown:
            raise ValueError(f"unknown eval config keys: {sorted(unknown)}")
        model = dict(d.get("model", {"preset": "desk"}))
        model.setdefault("preset", "desk")
        bad = set(model) - {"preset"} - {f.name for f in fields(M.ModelConfig)} | ({"variant", "vocab"} & set(model))
        if bad:
            raise ValueError(f"bad model config keys: {sorted(bad)}")
        M.preset(model["preset"])  # validates the name
        return cls(seed, sim, aug, model, train, EvalOptions(**ev))

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self, variant: str, vocab: list[str]) -> M.ModelConfig:
        overrides = {k: v for k, v in self.model.items() if k != "preset"}
        overrides.setdefault("d_acoustic_in", self.sim.d_acoustic_in)
        return M.preset(self.model["preset"], variant=variant, vocab=vocab, **overrides)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({})
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageFailure(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageFailure(f"{path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise UsageFailure(f"{path}: config must be a JSON object")
    try:
        return RunConfig.from_dict(raw)
    except (ValueError, TypeError) as exc:
        raise UsageFailure(f"{path}: {exc}")


def out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageFailure(f"cannot write to {path}: {exc.strerror or exc}")
    return p


def echo_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---- corpus directory ----------------------------------------------------------------

BIAS_DIR = "biaslists"


def coverage_file(data: Path, coverage: int) -> Path:
    return data / BIAS_DIR / f"coverage_{coverage}.txt"


def read_corpus(path: Path) -> list[sd.Utterance]:
    if not path.exists():
        raise UsageFailure(f"missing corpus file {path}")
    try:
        return sd.read_jsonl(path)
    except ValueError as exc:
        raise UsageFailure(str(exc))


def read_lines(path: Path) -> list[str]:
    if not path.exists():
        raise UsageFailure(f"missing file {path}")
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def read_pairs(path: Path) -> dict[str, list[str]]:
    if not path.exists():
        raise UsageFailure(f"missing file {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_model(path: str) -> M.CorrectionModel:
    try:
        return M.load_checkpoint(path)
    except FileNotFoundError:
        raise UsageFailure(f"checkpoint not found: {path}")
    except (ValueError, KeyError) as exc:
        raise UsageFailure(f"bad checkpoint {path}: {exc}")


def load_bias_list(path: str) -> BiasList:
    try:
        bl = BiasList.load(path)
    except FileNotFoundError:
        raise UsageFailure(f"bias list not found: {path}")
    if len(bl) == 0:
        raise UsageFailure(f"bias list {path} is empty")
    return bl


# ---- commands -------------------------------------------------------------------------


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to standard error.")
def main(verbose: bool):
    """Contextual spelling correction: data, training, correction and benchmarks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("gen-data")
@click.option("--config", "config_path", required=True, help="RunConfig JSON file.")
@click.option("--out", required=True, help="Output directory.")
def gen_data(config_path: str, out: str):
    """Generate the synthetic corpus, name lists, ref/hyp pairs and eval bias lists."""
    cfg = load_config(config_path)
    dest = out_dir(out)
    ds = sd.generate(cfg.sim)
    sd.write_jsonl(ds.train, dest / "train.jsonl")
    sd.write_jsonl(ds.test, dest / "test.jsonl")
    (dest / "names.txt").write_text("".join(n + "\n" for n in ds.inventory), encoding="utf-8")
    (dest / "test_names.txt").write_text("".join(n + "\n" for n in ds.test_names), encoding="utf-8")
    (dest / "pool.txt").write_text("".join(n + "\n" for n in ds.pool), encoding="utf-8")
    write_json(dest / "refhyp.json", ds.pairs)
    (dest / BIAS_DIR).mkdir(exist_ok=True)
    rng = np.random.default_rng([cfg.seed, 99])
    for c in sd.COVERAGES:
        sd.build_eval_biaslists(ds.test_names, c, cfg.eval.list_size, ds.pool, rng).dump(coverage_file(dest, c))
    sd.build_anti_biaslist(ds.test_names, cfg.eval.list_size, ds.pool, rng).dump(dest / BIAS_DIR / "anti.txt")
    echo_config(cfg, dest)
    click.echo(f"wrote {len(ds.train)} train / {len(ds.test)} test utterances to {dest}")


VARIANT_NAMES = {"text-only": "text", "text": "text", "ea": "ea", "da": "da"}


@main.command()
@click.option("--config", "config_path", help="RunConfig JSON file (defaults when omitted).")
@click.option("--data", required=True, help="Directory written by gen-data.")
@click.option("--variant", type=click.Choice(sorted(VARIANT_NAMES)), default="text-only")
@click.option("--base", help="Text-only checkpoint to start from.")
@click.option("--partial", is_flag=True, help="Train only the acoustic components on top of --base.")
@click.option("--no-anti", is_flag=True, help="Disable anti-context augmentation.")
@click.option("--out", required=True, help="Output directory.")
def train(config_path, data, variant, base, partial, no_anti, out):
    """Train a model (or partially adapt one) and write model.ckpt + train_log.json."""
    cfg = load_config(config_path)
    variant = VARIANT_NAMES[variant]
    if partial and not base:
        raise UsageFailure("--partial requires --base")
    if partial and variant == "text":
        raise UsageFailure("--partial adapts a text-only base into ea or da")
    data_dir = Path(data)
    train_set = read_corpus(data_dir / "train.jsonl")
    pool = read_lines(data_dir / "pool.txt")
    pairs = read_pairs(data_dir / "refhyp.json")
    if variant != "text" and not all(u.has_alignment for u in train_set):
        raise UsageFailure(f"variant {variant} needs frames and rough alignments in {data_dir / 'train.jsonl'}")
    base_model = load_model(base) if base else None
    if base_model is not None and base_model.cfg.variant != "text":
        raise UsageFailure(f"base checkpoint is a {base_model.cfg.variant} model; a text-only base is required")
    dest = out_dir(out)
    torch.set_num_threads(1)
    aug = cfg.augment if not no_anti else AugmentConfig(**{**asdict(cfg.augment), "p_anti": 0.0})

    def batches(m):
        return BatchStream(m, train_set, pool, pairs, aug, cfg.train.batch_size, seed=cfg.seed)

    try:
        if partial:
            model, result = partial_adapt(base_model, variant, batches, cfg.train)
        else:
            if base_model is not None:
                model = M.CorrectionModel(base_model.cfg.with_variant(variant), seed=cfg.seed)
                model.load_shared(base_model)
                if variant != "text":
                    model.zero_acoustic_output()
            else:
                texts = [u.reference for u in train_set] + [u.hypothesis for u in train_set] + pool
                texts += [v for vs in pairs.values() for v in vs]
                chunk = M.preset(cfg.model["preset"]).chunk if "chunk" not in cfg.model else cfg.model["chunk"]
                model = M.CorrectionModel(cfg.model_config(variant, build_vocab(texts, chunk)), seed=cfg.seed)
            result = fit(model, batches(model), cfg.train)
    except TrainingDiverged as exc:
        raise RuntimeFailure(f"training diverged: {exc}")
    except ValueError as exc:
        raise UsageFailure(str(exc))
    M.save_checkpoint(model, dest / "model.ckpt")
    result.write_log(dest / "train_log.json")
    echo_config(cfg, dest)
    click.echo(f"wrote {dest / 'model.ckpt'} ({model.n_parameters()} parameters)")


@main.command()
@click.option("--model", "model_path", required=True, help="Checkpoint.")
@click.option("--bias-list", "bias_path", required=True, help="One phrase per line.")
@click.option("--hyp", help="A single hypothesis string.")
@click.option("--input", "input_path", help="JSONL of utterances (frames used by acoustic models).")
@click.option("--k", default=4, show_default=True, help="Phrases kept by preselection.")
@click.option("--r", default=1.0, show_default=True, help="Acoustic incorporation ratio.")
def correct(model_path, bias_path, hyp, input_path, k, r):
    """Print corrected text, one line per input."""
    if (hyp is None) == (input_path is None):
        raise UsageFailure("give exactly one of --hyp and --input")
    if not 0.0 <= r <= 1.0:
        raise UsageFailure("--r must lie in [0, 1]")
    if k < 1:
        raise UsageFailure("--k must be >= 1")
    model = load_model(model_path)
    bias = load_bias_list(bias_path)
    corr = Corrector(model, k=k, r=r)
    if hyp is not None:
        if model.acoustic and r != 0.0:
            raise UsageFailure("an acoustic model needs --input with frames unless --r 0")
        click.echo(corr.correct(hyp, bias).text)
        return
    utts = read_corpus(Path(input_path))
    for u in utts:
        if model.acoustic and r != 0.0 and not u.has_alignment:
            raise UsageFailure(f"{u.id}: no frames or rough alignment for an acoustic model")
        frames = u.frames if model.acoustic and u.has_alignment else None
        spans = u.word_frame_spans if frames is not None else None
        click.echo(corr.correct(u.hypothesis, bias, frames, spans).text)


def parse_models(specs: tuple[str, ...]) -> dict[str, M.CorrectionModel]:
    models = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).parent.name or Path(spec).stem, spec
        if name in models:
            raise UsageFailure(f"duplicate model name {name!r}")
        models[name] = load_model(path)
    return models


def parse_coverages(text: str) -> list[int]:
    if text == "all":
        return list(sd.COVERAGES)
    try:
        covs = [int(c) for c in text.split(",")]
    except ValueError:
        raise UsageFailure(f"bad --coverage {text!r}")
    bad = [c for c in covs if c not in sd.COVERAGES]
    if bad:
        raise UsageFailure(f"coverage must be among {sd.COVERAGES}")
    return covs


@main.command("eval")
@click.option("--model", "model_specs", multiple=True, required=True, help="NAME=CHECKPOINT (repeatable).")
@click.option("--data", required=True, help="Directory written by gen-data (bias lists are read from it).")
@click.option("--testset", help="Test JSONL (default: DATA/test.jsonl).")
@click.option("--coverage", default="all", show_default=True, help="'all' or a comma list of 25,50,75,100.")
@click.option("--k", default=4, show_default=True)
@click.option("--out", help="Directory for eval.json.")
def eval_cmd(model_specs, data, testset, coverage, k, out):
    """Name recall and WER per model and coverage, plus false corrections on the anti-context list."""
    data_dir = Path(data)
    test = read_corpus(Path(testset) if testset else data_dir / "test.jsonl")
    covs = parse_coverages(coverage)
    models = parse_models(model_specs)
    lists = {c: load_bias_list(str(coverage_file(data_dir, c))) for c in covs}
    correctors = {n: Corrector(m, k=k) for n, m in models.items()}
    for n, m in models.items():
        if m.acoustic and not all(u.has_alignment for u in test):
            raise UsageFailure(f"model {n} is acoustic but the test set lacks alignments")
    report = coverage_sweep(correctors, test, lists, k=k)
    result = json.loads(report.to_json())
    anti_path = data_dir / BIAS_DIR / "anti.txt"
    if anti_path.exists():
        anti = load_bias_list(str(anti_path))
        result["false_correction"] = {
            n: false_correction_rate(
                [c.correct(u.hypothesis, anti, u.frames, u.word_frame_spans).text for u in test], test
            )
            for n, c in correctors.items()
        }
    click.echo(report.render())
    for n, v in result.get("false_correction", {}).items():
        click.echo(f"false corrections on anti-context list, {n}: {v:.1f}%")
    if out:
        write_json(out_dir(out) / "eval.json", result)


@main.command()
@click.option("--model", "model_path", required=True)
@click.option("--data", required=True, help="Directory written by gen-data.")
@click.option("--testset", help="Test JSONL (default: DATA/test.jsonl).")
@click.option("--bias-list", "bias_path", help="Bias list reused for every utterance (default: coverage_100).")
@click.option("--k", default=600, show_default=True, help="Preselection size; large k stresses the bias encoder.")
@click.option("--cache", "cache_size", default=0, show_default=True, help="Embedding cache capacity (0 = off).")
@click.option("--warmup", default=10, show_default=True)
@click.option("--runs", default=3, show_default=True)
@click.option("--out", help="Directory for latency.json.")
def bench(model_path, data, testset, bias_path, k, cache_size, warmup, runs, out):
    """Per-component latency, single thread, median of runs."""
    data_dir = Path(data)
    test = read_corpus(Path(testset) if testset else data_dir / "test.jsonl")
    if len(test) <= warmup:
        raise UsageFailure(f"test set needs more than {warmup} utterances")
    model = load_model(model_path)
    bias = load_bias_list(bias_path or str(coverage_file(data_dir, 100)))
    cache = BiasEmbeddingCache(cache_size) if cache_size > 0 else None
    lat = bench_latency(Corrector(model, k=k, cache=cache), test, bias, warmup=warmup, runs=runs)
    click.echo(lat.render())
    if cache is not None:
        click.echo(f"cache hit rate {lat.cache_hit_rate:.3f}; one list embedded cold {lat.list_cold_ms:.2f}ms, "
                   f"again from cache {lat.list_warm_ms:.2f}ms")
    if out:
        (out_dir(out) / "latency.json").write_text(lat.to_json() + "\n", encoding="utf-8")


@main.command()
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--text-steps", default=2200, show_default=True)
@click.option("--adapt-steps", default=1000, show_default=True)
@click.option("--out", help="Directory for protocol.json.")
def protocol(seeds, text_steps, adapt_steps, out):
    """Desk-scale comparison: baseline vs text-only vs partially adapted EA, and anti-context on/off."""
    from .experiment import ProtocolConfig, run_seed, summary

    try:
        seed_list = [int(s) for s in seeds.split(",")]
    except ValueError:
        raise UsageFailure(f"bad --seeds {seeds!r}")
    torch.set_num_threads(1)
    pc = ProtocolConfig(text_steps=text_steps, adapt_steps=adapt_steps)
    results = [run_seed(s, pc, log=lambda m: click.echo(m, err=True)) for s in seed_list]
    for r in results:
        click.echo(f"seed {r.seed}\n{r.report.render()}")
    summ = summary(results)
    click.echo(json.dumps(summ, indent=1))
    if out:
        write_json(out_dir(out) / "protocol.json", summ)


def run() -> None:
    """Console-script wrapper mapping unexpected errors to exit code 3."""
    try:
        main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    sys.exit(0)


if __name__ == "__main__":
    run()

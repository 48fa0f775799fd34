import json

import pytest
from click.testing import CliRunner

from ctxspell import cli
from ctxspell.model import load_checkpoint

CONFIG = {
    "seed": 1,
    "sim": {"n_names": 20, "n_train": 30, "n_test": 15, "n_pseudo_names": 30, "d_acoustic_in": 8},
    "model": {"preset": "desk", "d_model": 16, "n_heads": 2, "d_ff": 32, "d_adapter_hidden": 16},
    "train": {"steps": 4, "batch_size": 4, "log_every": 2},
    "eval": {"list_size": 40},
}


def invoke(*args):
    return CliRunner().invoke(cli.main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(CONFIG))
    assert invoke("gen-data", "--config", cfg, "--out", root / "data").exit_code == 0
    assert invoke("train", "--config", cfg, "--data", root / "data", "--out", root / "text").exit_code == 0
    return root


# ---- config ---------------------------------------------------------------------------------


def test_run_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        cli.RunConfig.from_dict({"sim": {"n_nmaes": 3}})
    with pytest.raises(ValueError):
        cli.RunConfig.from_dict({"colour": 1})
    with pytest.raises(ValueError):
        cli.RunConfig.from_dict({"train": {"seed": 3}})
    with pytest.raises(ValueError):
        cli.RunConfig.from_dict({"model": {"variant": "ea"}})
    with pytest.raises(ValueError):
        cli.RunConfig.from_dict({"eval": {"coverages": [30]}})
    cfg = cli.RunConfig.from_dict({"seed": 4})
    assert cfg.sim.seed == cfg.train.seed == 4


def test_bad_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"sim": {"bogus": 1}}')
    res = invoke("gen-data", "--config", bad, "--out", tmp_path / "d")
    assert res.exit_code == 2 and "bogus" in res.output
    assert invoke("gen-data", "--config", tmp_path / "missing.json", "--out", tmp_path / "d").exit_code == 2
    assert invoke("gen-data", "--out", tmp_path / "d").exit_code == 2
    bad.write_text("{not json")
    assert invoke("gen-data", "--config", bad, "--out", tmp_path / "d").exit_code == 2


def test_unwritable_output_exit_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(CONFIG))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    res = invoke("gen-data", "--config", cfg, "--out", blocker / "sub")
    assert res.exit_code == 2 and "cannot write" in res.output


# ---- gen-data -----------------------------------------------------------------------------------


def test_gen_data_outputs(workspace):
    data = workspace / "data"
    assert len((data / "train.jsonl").read_text().splitlines()) == CONFIG["sim"]["n_train"]
    assert len((data / "test.jsonl").read_text().splitlines()) == CONFIG["sim"]["n_test"]
    assert len((data / "names.txt").read_text().splitlines()) == CONFIG["sim"]["n_names"]
    for c in (25, 50, 75, 100):
        assert len((data / "biaslists" / f"coverage_{c}.txt").read_text().splitlines()) == 40
    assert json.loads((data / "refhyp.json").read_text())
    echoed = json.loads((data / "config.json").read_text())
    assert echoed["sim"]["n_train"] == 30 and echoed["seed"] == 1


def test_gen_data_byte_identical(tmp_path, workspace):
    cfg = workspace / "cfg.json"
    assert invoke("gen-data", "--config", cfg, "--out", tmp_path / "again").exit_code == 0
    for f in sorted((workspace / "data").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "again" / f.relative_to(workspace / "data")).read_bytes(), f.name


# ---- train ---------------------------------------------------------------------------------------


def test_train_writes_checkpoint_and_log(workspace):
    text = workspace / "text"
    model = load_checkpoint(text / "model.ckpt")
    assert model.cfg.variant == "text" and model.cfg.d_model == 16
    log = json.loads((text / "train_log.json").read_text())
    steps = [e["step"] for e in log]
    assert steps == sorted(steps) == [2, 4]
    assert (text / "config.json").exists()


def test_train_byte_reproducible(tmp_path, workspace):
    cfg, data = workspace / "cfg.json", workspace / "data"
    assert invoke("train", "--config", cfg, "--data", data, "--out", tmp_path / "t2").exit_code == 0
    assert (tmp_path / "t2" / "model.ckpt").read_bytes() == (workspace / "text" / "model.ckpt").read_bytes()
    a = json.loads((tmp_path / "t2" / "train_log.json").read_text())
    b = json.loads((workspace / "text" / "train_log.json").read_text())
    assert a == b


def test_partial_training(tmp_path, workspace):
    cfg, data = workspace / "cfg.json", workspace / "data"
    res = invoke("train", "--config", cfg, "--data", data, "--variant", "ea", "--base",
                 workspace / "text" / "model.ckpt", "--partial", "--out", tmp_path / "ea")
    assert res.exit_code == 0, res.output
    assert load_checkpoint(tmp_path / "ea" / "model.ckpt").cfg.variant == "ea"


def test_train_usage_errors(tmp_path, workspace):
    cfg, data = workspace / "cfg.json", workspace / "data"
    assert invoke("train", "--config", cfg, "--data", data, "--variant", "ea", "--partial",
                  "--out", tmp_path / "x").exit_code == 2
    res = invoke("train", "--config", cfg, "--data", data, "--variant", "text-only", "--partial",
                 "--base", workspace / "text" / "model.ckpt", "--out", tmp_path / "x")
    assert res.exit_code == 2
    # acoustic base where a text-only one is required
    invoke("train", "--config", cfg, "--data", data, "--variant", "da", "--base", workspace / "text" / "model.ckpt",
           "--partial", "--out", tmp_path / "da")
    res = invoke("train", "--config", cfg, "--data", data, "--variant", "ea", "--base", tmp_path / "da" / "model.ckpt",
                 "--partial", "--out", tmp_path / "x")
    assert res.exit_code == 2 and "text-only base" in res.output


def test_acoustic_training_without_alignment_exit_2(tmp_path, workspace):
    data = tmp_path / "data"
    data.mkdir()
    for name in ("pool.txt", "refhyp.json"):
        (data / name).write_bytes((workspace / "data" / name).read_bytes())
    lines = []
    for line in (workspace / "data" / "train.jsonl").read_text().splitlines():
        rec = json.loads(line)
        rec["frames"], rec["word_frame_spans"], rec["exact_spans"] = [], [], []
        lines.append(json.dumps(rec))
    (data / "train.jsonl").write_text("\n".join(lines) + "\n")
    res = invoke("train", "--config", workspace / "cfg.json", "--data", data, "--variant", "ea", "--out", tmp_path / "o")
    assert res.exit_code == 2 and "alignment" in res.output


# ---- correct -------------------------------------------------------------------------------------


def test_correct_single_and_batch(workspace):
    ckpt, bl = workspace / "text" / "model.ckpt", workspace / "data" / "biaslists" / "coverage_100.txt"
    res = invoke("correct", "--model", ckpt, "--bias-list", bl, "--hyp", "call joe at ten")
    assert res.exit_code == 0 and len(res.output.splitlines()) == 1
    res = invoke("correct", "--model", ckpt, "--bias-list", bl, "--input", workspace / "data" / "test.jsonl")
    assert res.exit_code == 0 and len(res.output.splitlines()) == CONFIG["sim"]["n_test"]


def test_correct_errors(tmp_path, workspace):
    ckpt = workspace / "text" / "model.ckpt"
    empty = tmp_path / "empty.txt"
    empty.write_text("\n\n")
    assert invoke("correct", "--model", ckpt, "--bias-list", empty, "--hyp", "x").exit_code == 2
    bl = workspace / "data" / "biaslists" / "coverage_100.txt"
    assert invoke("correct", "--model", ckpt, "--bias-list", bl).exit_code == 2
    assert invoke("correct", "--model", tmp_path / "nope.ckpt", "--bias-list", bl, "--hyp", "x").exit_code == 2


def test_r0_acoustic_equals_base(tmp_path, workspace):
    cfg, data = workspace / "cfg.json", workspace / "data"
    invoke("train", "--config", cfg, "--data", data, "--variant", "ea", "--base", workspace / "text" / "model.ckpt",
           "--partial", "--out", tmp_path / "ea")
    bl = data / "biaslists" / "coverage_100.txt"
    test = data / "test.jsonl"
    base = invoke("correct", "--model", workspace / "text" / "model.ckpt", "--bias-list", bl, "--input", test)
    ea = invoke("correct", "--model", tmp_path / "ea" / "model.ckpt", "--bias-list", bl, "--input", test, "--r", 0)
    assert base.output == ea.output
    assert invoke("correct", "--model", tmp_path / "ea" / "model.ckpt", "--bias-list", bl, "--hyp", "x").exit_code == 2


# ---- eval / bench ---------------------------------------------------------------------------------


def test_eval_report(tmp_path, workspace):
    res = invoke("eval", "--model", f"text={workspace / 'text' / 'model.ckpt'}", "--data", workspace / "data",
                 "--out", tmp_path / "ev")
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "ev" / "eval.json").read_text())
    rows = {(r["system"], r["coverage"]) for r in report["rows"]}
    assert rows == {(s, c) for s in ("baseline", "text") for c in (25, 50, 75, 100)}
    assert "text" in report["false_correction"]


def test_eval_malformed_testset_line(tmp_path, workspace):
    lines = (workspace / "data" / "test.jsonl").read_text().splitlines()
    lines[2] = '{"id": 3}'
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    res = invoke("eval", "--model", workspace / "text" / "model.ckpt", "--data", workspace / "data", "--testset", bad)
    assert res.exit_code == 2 and "bad.jsonl:3" in res.output


def test_bench_with_cache(tmp_path, workspace):
    res = invoke("bench", "--model", workspace / "text" / "model.ckpt", "--data", workspace / "data",
                 "--cache", 1000, "--k", 40, "--warmup", 3, "--runs", 2, "--out", tmp_path / "b")
    assert res.exit_code == 0, res.output
    lat = json.loads((tmp_path / "b" / "latency.json").read_text())
    assert lat["cache_hit_rate"] > 0
    assert abs(sum(lat["proportion"].values()) - 1.0) < 0.01


def test_run_wrapper_exit_codes(monkeypatch, tmp_path):
    monkeypatch.setattr("sys.argv", ["ctxspell", "gen-data", "--out", str(tmp_path)])
    with pytest.raises(SystemExit) as exc:
        cli.run()
    assert exc.value.code == 2
    monkeypatch.setattr("sys.argv", ["ctxspell", "correct", "--model", str(tmp_path / "m"), "--bias-list", "x", "--hyp", "y"])
    with pytest.raises(SystemExit) as exc:
        cli.run()
    assert exc.value.code == 2


def test_diverged_training_exit_3(tmp_path, workspace):
    import torch

    from ctxspell.model import save_checkpoint

    model = load_checkpoint(workspace / "text" / "model.ckpt")
    with torch.no_grad():
        next(model.parameters()).fill_(float("nan"))
    save_checkpoint(model, tmp_path / "nan.ckpt")
    res = invoke("train", "--config", workspace / "cfg.json", "--data", workspace / "data", "--variant", "ea",
                 "--base", tmp_path / "nan.ckpt", "--partial", "--out", tmp_path / "ea")
    assert res.exit_code == 3 and "non-finite" in res.output

import json
import subprocess
import sys

import pytest

from taclang.cli import main
from taclang.config import PipelineConfig, config_from_dict, config_hash, config_to_dict, load_config


def run_cli(*argv):
    return main(list(argv))


def test_help_exits_zero_for_every_subcommand(capsys):
    for cmd in ("gen", "annotate", "tokenize", "train", "eval",
                "policy-train", "policy-eval", "pipeline"):
        with pytest.raises(SystemExit) as e:
            run_cli(cmd, "--help")
        assert e.value.code == 0
        out = capsys.readouterr().out
        assert "--" in out and "default" in out.lower()


def test_gen_is_deterministic(tmp_path):
    for sub in ("a", "b"):
        code = run_cli("--quiet", "gen", "--n", "3", "--seed", "5",
                       "--out-dir", str(tmp_path / sub))
        assert code == 0
    a = (tmp_path / "a" / "labels.jsonl").read_bytes()
    b = (tmp_path / "b" / "labels.jsonl").read_bytes()
    assert a == b
    fa = (tmp_path / "a" / "samples" / "000000.fgt").read_bytes()
    fb = (tmp_path / "b" / "samples" / "000000.fgt").read_bytes()
    assert fa == fb


def test_gen_rejects_bad_n(tmp_path, capsys):
    code = run_cli("--quiet", "gen", "--n", "0", "--out-dir", str(tmp_path / "x"))
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1


def test_annotate_and_tokenize_round(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert run_cli("--quiet", "gen", "--n", "4", "--seed", "2", "--out-dir", str(corpus)) == 0
    est = tmp_path / "est.jsonl"
    agreement = tmp_path / "agreement.json"
    assert run_cli("--quiet", "annotate", "--in-dir", str(corpus),
                   "--out", str(est), "--agreement", str(agreement)) == 0
    assert est.exists() and agreement.exists()
    rows = [json.loads(line) for line in est.read_text().splitlines()]
    assert all(r["estimated"] for r in rows)

    desc = tmp_path / "desc.jsonl"
    assert run_cli("--quiet", "tokenize", "--labels", str(corpus / "labels.jsonl"),
                   "--out", str(desc), "--style", "tokenized") == 0
    lines = [json.loads(line) for line in desc.read_text().splitlines()]
    assert len(lines) == 4 * 10  # ten variants per sample
    assert {"id", "variant", "text", "ids"} <= set(lines[0])


def test_eval_without_checkpoint_names_train(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    assert run_cli("--quiet", "gen", "--n", "2", "--out-dir", str(corpus)) == 0
    code = run_cli("--quiet", "eval", "--ckpt", str(tmp_path / "missing.ckpt"),
                   "--corpus", str(corpus), "--report", str(tmp_path / "r.json"))
    assert code != 0
    err = capsys.readouterr().err
    assert err.startswith("error: ")


def test_pipeline_dependency_error_names_stage(tmp_path, capsys):
    code = run_cli("--quiet", "--out-dir", str(tmp_path / "pipe"),
                   "pipeline", "--stages", "eval")
    assert code != 0
    err = capsys.readouterr().err
    assert "run stage" in err and "'gen'" in err or "'train'" in err


def test_config_round_trip_and_unknown_key(tmp_path):
    cfg = PipelineConfig()
    d = config_to_dict(cfg)
    assert config_to_dict(config_from_dict(d)) == d
    with pytest.raises(ValueError, match="unknown key"):
        config_from_dict({"generator": {"banana": 1}})
    with pytest.raises(ValueError, match="unknown key"):
        config_from_dict({"sprocket": {}})
    # defaults materialize explicitly
    assert d["generator"]["n_samples"] == 2000
    assert config_hash(cfg) == config_hash(PipelineConfig())


def test_config_file_diagnostics(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(ValueError, match="line"):
        load_config(bad)


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "taclang", "--help"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "gen" in proc.stdout and "policy-eval" in proc.stdout


@pytest.mark.slow
def test_small_pipeline_runs_twice_identically(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "generator": {"n_samples": 220, "seed": 3},
        "training": {"epochs": 2},
    }))
    outs = []
    for sub in ("p1", "p2"):
        out = tmp_path / sub
        code = run_cli("--quiet", "--out-dir", str(out), "--config", str(cfg_path),
                       "pipeline", "--stages", "gen,annotate,tokenize,train")
        assert code == 0
        outs.append(out)
    for rel in ("corpus/labels.jsonl", "estimated.jsonl", "agreement.json",
                "train_metrics.jsonl", "encoder.ckpt", "manifests/gen.json",
                "manifests/train.json"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


@pytest.mark.slow
def test_pipeline_skips_unchanged_stage(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"generator": {"n_samples": 8, "seed": 3}}))
    out = tmp_path / "pipe"
    assert run_cli("--out-dir", str(out), "--config", str(cfg_path),
                   "pipeline", "--stages", "gen,annotate") == 0
    capsys.readouterr()
    assert run_cli("--out-dir", str(out), "--config", str(cfg_path),
                   "pipeline", "--stages", "gen,annotate") == 0
    text = capsys.readouterr().out
    assert text.count("skipping") == 2


def test_pipeline_lock_prevents_concurrent_runs(tmp_path):
    from taclang.config import PipelineConfig
    from taclang.pipeline import PipelineError, directory_lock, run_pipeline

    out = tmp_path / "locked"
    out.mkdir()
    with directory_lock(out):
        with pytest.raises(PipelineError, match="locked"):
            run_pipeline(PipelineConfig(), out, ["gen"])
    assert not (out / ".lock").exists()  # released on exit


def test_threads_env_var_fallback(monkeypatch):
    import os

    from taclang.cli import _apply_threads

    class Args:
        threads = None

    monkeypatch.setenv("FGCLTP_THREADS", "2")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    _apply_threads(Args())
    assert os.environ["OMP_NUM_THREADS"] == "2"
    assert os.environ["OPENBLAS_NUM_THREADS"] == "2"

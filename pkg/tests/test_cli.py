from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time

import pytest

from sqlbench.cli import main
from sqlbench.inference import read_predictions
from sqlbench.stub import StubBehavior, StubServer, answers_from_examples

from conftest import write_config_with_url


@pytest.fixture()
def gold_stub(bundle):
    answers = answers_from_examples(bundle.splits["dev"] + bundle.splits["train"])
    with StubServer(StubBehavior(answers=answers)) as server:
        yield server


def run_cli(*argv) -> int:
    return main(list(argv))


def test_ingest_writes_manifest(scratch_config, tmp_path, capsys):
    config = write_config_with_url(scratch_config, "http://127.0.0.1:1/v1")
    rc = run_cli("ingest", "--config", str(config), "--run-id", "t")
    assert rc == 0
    manifest = json.loads((tmp_path / "runs" / "t" / "manifest.json").read_text())
    assert manifest["splits"] == {"dev": 20, "train": 19}
    assert manifest["databases"]["concert_singer"]["has_file"] is True
    out = capsys.readouterr().out
    assert "1 of 2" in out


def test_ingest_missing_examples_file(scratch_config, capsys):
    config = write_config_with_url(scratch_config, "http://127.0.0.1:1/v1")
    broken = config.read_text().replace("dev.json", "missing_dev.json")
    config.write_text(broken)
    rc = run_cli("ingest", "--config", str(config), "--run-id", "t")
    assert rc == 1
    err = capsys.readouterr().err
    assert "missing_dev.json" in err


def test_ingest_deterministic(scratch_config, tmp_path):
    config = write_config_with_url(scratch_config, "http://127.0.0.1:1/v1")
    run_cli("ingest", "--config", str(config), "--run-id", "a")
    run_cli("ingest", "--config", str(config), "--run-id", "b")
    a = (tmp_path / "runs" / "a" / "manifest.json").read_bytes()
    b = (tmp_path / "runs" / "b" / "manifest.json").read_bytes()
    assert a == b


def test_build_corpus_k_list(scratch_config, tmp_path):
    config = write_config_with_url(scratch_config, "http://127.0.0.1:1/v1")
    rc = run_cli(
        "build-corpus", "--config", str(config), "--run-id", "t",
        "--k", "0,1,3,5",
    )
    assert rc == 0
    corpus_dir = tmp_path / "runs" / "t" / "corpus"
    files = sorted(p.name for p in corpus_dir.glob("*.jsonl"))
    assert files == ["train_k0.jsonl", "train_k1.jsonl", "train_k3.jsonl", "train_k5.jsonl"]
    assert not list(corpus_dir.glob("*.partial"))


def test_build_corpus_random_shot(scratch_config, tmp_path):
    config = write_config_with_url(scratch_config, "http://127.0.0.1:1/v1")
    rc = run_cli("build-corpus", "--config", str(config), "--run-id", "t", "--random-shot")
    assert rc == 0
    assert (tmp_path / "runs" / "t" / "corpus" / "train_random_shot.jsonl").is_file()


def test_predict_stub_run(scratch_config, tmp_path, gold_stub):
    config = write_config_with_url(scratch_config, gold_stub.base_url)
    rc = run_cli("predict", "--config", str(config), "--run-id", "t",
                 "--split", "dev", "--shots", "0")
    assert rc == 0
    out = tmp_path / "runs" / "t" / "predictions" / "dev_shots0.jsonl"
    predictions = read_predictions(out)
    assert len(predictions) == 20
    assert sorted(predictions) == list(range(20))
    # re-running is a no-op once complete
    assert run_cli("predict", "--config", str(config), "--run-id", "t",
                   "--split", "dev", "--shots", "0") == 0


def test_evaluate_gold_echo(scratch_config, tmp_path, gold_stub, capsys):
    config = write_config_with_url(scratch_config, gold_stub.base_url)
    run_cli("predict", "--config", str(config), "--run-id", "t", "--split", "dev",
            "--shots", "0")
    pred_file = tmp_path / "runs" / "t" / "predictions" / "dev_shots0.jsonl"
    rc = run_cli("evaluate", "--config", str(config), "--run-id", "t",
                 "--split", "dev", "--predictions", str(pred_file))
    assert rc == 0
    out = capsys.readouterr().out
    assert "1.000" in out
    summary = json.loads(
        (tmp_path / "runs" / "t" / "reports" / "dev_summary.json").read_text()
    )
    assert summary["buckets"]["overall"]["ex_rate"] == "1.000"
    assert summary["buckets"]["overall"]["em_rate"] == "1.000"


def test_evaluate_em_only_marks_ex_na(scratch_config, tmp_path, gold_stub, capsys):
    text = scratch_config.read_text().replace("ex: true", "ex: false")
    scratch_config.write_text(text)
    config = write_config_with_url(scratch_config, gold_stub.base_url)
    run_cli("predict", "--config", str(config), "--run-id", "t", "--split", "dev",
            "--shots", "0")
    pred_file = tmp_path / "runs" / "t" / "predictions" / "dev_shots0.jsonl"
    rc = run_cli("evaluate", "--config", str(config), "--run-id", "t",
                 "--split", "dev", "--predictions", str(pred_file))
    assert rc == 0
    out = capsys.readouterr().out
    ex_line = [l for l in out.splitlines() if l.startswith("ex")][0]
    assert "n/a" in ex_line


def test_compare_identical_runs(scratch_config, tmp_path, gold_stub, capsys):
    config = write_config_with_url(scratch_config, gold_stub.base_url)
    run_cli("predict", "--config", str(config), "--run-id", "t", "--split", "dev",
            "--shots", "0")
    pred_file = tmp_path / "runs" / "t" / "predictions" / "dev_shots0.jsonl"
    run_cli("evaluate", "--config", str(config), "--run-id", "t",
            "--split", "dev", "--predictions", str(pred_file))
    summary = tmp_path / "runs" / "t" / "reports" / "dev_summary.csv"
    rc = run_cli("compare", "--base", str(summary), "--target", str(summary))
    assert rc == 0
    out = capsys.readouterr().out
    assert "+0.000" in out


def test_compare_scheme_mismatch_exits_nonzero(tmp_path, capsys):
    spider_csv = tmp_path / "a.csv"
    bird_csv = tmp_path / "b.csv"
    header = ("run_id,config_fingerprint,scheme,bucket,n,em_scored,em_correct,"
              "ex_scored,ex_correct,ves_mean\n")
    spider_csv.write_text(header + "a,f,spider4,overall,1,1,1,1,1,\n")
    bird_csv.write_text(header + "b,f,bird3,overall,1,1,1,1,1,\n")
    rc = run_cli("compare", "--base", str(spider_csv), "--target", str(bird_csv))
    assert rc == 1
    assert "scheme" in capsys.readouterr().err


def test_emit_train_profile_cli(tmp_path):
    out = tmp_path / "profile.yaml"
    rc = run_cli("emit-train-profile", "--method", "qlora", "--out", str(out))
    assert rc == 0
    from sqlbench.corpus import load_train_profile

    profile = load_train_profile(out)
    assert profile.method == "qlora"
    assert profile.lora_rank == 64


def test_config_error_lists_all_problems(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text(
        """
dataset:
  name: x
  dialect: unknown-dialect
  tables: nowhere.json
  splits:
    dev: missing.json
selection:
  strategy: telepathy
""",
        encoding="utf-8",
    )
    rc = run_cli("ingest", "--config", str(config), "--run-id", "t")
    assert rc == 1
    err = capsys.readouterr().err
    assert "dialect" in err
    assert "nowhere.json" in err
    assert "missing.json" in err
    assert "strategy" in err


def test_interrupt_and_resume_predict(scratch_config, tmp_path, bundle):
    """Kill predict mid-run, resume, and verify exactly one record each."""
    answers = answers_from_examples(bundle.splits["dev"])
    with StubServer(StubBehavior(answers=answers, delay_s=0.25)) as server:
        config = write_config_with_url(scratch_config, server.base_url)
        argv = [
            sys.executable, "-m", "sqlbench.cli", "predict",
            "--config", str(config), "--run-id", "t", "--split", "dev", "--shots", "0",
        ]
        env = dict(os.environ)
        proc = subprocess.Popen(argv, env=env, cwd=str(tmp_path),
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        partial = tmp_path / "runs" / "t" / "predictions" / "dev_shots0.jsonl.partial"
        deadline = time.time() + 30
        while time.time() < deadline:
            if partial.is_file() and len(partial.read_text().splitlines()) >= 2:
                break
            time.sleep(0.05)
        proc.send_signal(signal.SIGKILL)
        proc.wait(timeout=10)
        assert partial.is_file(), "no partial file produced before the kill"
        interrupted = len(read_predictions(partial))
        assert 0 < interrupted < 20

    # resume against a fresh stub (fast this time)
    with StubServer(StubBehavior(answers=answers)) as server2:
        config2 = write_config_with_url(scratch_config, server2.base_url)
        rc = run_cli("predict", "--config", str(config2), "--run-id", "t",
                     "--split", "dev", "--shots", "0")
        assert rc == 0
        # only the remaining examples were requested on resume
        assert server2.request_count == 20 - interrupted
    out = tmp_path / "runs" / "t" / "predictions" / "dev_shots0.jsonl"
    lines = out.read_text().splitlines()
    indices = [json.loads(line)["example_index"] for line in lines]
    assert indices == list(range(20))  # one per example, no duplicates, sorted
    assert not partial.is_file()


def test_scalar_config_section_is_a_config_error(tmp_path, capsys, fixtures_dir):
    config = tmp_path / "scalar.yaml"
    config.write_text(
        f"""
dataset:
  name: x
  dialect: spider
  tables: {fixtures_dir / 'spider' / 'tables.json'}
  splits:
    dev: {fixtures_dir / 'spider' / 'dev.json'}
prompt: sentence
""",
        encoding="utf-8",
    )
    rc = run_cli("ingest", "--config", str(config), "--run-id", "t")
    assert rc == 1
    assert "expected a mapping" in capsys.readouterr().err


def test_bird_dialect_end_to_end(tmp_path, fixtures_dir, bird_bundle, capsys):
    """EM-only bird-style run: ingested difficulty labels drive the
    simple/moderate/challenge report columns, evidence goes into prompts."""
    answers = answers_from_examples(bird_bundle.splits["dev"])
    with StubServer(StubBehavior(answers=answers)) as server:
        config = tmp_path / "bird.yaml"
        config.write_text(
            f"""
dataset:
  name: bird-fixture
  dialect: bird
  tables: {fixtures_dir / 'bird' / 'tables.json'}
  splits:
    dev: {fixtures_dir / 'bird' / 'dev.json'}
prompt:
  schema_style: compact
  include_evidence: true
selection:
  strategy: random
  k: 0
  pool: dev
endpoint:
  base_url: {server.base_url}
  model_name: stub
  record_latency: false
metrics:
  em: true
  ex: false
output_dir: {tmp_path / 'runs'}
seed: 1
""",
            encoding="utf-8",
        )
        assert run_cli("ingest", "--config", str(config), "--run-id", "b") == 0
        assert run_cli("predict", "--config", str(config), "--run-id", "b",
                       "--split", "dev", "--shots", "0") == 0
        preds = tmp_path / "runs" / "b" / "predictions" / "dev_shots0.jsonl"
        assert run_cli("evaluate", "--config", str(config), "--run-id", "b",
                       "--split", "dev", "--predictions", str(preds)) == 0
    out = capsys.readouterr().out
    header = [l for l in out.splitlines() if l.startswith("metric")][0]
    assert header.split() == ["metric", "Simple", "Moderate", "Challenge", "Overall"]
    em_line = [l for l in out.splitlines() if l.startswith("em")][0]
    assert em_line.split()[-1] == "1.000"
    ex_line = [l for l in out.splitlines() if l.startswith("ex")][0]
    assert ex_line.split()[-1] == "n/a"

"""Pipeline CLI: ingest, build-corpus, predict, evaluate, compare,
emit-train-profile, plus a stub endpoint for offline runs.

Exit statuses: 0 success, 1 validation or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .corpus import TrainProfile, emit_train_profile, export_corpus
from .datasets import DatasetBundle, DatasetError, load_bundle, validate_dataset
from .inference import append_prediction, predict_batch, read_predictions, write_predictions
from .metrics import ScoreOptions, score_run, write_eval_records
from .prompts import BudgetExceededError, TokenBudget, build_prompt
from .reporting import (
    CSV,
    PLAIN,
    STRUCTURED,
    compare,
    parse_summary_csv,
    render_delta,
    render_summary,
    summarize,
)
from .runconfig import ConfigError, RunConfig, load_run_config
from .selection import RANDOM_SHOT, build_index, select
from .stub import StubBehavior, StubServer

logger = logging.getLogger("sqlbench")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _run_id(config: RunConfig, override: str | None) -> str:
    if override:
        return override
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return f"{stamp}-{config.fingerprint()[:8]}"


def _run_dir(config: RunConfig, args) -> Path:
    output_dir = Path(args.output_dir) if args.output_dir else config.output_dir
    run_dir = output_dir / _run_id(config, args.run_id)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _atomic_write(path: Path, text: str) -> None:
    partial = path.with_name(path.name + ".partial")
    partial.write_text(text, encoding="utf-8")
    os.replace(partial, path)


def _bundle_from_config(config: RunConfig) -> DatasetBundle:
    return load_bundle(
        name=config.dataset.name,
        dialect=config.dataset.dialect,
        tables_path=config.dataset.tables,
        split_paths=config.dataset.splits,
        db_dir=config.dataset.db_dir,
    )


def cmd_ingest(args) -> int:
    config = _load_config(args)
    bundle, errors = validate_dataset(
        name=config.dataset.name,
        dialect=config.dataset.dialect,
        tables_path=config.dataset.tables,
        split_paths=config.dataset.splits,
        db_dir=config.dataset.db_dir,
    )
    if errors or bundle is None:
        for error in errors:
            print(f"validation: {error}", file=sys.stderr)
        return EXIT_CONFIG
    run_dir = _run_dir(config, args)
    manifest = dict(bundle.manifest())
    manifest["config_fingerprint"] = config.fingerprint()
    path = run_dir / "manifest.json"
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"manifest written to {path}")
    for split, rows in sorted(bundle.splits.items()):
        print(f"  split {split}: {len(rows)} examples")
        unparseable = _unparseable_golds(bundle, rows)
        if unparseable:
            logger.warning(
                "split %s: %d gold queries outside the clause grammar"
                " (excluded from EM, kept for EX): %s",
                split, len(unparseable), unparseable[:10],
            )
    found = sum(1 for db in bundle.schemas if db in bundle.db_files)
    print(f"  databases: {found} of {len(bundle.schemas)} files found")
    return EXIT_OK


def _unparseable_golds(bundle: DatasetBundle, rows) -> list[int]:
    from .sqlkit import SqlParseError, parse_sql

    bad = []
    for example in rows:
        try:
            parse_sql(example.gold_sql, bundle.schemas[example.db_id])
        except SqlParseError:
            bad.append(example.index)
    return bad


def _policy_for(config: RunConfig, k: int):
    return config.selection.policy(default_seed=config.seed, k=k)


def cmd_build_corpus(args) -> int:
    config = _load_config(args)
    bundle = _bundle_from_config(config)
    if args.split not in bundle.splits:
        print(f"split {args.split!r} not in dataset", file=sys.stderr)
        return EXIT_CONFIG
    split = bundle.splits[args.split]
    run_dir = _run_dir(config, args)
    corpus_dir = run_dir / "corpus"
    corpus_dir.mkdir(exist_ok=True)
    template = config.prompt.template()
    jobs: list[tuple[str, str, int | None]] = []  # (filename, mode, k)
    if args.random_shot:
        jobs.append((f"{args.split}_random_shot.jsonl", RANDOM_SHOT, None))
    for k in args.k:
        jobs.append((f"{args.split}_k{k}.jsonl", "fixed-k", k))
    if not jobs:
        print("nothing to do: pass --k and/or --random-shot", file=sys.stderr)
        return EXIT_CONFIG
    choices = tuple(args.choices)
    for filename, mode, k in jobs:
        out = corpus_dir / filename
        partial = out.with_name(out.name + ".partial")
        policy = _policy_for(config, k if k is not None else 0)
        summary = export_corpus(
            split, bundle, template, policy, mode, partial, choices=choices
        )
        os.replace(partial, out)
        summary_path = out.with_suffix(".summary.json")
        _atomic_write(
            summary_path, json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        print(f"corpus {out}: {summary.records} records, skipped {len(summary.skipped)}")
    return EXIT_OK


def cmd_predict(args) -> int:
    config = _load_config(args)
    bundle = _bundle_from_config(config)
    if args.split not in bundle.splits:
        print(f"split {args.split!r} not in dataset", file=sys.stderr)
        return EXIT_CONFIG
    targets = bundle.splits[args.split]
    pool = bundle.splits.get(config.selection.pool, [])
    run_dir = _run_dir(config, args)
    pred_dir = run_dir / "predictions"
    pred_dir.mkdir(exist_ok=True)
    out = pred_dir / f"{args.split}_shots{args.shots}.jsonl"
    partial = out.with_name(out.name + ".partial")
    if out.is_file():
        print(f"predictions already complete at {out}")
        return EXIT_OK
    done = read_predictions(partial) if partial.is_file() else {}
    if done:
        print(f"resuming: {len(done)} predictions already recorded")

    policy = config.selection.policy(default_seed=config.seed, k=args.shots)
    index = build_index(pool) if policy.strategy != "random" and pool else None
    budget = TokenBudget()
    template = config.prompt.template()
    envelopes = []
    for target in targets:
        if target.index in done:
            continue
        exemplars = (
            []
            if policy.k == 0
            else select(
                target, pool, policy, index=index,
                schema=bundle.schemas.get(target.db_id),
            )
        )
        try:
            envelope = build_prompt(target, exemplars, template, budget, bundle.schemas)
        except BudgetExceededError as exc:
            print(f"example {target.index}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        if envelope.shots < len(exemplars):
            logger.warning(
                "example %d: budget truncated exemplars %d -> %d",
                target.index, len(exemplars), envelope.shots,
            )
        envelopes.append(envelope)

    endpoint = config.endpoint.endpoint()

    def sink(prediction) -> None:
        if not config.endpoint.record_latency:
            prediction.latency_ms = 0.0
        append_prediction(partial, prediction)

    predict_batch(envelopes, endpoint, on_result=sink)
    merged = read_predictions(partial) if partial.is_file() else {}
    merged.update({k: v for k, v in done.items() if k not in merged})
    write_predictions(out, merged)
    partial.unlink(missing_ok=True)
    print(f"{len(merged)} predictions written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    bundle = _bundle_from_config(config)
    if args.split not in bundle.splits:
        print(f"split {args.split!r} not in dataset", file=sys.stderr)
        return EXIT_CONFIG
    predictions_path = Path(args.predictions)
    if not predictions_path.is_file():
        print(f"prediction file not found: {predictions_path}", file=sys.stderr)
        return EXIT_CONFIG
    predictions = read_predictions(predictions_path)
    examples = bundle.splits[args.split]
    options = ScoreOptions(
        em=config.metrics.em,
        ex=config.metrics.ex,
        ves=config.metrics.ves,
        timeout_s=config.metrics.timeout_s,
        workers=config.metrics.workers,
    )
    records = score_run(examples, predictions, bundle, options)
    run_dir = _run_dir(config, args)
    eval_dir = run_dir / "eval"
    reports_dir = run_dir / "reports"
    eval_dir.mkdir(exist_ok=True)
    reports_dir.mkdir(exist_ok=True)
    records_path = eval_dir / f"{args.split}_records.jsonl"
    partial = records_path.with_name(records_path.name + ".partial")
    write_eval_records(records, partial)
    os.replace(partial, records_path)

    labeled = [r for r in records if r.difficulty is not None]
    dropped = len(records) - len(labeled)
    if dropped:
        logger.warning("%d records lack a difficulty label; excluded from summary", dropped)
    summary = summarize(
        labeled, run_id=run_dir.name, config_fingerprint=config.fingerprint(),
        scheme=config.scheme(),
    )
    _atomic_write(reports_dir / f"{args.split}_summary.txt", render_summary(summary, PLAIN))
    _atomic_write(reports_dir / f"{args.split}_summary.csv", render_summary(summary, CSV))
    _atomic_write(reports_dir / f"{args.split}_summary.json", render_summary(summary, STRUCTURED))
    print(render_summary(summary, PLAIN), end="")
    print(f"records: {records_path}")
    print(f"reports: {reports_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    base = parse_summary_csv(Path(args.base).read_text(encoding="utf-8"))
    target = parse_summary_csv(Path(args.target).read_text(encoding="utf-8"))
    try:
        report = compare(base, target)
    except ValueError as exc:
        print(f"cannot compare: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(render_delta(report, PLAIN), end="")
    if args.out:
        _atomic_write(Path(args.out), render_delta(report, STRUCTURED))
        print(f"delta report: {args.out}")
    return EXIT_OK


def cmd_emit_train_profile(args) -> int:
    try:
        profile = TrainProfile(
            method=args.method,
            lora_rank=args.lora_rank,
            lora_alpha=args.lora_alpha,
            learning_rate=args.learning_rate,
            epochs=args.epochs,
            max_source_length=args.max_source_length,
            max_target_length=args.max_target_length,
            model_name=args.model_name,
        )
    except ValueError as exc:
        print(f"invalid profile: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = emit_train_profile(profile, args.out)
    print(f"training profile written to {path}")
    return EXIT_OK


def cmd_stub(args) -> int:
    answers: dict[str, str] = {}
    if args.examples:
        with open(args.examples, encoding="utf-8") as fp:
            records = json.load(fp)
        answers = {
            rec["question"]: rec.get("query", rec.get("SQL", "SELECT 1"))
            for rec in records
        }
    behavior = StubBehavior(answers=answers, fallback_sql=args.fallback)
    server = StubServer(behavior, host=args.host, port=args.port)
    server.start()
    print(f"stub endpoint serving at {server.base_url} ({len(answers)} canned answers)")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqlbench",
        description="Text-to-SQL benchmarking pipeline: dataset construction,"
        " prediction, evaluation, and fine-tuning corpus export.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run config file (YAML)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--output-dir", default=None, help="override the output directory")
    common.add_argument("--run-id", default=None,
                        help="pin the run id (default: timestamp + config fingerprint)")

    p = sub.add_parser("ingest", parents=[common], help="load and validate the dataset")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-corpus", parents=[common], help="export fine-tuning corpora")
    p.add_argument("--split", default="train")
    p.add_argument("--k", type=_int_list, default=[],
                   help="comma-separated shot counts, one corpus per count")
    p.add_argument("--random-shot", action="store_true",
                   help="also export one corpus with per-example shot counts"
                        " drawn from --choices")
    p.add_argument("--choices", type=_int_list, default=[0, 1, 3, 5],
                   help="random-shot choice set (default 0,1,3,5)")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("predict", parents=[common], help="request predictions for a split")
    p.add_argument("--split", default="dev")
    p.add_argument("--shots", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score a prediction file")
    p.add_argument("--split", default="dev")
    p.add_argument("--predictions", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="delta report between two run summaries")
    p.add_argument("--base", required=True, help="baseline summary CSV")
    p.add_argument("--target", required=True, help="target summary CSV")
    p.add_argument("--out", default=None, help="write the structured delta report here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("emit-train-profile", help="write a training-config profile")
    p.add_argument("--method", choices=["lora", "qlora"], default="lora")
    p.add_argument("--lora-rank", type=int, default=64)
    p.add_argument("--lora-alpha", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.0002)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--max-source-length", type=int, default=2048)
    p.add_argument("--max-target-length", type=int, default=512)
    p.add_argument("--model-name", default="llama2-7b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_train_profile)

    p = sub.add_parser("stub", help="serve the deterministic stub endpoint")
    p.add_argument("--examples", default=None, help="examples file for gold-echo answers")
    p.add_argument("--fallback", default="SELECT 1")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8181)
    p.set_defaults(func=cmd_stub)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError,) as exc:
        for error in exc.errors:
            print(f"config: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"dataset: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure: report, nonzero exit
        logger.exception("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration: one structured file drives every pipeline stage.

Paths are resolved relative to the config file. Secrets never live in the
config; the endpoint API key is read from an environment variable named by
``endpoint.api_key_env``. The config fingerprint embedded in reports is a
content hash of the resolved, secret-free configuration.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .datasets import DIALECTS
from .inference import ModelEndpoint
from .prompts import COMPACT_STYLE, SENTENCE_STYLE, PromptTemplate, template_for_style
from .selection import STRATEGIES, SelectionPolicy


class ConfigError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class DatasetConfig:
    name: str
    dialect: str
    tables: Path
    splits: dict[str, Path]
    db_dir: Path | None = None


@dataclass
class PromptConfig:
    schema_style: str = SENTENCE_STYLE
    include_evidence: bool = False

    def template(self) -> PromptTemplate:
        return template_for_style(self.schema_style, self.include_evidence)


@dataclass
class SelectionConfig:
    strategy: str = "random"
    k: int = 0
    pool: str = "train"
    seed: int | None = None

    def policy(self, default_seed: int, k: int | None = None) -> SelectionPolicy:
        return SelectionPolicy(
            strategy=self.strategy,
            k=self.k if k is None else k,
            seed=self.seed if self.seed is not None else default_seed,
            pool=self.pool,
        )


@dataclass
class EndpointConfig:
    base_url: str = "http://127.0.0.1:8181/v1"
    model_name: str = "stub"
    temperature: float = 0.0
    max_response_tokens: int = 512
    timeout_s: float = 60.0
    max_retries: int = 2
    concurrency_limit: int = 4
    backoff_base_s: float = 0.5
    api_key_env: str = "SQLBENCH_API_KEY"
    record_latency: bool = True

    def endpoint(self) -> ModelEndpoint:
        return ModelEndpoint(
            base_url=self.base_url,
            model_name=self.model_name,
            api_key=os.environ.get(self.api_key_env) or None,
            temperature=self.temperature,
            max_response_tokens=self.max_response_tokens,
            timeout_s=self.timeout_s,
            max_retries=self.max_retries,
            concurrency_limit=self.concurrency_limit,
            backoff_base_s=self.backoff_base_s,
        )


@dataclass
class MetricsConfig:
    em: bool = True
    ex: bool = True
    ves: bool = False
    timeout_s: float = 30.0
    workers: int = 4


@dataclass
class RunConfig:
    dataset: DatasetConfig
    prompt: PromptConfig = field(default_factory=PromptConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    output_dir: Path = Path("runs")
    seed: int = 42

    def fingerprint(self) -> str:
        canonical = json.dumps(_config_dict(self), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def scheme(self) -> str:
        return "spider4" if self.dataset.dialect == "spider" else "bird3"


def _config_dict(config: RunConfig) -> dict:
    return {
        "dataset": {
            "name": config.dataset.name,
            "dialect": config.dataset.dialect,
            "tables": str(config.dataset.tables),
            "splits": {k: str(v) for k, v in sorted(config.dataset.splits.items())},
            "db_dir": None if config.dataset.db_dir is None else str(config.dataset.db_dir),
        },
        "prompt": {
            "schema_style": config.prompt.schema_style,
            "include_evidence": config.prompt.include_evidence,
        },
        "selection": {
            "strategy": config.selection.strategy,
            "k": config.selection.k,
            "pool": config.selection.pool,
            "seed": config.selection.seed,
        },
        "endpoint": {
            "base_url": config.endpoint.base_url,
            "model_name": config.endpoint.model_name,
            "temperature": config.endpoint.temperature,
            "max_response_tokens": config.endpoint.max_response_tokens,
            "timeout_s": config.endpoint.timeout_s,
            "max_retries": config.endpoint.max_retries,
            "concurrency_limit": config.endpoint.concurrency_limit,
            "backoff_base_s": config.endpoint.backoff_base_s,
            "record_latency": config.endpoint.record_latency,
        },
        "metrics": {
            "em": config.metrics.em,
            "ex": config.metrics.ex,
            "ves": config.metrics.ves,
            "timeout_s": config.metrics.timeout_s,
            "workers": config.metrics.workers,
        },
        "seed": config.seed,
    }


def _take(section, cls, errors: list[str], where: str) -> dict:
    if not isinstance(section, dict):
        errors.append(f"{where}: expected a mapping, got {type(section).__name__}")
        return {}
    known = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(section) - known
    if unknown:
        errors.append(f"{where}: unknown keys {sorted(unknown)}")
    return {k: v for k, v in section.items() if k in known}


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a run config; raises ConfigError listing every
    problem found, not just the first."""
    config_path = Path(path)
    errors: list[str] = []
    if not config_path.is_file():
        raise ConfigError([f"config file not found: {config_path}"])
    with open(config_path, encoding="utf-8") as fp:
        try:
            raw = yaml.safe_load(fp) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"config is not valid YAML: {exc}"]) from exc
    base = config_path.parent

    def resolve(rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else (base / p)

    dataset_raw = raw.get("dataset")
    if not isinstance(dataset_raw, dict):
        raise ConfigError(["config must have a dataset section"])
    name = dataset_raw.get("name", "dataset")
    dialect = dataset_raw.get("dialect", "spider")
    if dialect not in DIALECTS:
        errors.append(f"dataset.dialect must be one of {DIALECTS}, got {dialect!r}")
    tables = resolve(dataset_raw.get("tables", "tables.json"))
    if not tables.is_file():
        errors.append(f"dataset.tables not found: {tables}")
    splits = {}
    for split, rel in (dataset_raw.get("splits") or {}).items():
        if split not in ("train", "dev", "test"):
            errors.append(f"dataset.splits: unknown split name {split!r}")
            continue
        split_path = resolve(rel)
        if not split_path.is_file():
            errors.append(f"dataset.splits.{split} not found: {split_path}")
        splits[split] = split_path
    if not splits:
        errors.append("dataset.splits must name at least one split file")
    db_dir = dataset_raw.get("db_dir")
    if db_dir is not None:
        db_dir = resolve(db_dir)
        if not db_dir.is_dir():
            errors.append(f"dataset.db_dir not found: {db_dir}")

    prompt = PromptConfig(**_take(raw.get("prompt") or {}, PromptConfig, errors, "prompt"))
    if prompt.schema_style not in (SENTENCE_STYLE, COMPACT_STYLE):
        errors.append(f"prompt.schema_style must be sentence or compact, got {prompt.schema_style!r}")
    selection = SelectionConfig(
        **_take(raw.get("selection") or {}, SelectionConfig, errors, "selection")
    )
    if selection.strategy not in STRATEGIES:
        errors.append(f"selection.strategy must be one of {STRATEGIES}")
    endpoint = EndpointConfig(
        **_take(raw.get("endpoint") or {}, EndpointConfig, errors, "endpoint")
    )
    metrics = MetricsConfig(**_take(raw.get("metrics") or {}, MetricsConfig, errors, "metrics"))
    if errors:
        raise ConfigError(errors)
    return RunConfig(
        dataset=DatasetConfig(
            name=name, dialect=dialect, tables=tables, splits=splits, db_dir=db_dir
        ),
        prompt=prompt,
        selection=selection,
        endpoint=endpoint,
        metrics=metrics,
        output_dir=resolve(raw.get("output_dir", "runs")),
        seed=int(raw.get("seed", 42)),
    )

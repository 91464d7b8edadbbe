"""Fine-tuning corpus export and training-config profiles.

Corpora are line-delimited instruction/output records in the prompt format,
with configurable shot mixing; training profiles are flat key-value files
handed to external fine-tuning tooling. No training happens here.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import yaml

from .datasets import DatasetBundle, ExampleTriple
from .prompts import BudgetExceededError, PromptTemplate, TokenBudget, build_prompt
from .selection import (
    DEFAULT_SHOT_CHOICES,
    SelectionPolicy,
    SimilarityIndex,
    build_index,
    mix_shots,
    select,
)


@dataclass
class CorpusSummary:
    records: int
    shot_histogram: dict[int, int]
    token_min: int
    token_max: int
    token_mean: float
    skipped: list[dict]

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "shot_histogram": {str(k): v for k, v in sorted(self.shot_histogram.items())},
            "token_estimate": {
                "min": self.token_min,
                "max": self.token_max,
                "mean": round(self.token_mean, 3),
            },
            "skipped": self.skipped,
        }


def export_corpus(
    split: list[ExampleTriple],
    bundle: DatasetBundle,
    template: PromptTemplate,
    policy: SelectionPolicy,
    mode: str,
    out: str | Path,
    choices: tuple[int, ...] = DEFAULT_SHOT_CHOICES,
    budget: TokenBudget | None = None,
    index: SimilarityIndex | None = None,
) -> CorpusSummary:
    """Write one instruction/output record per example.

    Exemplars are drawn from the split itself with self-exclusion. Examples
    that exceed the budget even at zero shots are reported as skipped, never
    silently dropped. Fixed seeds make the output byte-identical across runs.
    """
    budget = budget or TokenBudget()
    if index is None and policy.strategy != "random":
        index = build_index(split)
    shot_plan = mix_shots(policy, mode, split, choices)
    histogram: dict[int, int] = {}
    token_estimates: list[int] = []
    skipped: list[dict] = []
    out_path = Path(out)
    with open(out_path, "w", encoding="utf-8") as fp:
        for example in split:
            k = shot_plan[example.index]
            per_example = SelectionPolicy(
                strategy=policy.strategy,
                k=k,
                seed=policy.seed,
                pool=policy.pool,
                exclude_same_example=True,
            )
            exemplars = select(
                example,
                split,
                per_example,
                index=index,
                schema=bundle.schemas.get(example.db_id),
                corpus_mode=True,
            )
            try:
                envelope = build_prompt(example, exemplars, template, budget, bundle.schemas)
            except BudgetExceededError as exc:
                skipped.append(
                    {
                        "example_index": example.index,
                        "reason": f"over budget by {exc.overflow} tokens at k=0",
                    }
                )
                continue
            record = {
                "instruction": envelope.text,
                "output": example.gold_sql,
                "meta": {
                    "example_index": example.index,
                    "shots": envelope.shots,
                    "exemplar_ids": list(envelope.exemplar_ids),
                },
            }
            fp.write(json.dumps(record, ensure_ascii=False))
            fp.write("\n")
            histogram[envelope.shots] = histogram.get(envelope.shots, 0) + 1
            token_estimates.append(envelope.token_estimate)
    return CorpusSummary(
        records=len(token_estimates),
        shot_histogram=histogram,
        token_min=min(token_estimates) if token_estimates else 0,
        token_max=max(token_estimates) if token_estimates else 0,
        token_mean=sum(token_estimates) / len(token_estimates) if token_estimates else 0.0,
        skipped=skipped,
    )


def read_corpus(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


LORA = "lora"
QLORA = "qlora"


@dataclass(frozen=True)
class TrainProfile:
    method: str = LORA
    lora_rank: int = 64
    lora_alpha: int = 32
    learning_rate: float = 0.0002
    epochs: int = 8
    max_source_length: int = 2048
    max_target_length: int = 512
    model_name: str = "llama2-7b"

    def __post_init__(self) -> None:
        if self.method not in (LORA, QLORA):
            raise ValueError(f"unknown tuning method {self.method!r}")
        for name in ("lora_rank", "lora_alpha", "learning_rate", "epochs",
                     "max_source_length", "max_target_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def emit_train_profile(profile: TrainProfile, out: str | Path) -> Path:
    """Write the profile as a flat key-value file for external trainers."""
    path = Path(out)
    with open(path, "w", encoding="utf-8") as fp:
        yaml.safe_dump(asdict(profile), fp, sort_keys=True)
    return path


def load_train_profile(path: str | Path) -> TrainProfile:
    with open(path, encoding="utf-8") as fp:
        raw = yaml.safe_load(fp)
    return TrainProfile(**raw)

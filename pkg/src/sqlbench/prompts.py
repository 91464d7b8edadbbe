"""Text-representation prompt rendering under a fixed token budget.

Prompts put both the database schema and the question into natural language:
an instruction header, the schema block, an optional run of exemplar
Q/Response pairs, and the target question followed by an unanswered response
prefix. Two schema renderings are supported: full sentences and a compact
one-line-per-table form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

from .datasets import DatabaseSchema, ExampleTriple

SENTENCE_STYLE = "sentence"
COMPACT_STYLE = "compact"

_SENTENCE_HEADER = (
    "I want you to act as a SQL terminal in front of a database and below is"
    " an description of the database schema. Write a response that"
    " appropriately completes the request.\n\n/* Instruction */"
)
_SENTENCE_PREAMBLE = "Please give SQL statement to answer the following question:"

_COMPACT_HEADER = "Given the following database schema :\n"
_COMPACT_PREAMBLE = "Please write queries to answer the following questions:"

DEFAULT_MAX_CONTEXT = 2048
DEFAULT_RESERVED_RESPONSE = 512


class BudgetExceededError(Exception):
    def __init__(self, overflow: int):
        super().__init__(f"prompt exceeds token budget by {overflow} tokens")
        self.overflow = overflow


@dataclass(frozen=True)
class TokenBudget:
    max_context: int = DEFAULT_MAX_CONTEXT
    reserved_response: int = DEFAULT_RESERVED_RESPONSE

    @property
    def available(self) -> int:
        return self.max_context - self.reserved_response


@dataclass(frozen=True)
class PromptTemplate:
    instruction_header: str
    question_preamble: str
    schema_style: str = SENTENCE_STYLE
    question_prefix: str = "Q:"
    response_prefix: str = "Response:"
    include_evidence: bool = False

    def __post_init__(self) -> None:
        if not self.question_prefix or not self.response_prefix:
            raise ValueError("prompt prefixes must be non-empty")
        if self.schema_style not in (SENTENCE_STYLE, COMPACT_STYLE):
            raise ValueError(f"unknown schema style {self.schema_style!r}")


def template_for_style(style: str, include_evidence: bool = False) -> PromptTemplate:
    if style == SENTENCE_STYLE:
        return PromptTemplate(
            instruction_header=_SENTENCE_HEADER,
            question_preamble=_SENTENCE_PREAMBLE,
            schema_style=SENTENCE_STYLE,
            include_evidence=include_evidence,
        )
    if style == COMPACT_STYLE:
        return PromptTemplate(
            instruction_header=_COMPACT_HEADER,
            question_preamble=_COMPACT_PREAMBLE,
            schema_style=COMPACT_STYLE,
            include_evidence=include_evidence,
        )
    raise ValueError(f"unknown schema style {style!r}")


TRP_SENTENCE = template_for_style(SENTENCE_STYLE)
TRP_COMPACT = template_for_style(COMPACT_STYLE)


@dataclass(frozen=True)
class PromptEnvelope:
    text: str
    shots: int
    exemplar_ids: tuple[int, ...]
    token_estimate: int
    budget: TokenBudget
    target_index: int

    def __post_init__(self) -> None:
        if self.shots != len(self.exemplar_ids):
            raise ValueError("shots must equal the number of exemplars")
        if self.token_estimate > self.budget.available:
            raise ValueError("envelope exceeds its own budget")


def estimate_tokens(text: str, tokenizer: Callable[[str], int] | None = None) -> int:
    """Deterministic over-estimate of the tokenizer count (bytes/3, rounded up).

    An exact tokenizer can be plugged in for a specific model.
    """
    if tokenizer is not None:
        return tokenizer(text)
    return math.ceil(len(text.encode("utf-8")) / 3)


def render_schema(schema: DatabaseSchema, style: str) -> str:
    if style == COMPACT_STYLE:
        lines = [
            f"Table {t.name}, columns = [*,{','.join(t.column_names())}]"
            for t in schema.tables
        ]
        return "\n".join(lines)
    if style != SENTENCE_STYLE:
        raise ValueError(f"unknown schema style {style!r}")
    tables = ", ".join(t.name for t in schema.tables)
    lines = [f"Database {schema.db_id} contains tables such as {tables}."]
    for table in schema.tables:
        line = f"Table {table.name} has columns such as {', '.join(table.column_names())}."
        pk = schema.primary_key_of(table.name)
        if pk:
            line += f" {pk} is the primary key."
        lines.append(line)
    for fk in schema.foreign_keys:
        lines.append(
            f"The {fk.child.column} of {fk.child.table} is the foreign key"
            f" of {fk.parent.column} of {fk.parent.table}."
        )
    return "\n".join(lines)


def _oneline(text: str) -> str:
    return " ".join(text.split("\n"))


def _question_block(
    example: ExampleTriple, template: PromptTemplate, answer: str | None
) -> str:
    lines = [f"{template.question_prefix} {_oneline(example.question)}"]
    if template.include_evidence and example.evidence:
        lines.append(_oneline(example.evidence))
    if answer is None:
        lines.append(f"{template.response_prefix} ")
    else:
        lines.append(f"{template.response_prefix} {_oneline(answer)}")
    return "\n".join(lines)


def _assemble(
    target: ExampleTriple,
    exemplars: list[ExampleTriple],
    template: PromptTemplate,
    schemas: dict[str, DatabaseSchema],
) -> str:
    parts = [
        template.instruction_header,
        "\n",
        render_schema(schemas[target.db_id], template.schema_style),
        "\n\n",
        template.question_preamble,
        "\n\n",
    ]
    for exemplar in exemplars:
        if exemplar.db_id != target.db_id:
            # cross-domain exemplars carry their own schema, compactly
            parts.append(render_schema(schemas[exemplar.db_id], COMPACT_STYLE))
            parts.append("\n\n")
        parts.append(_question_block(exemplar, template, exemplar.gold_sql))
        parts.append("\n\n")
    parts.append(_question_block(target, template, None))
    return "".join(parts)


def build_prompt(
    target: ExampleTriple,
    exemplars: list[ExampleTriple],
    template: PromptTemplate,
    budget: TokenBudget,
    schemas: dict[str, DatabaseSchema],
    tokenizer: Callable[[str], int] | None = None,
) -> PromptEnvelope:
    """Render the prompt, shedding exemplars from the tail if needed to fit.

    The target schema and question are never dropped: if the zero-shot form
    still overflows, the caller gets a BudgetExceededError with the overflow.
    """
    for keep in range(len(exemplars), -1, -1):
        kept = exemplars[:keep]
        text = _assemble(target, kept, template, schemas)
        estimate = estimate_tokens(text, tokenizer)
        if estimate <= budget.available:
            return PromptEnvelope(
                text=text,
                shots=keep,
                exemplar_ids=tuple(e.index for e in kept),
                token_estimate=estimate,
                budget=budget,
                target_index=target.index,
            )
    raise BudgetExceededError(overflow=estimate - budget.available)


def with_evidence(template: PromptTemplate, include: bool) -> PromptTemplate:
    return replace(template, include_evidence=include)

"""Sandboxed query execution against dataset SQLite files.

Databases are opened strictly read-only, every execution runs under a
wall-clock deadline, and results come back as plain row lists ready for
order-sensitive or multiset comparison.
"""

from __future__ import annotations

import sqlite3
import statistics
import time
from collections import Counter
from dataclasses import dataclass
from math import isclose
from pathlib import Path

from .sqlkit.parser import SqlParseError, tokenize

DB_UNAVAILABLE = "db-unavailable"
EXEC_ERROR = "exec-error"
TIMEOUT = "timeout"

_PROGRESS_INTERVAL_OPS = 10_000
_FETCH_BATCH = 2048
_MIN_ELAPSED_S = 1e-6


class ExecutionFailure(Exception):
    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail


@dataclass
class ExecOutcome:
    rows: list[tuple]
    elapsed: float
    ordered: bool


def has_top_level_order_by(sql: str) -> bool:
    """Whether the query orders its final result (ORDER BY at paren depth 0)."""
    try:
        toks = tokenize(sql)
    except SqlParseError:
        return False
    depth = 0
    for i, tok in enumerate(toks):
        if tok.kind == "op" and tok.text == "(":
            depth += 1
        elif tok.kind == "op" and tok.text == ")":
            depth -= 1
        elif (
            depth == 0
            and tok.kind == "word"
            and tok.text == "order"
            and i + 1 < len(toks)
            and toks[i + 1].text == "by"
        ):
            return True
    return False


def execute_sql(sql: str, db_file: str | Path, timeout_s: float = 30.0) -> ExecOutcome:
    """Run one statement read-only and fetch all rows under a deadline."""
    path = Path(db_file)
    if not path.is_file():
        raise ExecutionFailure(DB_UNAVAILABLE, f"no database file at {path}")
    ordered = has_top_level_order_by(sql)
    deadline = time.monotonic() + timeout_s
    timed_out = False

    def guard() -> int:
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    try:
        conn.set_progress_handler(guard, _PROGRESS_INTERVAL_OPS)
        conn.execute("PRAGMA query_only = ON")
        start = time.perf_counter()
        cursor = conn.execute(sql)
        rows: list[tuple] = []
        while True:
            batch = cursor.fetchmany(_FETCH_BATCH)
            if not batch:
                break
            rows.extend(batch)
            if time.monotonic() > deadline:
                timed_out = True
                raise sqlite3.OperationalError("interrupted: fetch deadline exceeded")
        elapsed = time.perf_counter() - start
    except (sqlite3.Error, sqlite3.Warning) as exc:
        kind = TIMEOUT if timed_out else EXEC_ERROR
        raise ExecutionFailure(kind, str(exc)) from exc
    finally:
        conn.close()
    return ExecOutcome(rows=rows, elapsed=max(elapsed, _MIN_ELAPSED_S), ordered=ordered)


def median_elapsed(sql: str, db_file: str | Path, timeout_s: float, runs: int = 3) -> float:
    """Median wall-clock time of repeated executions, for efficiency ratios."""
    samples = [execute_sql(sql, db_file, timeout_s).elapsed for _ in range(runs)]
    return max(statistics.median(samples), _MIN_ELAPSED_S)


def _cells_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    a_num = isinstance(a, (int, float))
    b_num = isinstance(b, (int, float))
    if a_num != b_num:
        return False
    if a_num:
        return a == b or isclose(float(a), float(b), rel_tol=1e-6, abs_tol=0.0)
    return a == b


def _rows_equal(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(_cells_equal(x, y) for x, y in zip(a, b))


def _cell_key(cell):
    if cell is None:
        return (0, "")
    if isinstance(cell, (int, float)):
        return (1, float(cell), "")
    if isinstance(cell, bytes):
        return (3, cell.hex())
    return (2, str(cell))


def _row_key(row: tuple):
    return tuple(_cell_key(cell) for cell in row)


def results_match(gold_rows: list[tuple], pred_rows: list[tuple], ordered: bool) -> bool:
    """Compare result sets: as sequences when the gold query is ordered,
    as multisets of tuples otherwise. Cells compare positionally."""
    if len(gold_rows) != len(pred_rows):
        return False
    if gold_rows and len(gold_rows[0]) != len(pred_rows[0]):
        return False
    if ordered:
        return all(_rows_equal(g, p) for g, p in zip(gold_rows, pred_rows))
    try:
        if Counter(gold_rows) == Counter(pred_rows):
            return True
    except TypeError:
        pass
    gold_sorted = sorted(gold_rows, key=_row_key)
    pred_sorted = sorted(pred_rows, key=_row_key)
    return all(_rows_equal(g, p) for g, p in zip(gold_sorted, pred_sorted))

"""Benchmark dataset loading: schema catalogs, example files, SQLite introspection."""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

SPIDER = "spider"
BIRD = "bird"
DIALECTS = (SPIDER, BIRD)

COLUMN_KINDS = ("text", "number", "time", "boolean", "other")

SPIDER_LABELS = ("easy", "medium", "hard", "extra")
BIRD_LABELS = ("simple", "moderate", "challenge")

# prefix rules applied after case-folding; the five canonical kinds pass through
_TYPE_PREFIXES = (
    (("int", "real", "numeric", "decimal"), "number"),
    (("char", "text", "varchar"), "text"),
    (("date", "time", "timestamp"), "time"),
    (("bool",), "boolean"),
)


class DatasetError(Exception):
    """Malformed or inconsistent dataset input."""


class SchemaValidationError(DatasetError):
    pass


class ExampleValidationError(DatasetError):
    pass


def map_column_type(raw: str) -> str:
    """Map a source type string onto the five-kind column type vocabulary."""
    folded = raw.strip().lower()
    if folded in COLUMN_KINDS:
        return folded
    if folded == "others":
        return "other"
    for prefixes, kind in _TYPE_PREFIXES:
        if folded.startswith(prefixes):
            return kind
    return "other"


@dataclass(frozen=True)
class ColumnDef:
    name: str
    data_type: str
    original_name: str

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaValidationError("column name must be non-empty")
        if self.data_type not in COLUMN_KINDS:
            raise SchemaValidationError(f"unknown column type {self.data_type!r}")


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaValidationError("table name must be non-empty")
        folded = [c.name.lower() for c in self.columns]
        if len(set(folded)) != len(folded):
            raise SchemaValidationError(f"duplicate column names in table {self.name!r}")

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass(frozen=True)
class KeyRef:
    table: str
    column: str


@dataclass(frozen=True)
class ForeignKey:
    child: KeyRef
    parent: KeyRef


@dataclass(frozen=True)
class DatabaseSchema:
    db_id: str
    tables: tuple[TableDef, ...]
    primary_keys: tuple[KeyRef, ...]
    foreign_keys: tuple[ForeignKey, ...]

    def __post_init__(self) -> None:
        index = {t.name.lower(): {c.name.lower() for c in t.columns} for t in self.tables}
        for ref in self.primary_keys:
            self._check_ref(index, ref, "primary key")
        for fk in self.foreign_keys:
            self._check_ref(index, fk.child, "foreign key")
            self._check_ref(index, fk.parent, "foreign key")

    def _check_ref(self, index: dict, ref: KeyRef, kind: str) -> None:
        cols = index.get(ref.table.lower())
        if cols is None or ref.column.lower() not in cols:
            raise SchemaValidationError(
                f"{self.db_id}: {kind} references unknown column {ref.table}.{ref.column}"
            )

    def table(self, name: str) -> TableDef | None:
        folded = name.lower()
        for t in self.tables:
            if t.name.lower() == folded:
                return t
        return None

    def has_column(self, table: str, column: str) -> bool:
        t = self.table(table)
        return t is not None and column.lower() in {c.name.lower() for c in t.columns}

    def tables_with_column(self, column: str) -> list[str]:
        """Case-folded names of tables that contain the given column."""
        folded = column.lower()
        return [
            t.name.lower()
            for t in self.tables
            if folded in {c.name.lower() for c in t.columns}
        ]

    def primary_key_of(self, table: str) -> str | None:
        """First declared primary-key column of a table, original casing."""
        folded = table.lower()
        for ref in self.primary_keys:
            if ref.table.lower() == folded:
                return ref.column
        return None


@dataclass(frozen=True)
class DifficultyLabel:
    scheme: str  # "spider4" | "bird3"
    label: str

    def __post_init__(self) -> None:
        allowed = {"spider4": SPIDER_LABELS, "bird3": BIRD_LABELS}.get(self.scheme)
        if allowed is None:
            raise ValueError(f"unknown difficulty scheme {self.scheme!r}")
        if self.label not in allowed:
            raise ValueError(f"label {self.label!r} not in scheme {self.scheme}")


@dataclass(frozen=True)
class ExampleTriple:
    index: int
    question: str
    gold_sql: str
    db_id: str
    difficulty: DifficultyLabel | None = None
    evidence: str | None = None


@dataclass
class DatasetBundle:
    name: str
    dialect: str
    splits: dict[str, list[ExampleTriple]] = field(default_factory=dict)
    schemas: dict[str, DatabaseSchema] = field(default_factory=dict)
    db_files: dict[str, Path] = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "dialect": self.dialect,
            "splits": {name: len(rows) for name, rows in sorted(self.splits.items())},
            "databases": {
                db_id: {
                    "tables": len(schema.tables),
                    "has_file": db_id in self.db_files,
                }
                for db_id, schema in sorted(self.schemas.items())
            },
        }


def _catalog_entry_to_schema(entry: dict) -> DatabaseSchema:
    db_id = entry["db_id"]
    table_names = entry["table_names_original"]
    raw_columns = entry["column_names_original"]
    column_types = entry.get("column_types", ["text"] * len(raw_columns))

    per_table: list[list[ColumnDef]] = [[] for _ in table_names]
    for idx, (tbl_idx, col_name) in enumerate(raw_columns):
        if tbl_idx == -1:
            continue  # the [-1, "*"] sentinel
        if not 0 <= tbl_idx < len(table_names):
            raise SchemaValidationError(
                f"{db_id}: column {idx} references unknown table index {tbl_idx}"
            )
        kind = map_column_type(str(column_types[idx])) if idx < len(column_types) else "other"
        per_table[tbl_idx].append(ColumnDef(name=col_name, data_type=kind, original_name=col_name))

    tables = tuple(
        TableDef(name=name, columns=tuple(cols)) for name, cols in zip(table_names, per_table)
    )

    def column_ref(col_idx: int, what: str) -> KeyRef:
        if not 0 <= col_idx < len(raw_columns) or raw_columns[col_idx][0] == -1:
            raise SchemaValidationError(f"{db_id}: {what} column index {col_idx} out of range")
        tbl_idx, col_name = raw_columns[col_idx]
        return KeyRef(table=table_names[tbl_idx], column=col_name)

    primary_keys = []
    for pk in entry.get("primary_keys", []):
        # some catalogs list composite keys as nested lists
        cols = pk if isinstance(pk, list) else [pk]
        for col_idx in cols:
            primary_keys.append(column_ref(col_idx, "primary key"))

    foreign_keys = []
    for pair in entry.get("foreign_keys", []):
        child_idx, parent_idx = pair
        foreign_keys.append(
            ForeignKey(
                child=column_ref(child_idx, "foreign key"),
                parent=column_ref(parent_idx, "foreign key"),
            )
        )

    return DatabaseSchema(
        db_id=db_id,
        tables=tables,
        primary_keys=tuple(primary_keys),
        foreign_keys=tuple(foreign_keys),
    )


def load_schemas(path: str | Path) -> list[DatabaseSchema]:
    """Load a Spider/BIRD-layout schema catalog file."""
    with open(path, encoding="utf-8") as fp:
        entries = json.load(fp)
    schemas = []
    seen: set[str] = set()
    for entry in entries:
        schema = _catalog_entry_to_schema(entry)
        if schema.db_id in seen:
            raise SchemaValidationError(f"duplicate db_id {schema.db_id!r} in catalog")
        seen.add(schema.db_id)
        schemas.append(schema)
    return schemas


def _example_from_record(ordinal: int, rec: dict, bundle: DatasetBundle) -> ExampleTriple:
    db_id = rec.get("db_id")
    question = rec.get("question")
    # BIRD releases carry the gold query under "SQL"
    sql = rec.get("query", rec.get("SQL"))
    if not db_id or db_id not in bundle.schemas:
        raise ExampleValidationError(f"record {ordinal}: unknown db_id {db_id!r}")
    if not question:
        raise ExampleValidationError(f"record {ordinal}: missing question")
    if not sql:
        raise ExampleValidationError(f"record {ordinal}: missing SQL query")
    difficulty = None
    evidence = None
    if bundle.dialect == BIRD:
        evidence = rec.get("evidence") or None
        raw_label = rec.get("difficulty")
        if raw_label:
            if raw_label not in BIRD_LABELS:
                raise ExampleValidationError(
                    f"record {ordinal}: difficulty {raw_label!r} not in {BIRD_LABELS}"
                )
            difficulty = DifficultyLabel(scheme="bird3", label=raw_label)
    return ExampleTriple(
        index=ordinal,
        question=question,
        gold_sql=sql,
        db_id=db_id,
        difficulty=difficulty,
        evidence=evidence,
    )


def load_examples(path: str | Path, bundle: DatasetBundle) -> list[ExampleTriple]:
    """Load an examples file against an already-loaded bundle's schemas."""
    with open(path, encoding="utf-8") as fp:
        records = json.load(fp)
    return [_example_from_record(i, rec, bundle) for i, rec in enumerate(records)]


def discover_db_files(db_dir: str | Path, db_ids: list[str]) -> dict[str, Path]:
    """Find SQLite files under the datasets' ``{db_dir}/{db_id}/{db_id}.sqlite`` layout.

    A flat ``{db_dir}/{db_id}.sqlite`` layout is accepted too. Missing files are
    simply absent from the result; EX scoring reports them as unavailable.
    """
    root = Path(db_dir)
    found: dict[str, Path] = {}
    for db_id in db_ids:
        for candidate in (root / db_id / f"{db_id}.sqlite", root / f"{db_id}.sqlite"):
            if candidate.is_file():
                found[db_id] = candidate
                break
    return found


def load_bundle(
    name: str,
    dialect: str,
    tables_path: str | Path,
    split_paths: dict[str, str | Path],
    db_dir: str | Path | None = None,
) -> DatasetBundle:
    """Load schemas plus splits into a validated, immutable-after-load bundle."""
    if dialect not in DIALECTS:
        raise DatasetError(f"unknown dialect {dialect!r}")
    for split in split_paths:
        if split not in ("train", "dev", "test"):
            raise DatasetError(f"unknown split name {split!r}")
    bundle = DatasetBundle(name=name, dialect=dialect)
    for schema in load_schemas(tables_path):
        bundle.schemas[schema.db_id] = schema
    for split, path in split_paths.items():
        bundle.splits[split] = load_examples(path, bundle)
    if db_dir is not None:
        bundle.db_files = discover_db_files(db_dir, sorted(bundle.schemas))
    return bundle


def validate_dataset(
    name: str,
    dialect: str,
    tables_path: str | Path,
    split_paths: dict[str, str | Path],
    db_dir: str | Path | None = None,
) -> tuple[DatasetBundle | None, list[str]]:
    """Load a bundle while collecting every validation failure instead of
    stopping at the first. Returns (bundle, errors); the bundle is None only
    when the catalog itself is unreadable."""
    errors: list[str] = []
    bundle = DatasetBundle(name=name, dialect=dialect)
    try:
        with open(tables_path, encoding="utf-8") as fp:
            entries = json.load(fp)
    except (OSError, ValueError) as exc:
        return None, [f"schema catalog {tables_path}: {exc}"]
    for pos, entry in enumerate(entries):
        try:
            schema = _catalog_entry_to_schema(entry)
            if schema.db_id in bundle.schemas:
                raise SchemaValidationError(f"duplicate db_id {schema.db_id!r}")
            bundle.schemas[schema.db_id] = schema
        except (SchemaValidationError, KeyError, TypeError, ValueError) as exc:
            errors.append(f"catalog entry {pos}: {exc}")
    for split, path in split_paths.items():
        try:
            with open(path, encoding="utf-8") as fp:
                records = json.load(fp)
        except (OSError, ValueError) as exc:
            errors.append(f"split {split} ({path}): {exc}")
            continue
        rows = []
        for ordinal, rec in enumerate(records):
            try:
                rows.append(_example_from_record(ordinal, rec, bundle))
            except ExampleValidationError as exc:
                errors.append(f"split {split}: {exc}")
        bundle.splits[split] = rows
    if db_dir is not None:
        bundle.db_files = discover_db_files(db_dir, sorted(bundle.schemas))
    return bundle, errors


_SQLITE_LIST_TABLES = (
    "SELECT name FROM sqlite_master WHERE type = 'table'"
    " AND name NOT LIKE 'sqlite_%' ORDER BY rowid"
)


def introspect_database(db_file: str | Path) -> DatabaseSchema:
    """Extract a DatabaseSchema from a SQLite file's own metadata."""
    path = Path(db_file)
    if not path.is_file():
        raise OSError(f"database file not found: {path}")
    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    try:
        names = [row[0] for row in conn.execute(_SQLITE_LIST_TABLES)]
        tables = []
        primary_keys: list[KeyRef] = []
        foreign_keys: list[ForeignKey] = []
        pk_by_table: dict[str, list[tuple[int, str]]] = {}
        for name in names:
            cols = []
            for _, col_name, decltype, _, _, pk_order in conn.execute(
                f'PRAGMA table_info("{name}")'
            ):
                cols.append(
                    ColumnDef(
                        name=col_name,
                        data_type=map_column_type(decltype or ""),
                        original_name=col_name,
                    )
                )
                if pk_order:
                    pk_by_table.setdefault(name, []).append((pk_order, col_name))
            tables.append(TableDef(name=name, columns=tuple(cols)))
        for name in names:
            for _, col_name in sorted(pk_by_table.get(name, [])):
                primary_keys.append(KeyRef(table=name, column=col_name))
        schema_index = {t.name: t for t in tables}
        for name in names:
            rows = sorted(conn.execute(f'PRAGMA foreign_key_list("{name}")'))
            for _, _, parent, child_col, parent_col, *_ in rows:
                if parent_col is None:
                    # implicit reference to the parent's primary key
                    pk_cols = sorted(pk_by_table.get(parent, []))
                    parent_col = pk_cols[0][1] if pk_cols else None
                if parent_col is None or parent not in schema_index:
                    raise SchemaValidationError(
                        f"{path.stem}: unresolvable foreign key on {name}.{child_col}"
                    )
                foreign_keys.append(
                    ForeignKey(
                        child=KeyRef(table=name, column=child_col),
                        parent=KeyRef(table=parent, column=parent_col),
                    )
                )
    except sqlite3.Error as exc:
        raise OSError(f"cannot introspect {path}: {exc}") from exc
    finally:
        conn.close()
    return DatabaseSchema(
        db_id=path.stem,
        tables=tuple(tables),
        primary_keys=tuple(primary_keys),
        foreign_keys=tuple(foreign_keys),
    )


def schemas_equivalent(a: DatabaseSchema, b: DatabaseSchema) -> bool:
    """Structural equality up to identifier case-folding and key-list ordering."""

    def fold(schema: DatabaseSchema):
        return (
            [(t.name.lower(), [(c.name.lower(), c.data_type) for c in t.columns]) for t in schema.tables],
            sorted((r.table.lower(), r.column.lower()) for r in schema.primary_keys),
            sorted(
                (
                    fk.child.table.lower(),
                    fk.child.column.lower(),
                    fk.parent.table.lower(),
                    fk.parent.column.lower(),
                )
                for fk in schema.foreign_keys
            ),
        )

    return fold(a) == fold(b)

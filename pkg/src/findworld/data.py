"""Tabular datasets: schema, CSV ingestion, splitting and design matrices.

A :class:`Dataset` is an immutable column store. Every column is a read-only
numpy array whose dtype follows the column kind:

=============  ===========================================
kind           storage
=============  ===========================================
binary         int64, values in {0, 1}
count          int64, values >= 0
continuous     float64, finite
categorical    numpy unicode strings
=============  ===========================================
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

KINDS = ("binary", "count", "continuous", "categorical")
ROLES = ("pa", "confounder", "mediator", "target", "id", "ignore")
MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none"})
_TRUE = frozenset({"1", "1.0", "true", "t", "yes"})
_FALSE = frozenset({"0", "0.0", "false", "f", "no"})


@dataclass(frozen=True)
class Column:
    """One column of a schema.

    ``levels`` is optional. For binary columns it holds the two raw labels
    ``(negative, positive)`` stored as 0 and 1; for categorical columns it
    fixes the admissible values and their order (the first is the baseline
    in design matrices).
    """

    name: str
    kind: str
    role: str
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}; expected one of {ROLES}")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"column {self.name!r}: duplicate levels {self.levels}")
            if self.kind == "binary" and len(self.levels) != 2:
                raise SchemaError(f"column {self.name!r}: binary levels must be (negative, positive)")
            if self.kind in ("count", "continuous"):
                raise SchemaError(f"column {self.name!r}: levels only apply to binary/categorical columns")

    @property
    def is_numeric(self):
        return self.kind in ("count", "continuous")


@dataclass(frozen=True)
class Schema:
    """Ordered column declarations.

    Invariants: names are unique, at most one ``pa`` column and exactly one
    ``target`` column. ``require_target=False`` relaxes the target rule for
    prediction-time data that carries no outcome.
    """

    columns: tuple[Column, ...]
    require_target: bool = True

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names: {dupes}")
        n_target = sum(c.role == "target" for c in self.columns)
        n_pa = sum(c.role == "pa" for c in self.columns)
        if self.require_target and n_target != 1:
            raise SchemaError(f"schema needs exactly one target column, found {n_target}")
        if n_target > 1:
            raise SchemaError(f"schema has {n_target} target columns")
        if n_pa > 1:
            raise SchemaError(f"schema allows at most one pa column, found {n_pa}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def __contains__(self, name):
        return any(c.name == name for c in self.columns)

    def _role(self, role):
        found = [c.name for c in self.columns if c.role == role]
        return found[0] if found else None

    @property
    def target(self) -> str | None:
        return self._role("target")

    @property
    def pa(self) -> str | None:
        return self._role("pa")

    def with_roles(self, role: str) -> list[str]:
        return [c.name for c in self.columns if c.role == role]

    def without_target(self) -> "Schema":
        return Schema(tuple(c for c in self.columns if c.role != "target"), require_target=False)

    def replace_column(self, column: Column) -> "Schema":
        cols = tuple(column if c.name == column.name else c for c in self.columns)
        return Schema(cols, require_target=self.require_target)

    def to_dict(self):
        return [
            {"name": c.name, "kind": c.kind, "role": c.role, **({"levels": list(c.levels)} if c.levels else {})}
            for c in self.columns
        ]

    @classmethod
    def from_dict(cls, items: Iterable[Mapping], require_target=True) -> "Schema":
        cols = []
        for item in items:
            missing = {"name", "kind", "role"} - set(item)
            if missing:
                raise SchemaError(f"schema column entry {dict(item)!r} lacks {sorted(missing)}")
            cols.append(Column(str(item["name"]), item["kind"], item["role"], item.get("levels")))
        return cls(tuple(cols), require_target=require_target)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of ``n`` rows conforming to ``schema``.

    ``index`` carries the 0-based position of each row in the source file;
    it survives splitting and is used to derive per-row random substreams.
    """

    schema: Schema
    columns: Mapping[str, np.ndarray]
    index: np.ndarray = None
    dropped: int = 0
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        cols = {}
        n = None
        for c in self.schema.columns:
            if c.name not in self.columns:
                raise SchemaError(f"dataset lacks column {c.name!r}")
            arr = np.asarray(self.columns[c.name])
            if arr.ndim != 1:
                raise DataError(f"column {c.name!r} must be one-dimensional")
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise DataError(f"column {c.name!r} has {len(arr)} rows, expected {n}")
            cols[c.name] = _freeze(_coerce(c, arr))
        n = n or 0
        object.__setattr__(self, "columns", cols)
        index = np.arange(n) if self.index is None else np.asarray(self.index, dtype=np.int64)
        if len(index) != n:
            raise DataError("index length does not match row count")
        object.__setattr__(self, "index", _freeze(index))

    @property
    def n(self) -> int:
        return len(self.index)

    def __len__(self):
        return self.n

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"unknown column {name!r}") from None

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.schema,
            {k: v[rows] for k, v in self.columns.items()},
            index=self.index[rows],
            source=self.source,
        )

    def replace(self, updates: Mapping[str, np.ndarray], schema: Schema | None = None) -> "Dataset":
        """Return a copy with some columns swapped out."""
        cols = dict(self.columns)
        cols.update(updates)
        return Dataset(schema or self.schema, cols, index=self.index, dropped=self.dropped, source=self.source)

    def drop_target(self) -> "Dataset":
        schema = self.schema.without_target()
        return Dataset(schema, {k: self.columns[k] for k in schema.names}, index=self.index, source=self.source)

    def equals(self, other: "Dataset") -> bool:
        """Exact equality of schema, index and every cell."""
        if self.schema != other.schema or not np.array_equal(self.index, other.index):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.schema.names)

    def rows(self) -> list[dict]:
        return [{k: self.columns[k][i].item() for k in self.schema.names} for i in range(self.n)]


def _coerce(col: Column, arr: np.ndarray) -> np.ndarray:
    if col.kind == "categorical":
        return arr.astype(str)
    if col.kind == "continuous":
        out = arr.astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise DataError(f"column {col.name!r}: non-finite values")
        return out
    out = arr.astype(np.float64) if arr.dtype.kind not in "iub" else arr
    if out.dtype.kind == "f":
        if not np.all(np.isfinite(out)) or np.any(out != np.round(out)):
            raise DataError(f"column {col.name!r}: {col.kind} values must be integers")
    out = out.astype(np.int64)
    if col.kind == "binary" and np.any((out != 0) & (out != 1)):
        raise DataError(f"column {col.name!r}: binary values must be 0/1")
    if col.kind == "count" and np.any(out < 0):
        raise DataError(f"column {col.name!r}: count values must be non-negative")
    return out


def _parse_cell(col: Column, raw: str, line: int):
    text = raw.strip()
    try:
        if col.kind == "categorical":
            if col.levels is not None and text not in col.levels:
                raise ValueError(f"level {text!r} not in declared levels {list(col.levels)}")
            return text
        if col.kind == "binary":
            if col.levels is not None:
                if text == col.levels[0]:
                    return 0
                if text == col.levels[1]:
                    return 1
                raise ValueError(f"expected one of {list(col.levels)}")
            low = text.lower()
            if low in _TRUE:
                return 1
            if low in _FALSE:
                return 0
            raise ValueError("expected 0/1")
        value = float(text)
        if not math.isfinite(value):
            raise ValueError("non-finite number")
        if col.kind == "count":
            if value < 0 or value != int(value):
                raise ValueError("expected a non-negative integer")
            return int(value)
        return value
    except ValueError as exc:
        raise DataError(f"line {line}, column {col.name!r}: cannot parse {raw!r} as {col.kind} ({exc})") from None


def load_csv(path, schema: Schema) -> Dataset:
    """Read a CSV file into a :class:`Dataset`.

    The header must contain every schema column (order is free; extra columns
    are ignored). Rows holding a missing token in any schema column are
    dropped and counted in ``Dataset.dropped``.

    Raises
    ------
    SchemaError
        A schema column is absent from the header.
    DataError
        A cell cannot be parsed (message carries the line number) or no rows
        survive.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        missing = [c.name for c in schema.columns if c.name not in header]
        if missing:
            raise SchemaError(f"{path}: header lacks schema columns {missing}")
        positions = [(c, header.index(c.name)) for c in schema.columns]
        values = {c.name: [] for c in schema.columns}
        index = []
        dropped = 0
        for i, record in enumerate(reader):
            if not record:
                continue
            if len(record) < len(header):
                raise DataError(f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(record)}")
            if any(record[pos].strip().lower() in MISSING_TOKENS for _, pos in positions):
                dropped += 1
                continue
            for col, pos in positions:
                values[col.name].append(_parse_cell(col, record[pos], reader.line_num))
            index.append(i)
    if not index:
        raise DataError(f"{path}: no usable data rows ({dropped} dropped)")
    if dropped:
        log.info("%s: dropped %d rows with missing values", path, dropped)
    cols = {}
    for col in schema.columns:
        if col.kind == "categorical":
            cols[col.name] = np.array(values[col.name], dtype=str)
        elif col.kind == "continuous":
            cols[col.name] = np.array(values[col.name], dtype=np.float64)
        else:
            cols[col.name] = np.array(values[col.name], dtype=np.int64)
    return Dataset(schema, cols, index=np.array(index), dropped=dropped, source=str(path))


def format_value(col: Column, value) -> str:
    if col.kind == "binary" and col.levels is not None:
        return col.levels[int(value)]
    if col.kind == "continuous":
        return repr(float(value))
    if col.kind in ("binary", "count"):
        return str(int(value))
    return str(value)


def write_csv(d: Dataset, path, extra: Mapping[str, Sequence] | None = None) -> None:
    """Write ``d`` (plus optional extra columns) as an RFC-4180 CSV file."""
    extra = dict(extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(d.schema.names + list(extra))
        cols = [(c, d.columns[c.name]) for c in d.schema.columns]
        extras = [np.asarray(v) for v in extra.values()]
        for i in range(d.n):
            row = [format_value(c, arr[i]) for c, arr in cols]
            row += [_format_extra(arr[i]) for arr in extras]
            writer.writerow(row)


def _format_extra(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "" if np.isnan(value) else repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    return str(value)


def split(d: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random train/test partition with ``round(fraction * n)`` training rows.

    Rows keep their original relative order inside each part.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    if d.n < 2:
        raise ValueError("need at least two rows to split")
    n_train = int(math.floor(fraction * d.n + 0.5))
    n_train = min(max(n_train, 1), d.n - 1)
    perm = np.random.default_rng(seed).permutation(d.n)
    return d.take(np.sort(perm[:n_train])), d.take(np.sort(perm[n_train:]))


def recode_column(d: Dataset, name: str, groups: Mapping[str, Sequence[str] | str]) -> Dataset:
    """Map raw categorical values onto coarser labels.

    ``groups`` maps each new label to a list of raw values; a single label may
    use ``"*"`` to absorb every value not listed elsewhere.
    """
    col = d.schema.column(name)
    raw = d[name].astype(str) if col.kind != "binary" else np.array([format_value(col, v) for v in d[name]])
    lookup = {}
    wildcard = None
    for label, members in groups.items():
        if members == "*" or members == ["*"]:
            if wildcard is not None:
                raise SchemaError(f"recoding of {name!r}: more than one wildcard group")
            wildcard = str(label)
            continue
        for m in members:
            if str(m) in lookup:
                raise SchemaError(f"recoding of {name!r}: value {m!r} assigned twice")
            lookup[str(m)] = str(label)
    out = []
    for v in raw:
        if v in lookup:
            out.append(lookup[v])
        elif wildcard is not None:
            out.append(wildcard)
        else:
            raise DataError(f"column {name!r}: value {v!r} is not covered by the recoding")
    new_col = Column(name, "categorical", col.role, tuple(groups))
    return d.replace({name: np.array(out, dtype=str)}, schema=d.schema.replace_column(new_col))


@dataclass(frozen=True)
class FeatureEncoder:
    """Main-effects design matrix builder (no intercept column).

    Categorical features expand to treatment dummies against their first
    level; binary, count and continuous features enter as-is.
    """

    features: tuple[str, ...]
    levels: Mapping[str, tuple[str, ...]]

    @classmethod
    def fit(cls, d: Dataset, features: Sequence[str]) -> "FeatureEncoder":
        levels = {}
        for name in features:
            col = d.schema.column(name)
            if col.kind == "categorical":
                levels[name] = col.levels if col.levels else tuple(sorted(set(d[name].tolist())))
        return cls(tuple(features), levels)

    @property
    def names(self) -> list[str]:
        out = []
        for f in self.features:
            if f in self.levels:
                out.extend(f"{f}[{lvl}]" for lvl in self.levels[f][1:])
            else:
                out.append(f)
        return out

    def transform(self, d: Dataset | Mapping[str, np.ndarray], n: int | None = None) -> np.ndarray:
        """Design matrix for ``d``, a dataset or a plain column mapping of ``n`` rows."""
        n = d.n if n is None else n
        blocks = []
        for f in self.features:
            values = np.asarray(d[f])
            if f in self.levels:
                lv = self.levels[f]
                unseen = sorted(set(values.tolist()) - set(lv))
                if unseen:
                    raise DataError(f"column {f!r}: unseen categorical level(s) {unseen}")
                for lvl in lv[1:]:
                    blocks.append((values == lvl).astype(np.float64))
            else:
                blocks.append(values.astype(np.float64))
        if not blocks:
            return np.zeros((n, 0))
        return np.column_stack(blocks)

    def to_dict(self):
        return {"features": list(self.features), "levels": {k: list(v) for k, v in self.levels.items()}}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["features"]), {k: tuple(v) for k, v in data["levels"].items()})

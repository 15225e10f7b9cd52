"""Tabular data model, CSV ingestion, temporal splitting and group statistics."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

GROUPS = ("A", "B")
# In-memory encoding of the protected column: 1 for group A, 0 for group B.
GROUP_CODE = {"A": 1, "B": 0}

KINDS = ("real", "binary", "categorical", "group", "time")


class DataError(ValueError):
    """Base class for dataset construction and ingestion errors."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        text = message if not where else f"{message}, {', '.join(where)}"
        super().__init__(text)
        self.row = row
        self.column = column


class SchemaError(DataError):
    pass


class MissingColumnError(DataError):
    pass


class CellParseError(DataError):
    pass


class MissingValueError(DataError):
    pass


class LabelDomainError(DataError):
    pass


class GroupDomainError(DataError):
    pass


class UnsortedTimeError(DataError):
    pass


class SplitError(DataError):
    pass


@dataclass(frozen=True)
class DatasetSchema:
    """Declared column names and kinds, plus the roles of label/time/protected."""

    columns: tuple[tuple[str, str], ...]
    label: str
    time: str
    protected: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple((str(n), str(k)) for n, k in self.columns))
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        kinds = dict(self.columns)
        for name, kind in self.columns:
            if kind not in KINDS:
                raise SchemaError(f"unknown column kind {kind!r}", column=name)
        if self.label not in kinds:
            raise SchemaError("label column not declared", column=self.label)
        if self.time not in kinds:
            raise SchemaError("time-index column not declared", column=self.time)
        if kinds[self.label] != "binary":
            raise SchemaError("label column must be binary", column=self.label)
        if kinds[self.time] != "time":
            raise SchemaError("time-index column must have kind 'time'", column=self.time)
        if self.protected is not None:
            if self.protected not in kinds:
                raise SchemaError("protected column not declared", column=self.protected)
            if kinds[self.protected] != "group":
                raise SchemaError("protected column must have kind 'group'", column=self.protected)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    def kind(self, name: str) -> str:
        return dict(self.columns)[name]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


_DTYPES = {"real": np.float64, "binary": np.int8, "categorical": np.int64, "group": np.int8, "time": np.int64}


@dataclass(frozen=True)
class TabularDataset:
    """Immutable column store with a binary label, a time index and an optional group column.

    The protected column holds 1 for group A and 0 for group B. All arrays are
    read-only; transformations return new datasets.
    """

    columns: Mapping[str, np.ndarray]
    kinds: Mapping[str, str]
    label: str
    time: str
    protected: str | None = None
    n_rows: int = field(init=False)

    def __post_init__(self):
        if list(self.columns) != list(self.kinds):
            raise SchemaError("columns and kinds must list the same names in the same order")
        cols = {}
        for name, values in self.columns.items():
            kind = self.kinds[name]
            if kind not in KINDS:
                raise SchemaError(f"unknown column kind {kind!r}", column=name)
            arr = np.asarray(values)
            if arr.ndim != 1:
                raise SchemaError("columns must be one-dimensional", column=name)
            cols[name] = _freeze(arr.astype(_DTYPES[kind], copy=False))
        lengths = {len(v) for v in cols.values()}
        if len(lengths) > 1:
            raise SchemaError(f"columns have differing lengths {sorted(lengths)}")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "kinds", dict(self.kinds))
        object.__setattr__(self, "n_rows", lengths.pop() if lengths else 0)
        self.schema  # validates role names
        self._validate()

    def _validate(self):
        y = self.columns[self.label]
        bad = np.flatnonzero((y != 0) & (y != 1))
        if bad.size:
            raise LabelDomainError("label out of domain", row=int(bad[0]) + 1, column=self.label)
        t = self.columns[self.time]
        if t.size and t.min() < 0:
            raise DataError("negative time index", row=int(np.argmax(t < 0)) + 1, column=self.time)
        drops = np.flatnonzero(np.diff(t) < 0)
        if drops.size:
            raise UnsortedTimeError("time index not sorted", row=int(drops[0]) + 2, column=self.time)
        if self.protected is not None:
            z = self.columns[self.protected]
            bad = np.flatnonzero((z != 0) & (z != 1))
            if bad.size:
                raise GroupDomainError("group code out of domain", row=int(bad[0]) + 1, column=self.protected)
        for name, kind in self.kinds.items():
            if kind == "binary":
                v = self.columns[name]
                bad = np.flatnonzero((v != 0) & (v != 1))
                if bad.size:
                    raise CellParseError("binary value out of domain", row=int(bad[0]) + 1, column=name)
            elif kind == "real" and not np.all(np.isfinite(self.columns[name])):
                row = int(np.flatnonzero(~np.isfinite(self.columns[name]))[0]) + 1
                raise MissingValueError("non-finite value", row=row, column=name)

    @property
    def schema(self) -> DatasetSchema:
        return DatasetSchema(tuple(self.kinds.items()), self.label, self.time, self.protected)

    @property
    def y(self) -> np.ndarray:
        return self.columns[self.label]

    @property
    def z(self) -> np.ndarray:
        if self.protected is None:
            raise DataError("dataset has no protected column")
        return self.columns[self.protected]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def feature_names(self) -> list[str]:
        """Columns usable as model inputs: everything but label, time and protected."""
        skip = {self.label, self.time, self.protected}
        return [n for n in self.columns if n not in skip]

    def group_mask(self, group: str) -> np.ndarray:
        if group not in GROUP_CODE:
            raise GroupDomainError(f"unknown group {group!r}")
        return self.z == GROUP_CODE[group]

    def with_column(self, name: str, values, kind: str, protected: bool = False) -> "TabularDataset":
        if name in self.columns:
            raise SchemaError("column already present", column=name)
        columns = dict(self.columns)
        kinds = dict(self.kinds)
        columns[name] = values
        kinds[name] = kind
        return TabularDataset(columns, kinds, self.label, self.time, name if protected else self.protected)

    def with_protected(self, is_a: np.ndarray, name: str = "z") -> "TabularDataset":
        if self.protected is not None:
            raise SchemaError("protected column already present", column=self.protected)
        return self.with_column(name, np.asarray(is_a).astype(np.int8), "group", protected=True)

    def with_labels(self, y: np.ndarray) -> "TabularDataset":
        columns = dict(self.columns)
        columns[self.label] = y
        return TabularDataset(columns, self.kinds, self.label, self.time, self.protected)

    def replace_column(self, name: str, values) -> "TabularDataset":
        if name not in self.columns:
            raise MissingColumnError("no such column", column=name)
        columns = dict(self.columns)
        columns[name] = values
        return TabularDataset(columns, self.kinds, self.label, self.time, self.protected)

    def take(self, rows) -> "TabularDataset":
        rows = np.asarray(rows)
        columns = {n: v[rows] for n, v in self.columns.items()}
        return TabularDataset(columns, self.kinds, self.label, self.time, self.protected)

    def equals(self, other: "TabularDataset") -> bool:
        return (
            self.kinds == other.kinds
            and (self.label, self.time, self.protected) == (other.label, other.time, other.protected)
            and all(np.array_equal(self.columns[n], other.columns[n]) for n in self.columns)
        )


def _parse_cell(text: str, kind: str, row: int, column: str):
    if text == "":
        raise MissingValueError("missing value", row=row, column=column)
    if kind == "group":
        if text not in GROUP_CODE:
            raise GroupDomainError(f"group code {text!r} not in {{A, B}}", row=row, column=column)
        return GROUP_CODE[text]
    try:
        if kind == "real":
            value = float(text)
            if not np.isfinite(value):
                raise ValueError
            return value
        return int(text)
    except ValueError:
        raise CellParseError(f"cannot parse {text!r} as {kind}", row=row, column=column) from None


def load_csv(path: str | os.PathLike, schema: DatasetSchema) -> TabularDataset:
    """Read a CSV file with a mandatory header into a dataset, validating as it goes.

    Row numbers in error messages count data rows from 1 (the header is not a row).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        for name in schema.names:
            if name not in header:
                raise MissingColumnError("missing column", column=name)
        extra = [h for h in header if h not in schema.names]
        if extra:
            raise SchemaError(f"undeclared columns {extra}")
        position = {name: header.index(name) for name in schema.names}
        kinds = dict(schema.columns)
        values: dict[str, list] = {name: [] for name in schema.names}
        prev_t = None
        for row_no, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise CellParseError(f"expected {len(header)} cells, found {len(record)}", row=row_no)
            for name in schema.names:
                v = _parse_cell(record[position[name]], kinds[name], row_no, name)
                if name == schema.label and v not in (0, 1):
                    raise LabelDomainError("label out of domain", row=row_no, column=name)
                if kinds[name] == "binary" and v not in (0, 1):
                    raise CellParseError("binary value out of domain", row=row_no, column=name)
                if kinds[name] == "time":
                    if v < 0:
                        raise DataError("negative time index", row=row_no, column=name)
                    if prev_t is not None and v < prev_t:
                        raise UnsortedTimeError("time index not sorted", row=row_no, column=name)
                    prev_t = v
                values[name].append(v)
    columns = {name: np.asarray(values[name], dtype=_DTYPES[kinds[name]]) for name in schema.names}
    return TabularDataset(columns, kinds, schema.label, schema.time, schema.protected)


def _format_column(arr: np.ndarray, kind: str) -> list[str]:
    if kind == "real":
        return [repr(v) for v in arr.tolist()]
    if kind == "group":
        return ["A" if v else "B" for v in arr.tolist()]
    return [str(v) for v in arr.tolist()]


def dumps_csv(ds: TabularDataset) -> str:
    """Canonical CSV text: shortest round-trip float repr, integers, A/B group codes."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(ds.columns))
    cells = [_format_column(v, ds.kinds[n]) for n, v in ds.columns.items()]
    writer.writerows(zip(*cells))
    return buf.getvalue()


def write_csv(ds: TabularDataset, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_text(dumps_csv(ds), encoding="utf-8")
    return path


def infer_schema(
    path: str | os.PathLike, label: str = "y", time: str = "t", protected: str | None = None
) -> DatasetSchema:
    """Guess a schema from the header and cell contents of a CSV file.

    The protected column is taken to be ``protected`` if given, otherwise a
    column named ``z`` when present. Integer columns holding only 0/1 become
    binary, other integer columns categorical, anything else real.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        seen: dict[str, set] = {h: set() for h in header}
        is_int = {h: True for h in header}
        for record in reader:
            for h, cell in zip(header, record):
                if is_int[h]:
                    try:
                        int(cell)
                        if len(seen[h]) <= 2:
                            seen[h].add(cell)
                    except ValueError:
                        is_int[h] = False
    if protected is None and "z" in header:
        protected = "z"
    columns = []
    for h in header:
        if h == time:
            kind = "time"
        elif h == protected:
            kind = "group"
        elif is_int[h] and seen[h] <= {"0", "1"}:
            kind = "binary"
        elif is_int[h]:
            kind = "categorical"
        else:
            kind = "real"
        columns.append((h, kind))
    return DatasetSchema(tuple(columns), label, time, protected)


def temporal_split(ds: TabularDataset, train_fraction: float) -> tuple[TabularDataset, TabularDataset]:
    """Earliest ``ceil(train_fraction * n_rows)`` rows train, the rest test."""
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(np.ceil(train_fraction * ds.n_rows))
    if n_train <= 0 or n_train >= ds.n_rows:
        raise SplitError(
            f"train_fraction {train_fraction} on {ds.n_rows} rows leaves an empty side "
            f"({n_train} train / {ds.n_rows - n_train} test)"
        )
    rows = np.arange(ds.n_rows)
    return ds.take(rows[:n_train]), ds.take(rows[n_train:])


def prevalence(ds: TabularDataset, group: str | None = None) -> float:
    """Empirical P[Y=1], or P[Y=1 | Z=group] when ``group`` is given."""
    y = ds.y
    if group is not None:
        mask = ds.group_mask(group)
        if not mask.any():
            raise GroupDomainError(f"group {group!r} absent from data", column=ds.protected)
        y = y[mask]
    if y.size == 0:
        raise DataError("prevalence of an empty dataset is undefined")
    return int(y.sum()) / y.size


def group_fraction(ds: TabularDataset, group: str) -> float:
    if ds.n_rows == 0:
        raise DataError("group fraction of an empty dataset is undefined")
    return int(ds.group_mask(group).sum()) / ds.n_rows


def group_counts(ds: TabularDataset) -> dict[str, tuple[int, int]]:
    """(rows, positives) per group."""
    y = ds.y.astype(np.int64)
    out = {}
    for g in GROUPS:
        m = ds.group_mask(g)
        out[g] = (int(m.sum()), int(y[m].sum()))
    return out


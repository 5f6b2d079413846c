"""Binary-labeled datasets: CSV ingestion, normalization, dummy padding, relevance stats.

A dataset is a sequence of rows, each carrying k feature bits, a class bit and
a dummy flag.  Dummy rows are padding used to conceal true per-class counts;
they are ignored by every plaintext statistic and forced to be harmless in the
consistency machinery (any pair touching a dummy counts as distinguished).
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class DatasetError(Exception):
    """Base class for dataset ingestion/validation failures."""


class SchemaError(DatasetError):
    """Header does not provide the columns the schema asks for."""


class ParseError(DatasetError):
    """A cell is not a strict 0/1 value."""


class EmptyDatasetError(DatasetError):
    """An operation needs at least one non-dummy row."""


@dataclass(frozen=True)
class Row:
    features: tuple[int, ...]
    label: int
    dummy: int = 0

    def __post_init__(self) -> None:
        if any(b not in (0, 1) for b in self.features):
            raise ValueError("feature bits must be 0 or 1")
        if self.label not in (0, 1):
            raise ValueError("class bit must be 0 or 1")
        if self.dummy not in (0, 1):
            raise ValueError("dummy bit must be 0 or 1")


@dataclass(frozen=True)
class Dataset:
    rows: tuple[Row, ...]
    feature_count: int
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.feature_count < 0:
            raise ValueError("feature_count must be non-negative")
        if not self.feature_names:
            object.__setattr__(
                self,
                "feature_names",
                tuple(f"F{i}" for i in range(1, self.feature_count + 1)),
            )
        if len(self.feature_names) != self.feature_count:
            raise ValueError("feature_names length must equal feature_count")
        for r in self.rows:
            if len(r.features) != self.feature_count:
                raise ValueError("row width does not match feature_count")

    @property
    def k(self) -> int:
        return self.feature_count

    @property
    def n(self) -> int:
        """Number of class-1 rows, dummies included."""
        return sum(1 for r in self.rows if r.label == 1)

    @property
    def m(self) -> int:
        """Number of class-0 rows, dummies included."""
        return sum(1 for r in self.rows if r.label == 0)

    def positives(self) -> list[Row]:
        return [r for r in self.rows if r.label == 1]

    def negatives(self) -> list[Row]:
        return [r for r in self.rows if r.label == 0]

    def real_rows(self) -> list[Row]:
        return [r for r in self.rows if not r.dummy]


@dataclass(frozen=True)
class NormalizeResult:
    dataset: Dataset
    removed_contradictions: int
    removed_duplicates: int

    def summary(self) -> dict:
        return {
            "removed_contradictions": self.removed_contradictions,
            "removed_duplicates": self.removed_duplicates,
        }


@dataclass(frozen=True)
class RelevanceReport:
    feature_names: tuple[str, ...]
    values: tuple[float, ...]

    def items(self):
        return list(zip(self.feature_names, self.values))

    def as_json(self) -> list[dict]:
        return [
            {"feature": name, "value": round(value, 6)}
            for name, value in zip(self.feature_names, self.values)
        ]


def _parse_bit(text: str, row_no: int, col: str) -> int:
    value = text.strip()
    if value == "0":
        return 0
    if value == "1":
        return 1
    raise ParseError(f"row {row_no}, column {col!r}: expected 0 or 1, got {text!r}")


def load_dataset(source, class_col: str = "C", dummy_col: str | None = None) -> Dataset:
    """Read a header-first CSV into a Dataset.

    ``source`` may be a path or an open text stream.  Every column not named
    by ``class_col``/``dummy_col`` is a feature column, in header order.
    Cells are parsed strictly as 0/1.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", newline="") as fh:
            return load_dataset(fh, class_col=class_col, dummy_col=dummy_col)
    if isinstance(source, str):  # pragma: no cover - defensive
        source = io.StringIO(source)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("input has no header row") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    if class_col not in header:
        raise SchemaError(f"class column {class_col!r} not found in header {header}")
    if dummy_col is not None and dummy_col not in header:
        raise SchemaError(f"dummy column {dummy_col!r} not found in header {header}")

    feature_cols = [h for h in header if h != class_col and h != dummy_col]
    col_index = {h: i for i, h in enumerate(header)}

    rows: list[Row] = []
    for row_no, record in enumerate(reader, start=1):
        if not record or all(cell.strip() == "" for cell in record):
            continue
        if len(record) != len(header):
            raise ParseError(
                f"row {row_no}: expected {len(header)} cells, got {len(record)}"
            )
        features = tuple(
            _parse_bit(record[col_index[c]], row_no, c) for c in feature_cols
        )
        label = _parse_bit(record[col_index[class_col]], row_no, class_col)
        dummy = 0
        if dummy_col is not None:
            dummy = _parse_bit(record[col_index[dummy_col]], row_no, dummy_col)
        rows.append(Row(features, label, dummy))

    return Dataset(tuple(rows), len(feature_cols), tuple(feature_cols))


def normalize(d: Dataset) -> NormalizeResult:
    """Remove contradictions and duplicates among non-dummy rows.

    A group of non-dummy rows sharing one feature vector but carrying both
    class labels is removed entirely; within a consistent duplicate group only
    the first occurrence is kept.  Dummy rows pass through untouched.
    Idempotent; row order of survivors is preserved.
    """
    labels_by_vector: dict[tuple[int, ...], set[int]] = {}
    for r in d.rows:
        if r.dummy:
            continue
        labels_by_vector.setdefault(r.features, set()).add(r.label)

    kept: list[Row] = []
    seen: set[tuple[int, ...]] = set()
    removed_contra = 0
    removed_dups = 0
    for r in d.rows:
        if r.dummy:
            kept.append(r)
            continue
        if len(labels_by_vector[r.features]) > 1:
            removed_contra += 1
            continue
        if r.features in seen:
            removed_dups += 1
            continue
        seen.add(r.features)
        kept.append(r)

    out = Dataset(tuple(kept), d.feature_count, d.feature_names)
    return NormalizeResult(out, removed_contra, removed_dups)


def pad_with_dummies(d: Dataset, target_n: int, target_m: int, rng_seed: int) -> Dataset:
    """Append dummy rows until the per-class counts reach the targets.

    Dummy feature bits are uniform from the seeded generator; the class bit of
    each dummy is whatever target it fills.  Existing rows are untouched.
    """
    if target_n < d.n or target_m < d.m:
        raise ValueError(
            f"targets ({target_n},{target_m}) below actual counts ({d.n},{d.m})"
        )
    rng = random.Random(rng_seed)
    extra: list[Row] = []
    for _ in range(target_n - d.n):
        extra.append(Row(tuple(rng.randrange(2) for _ in range(d.k)), 1, dummy=1))
    for _ in range(target_m - d.m):
        extra.append(Row(tuple(rng.randrange(2) for _ in range(d.k)), 0, dummy=1))
    return Dataset(d.rows + tuple(extra), d.feature_count, d.feature_names)


def _entropy(counts: Sequence[int]) -> float:
    total = sum(counts)
    if total == 0:
        return 0.0
    h = 0.0
    for c in counts:
        if c:
            p = c / total
            h -= p * math.log2(p)
    return h


def mutual_information(d: Dataset) -> RelevanceReport:
    """Empirical I(F_i; C) in bits for every feature, dummy rows excluded."""
    rows = d.real_rows()
    if not rows:
        raise EmptyDatasetError("no non-dummy rows to compute statistics from")

    total = len(rows)
    class_counts = [sum(1 for r in rows if r.label == v) for v in (0, 1)]
    h_class = _entropy(class_counts)

    values: list[float] = []
    for i in range(d.k):
        h_cond = 0.0
        for v in (0, 1):
            matching = [r for r in rows if r.features[i] == v]
            if matching:
                h_cond += (len(matching) / total) * _entropy(
                    [sum(1 for r in matching if r.label == c) for c in (0, 1)]
                )
        values.append(h_class - h_cond)
    return RelevanceReport(d.feature_names, tuple(values))

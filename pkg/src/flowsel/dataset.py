"""CSV ingestion and preprocessing for labeled network-flow tables.

The cleaning pass follows the usual flow-record hygiene: drop environment-bound
columns (addresses, flow ids, timestamps), remove rows containing missing or
infinite cells, prune zero-variance columns, min-max normalize into [0, 1],
encode labels, and split train/test with a seeded shuffle.  Everything here
is deterministic given the seed.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError

# Columns that identify the capture environment rather than the traffic
# shape.  Destination port is deliberately not in this list: it carries
# service information.  Both space and dot spellings appear in the wild.
DEFAULT_DROP_COLUMNS = (
    "Flow ID",
    "Src IP",
    "Src Port",
    "Dst IP",
    "Timestamp",
    "Flow.ID",
    "Src.IP",
    "Src.Port",
    "Dst.IP",
)

_CACHE_MAGIC = b"FLOWDS01"


@dataclass(frozen=True)
class RawTable:
    """A parsed flow table: numeric feature columns plus one text label column.

    ``values`` is (rows, columns) float64 and may contain NaN or +/-inf;
    cleaning decides what to do with those, not the parser.
    """

    columns: tuple[str, ...]
    values: np.ndarray
    labels: tuple[str, ...]
    label_column: str

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Model-ready data: normalized features plus encoded labels.

    ``labels_cat`` indexes into ``class_names`` (sorted, benign included);
    ``labels_bin`` is True exactly where the row is not benign.
    """

    features: np.ndarray
    feature_names: tuple[str, ...]
    labels_cat: np.ndarray
    labels_bin: np.ndarray
    class_names: tuple[str, ...]

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset
    seed: int
    ratio: float


def _parse_cell(text: str, path: str, line_no: int, column: str) -> float:
    text = text.strip()
    if not text:
        return math.nan  # empty cell counts as missing
    try:
        # float() already understands the NaN / Infinity spellings
        # case-insensitively, which is exactly the token set we accept.
        return float(text)
    except ValueError:
        raise DataError(
            f"{path}:{line_no}: column {column!r} has non-numeric cell {text!r}"
        ) from None


def load_csv(path: str, label_column: str = "Label") -> RawTable:
    """Parse a headered CSV into a RawTable.

    Every non-label column must parse as a float (missing/inf tokens
    included); anything else raises DataError with the offending line
    number.  The label column is kept verbatim as text.
    """
    try:
        handle = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, no header row")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: header has no column named {label_column!r}")
        label_idx = header.index(label_column)
        feature_cols = tuple(h for i, h in enumerate(header) if i != label_idx)

        rows: list[list[float]] = []
        labels: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue  # ignore blank lines
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{line_no}: expected {len(header)} cells, got {len(row)}"
                )
            labels.append(row[label_idx].strip())
            rows.append(
                [
                    _parse_cell(cell, path, line_no, header[j])
                    for j, cell in enumerate(row)
                    if j != label_idx
                ]
            )
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_cols))
    return RawTable(feature_cols, values, tuple(labels), label_column)


def merge_tables(tables: list[RawTable]) -> RawTable:
    """Stack row-compatible tables (same columns, same label column)."""
    if not tables:
        raise DataError("no tables to merge")
    first = tables[0]
    for t in tables[1:]:
        if t.columns != first.columns:
            raise DataError(
                "tables disagree on columns; drop the extras before merging "
                f"({sorted(set(t.columns) ^ set(first.columns))})"
            )
        if t.label_column != first.label_column:
            raise DataError("tables disagree on the label column name")
    values = np.vstack([t.values for t in tables])
    labels = tuple(l for t in tables for l in t.labels)
    return RawTable(first.columns, values, labels, first.label_column)


def drop_named_columns(table: RawTable, names) -> RawTable:
    """Remove the listed columns; names absent from the table are skipped."""
    names = set(names)
    if table.label_column in names:
        raise DataError(f"cannot drop the label column {table.label_column!r}")
    keep = [i for i, c in enumerate(table.columns) if c not in names]
    if len(keep) == len(table.columns):
        return table
    return replace(
        table,
        columns=tuple(table.columns[i] for i in keep),
        values=table.values[:, keep],
    )


def drop_nonfinite_rows(table: RawTable) -> tuple[RawTable, int]:
    """Remove rows containing NaN or infinite cells; returns the removed count."""
    finite = np.isfinite(table.values).all(axis=1) if table.n_columns else np.ones(table.n_rows, bool)
    removed = int(np.count_nonzero(~finite))
    if removed == 0:
        return table, 0
    if not finite.any():
        raise DataError("every row has a missing or non-finite cell")
    kept_labels = tuple(l for l, ok in zip(table.labels, finite) if ok)
    return replace(table, values=table.values[finite], labels=kept_labels), removed


def drop_constant_columns(table: RawTable) -> tuple[RawTable, list[str]]:
    """Remove columns with a single distinct value; returns their names."""
    if table.n_rows == 0:
        raise DataError("cannot scan constant columns of an empty table")
    keep, dropped = [], []
    for i, name in enumerate(table.columns):
        col = table.values[:, i]
        if np.all(col == col[0]):
            dropped.append(name)
        else:
            keep.append(i)
    if not dropped:
        return table, []
    return (
        replace(
            table,
            columns=tuple(table.columns[i] for i in keep),
            values=table.values[:, keep],
        ),
        dropped,
    )


def minmax_normalize(train, apply_to=None):
    """Scale columns to [0, 1] using bounds fitted on ``train`` alone.

    ``apply_to`` (typically the test partition) is transformed with the
    train bounds and clamped into [0, 1].  Returns (train_scaled,
    apply_scaled_or_None, per-column (min, max) list).  A constant train
    column is an error: it should have been pruned earlier.
    """
    train = np.asarray(train, dtype=np.float64)
    lo = train.min(axis=0)
    hi = train.max(axis=0)
    span = hi - lo
    flat = np.flatnonzero(span == 0)
    if flat.size:
        raise DataError(
            f"column index(es) {flat.tolist()} are constant in the training rows; "
            "prune constants before normalizing"
        )
    train_scaled = (train - lo) / span
    apply_scaled = None
    if apply_to is not None:
        apply_to = np.asarray(apply_to, dtype=np.float64)
        apply_scaled = np.clip((apply_to - lo) / span, 0.0, 1.0)
    bounds = [(float(a), float(b)) for a, b in zip(lo, hi)]
    return train_scaled, apply_scaled, bounds


def encode_labels(table: RawTable, benign: str, grouping: dict | None = None):
    """Map label strings to class indices and a binary attack indicator.

    With ``grouping`` given, every raw label must appear in it; values are
    the class names actually used.  Class order is sorted name order.
    """
    if grouping is not None:
        missing = sorted({l for l in table.labels if l not in grouping})
        if missing:
            raise DataError(f"labels missing from the grouping map: {missing}")
        grouped = [grouping[l] for l in table.labels]
    else:
        grouped = list(table.labels)
    class_names = tuple(sorted(set(grouped)))
    if benign not in class_names:
        raise DataError(f"benign label {benign!r} does not occur in the data")
    index = {c: i for i, c in enumerate(class_names)}
    labels_cat = np.array([index[g] for g in grouped], dtype=np.int64)
    benign_idx = index[benign]
    labels_bin = labels_cat != benign_idx
    return labels_cat, labels_bin, class_names


def split_indices(n_rows: int, ratio: float, seed: int, stratified: bool = False, labels=None):
    """Seeded index partition; ``ratio`` is the train fraction.

    Stratified mode splits each class separately (single-row classes go to
    train with a warning).  Both sides stay non-empty.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    if n_rows < 2:
        raise DataError("need at least 2 rows to split")
    rng = np.random.default_rng(seed)
    if not stratified:
        perm = rng.permutation(n_rows)
        n_train = int(math.floor(n_rows * ratio + 0.5))
        n_train = min(max(n_train, 1), n_rows - 1)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])

    if labels is None:
        raise DataError("stratified split needs labels")
    labels = np.asarray(labels)
    train_parts, test_parts = [], []
    for cls in np.unique(labels):
        rows = rng.permutation(np.flatnonzero(labels == cls))
        if rows.size == 1:
            warnings.warn(
                f"class {cls!r} has a single row; assigning it to train", stacklevel=2
            )
            train_parts.append(rows)
            continue
        k = int(math.floor(rows.size * ratio + 0.5))
        k = min(max(k, 1), rows.size - 1)
        train_parts.append(rows[:k])
        test_parts.append(rows[k:])
    if not test_parts:
        raise DataError("stratified split produced an empty test side")
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.sort(np.concatenate(test_parts))
    return train_idx, test_idx


def _take(data: Dataset, idx) -> Dataset:
    return Dataset(
        data.features[idx],
        data.feature_names,
        data.labels_cat[idx],
        data.labels_bin[idx],
        data.class_names,
    )


def split(data: Dataset, ratio: float, seed: int, stratified: bool = False) -> SplitPair:
    """Partition an already-normalized Dataset into train and test."""
    train_idx, test_idx = split_indices(
        data.n_rows, ratio, seed, stratified, data.labels_cat if stratified else None
    )
    return SplitPair(_take(data, train_idx), _take(data, test_idx), seed, ratio)


def one_hot(labels_cat, class_names) -> np.ndarray:
    """Indicator matrix, one column per class, each row summing to 1."""
    labels = np.asarray(labels_cat, dtype=np.int64)
    n_classes = len(class_names)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError("class index out of range for the given class names")
    out = np.zeros((labels.size, n_classes), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def class_indicator_columns(data: Dataset, binary: bool):
    """Class columns for correlation work.

    Categorical mode one-hot encodes every class.  Binary mode collapses to
    a single attack indicator column instead of a redundant two-column
    encoding.  Returns (matrix, column names).
    """
    if binary:
        return data.labels_bin.astype(np.float64).reshape(-1, 1), ("attack",)
    return one_hot(data.labels_cat, data.class_names), data.class_names


def binary_view(data: Dataset, benign_name: str = "benign") -> Dataset:
    """Recast a dataset as two classes: benign versus pooled attack."""
    labels_cat = data.labels_bin.astype(np.int64)
    return Dataset(
        data.features,
        data.feature_names,
        labels_cat,
        data.labels_bin.copy(),
        (benign_name, "attack"),
    )


def clean_table(table: RawTable, drop_columns=DEFAULT_DROP_COLUMNS):
    """Run the column/row hygiene passes and report what was removed."""
    dropped_named = [c for c in table.columns if c in set(drop_columns)]
    t = drop_named_columns(table, drop_columns)
    t, removed_rows = drop_nonfinite_rows(t)
    t, dropped_const = drop_constant_columns(t)
    report = {
        "columns_dropped_named": dropped_named,
        "rows_removed_nonfinite": removed_rows,
        "columns_dropped_constant": dropped_const,
    }
    return t, report


def prepare_splits(
    table: RawTable,
    benign: str,
    grouping: dict | None = None,
    ratio: float = 0.5,
    seed: int = 0,
    stratified: bool = False,
    normalize_before_split: bool = False,
    drop_columns=DEFAULT_DROP_COLUMNS,
):
    """Full preprocessing: clean, encode, normalize, split.

    By default normalization bounds come from the training partition only
    and the test partition is clamped into [0, 1] with them.
    ``normalize_before_split`` instead fits the bounds on all rows before
    splitting, reproducing the simpler (leaky) ordering some studies use.
    Returns (SplitPair, report dict).
    """
    cleaned, report = clean_table(table, drop_columns)
    if cleaned.n_columns == 0:
        raise DataError("no feature columns survived cleaning")
    labels_cat, labels_bin, class_names = encode_labels(cleaned, benign, grouping)

    if normalize_before_split:
        scaled, _, bounds = minmax_normalize(cleaned.values)
        full = Dataset(scaled, cleaned.columns, labels_cat, labels_bin, class_names)
        pair = split(full, ratio, seed, stratified)
    else:
        train_idx, test_idx = split_indices(
            cleaned.n_rows, ratio, seed, stratified, labels_cat if stratified else None
        )
        train_scaled, test_scaled, bounds = minmax_normalize(
            cleaned.values[train_idx], cleaned.values[test_idx]
        )
        pair = SplitPair(
            Dataset(train_scaled, cleaned.columns, labels_cat[train_idx],
                    labels_bin[train_idx], class_names),
            Dataset(test_scaled, cleaned.columns, labels_cat[test_idx],
                    labels_bin[test_idx], class_names),
            seed,
            ratio,
        )

    report["normalization"] = {
        name: [lo, hi] for name, (lo, hi) in zip(cleaned.columns, bounds)
    }
    report["rows_total"] = cleaned.n_rows
    report["rows_train"] = pair.train.n_rows
    report["rows_test"] = pair.test.n_rows
    report["class_names"] = list(class_names)
    report["normalize_before_split"] = normalize_before_split
    report["stratified"] = stratified
    report["split_seed"] = seed
    report["split_ratio"] = ratio
    return pair, report


def save_dataset(data: Dataset, path: str) -> None:
    """Write a columnar binary cache: magic, JSON header, raw column blocks."""
    header = {
        "version": 1,
        "rows": int(data.n_rows),
        "feature_names": list(data.feature_names),
        "class_names": list(data.class_names),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        # column-major feature block, then the two label vectors
        fh.write(np.ascontiguousarray(data.features.T, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(data.labels_cat, dtype=np.int64).tobytes())
        fh.write(np.packbits(data.labels_bin.astype(np.uint8)).tobytes())


def load_dataset(path: str) -> Dataset:
    """Read back a cache written by save_dataset; validates magic and version."""
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot open dataset cache {path}: {exc}") from exc
    if raw[: len(_CACHE_MAGIC)] != _CACHE_MAGIC:
        raise DataError(f"{path}: not a dataset cache (bad magic)")
    off = len(_CACHE_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    if header.get("version") != 1:
        raise DataError(f"{path}: unsupported cache version {header.get('version')}")
    rows = header["rows"]
    names = tuple(header["feature_names"])
    classes = tuple(header["class_names"])
    p = len(names)
    feat_bytes = rows * p * 8
    feats = np.frombuffer(raw, dtype=np.float64, count=rows * p, offset=off)
    features = feats.reshape(p, rows).T.copy()
    off += feat_bytes
    labels_cat = np.frombuffer(raw, dtype=np.int64, count=rows, offset=off).copy()
    off += rows * 8
    packed = np.frombuffer(raw, dtype=np.uint8, offset=off)
    labels_bin = np.unpackbits(packed)[:rows].astype(bool)
    return Dataset(features, names, labels_cat, labels_bin, classes)

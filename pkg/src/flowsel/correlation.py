"""Spearman rank correlation and correlation-based subset scoring.

The correlation matrix covers the feature columns plus the class indicator
columns, which is exactly what the subset searchers consume.  Merit of a
subset follows the classic correlation-based feature selection form

    merit = k * r_cf / sqrt(k + k (k - 1) * r_ff)

with r_cf the mean |rho| between selected features and class columns, and
r_ff the mean |rho| over distinct selected-feature pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric Spearman matrix over [features | class columns].

    ``class_boundary`` is the index of the first class column; everything
    before it is a feature.
    """

    values: np.ndarray
    names: tuple[str, ...]
    class_boundary: int

    @property
    def n_features(self) -> int:
        return self.class_boundary

    @property
    def n_class_columns(self) -> int:
        return len(self.names) - self.class_boundary

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.names[: self.class_boundary]


@dataclass(frozen=True)
class CfsScore:
    merit: float
    k: int
    r_cf: float
    r_ff: float


def average_ranks(values) -> np.ndarray:
    """1-based fractional ranks; tied values share the mean of their ranks."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("average_ranks expects a 1-d array")
    n = values.size
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.arange(1, n + 1, dtype=np.float64)
    _, inverse = np.unique(values, return_inverse=True)
    sums = np.bincount(inverse, weights=ranks)
    counts = np.bincount(inverse)
    return (sums / counts)[inverse]


def spearman_matrix(features, class_columns, feature_names, class_names) -> CorrelationMatrix:
    """Spearman correlation over all feature and class columns.

    A constant feature column is an error (it should have been pruned);
    a constant class column (a class absent from this partition) gets
    correlation 0 against everything, by convention.
    """
    features = np.asarray(features, dtype=np.float64)
    class_columns = np.asarray(class_columns, dtype=np.float64)
    if features.ndim != 2 or class_columns.ndim != 2:
        raise DataError("feature and class columns must be 2-d")
    if features.shape[0] != class_columns.shape[0]:
        raise DataError("feature and class columns disagree on row count")
    if features.shape[0] < 2:
        raise DataError("need at least 2 rows for rank correlation")
    if features.shape[1] != len(feature_names) or class_columns.shape[1] != len(class_names):
        raise DataError("column name counts do not match the matrices")

    constant_feats = [
        feature_names[j]
        for j in range(features.shape[1])
        if np.all(features[:, j] == features[0, j])
    ]
    if constant_feats:
        raise DataError(f"constant feature column(s): {constant_feats}")

    stacked = np.hstack([features, class_columns])
    m = stacked.shape[1]
    ranked = np.column_stack([average_ranks(stacked[:, j]) for j in range(m)])
    centered = ranked - ranked.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    safe = np.where(norms == 0, 1.0, norms)
    corr = (centered.T @ centered) / np.outer(safe, safe)
    corr[norms == 0, :] = 0.0
    corr[:, norms == 0] = 0.0
    corr = (corr + corr.T) / 2.0  # kill floating-point asymmetry exactly
    np.clip(corr, -1.0, 1.0, out=corr)
    np.fill_diagonal(corr, 1.0)
    names = tuple(feature_names) + tuple(class_names)
    return CorrelationMatrix(corr, names, features.shape[1])


def merit_formula(k: int, r_cf: float, r_ff: float) -> float:
    """The bare merit expression; k = 0 is 0 by convention."""
    if k == 0:
        return 0.0
    return k * r_cf / math.sqrt(k + k * (k - 1) * r_ff)


def _merit_parts(fc_rowsum, ff, n_class_cols, mask):
    """Shared arithmetic so every merit caller produces identical floats."""
    m = mask.astype(np.float64)
    k = int(m.sum())
    if k == 0:
        return 0.0, 0, 0.0, 0.0
    r_cf = float(m @ fc_rowsum) / (k * n_class_cols)
    if k == 1:
        r_ff = 0.0
    else:
        r_ff = float(m @ ff @ m) / (k * (k - 1))
    return merit_formula(k, r_cf, r_ff), k, r_cf, r_ff


def _abs_blocks(corr: CorrelationMatrix):
    b = corr.class_boundary
    a = np.abs(corr.values)
    fc_rowsum = a[:b, b:].sum(axis=1)
    ff = a[:b, :b].copy()
    np.fill_diagonal(ff, 0.0)
    return fc_rowsum, ff


def cfs_merit(corr: CorrelationMatrix, indices) -> CfsScore:
    """Score a feature subset given by indices into the matrix's features.

    Order and duplicates in ``indices`` do not matter.  The empty subset
    scores 0.
    """
    idx = sorted(set(int(i) for i in indices))
    if idx and (idx[0] < 0 or idx[-1] >= corr.class_boundary):
        raise DataError(f"subset index out of feature range: {idx}")
    if corr.n_class_columns < 1:
        raise DataError("correlation matrix has no class columns")
    mask = np.zeros(corr.class_boundary, dtype=bool)
    mask[idx] = True
    fc_rowsum, ff = _abs_blocks(corr)
    merit, k, r_cf, r_ff = _merit_parts(fc_rowsum, ff, corr.n_class_columns, mask)
    return CfsScore(merit, k, r_cf, r_ff)


class MeritEvaluator:
    """Precomputed merit scorer for the subset searchers.

    Holds the absolute feature-class row sums and the zero-diagonal
    absolute feature-feature block so a mask scores in a few vector ops.
    Counts every evaluation.
    """

    def __init__(self, corr: CorrelationMatrix):
        if corr.class_boundary < 1:
            raise DataError("correlation matrix has no feature columns")
        if corr.n_class_columns < 1:
            raise DataError("correlation matrix has no class columns")
        self._fc_rowsum, self._ff = _abs_blocks(corr)
        self._n_class_cols = corr.n_class_columns
        self.n_features = corr.class_boundary
        self.evaluations = 0

    def merit_of_mask(self, mask) -> float:
        self.evaluations += 1
        merit, _, _, _ = _merit_parts(
            self._fc_rowsum, self._ff, self._n_class_cols, np.asarray(mask)
        )
        return merit


def ig_sum(importances, indices) -> float:
    """Total normalized importance captured by a subset."""
    imp = np.asarray(importances, dtype=np.float64)
    if imp.ndim != 1:
        raise DataError("importances must be a vector")
    if (imp < 0).any():
        raise DataError("importances must be nonnegative")
    if abs(float(imp.sum()) - 1.0) > 1e-9:
        raise DataError(f"importances must sum to 1, got {imp.sum()!r}")
    idx = sorted(set(int(i) for i in indices))
    if idx and (idx[0] < 0 or idx[-1] >= imp.size):
        raise DataError("subset index out of range for the importance vector")
    return float(imp[idx].sum())


def export_heatmap(corr: CorrelationMatrix, path: str) -> None:
    """Write the matrix as CSV plus a JSON sidecar with names and boundary.

    Floats are written with repr so a round-trip is lossless.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("name," + ",".join(corr.names) + "\n")
        for i, name in enumerate(corr.names):
            row = ",".join(repr(float(v)) for v in corr.values[i])
            fh.write(f"{name},{row}\n")
    meta = {
        "version": 1,
        "names": list(corr.names),
        "class_boundary": corr.class_boundary,
    }
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_heatmap(path: str) -> CorrelationMatrix:
    """Read back a matrix written by export_heatmap."""
    try:
        with open(path + ".meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataError(f"missing heatmap sidecar for {path}: {exc}") from exc
    if meta.get("version") != 1:
        raise DataError(f"unsupported heatmap version {meta.get('version')}")
    names = tuple(meta["names"])
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[1:] != list(names):
            raise DataError(f"{path}: header names disagree with the sidecar")
        for line in fh:
            cells = line.rstrip("\n").split(",")
            rows.append([float(c) for c in cells[1:]])
    values = np.array(rows, dtype=np.float64)
    if values.shape != (len(names), len(names)):
        raise DataError(f"{path}: expected a {len(names)}x{len(names)} matrix")
    return CorrelationMatrix(values, names, int(meta["class_boundary"]))

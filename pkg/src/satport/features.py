"""The 21-dimensional structural feature vector of a CNF instance."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO

import numpy as np

from .cnf import CnfFormula

__all__ = [
    "FEATURE_NAMES",
    "FRACTION_FEATURES",
    "FeatureVector",
    "extract_features",
    "read_features_csv",
    "write_features_csv",
]

LONG_CLAUSE_MIN = 5


class FeatureVector(NamedTuple):
    # basic scale
    num_variables: float
    num_clauses: float
    var_clause_ratio: float
    # clause structure
    avg_clause_length: float
    std_clause_length: float
    min_clause_length: float
    max_clause_length: float
    clause_length_entropy: float
    unit_clause_ratio: float
    binary_clause_ratio: float
    long_clause_ratio: float
    # variable activity
    avg_var_frequency: float
    std_var_frequency: float
    max_var_frequency: float
    var_frequency_entropy: float
    singleton_var_ratio: float
    # polarity
    positive_literal_ratio: float
    balanced_var_ratio: float
    pure_literal_ratio: float
    polarity_bias: float
    # complexity
    constraint_density: float

    def as_array(self) -> np.ndarray:
        return np.asarray(self, dtype=float)


FEATURE_NAMES: tuple[str, ...] = FeatureVector._fields

# Features that are proportions and therefore confined to [0, 1].
FRACTION_FEATURES: tuple[str, ...] = (
    "unit_clause_ratio",
    "binary_clause_ratio",
    "long_clause_ratio",
    "singleton_var_ratio",
    "positive_literal_ratio",
    "balanced_var_ratio",
    "pure_literal_ratio",
    "polarity_bias",
    "constraint_density",
)


def _entropy(counts: np.ndarray) -> float:
    counts = counts[counts > 0]
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    # max() clamps the -0.0 produced by a single-bin histogram.
    return max(0.0, float(-(p * np.log(p)).sum()))


def extract_features(formula: CnfFormula) -> FeatureVector:
    """Compute the feature vector of ``formula``.

    Degenerate formulas (no clauses or no variables) yield zeros for every
    derived statistic instead of NaN.
    """
    n = formula.num_variables
    m = formula.num_clauses
    total = formula.total_literals
    if m == 0 or total == 0:
        return FeatureVector(float(n), float(m), *([0.0] * 19))

    lengths = formula.clause_lengths
    lits = formula.literals
    var = np.abs(lits)
    positive = lits > 0
    pos_count = np.bincount(var[positive], minlength=n + 1)[1:]
    neg_count = np.bincount(var[~positive], minlength=n + 1)[1:]
    freq = pos_count + neg_count

    pos_ratio = float(positive.sum()) / total
    return FeatureVector(
        num_variables=float(n),
        num_clauses=float(m),
        var_clause_ratio=n / m,
        avg_clause_length=float(lengths.mean()),
        std_clause_length=float(lengths.std()),
        min_clause_length=float(lengths.min()),
        max_clause_length=float(lengths.max()),
        clause_length_entropy=_entropy(np.bincount(lengths)),
        unit_clause_ratio=float((lengths == 1).sum()) / m,
        binary_clause_ratio=float((lengths == 2).sum()) / m,
        long_clause_ratio=float((lengths >= LONG_CLAUSE_MIN).sum()) / m,
        avg_var_frequency=float(freq.mean()),
        std_var_frequency=float(freq.std()),
        max_var_frequency=float(freq.max()),
        var_frequency_entropy=_entropy(freq),
        singleton_var_ratio=float((freq == 1).sum()) / n,
        positive_literal_ratio=pos_ratio,
        balanced_var_ratio=float((pos_count == neg_count).sum()) / n,
        pure_literal_ratio=float(((pos_count == 0) != (neg_count == 0)).sum()) / n,
        polarity_bias=abs(pos_ratio - 0.5) * 2.0,
        constraint_density=total / (n * m),
    )


def write_features_csv(rows: Iterable[tuple[str, FeatureVector]], path: str | Path | TextIO) -> None:
    """One row per instance; ``path`` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_rows(rows, path)  # type: ignore[arg-type]
        return
    with open(path, "w", newline="") as fh:
        _write_rows(rows, fh)


def _write_rows(rows: Iterable[tuple[str, FeatureVector]], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("instance",) + FEATURE_NAMES)
    for instance, fv in rows:
        writer.writerow([instance] + [repr(float(x)) for x in fv])


def read_features_csv(path: str | Path) -> dict[str, FeatureVector]:
    out: dict[str, FeatureVector] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FEATURE_NAMES) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"feature CSV lacks columns: {sorted(missing)}")
        for row in reader:
            values = [float(row[name]) for name in FEATURE_NAMES]
            if not all(math.isfinite(v) for v in values):
                raise ValueError(f"non-finite feature for {row['instance']}")
            out[row["instance"]] = FeatureVector(*values)
    return out

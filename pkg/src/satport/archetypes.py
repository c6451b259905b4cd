"""Problem archetypes: named feature predicates that carve training subsets."""

from __future__ import annotations

import json
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .features import FEATURE_NAMES, FeatureVector

__all__ = [
    "Archetype",
    "Condition",
    "default_archetypes",
    "filter_subset",
    "load_archetypes",
    "nearest_rank",
    "save_archetypes",
]

DEFAULT_PERCENTILE = 67.0
_OPS = {">=": operator.ge, "<=": operator.le}


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (rank >= 1)."""
    if not values:
        raise ValueError("percentile of an empty sample")
    if not 0.0 <= percentile <= 100.0:
        raise ValueError("percentile must lie in [0, 100]")
    ordered = sorted(values)
    # Rounding first keeps e.g. 67/100 * 300 from landing just above an integer.
    rank = max(1, math.ceil(round(percentile / 100.0 * len(ordered), 9)))
    return ordered[rank - 1]


@dataclass(frozen=True)
class Condition:
    """``feature [/ denominator] op threshold``.

    The threshold is either a literal ``value`` or a ``percentile`` resolved
    against training data by :meth:`resolve`.
    """

    feature: str
    op: str = ">="
    value: float | None = None
    percentile: float | None = None
    denominator: str | None = None

    def __post_init__(self) -> None:
        for name in (self.feature, self.denominator):
            if name is not None and name not in FEATURE_NAMES:
                raise ValueError(f"unknown feature {name!r}")
        if self.op not in _OPS:
            raise ValueError(f"unsupported operator {self.op!r}")
        if self.value is None and self.percentile is None:
            raise ValueError("condition needs a value or a percentile")
        if self.value is not None and not math.isfinite(self.value):
            raise ValueError("threshold must be finite")

    def measure(self, v: FeatureVector) -> float:
        x = getattr(v, self.feature)
        if self.denominator is None:
            return x
        d = getattr(v, self.denominator)
        return x / d if d else math.inf

    def resolve(self, training: Sequence[FeatureVector]) -> "Condition":
        if self.percentile is None:
            return self
        sample = [self.measure(v) for v in training]
        finite = [x for x in sample if math.isfinite(x)]
        value = nearest_rank(finite or [0.0], self.percentile)
        return Condition(self.feature, self.op, value, self.percentile, self.denominator)

    def holds(self, v: FeatureVector) -> bool:
        if self.value is None:
            raise ValueError("condition threshold not resolved")
        return _OPS[self.op](self.measure(v), self.value)

    def to_json(self) -> dict:
        out: dict = {"feature": self.feature, "op": self.op}
        if self.denominator is not None:
            out["denominator"] = self.denominator
        if self.percentile is not None:
            out["percentile"] = self.percentile
        if self.value is not None:
            out["value"] = self.value
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "Condition":
        return cls(
            feature=data["feature"],
            op=data.get("op", ">="),
            value=None if data.get("value") is None else float(data["value"]),
            percentile=None if data.get("percentile") is None else float(data["percentile"]),
            denominator=data.get("denominator"),
        )


@dataclass(frozen=True)
class Archetype:
    id: str
    description: str
    conditions: tuple[Condition, ...] = field(default_factory=tuple)

    def resolve(self, training: Sequence[FeatureVector]) -> "Archetype":
        return Archetype(self.id, self.description, tuple(c.resolve(training) for c in self.conditions))

    def matches(self, v: FeatureVector) -> bool:
        return all(c.holds(v) for c in self.conditions)

    def to_json(self) -> dict:
        return {"id": self.id, "description": self.description,
                "conditions": [c.to_json() for c in self.conditions]}

    @classmethod
    def from_json(cls, data: Mapping) -> "Archetype":
        return cls(str(data["id"]), str(data.get("description", "")),
                   tuple(Condition.from_json(c) for c in data.get("conditions", [])))


ARCHETYPE_TEMPLATES = (
    Archetype(
        "highly-constrained",
        "Highly constrained instances: an extremely high clause-to-variable ratio, "
        "where search is dominated by conflicts and learned-clause quality.",
        (Condition("num_clauses", percentile=DEFAULT_PERCENTILE, denominator="num_variables"),),
    ),
    Archetype(
        "large-scale",
        "Large-scale instances with high numbers of both clauses and variables, "
        "where propagation cost and memory locality matter.",
        (Condition("num_variables", percentile=DEFAULT_PERCENTILE),
         Condition("num_clauses", percentile=DEFAULT_PERCENTILE)),
    ),
    Archetype(
        "heterogeneous",
        "Instances with heterogeneous clause structure: a large standard deviation "
        "in clause length, mixing short constraints with long ones.",
        (Condition("std_clause_length", percentile=DEFAULT_PERCENTILE),),
    ),
)

ALL_INSTANCES = Archetype("all", "", ())


def default_archetypes(training: Sequence[FeatureVector]) -> list[Archetype]:
    """The three standard archetypes with thresholds resolved on ``training``."""
    if len(training) < 3:
        raise ValueError("default archetypes need at least 3 training instances")
    return [a.resolve(training) for a in ARCHETYPE_TEMPLATES]


def filter_subset(
    archetype: Archetype, features: Mapping[str, FeatureVector]
) -> tuple[list[str], bool]:
    """Instance ids matching ``archetype``, in sorted order.

    Returns ``(ids, fell_back)``; an empty match falls back to every instance.
    """
    ids = sorted(i for i, v in features.items() if archetype.matches(v))
    if ids:
        return ids, False
    return sorted(features), True


def save_archetypes(archetypes: Sequence[Archetype], path: str | Path) -> None:
    Path(path).write_text(json.dumps([a.to_json() for a in archetypes], indent=2) + "\n")


def load_archetypes(path: str | Path) -> list[Archetype]:
    try:
        data = json.loads(Path(path).read_text())
        return [Archetype.from_json(a) for a in data]
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise ValueError(f"cannot load archetypes from {path}: {exc!r}") from None

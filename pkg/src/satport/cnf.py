"""CNF formulas: DIMACS parsing, serialization and assignment semantics.

A formula stores its clauses as one flat literal array plus clause offsets so
that large instances parse and featurize without per-literal Python loops.
"""

from __future__ import annotations

import gzip
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Assignment",
    "CnfFormula",
    "DimacsError",
    "UnassignedVariableError",
    "check_assignment",
    "parse_dimacs",
    "read_dimacs",
    "to_dimacs",
]


class DimacsError(ValueError):
    """Raised for malformed or semantically invalid DIMACS input."""


class UnassignedVariableError(ValueError):
    """Raised when a partial assignment is checked against a formula."""


@dataclass(frozen=True, eq=False)
class CnfFormula:
    """An immutable CNF formula.

    ``literals`` holds the signed variable indices of all clauses back to back;
    clause ``i`` is ``literals[offsets[i]:offsets[i + 1]]``. Empty clauses are
    never stored: their presence is recorded in ``has_empty_clause``.
    """

    num_variables: int
    literals: np.ndarray
    offsets: np.ndarray
    has_empty_clause: bool = False
    declared_clauses: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        self.literals.setflags(write=False)
        self.offsets.setflags(write=False)

    @classmethod
    def from_clauses(
        cls, num_variables: int, clauses: Iterable[Iterable[int]]
    ) -> "CnfFormula":
        """Build a formula from literal lists, validating like the parser does."""
        flat: list[int] = []
        lengths: list[int] = []
        empty = False
        for clause in clauses:
            lits = list(clause)
            if not lits:
                empty = True
                continue
            flat.extend(lits)
            lengths.append(len(lits))
        return _normalize(num_variables, np.asarray(flat, dtype=np.int64), lengths, empty)

    @property
    def num_clauses(self) -> int:
        return len(self.offsets) - 1

    @property
    def total_literals(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def clause_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def clauses(self) -> tuple[tuple[int, ...], ...]:
        flat = self.literals.tolist()
        bounds = self.offsets.tolist()
        return tuple(tuple(flat[bounds[i] : bounds[i + 1]]) for i in range(len(bounds) - 1))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CnfFormula):
            return NotImplemented
        return (
            self.num_variables == other.num_variables
            and self.has_empty_clause == other.has_empty_clause
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.literals, other.literals)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"CnfFormula(num_variables={self.num_variables}, "
            f"num_clauses={self.num_clauses}, total_literals={self.total_literals}"
            f"{', has_empty_clause=True' if self.has_empty_clause else ''})"
        )


def _normalize(
    num_variables: int, lits: np.ndarray, lengths: Sequence[int] | np.ndarray, empty: bool,
    declared: int | None = None,
) -> CnfFormula:
    if num_variables < 0:
        raise DimacsError(f"negative variable count {num_variables}")
    lengths = np.asarray(lengths, dtype=np.int64)
    if lits.size:
        if np.any(lits == 0):
            raise DimacsError("literal 0 inside a clause")
        bad = np.abs(lits) > num_variables
        if bad.any():
            raise DimacsError(
                f"literal {int(lits[np.argmax(bad)])} out of range for {num_variables} variables"
            )
    cid = np.repeat(np.arange(len(lengths)), lengths)
    # Stable sort by (clause, variable, sign) puts repeats and complements side by side.
    order = np.lexsort((lits, np.abs(lits), cid))
    s_lit, s_cid = lits[order], cid[order]
    same_var = (s_cid[1:] == s_cid[:-1]) & (np.abs(s_lit[1:]) == np.abs(s_lit[:-1]))
    taut = same_var & (s_lit[1:] != s_lit[:-1])
    if taut.any():
        at = int(np.argmax(taut))
        raise DimacsError(
            f"tautological clause {int(s_cid[at]) + 1}: contains both "
            f"{abs(int(s_lit[at]))} and -{abs(int(s_lit[at]))}"
        )
    keep = np.ones(lits.size, dtype=bool)
    keep[order[1:][same_var]] = False
    kept = lits[keep].astype(np.int32)
    new_lengths = np.bincount(cid[keep], minlength=len(lengths)) if lits.size else lengths
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(new_lengths, out=offsets[1:])
    return CnfFormula(num_variables, kept, offsets, bool(empty), declared)


_COMMENT = re.compile(rb"(?m)^[ \t]*c.*$")
_HEADER = re.compile(rb"(?m)^[ \t]*p\b.*$")
_END_MARKER = re.compile(rb"(?m)^[ \t]*%")


def parse_dimacs(data: bytes | str) -> CnfFormula:
    """Parse DIMACS CNF text (optionally gzip-compressed bytes)."""
    if isinstance(data, str):
        data = data.encode()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)

    end = _END_MARKER.search(data)
    if end is not None:
        data = data[: end.start()]
    data = _COMMENT.sub(b"", data)
    headers = list(_HEADER.finditer(data))
    if not headers:
        raise DimacsError("missing 'p cnf' header")
    if len(headers) > 1:
        raise DimacsError("duplicate 'p' header")
    match = headers[0]
    if data[: match.start()].strip():
        raise DimacsError("clause data before 'p cnf' header")
    parts = match.group(0).split()
    try:
        if len(parts) != 4 or parts[1] != b"cnf":
            raise ValueError
        header = (int(parts[2]), int(parts[3]))
    except ValueError:
        text = match.group(0).decode(errors="replace").strip()
        raise DimacsError(f"malformed header: {text!r}") from None
    if header[0] < 0 or header[1] < 0:
        raise DimacsError("negative counts in header")

    tokens = data[match.end() :].split()
    try:
        values = np.array(tokens, dtype=np.int64) if tokens else np.zeros(0, dtype=np.int64)
    except ValueError:
        raise DimacsError("non-integer token in clause data") from None
    if values.size and values[-1] != 0:
        raise DimacsError("last clause is missing its terminating 0")

    zeros = np.flatnonzero(values == 0)
    starts = np.concatenate(([0], zeros[:-1] + 1)) if zeros.size else np.zeros(0, dtype=np.int64)
    lengths = zeros - starts
    empty = bool(np.any(lengths == 0))
    lengths = lengths[lengths > 0]
    lits = values[values != 0]
    return _normalize(header[0], lits, lengths, empty, declared=header[1])


def read_dimacs(path: str | Path) -> CnfFormula:
    return parse_dimacs(Path(path).read_bytes())


def to_dimacs(formula: CnfFormula, comments: Sequence[str] = ()) -> str:
    lines = [f"c {c}" for c in comments]
    n_clauses = formula.num_clauses + (1 if formula.has_empty_clause else 0)
    lines.append(f"p cnf {formula.num_variables} {n_clauses}")
    lines.extend(" ".join(map(str, clause)) + " 0" for clause in formula.clauses)
    if formula.has_empty_clause:
        lines.append("0")
    return "\n".join(lines) + "\n"


@dataclass
class Assignment:
    """Tri-state values per variable plus the trail of (literal, level) steps."""

    num_variables: int
    values: list[bool | None] = field(default_factory=list)
    trail: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.values:
            self.values = [None] * self.num_variables
        elif len(self.values) != self.num_variables:
            raise ValueError("values length does not match num_variables")

    @classmethod
    def from_literals(cls, num_variables: int, literals: Iterable[int]) -> "Assignment":
        a = cls(num_variables)
        for lit in literals:
            a.assign(lit, 0)
        return a

    @classmethod
    def from_mapping(cls, num_variables: int, mapping: Mapping[int, bool]) -> "Assignment":
        return cls.from_literals(num_variables, (v if val else -v for v, val in mapping.items()))

    def value(self, var: int) -> bool | None:
        return self.values[var - 1]

    def assign(self, lit: int, level: int) -> None:
        var = abs(lit)
        if not 1 <= var <= self.num_variables:
            raise ValueError(f"variable {var} out of range")
        if self.values[var - 1] is not None:
            raise ValueError(f"variable {var} already assigned")
        if self.trail and level < self.trail[-1][1]:
            raise ValueError("trail levels must be non-decreasing")
        self.values[var - 1] = lit > 0
        self.trail.append((lit, level))

    def is_complete(self) -> bool:
        return all(v is not None for v in self.values)

    def literals(self) -> list[int]:
        return [v + 1 if val else -(v + 1) for v, val in enumerate(self.values) if val is not None]


def check_assignment(formula: CnfFormula, assignment: Assignment | Mapping[int, bool]) -> bool:
    """True iff every clause has a satisfied literal under a full assignment."""
    n = formula.num_variables
    if isinstance(assignment, Assignment):
        vals = assignment.values
        if len(vals) < n or any(vals[v] is None for v in range(n)):
            raise UnassignedVariableError("assignment leaves variables unassigned")
        truth = np.array([False] + [bool(v) for v in vals[:n]], dtype=bool)
    else:
        missing = [v for v in range(1, n + 1) if v not in assignment]
        if missing:
            raise UnassignedVariableError(f"variable {missing[0]} unassigned")
        truth = np.array([False] + [bool(assignment[v]) for v in range(1, n + 1)], dtype=bool)
    if formula.has_empty_clause:
        return False
    if formula.num_clauses == 0:
        return True
    lits = formula.literals
    sat = truth[np.abs(lits)] == (lits > 0)
    return bool(np.logical_or.reduceat(sat, formula.offsets[:-1]).all())

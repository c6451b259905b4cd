"""Synthetic DIMACS instance families for desk-scale experiments."""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .cnf import CnfFormula, to_dimacs

__all__ = ["GeneratorSpec", "bimodal_specs", "generate", "pigeonhole", "planted_sat", "random_ksat"]

FAMILIES = ("random-3sat", "planted-sat", "pigeonhole")


def _random_clause(rng: random.Random, n: int, k: int) -> list[int]:
    return [v if rng.random() < 0.5 else -v for v in rng.sample(range(1, n + 1), k)]


def random_ksat(n: int, m: int, seed: int, k: int = 3) -> CnfFormula:
    """m clauses over k distinct variables each, polarities uniform."""
    if n < k:
        raise ValueError(f"need at least {k} variables for {k}-SAT, got {n}")
    rng = random.Random(seed)
    return CnfFormula.from_clauses(n, [_random_clause(rng, n, k) for _ in range(m)])


def planted_sat(n: int, m: int, seed: int, k: int = 3) -> CnfFormula:
    """Random k-SAT conditioned on a hidden assignment; satisfiable by construction."""
    if n < k:
        raise ValueError(f"need at least {k} variables for {k}-SAT, got {n}")
    rng = random.Random(seed)
    hidden = [None] + [rng.random() < 0.5 for _ in range(n)]
    clauses: list[list[int]] = []
    while len(clauses) < m:
        clause = _random_clause(rng, n, k)
        if any(hidden[abs(l)] == (l > 0) for l in clause):
            clauses.append(clause)
    return CnfFormula.from_clauses(n, clauses)


def pigeonhole(holes: int) -> CnfFormula:
    """holes + 1 pigeons into ``holes`` holes; unsatisfiable for holes >= 1.

    Variable ``i * holes + j + 1`` means pigeon i sits in hole j.
    """
    if holes < 1:
        raise ValueError("pigeonhole needs at least one hole")
    pigeons = holes + 1

    def x(i: int, j: int) -> int:
        return i * holes + j + 1

    clauses = [[x(i, j) for j in range(holes)] for i in range(pigeons)]
    for j in range(holes):
        for a in range(pigeons):
            for b in range(a + 1, pigeons):
                clauses.append([-x(a, j), -x(b, j)])
    return CnfFormula.from_clauses(pigeons * holes, clauses)


@dataclass(frozen=True)
class GeneratorSpec:
    family: str
    n: int = 0
    m: int = 0
    holes: int = 0
    seed: int = 0
    count: int = 1

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown generator family {self.family!r}; choose from {FAMILIES}")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.family in ("random-3sat", "planted-sat"):
            if self.n < 3:
                raise ValueError("3-SAT generators need n >= 3")
            if self.m < 0:
                raise ValueError("m must be >= 0")
        elif self.holes < 1:
            raise ValueError("pigeonhole needs holes >= 1")

    def build(self, index: int = 0) -> tuple[str, CnfFormula]:
        seed = self.seed + index
        if self.family == "random-3sat":
            return f"random3sat-n{self.n}-m{self.m}-s{seed}", random_ksat(self.n, self.m, seed)
        if self.family == "planted-sat":
            return f"planted-n{self.n}-m{self.m}-s{seed}", planted_sat(self.n, self.m, seed)
        return f"pigeonhole-h{self.holes}", pigeonhole(self.holes)


def generate(spec: GeneratorSpec, out_dir: str | Path) -> list[Path]:
    """Write ``spec.count`` instances (seeds seed, seed+1, ...) as .cnf files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    count = 1 if spec.family == "pigeonhole" else spec.count
    for i in range(count):
        name, formula = spec.build(i)
        path = out / f"{name}.cnf"
        path.write_text(to_dimacs(formula, comments=[f"generated {name}"]))
        paths.append(path)
    return paths


def bimodal_specs(count: int, seed: int = 0) -> tuple[GeneratorSpec, GeneratorSpec]:
    """Two structurally distinct halves: sparse planted-SAT and dense random 3-SAT.

    Under conflict budgets of a few thousand, Luby-style restarts with sharp
    VSIDS decay do best on the sparse half, while eager LBD-driven restarts
    with frequency bumping do best on the dense half.
    """
    return (
        GeneratorSpec("planted-sat", n=200, m=800, seed=seed, count=count),
        GeneratorSpec("random-3sat", n=100, m=500, seed=seed, count=count),
    )

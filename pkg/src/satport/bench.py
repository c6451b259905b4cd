"""PAR-2 scoring, adaptive solving and benchmark reports across selection modes."""

from __future__ import annotations

import csv
import io
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .cnf import check_assignment, read_dimacs
from .features import FeatureVector, extract_features
from .heuristics import ConfigurationError, Portfolio
from .partition import ClusterMap, parse_mode, select_ensemble
from .runner import Runner
from .solver import Budget, SolveOutcome, Solver

__all__ = [
    "BenchReport",
    "BenchRow",
    "SolveReport",
    "comparison_table",
    "par2",
    "run_bench",
    "solve_instance",
]

VIRTUAL_BEST = "virtual-best"


def par2(results: Iterable[tuple[bool, float]], timeout: float) -> float:
    """Penalized average runtime: solved runs count their runtime, others 2 * timeout."""
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    total = 0.0
    n = 0
    for solved, runtime in results:
        n += 1
        if solved:
            if runtime < 0 or runtime > timeout:
                raise ValueError(f"solved runtime {runtime} outside [0, {timeout}]")
            total += runtime
        else:
            total += 2.0 * timeout
    if n == 0:
        raise ValueError("PAR-2 of an empty result list")
    return total / n


def _check_mode(mode: str) -> str:
    if mode != VIRTUAL_BEST:
        parse_mode(mode)
    return mode


# --------------------------------------------------------------------------
# Single-instance solving
# --------------------------------------------------------------------------


@dataclass
class SolveReport:
    instance: str
    selected: str
    outcome: SolveOutcome
    model_verified: bool | None
    feature_seconds: float
    selection_seconds: float

    @property
    def overhead(self) -> float:
        return self.feature_seconds + self.selection_seconds


def solve_instance(
    path: str | Path,
    cluster_map: ClusterMap,
    portfolio: Portfolio,
    mode: str = "adaptive",
    budget: Budget | None = None,
    seed: int = 42,
) -> SolveReport:
    """Extract features, pick an ensemble, solve and verify any model."""
    budget = budget or Budget(time_limit=1000.0)
    if mode == VIRTUAL_BEST:
        raise ConfigurationError("virtual-best needs the benchmark harness, not a single solve")
    t0 = time.perf_counter()
    formula = read_dimacs(path)
    features = extract_features(formula)
    t1 = time.perf_counter()
    selected = select_ensemble(cluster_map, features, mode, random.Random(seed))
    t2 = time.perf_counter()
    if selected not in portfolio:
        raise ConfigurationError(f"selected ensemble {selected} is not in the portfolio")
    outcome = Solver(formula, portfolio.get(selected), seed=seed).solve(budget)
    verified = None
    if outcome.model is not None:
        verified = check_assignment(formula, outcome.model_mapping())
    return SolveReport(str(path), selected, outcome, verified, t1 - t0, t2 - t1)


# --------------------------------------------------------------------------
# Benchmark reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    instance_id: str
    selected: str
    status: str
    runtime: float
    par2: float
    solved: bool


@dataclass
class BenchReport:
    mode: str
    budget: Budget
    seed: int
    rows: list[BenchRow]
    overhead: dict[str, float] = field(default_factory=dict)  # instance -> seconds

    @property
    def timeout(self) -> float:
        return self.budget.limit

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def solved(self) -> int:
        return sum(r.solved for r in self.rows)

    @property
    def par2(self) -> float:
        return par2(((r.solved, r.runtime) for r in self.rows), self.timeout)

    @property
    def mean_overhead(self) -> float:
        return sum(self.overhead.values()) / len(self.overhead) if self.overhead else 0.0

    def aggregate(self) -> dict[str, Any]:
        return {"N": self.n, "solved": self.solved, "par2": self.par2}

    def config(self) -> dict[str, Any]:
        return {"mode": self.mode, "timeout": self.timeout, "budget": self.budget.describe(),
                "seed": self.seed}

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["instance_id", "selected", "status", "runtime", "par2"])
        for r in self.rows:
            writer.writerow([r.instance_id, r.selected, r.status, repr(r.runtime), repr(r.par2)])
        return buf.getvalue()

    def to_json(self) -> dict[str, Any]:
        """Deterministic content only; wall-clock overhead lives in :meth:`timing_json`."""
        return {"config": self.config(), "aggregate": self.aggregate(),
                "rows": [{"instance_id": r.instance_id, "selected": r.selected, "status": r.status,
                          "runtime": r.runtime, "par2": r.par2} for r in self.rows]}

    def timing_json(self) -> dict[str, Any]:
        return {"mode": self.mode, "mean_selection_overhead": self.mean_overhead,
                "max_selection_overhead": max(self.overhead.values(), default=0.0),
                "per_instance": dict(sorted(self.overhead.items()))}

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = self.mode.replace(":", "-")
        paths = {
            "csv": out / f"report-{stem}.csv",
            "json": out / f"report-{stem}.json",
            "timing": out / f"timing-{stem}.json",
        }
        paths["csv"].write_text(self.to_csv_text())
        paths["json"].write_text(json.dumps(self.to_json(), indent=2) + "\n")
        paths["timing"].write_text(json.dumps(self.timing_json(), indent=2) + "\n")
        return paths


def comparison_table(reports: Sequence[BenchReport], timing: bool = True) -> str:
    """Human-readable side-by-side summary of several reports."""
    header = ["mode", "N", "solved", "PAR-2"] + (["overhead(s)"] if timing else [])
    lines = [header]
    for r in reports:
        row = [r.mode, str(r.n), str(r.solved), f"{r.par2:.2f}"]
        if timing:
            row.append(f"{r.mean_overhead:.4f}")
        lines.append(row)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)  # noqa: E731
                                  for i, (c, w) in enumerate(zip(cells, widths)))
    rule = "-" * len(fmt(header))
    return "\n".join([fmt(header), rule, *(fmt(line) for line in lines[1:])])


def run_bench(
    instances: Mapping[str, Path],
    cluster_map: ClusterMap,
    portfolio: Portfolio,
    modes: Sequence[str],
    runner: Runner,
    features: Mapping[str, FeatureVector] | None = None,
) -> list[BenchReport]:
    """One report per mode over ``instances``; solver runs are shared via the runner cache.

    Random mode draws from ``random.Random(runner.seed)`` once per instance in
    sorted id order. Virtual-best runs every portfolio ensemble and keeps the
    best cell per instance (smallest id on ties).
    """
    if not instances:
        raise ValueError("no benchmark instances")
    for mode in modes:
        _check_mode(mode)
    ids = sorted(instances)
    feats: dict[str, FeatureVector] = {}
    feature_time: dict[str, float] = {}
    for iid in ids:
        if features is not None and iid in features:
            feats[iid], feature_time[iid] = features[iid], 0.0
            continue
        t0 = time.perf_counter()
        feats[iid] = extract_features(read_dimacs(instances[iid]))
        feature_time[iid] = time.perf_counter() - t0

    reports = []
    for mode in modes:
        overhead: dict[str, float] = {}
        if mode == VIRTUAL_BEST:
            ensembles = sorted(portfolio.ensembles, key=lambda e: e.id)
            cells = runner.run([(e, iid) for iid in ids for e in ensembles], instances)
            k = len(ensembles)
            picked = []
            for j, iid in enumerate(ids):
                row_cells = cells[j * k:(j + 1) * k]
                picked.append(min(row_cells, key=lambda c: (c.par2, c.ensemble_id)))
                overhead[iid] = 0.0
        else:
            rng = random.Random(runner.seed)
            pairs = []
            for iid in ids:
                t0 = time.perf_counter()
                eid = select_ensemble(cluster_map, feats[iid], mode, rng)
                overhead[iid] = feature_time[iid] + time.perf_counter() - t0
                if eid not in portfolio:
                    raise ConfigurationError(f"selected ensemble {eid} is not in the portfolio")
                pairs.append((portfolio.get(eid), iid))
            picked = runner.run(pairs, instances)
        rows = [BenchRow(c.instance_id, c.ensemble_id, c.status, c.metric, c.par2, c.solved)
                for c in picked]
        reports.append(BenchReport(mode, runner.budget, runner.seed, rows, overhead))
    return reports

"""Execution of (ensemble, instance) solver runs with an optional on-disk cache.

Every run is a *cell*. Cells are keyed by ensemble id, instance id, budget and
seed; a :class:`CellStore` appends finished cells to a CSV file so interrupted
work resumes without re-solving anything.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

from .cnf import DimacsError, read_dimacs
from .heuristics import HeuristicEnsemble
from .solver import Budget, Solver, Status

__all__ = ["Cell", "CellStore", "Runner", "discover_instances", "par2_contribution"]

log = logging.getLogger(__name__)

ERROR = "ERROR"
INSTANCE_SUFFIXES = (".cnf", ".cnf.gz", ".dimacs", ".dimacs.gz")


def par2_contribution(solved: bool, metric: float, timeout: float) -> float:
    return float(metric) if solved else 2.0 * timeout


@dataclass(frozen=True)
class Cell:
    ensemble_id: str
    instance_id: str
    status: str  # SAT, UNSAT, TIMEOUT or ERROR
    metric: float
    par2: float
    elapsed: float = 0.0

    @property
    def solved(self) -> bool:
        return self.status in (Status.SAT.value, Status.UNSAT.value)


def discover_instances(directory: str | Path) -> dict[str, Path]:
    """Map instance id (path relative to ``directory``) to file path, sorted."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"instance directory {root} does not exist")
    found = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name.endswith(INSTANCE_SUFFIXES):
            found[path.relative_to(root).as_posix()] = path
    return found


@lru_cache(maxsize=64)
def _load(path: str):
    return read_dimacs(path)


def _solve_cell(args: tuple) -> Cell:
    ensemble, instance_id, path, budget, seed = args
    try:
        formula = _load(str(path))
    except (OSError, DimacsError) as exc:
        log.warning("cannot read instance %s: %s", instance_id, exc)
        return Cell(ensemble.id, instance_id, ERROR, float("nan"), 2.0 * budget.limit)
    outcome = Solver(formula, ensemble, seed=seed).solve(budget)
    metric = outcome.metric(budget)
    return Cell(
        ensemble.id, instance_id, outcome.status.value, metric,
        par2_contribution(outcome.solved, metric, budget.limit), outcome.stats.elapsed,
    )


class CellStore:
    """Append-only CSV cache of finished cells."""

    FIELDS = ("ensemble_id", "instance_id", "budget", "seed", "status", "metric", "par2", "elapsed")

    def __init__(self, path: str | Path | None) -> None:
        self.path = Path(path) if path is not None else None
        self.cells: dict[tuple[str, str, str, int], Cell] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, newline="") as fh:
                for row in csv.DictReader(fh):
                    try:
                        cell = Cell(row["ensemble_id"], row["instance_id"], row["status"],
                                    float(row["metric"]), float(row["par2"]), float(row["elapsed"]))
                        key = (cell.ensemble_id, cell.instance_id, row["budget"], int(row["seed"]))
                    except (KeyError, ValueError):
                        continue  # torn final line after an interrupt
                    self.cells[key] = cell

    def get(self, eid: str, iid: str, budget: Budget, seed: int) -> Cell | None:
        return self.cells.get((eid, iid, budget.describe(), seed))

    def remember(self, cell: Cell, budget: Budget, seed: int) -> None:
        """Cache a cell known from elsewhere without writing it to disk."""
        self.cells.setdefault((cell.ensemble_id, cell.instance_id, budget.describe(), seed), cell)

    def put(self, cell: Cell, budget: Budget, seed: int) -> None:
        self.cells[(cell.ensemble_id, cell.instance_id, budget.describe(), seed)] = cell
        if self.path is None or cell.status == ERROR:
            return
        new = not self.path.exists()
        with open(self.path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(self.FIELDS)
            writer.writerow([cell.ensemble_id, cell.instance_id, budget.describe(), seed,
                             cell.status, repr(cell.metric), repr(cell.par2), repr(cell.elapsed)])


class Runner:
    """Runs cells under one budget and seed, serially or on a process pool."""

    def __init__(self, budget: Budget, seed: int = 42, jobs: int | None = None,
                 store: CellStore | str | Path | None = None) -> None:
        self.budget = budget
        self.seed = seed
        self.jobs = max(1, jobs if jobs is not None else (os.cpu_count() or 1))
        self.store = store if isinstance(store, CellStore) else CellStore(store)
        self.executed = 0

    def run(
        self,
        pairs: Sequence[tuple[HeuristicEnsemble, str]],
        paths: Mapping[str, Path],
    ) -> list[Cell]:
        """Results for each (ensemble, instance id) pair, in input order."""
        out: list[Cell | None] = []
        todo: dict[tuple[str, str], tuple] = {}
        for ensemble, iid in pairs:
            cell = self.store.get(ensemble.id, iid, self.budget, self.seed)
            out.append(cell)
            if cell is None and (ensemble.id, iid) not in todo:
                todo[(ensemble.id, iid)] = (ensemble, iid, paths[iid], self.budget, self.seed)
        if todo:
            tasks = list(todo.values())
            done: dict[tuple[str, str], Cell] = {}

            def record(cell: Cell) -> None:
                self.executed += 1
                self.store.put(cell, self.budget, self.seed)
                done[(cell.ensemble_id, cell.instance_id)] = cell

            if self.jobs > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                    for cell in pool.map(_solve_cell, tasks, chunksize=1):
                        record(cell)
            else:
                for task in tasks:
                    record(_solve_cell(task))
            out = [
                c if c is not None else done[(e.id, iid)]
                for c, (e, iid) in zip(out, pairs)
            ]
        return out  # type: ignore[return-value]

    def mean_par2(self, ensembles: Sequence[HeuristicEnsemble], instance_ids: Sequence[str],
                  paths: Mapping[str, Path]) -> list[float]:
        """Mean PAR-2 contribution of each ensemble over ``instance_ids``."""
        if not instance_ids:
            raise ValueError("cannot score ensembles on an empty instance set")
        pairs = [(e, iid) for e in ensembles for iid in instance_ids]
        cells = self.run(pairs, paths)
        k = len(instance_ids)
        return [sum(c.par2 for c in cells[i * k:(i + 1) * k]) / k for i in range(len(ensembles))]

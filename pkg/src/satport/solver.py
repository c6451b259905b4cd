"""A compact CDCL solver with pluggable restart, rephase and bump_var hooks.

Internals use literal codes ``2 * v + sign`` over 0-based variables (sign 1
means negated), so ``code ^ 1`` negates. Branching takes the unassigned
variable of highest activity (lowest index on ties) and assigns its saved
phase; conflicts are analyzed to the first UIP and the solver backjumps
non-chronologically.
"""

from __future__ import annotations

import heapq
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .cnf import CnfFormula
from .heuristics import BASELINE_ENSEMBLE, ConfigurationError, HeuristicEnsemble, make_policy

__all__ = ["Budget", "Solver", "SolveOutcome", "SolveStats", "Status", "solve"]

RESCALE_LIMIT = 1e100
RESCALE_FACTOR = 1e-100
TIME_CHECK_INTERVAL = 1024
DEFAULT_CLAUSE_CAP = 100_000


class Status(str, Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    TIMEOUT = "TIMEOUT"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Budget:
    """Resource limit for one run; at least one of the two limits is required.

    When a conflict limit is set the run is deterministic and its cost metric
    is the number of conflicts; otherwise the metric is wall-clock seconds.
    """

    time_limit: float | None = None
    conflict_limit: int | None = None

    def __post_init__(self) -> None:
        if self.time_limit is None and self.conflict_limit is None:
            raise ConfigurationError("budget needs a time limit or a conflict limit")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ConfigurationError("time limit must be positive")
        if self.conflict_limit is not None and self.conflict_limit <= 0:
            raise ConfigurationError("conflict limit must be positive")

    @property
    def by_conflicts(self) -> bool:
        return self.conflict_limit is not None

    @property
    def limit(self) -> float:
        """The timeout T in metric units (conflicts or seconds)."""
        return float(self.conflict_limit) if self.by_conflicts else float(self.time_limit)

    @classmethod
    def parse(cls, text: str) -> "Budget":
        """Inverse of :meth:`describe`."""
        kwargs: dict[str, float | int] = {}
        for part in filter(None, text.split(",")):
            key, _, value = part.partition("=")
            if key == "conflicts":
                kwargs["conflict_limit"] = int(value)
            elif key == "time":
                kwargs["time_limit"] = float(value)
            else:
                raise ConfigurationError(f"unknown budget field {key!r}")
        return cls(**kwargs)

    def describe(self) -> str:
        parts = []
        if self.conflict_limit is not None:
            parts.append(f"conflicts={self.conflict_limit}")
        if self.time_limit is not None:
            parts.append(f"time={self.time_limit!r}")
        return ",".join(parts)


@dataclass
class SolveStats:
    conflicts: int = 0
    decisions: int = 0
    propagations: int = 0
    restarts: int = 0
    rephases: int = 0
    learned: int = 0
    elapsed: float = 0.0


@dataclass
class SolveOutcome:
    status: Status
    model: list[int] | None = None
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def solved(self) -> bool:
        return self.status is not Status.TIMEOUT

    def metric(self, budget: Budget) -> float:
        """Runtime in the budget's unit (conflicts or seconds)."""
        return float(self.stats.conflicts) if budget.by_conflicts else self.stats.elapsed

    def model_mapping(self) -> dict[int, bool]:
        return {abs(lit): lit > 0 for lit in self.model or ()}


class Solver:
    """One CDCL run over a formula; not reusable across solves."""

    def __init__(
        self,
        formula: CnfFormula,
        ensemble: HeuristicEnsemble = BASELINE_ENSEMBLE,
        seed: int = 0,
        clause_cap: int = DEFAULT_CLAUSE_CAP,
    ) -> None:
        if not isinstance(ensemble, HeuristicEnsemble):
            raise ConfigurationError(f"not a heuristic ensemble: {ensemble!r}")
        self.formula = formula
        self.ensemble = ensemble
        self.restart_policy = make_policy(ensemble.restart)
        self.rephase_policy = make_policy(ensemble.rephase)
        self.bump_policy = make_policy(ensemble.bump_var)
        self.rng = random.Random(seed)
        self.clause_cap = clause_cap

        n = formula.num_variables
        self.num_vars = n
        self.values = [0] * (2 * n)  # per literal code: 1 true, -1 false, 0 free
        self.level = [0] * n
        self.reason = [-1] * n
        self.phase = [False] * n
        self.activity = [0.0] * n
        self.var_inc = 1.0
        self.heap: list[tuple[float, int]] = [(-0.0, v) for v in range(n)]
        self.trail: list[int] = []
        self.trail_lim: list[int] = []
        self.qhead = 0
        self.clauses: list[list[int] | None] = []
        self.lbd: dict[int, int] = {}  # learned clause index -> LBD
        self.watches: list[list[int]] = [[] for _ in range(2 * n)]
        self.seen = [False] * n

        self.stats = SolveStats()
        self.conflicts_since_restart = 0
        self.last_lbd = 0
        self.last_learned_vars: list[int] = []
        self._root_conflict = formula.has_empty_clause

    # -- basic operations -------------------------------------------------

    @property
    def decision_level(self) -> int:
        return len(self.trail_lim)

    def _enqueue(self, lit: int, reason: int) -> None:
        values = self.values
        values[lit] = 1
        values[lit ^ 1] = -1
        v = lit >> 1
        self.level[v] = len(self.trail_lim)
        self.reason[v] = reason
        self.trail.append(lit)

    def _attach(self, clause: list[int]) -> int:
        ci = len(self.clauses)
        self.clauses.append(clause)
        self.watches[clause[0]].append(ci)
        self.watches[clause[1]].append(ci)
        return ci

    def _load(self) -> None:
        values = self.values
        for clause in self.formula.clauses:
            codes = [2 * (l - 1) if l > 0 else 2 * (-l - 1) + 1 for l in clause]
            if len(codes) == 1:
                lit = codes[0]
                if values[lit] == -1:
                    self._root_conflict = True
                elif values[lit] == 0:
                    self._enqueue(lit, -1)
            else:
                self._attach(codes)

    def _propagate(self) -> int:
        """Unit propagation; returns a conflicting clause index or -1."""
        values = self.values
        clauses = self.clauses
        watches = self.watches
        trail = self.trail
        level = self.level
        reason = self.reason
        dl = len(self.trail_lim)
        props = 0
        confl = -1
        while self.qhead < len(trail):
            p = trail[self.qhead]
            self.qhead += 1
            props += 1
            false_lit = p ^ 1
            ws = watches[false_lit]
            keep: list[int] = []
            i = 0
            n_ws = len(ws)
            while i < n_ws:
                ci = ws[i]
                i += 1
                c = clauses[ci]
                if c[0] == false_lit:
                    c[0] = c[1]
                    c[1] = false_lit
                first = c[0]
                if values[first] == 1:
                    keep.append(ci)
                    continue
                for k in range(2, len(c)):
                    lk = c[k]
                    if values[lk] != -1:
                        c[1] = lk
                        c[k] = false_lit
                        watches[lk].append(ci)
                        break
                else:
                    keep.append(ci)
                    if values[first] == -1:
                        keep.extend(ws[i:])
                        confl = ci
                        break
                    values[first] = 1
                    values[first ^ 1] = -1
                    v = first >> 1
                    level[v] = dl
                    reason[v] = ci
                    trail.append(first)
            watches[false_lit] = keep
            if confl >= 0:
                break
        self.stats.propagations += props
        return confl

    def _cancel_until(self, target: int) -> None:
        if len(self.trail_lim) <= target:
            return
        values = self.values
        phase = self.phase
        reason = self.reason
        activity = self.activity
        heap = self.heap
        start = self.trail_lim[target]
        for idx in range(len(self.trail) - 1, start - 1, -1):
            lit = self.trail[idx]
            v = lit >> 1
            values[lit] = 0
            values[lit ^ 1] = 0
            phase[v] = not (lit & 1)
            reason[v] = -1
            heapq.heappush(heap, (-activity[v], v))
        del self.trail[start:]
        del self.trail_lim[target:]
        self.qhead = start

    def _pick_branch_var(self) -> int:
        heap = self.heap
        values = self.values
        activity = self.activity
        while heap:
            neg_act, v = heapq.heappop(heap)
            if values[2 * v] == 0 and -neg_act == activity[v]:
                return v
        return -1

    def _rebuild_heap(self) -> None:
        values = self.values
        activity = self.activity
        self.heap = [(-activity[v], v) for v in range(self.num_vars) if values[2 * v] == 0]
        heapq.heapify(self.heap)

    # -- activity interface used by bump policies ---------------------------

    def bump_activity(self, v: int, scale: float = 1.0) -> None:
        """Add ``scale * var_inc`` to variable ``v`` (0-based)."""
        a = self.activity[v] + scale * self.var_inc
        self.activity[v] = a
        if a > RESCALE_LIMIT:
            self.rescale_activities()
        elif self.values[2 * v] == 0:
            heapq.heappush(self.heap, (-a, v))

    def decay_activity(self, decay: float) -> None:
        self.var_inc /= decay
        if self.var_inc > RESCALE_LIMIT:
            self.rescale_activities()

    def rescale_activities(self) -> None:
        self.activity = [a * RESCALE_FACTOR for a in self.activity]
        self.var_inc *= RESCALE_FACTOR
        self._rebuild_heap()

    # -- hooks ------------------------------------------------------------

    def hook_bump_var(self, learned: Sequence[int], reason_side: Sequence[int],
                      seen: Sequence[int]) -> None:
        self.bump_policy.on_conflict(self, learned, reason_side, seen)

    def hook_restart(self) -> bool:
        return bool(self.restart_policy.should_restart(self))

    def hook_rephase(self) -> None:
        self.rephase_policy.apply(self.phase, self.rng)
        self.stats.rephases += 1

    # -- conflict analysis ------------------------------------------------

    def _analyze(self, confl: int) -> tuple[list[int], int]:
        clauses = self.clauses
        level = self.level
        reason = self.reason
        seen = self.seen
        trail = self.trail
        dl = len(self.trail_lim)

        learnt = [0]
        touched: list[int] = []
        path = 0
        p = -1
        idx = len(trail) - 1
        ci = confl
        while True:
            c = clauses[ci]
            for q in (c if p < 0 else c[1:]):
                v = q >> 1
                if not seen[v] and level[v] > 0:
                    seen[v] = True
                    touched.append(v)
                    if level[v] >= dl:
                        path += 1
                    else:
                        learnt.append(q)
            while not seen[trail[idx] >> 1]:
                idx -= 1
            p = trail[idx]
            idx -= 1
            ci = reason[p >> 1]
            path -= 1
            if path == 0:
                break
        learnt[0] = p ^ 1

        learned_vars = [q >> 1 for q in learnt]
        in_clause = set(learned_vars)
        reason_side: list[int] = []
        rs_seen: set[int] = set()
        for q in learnt[1:]:
            r = reason[q >> 1]
            if r < 0:
                continue
            for lit in clauses[r][1:]:
                v = lit >> 1
                if v not in in_clause and v not in rs_seen and level[v] > 0:
                    rs_seen.add(v)
                    reason_side.append(v)
        for v in touched:
            seen[v] = False

        self.last_learned_vars = learned_vars
        self.hook_bump_var(learned_vars, reason_side, touched)

        if len(learnt) == 1:
            back = 0
        else:
            best = 1
            for k in range(2, len(learnt)):
                if level[learnt[k] >> 1] > level[learnt[best] >> 1]:
                    best = k
            learnt[1], learnt[best] = learnt[best], learnt[1]
            back = level[learnt[1] >> 1]
        self.last_lbd = len({level[q >> 1] for q in learnt})
        return learnt, back

    def _reduce_db(self) -> None:
        """Evict high-LBD learned clauses once more than ``clause_cap`` are held."""
        candidates = [ci for ci, lbd in self.lbd.items() if lbd > 2]
        if len(candidates) <= self.clause_cap:
            return
        locked = {self.reason[lit >> 1] for lit in self.trail}
        candidates = [ci for ci in candidates if ci not in locked]
        # Highest LBD first, older first among equals.
        candidates.sort(key=lambda ci: (-self.lbd[ci], ci))
        n_evict = len(candidates) - self.clause_cap // 2
        for ci in candidates[: max(0, n_evict)]:
            self.clauses[ci] = None
            del self.lbd[ci]
        self.watches = [[] for _ in range(2 * self.num_vars)]
        for ci, c in enumerate(self.clauses):
            if c is not None:
                self.watches[c[0]].append(ci)
                self.watches[c[1]].append(ci)

    # -- main loop --------------------------------------------------------

    def solve(self, budget: Budget) -> SolveOutcome:
        start = time.perf_counter()
        stats = self.stats
        outcome = self._search(budget, start)
        stats.elapsed = time.perf_counter() - start
        if budget.time_limit is not None and stats.elapsed > budget.time_limit:
            outcome = SolveOutcome(Status.TIMEOUT)  # finished, but not within the budget
        outcome.stats = stats
        return outcome

    def _search(self, budget: Budget, start: float) -> SolveOutcome:
        stats = self.stats
        if self._root_conflict:
            return SolveOutcome(Status.UNSAT)
        self._load()
        if self._root_conflict:
            return SolveOutcome(Status.UNSAT)
        conflict_limit = budget.conflict_limit
        time_limit = budget.time_limit
        period = self.rephase_policy.period
        heap_limit = 8 * self.num_vars + 1024

        while True:
            confl = self._propagate()
            if confl >= 0:
                stats.conflicts += 1
                self.conflicts_since_restart += 1
                if not self.trail_lim:
                    return SolveOutcome(Status.UNSAT)
                learnt, back = self._analyze(confl)
                self._cancel_until(back)
                if len(learnt) == 1:
                    self._enqueue(learnt[0], -1)
                else:
                    ci = self._attach(learnt)
                    self.lbd[ci] = self.last_lbd
                    stats.learned += 1
                    self._enqueue(learnt[0], ci)
                    if len(self.lbd) > self.clause_cap:
                        self._reduce_db()
                if period and stats.conflicts % period == 0:
                    self.hook_rephase()
                if self.hook_restart():
                    self._cancel_until(0)
                    self.conflicts_since_restart = 0
                    stats.restarts += 1
                    self.restart_policy.on_restart()
                if conflict_limit is not None and stats.conflicts >= conflict_limit:
                    return SolveOutcome(Status.TIMEOUT)
                if (
                    time_limit is not None
                    and stats.conflicts % TIME_CHECK_INTERVAL == 0
                    and time.perf_counter() - start > time_limit
                ):
                    return SolveOutcome(Status.TIMEOUT)
            else:
                if len(self.heap) > heap_limit:
                    self._rebuild_heap()
                v = self._pick_branch_var()
                if v < 0:
                    return SolveOutcome(Status.SAT, self._model())
                stats.decisions += 1
                self.trail_lim.append(len(self.trail))
                self._enqueue(2 * v + (0 if self.phase[v] else 1), -1)

    def _model(self) -> list[int]:
        values = self.values
        return [v + 1 if values[2 * v] == 1 else -(v + 1) for v in range(self.num_vars)]


def solve(
    formula: CnfFormula,
    ensemble: HeuristicEnsemble = BASELINE_ENSEMBLE,
    budget: Budget | None = None,
    seed: int = 0,
    clause_cap: int = DEFAULT_CLAUSE_CAP,
) -> SolveOutcome:
    """Run one CDCL search of ``formula`` under ``ensemble``."""
    if budget is None:
        budget = Budget(time_limit=1000.0)
    return Solver(formula, ensemble, seed=seed, clause_cap=clause_cap).solve(budget)

"""Guided evolutionary search over heuristic genomes, one module at a time.

Each candidate genome is spliced into the baseline ensemble (the other two
modules stay at baseline) and scored by mean PAR-2 on an archetype's subset.
Candidates come from a proposer: the built-in seeded mutation operator or an
external process speaking line-delimited JSON.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import random
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

from .archetypes import Archetype
from .heuristics import (
    BASELINE_COMPONENTS,
    BASELINE_ENSEMBLE,
    BASELINE_ID,
    MAX_PER_MODULE,
    MODULES,
    ConfigurationError,
    HeuristicGenome,
    Portfolio,
    builtin_families,
    cartesian_expand,
    catalog_json,
    genome,
    get_family,
)
from .runner import Runner
from .solver import Budget

__all__ = [
    "ModuleResult",
    "Proposer",
    "ProposerError",
    "ProposerRequest",
    "RandomMutationProposer",
    "SearchConfig",
    "SubprocessProposer",
    "assemble_and_prune",
    "evolve_module",
    "merge_module_lists",
    "prune_portfolio",
]

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MUTATION_SCALE = 1.2  # numeric params move by a log-uniform factor in [1/1.2, 1.2]
FAMILY_SWITCH_PROB = 0.2
MAX_RETRIES = 10
DEFAULT_PRUNE_SIZE = 6


class ProposerError(RuntimeError):
    """The proposer broke the protocol (bad output, crash or timeout)."""


@dataclass(frozen=True)
class SearchConfig:
    generations: int = 3
    population: int = 2
    seed: int = 42
    k: int = MAX_PER_MODULE
    budget: Budget = field(default_factory=lambda: Budget(conflict_limit=200_000))

    def __post_init__(self) -> None:
        if self.generations < 1 or self.population < 1:
            raise ConfigurationError("generations and population must be >= 1")
        if self.k < 0:
            raise ConfigurationError("k must be >= 0")

    def to_json(self) -> dict[str, Any]:
        return {"generations": self.generations, "population": self.population,
                "seed": self.seed, "k": self.k, "budget": self.budget.describe()}


@dataclass(frozen=True)
class ProposerRequest:
    module: str
    archetype: Archetype
    population: tuple[tuple[HeuristicGenome, float], ...]
    count: int
    generation: int
    seen: tuple[str, ...] = ()  # ids already evaluated, so proposers can avoid repeats

    def to_json(self) -> dict[str, Any]:
        return {
            "protocol_version": PROTOCOL_VERSION,
            "module": self.module,
            "archetype": {"id": self.archetype.id, "description": self.archetype.description},
            "catalog": catalog_json()[self.module],
            "population": [{"genome": g.to_json(), "fitness": f} for g, f in self.population],
            "count": self.count,
            "generation": self.generation,
            "seen": list(self.seen),
        }


class Proposer(Protocol):
    def propose(self, request: ProposerRequest) -> list[Any]:
        """Candidate genomes (or raw genome dicts, validated by the caller)."""


def _round_sig(x: float, digits: int = 4) -> float:
    return float(f"{x:.{digits}g}")


class RandomMutationProposer:
    """Seeded mutation: jitter numeric params or, sometimes, switch family."""

    def __init__(self, seed: int = 42) -> None:
        self.seed = seed

    def mutate(self, parent: HeuristicGenome, rng: random.Random) -> HeuristicGenome:
        families = builtin_families()[parent.module]
        fam = get_family(parent.module, parent.family)
        params = dict(parent.params)
        others = [f for f in families if f.name != parent.family]
        if others and rng.random() < FAMILY_SWITCH_PROB:
            fam = rng.choice(others)
            params = {p.name: p.default for p in fam.params}
        out: dict[str, int | float] = {}
        for spec in fam.params:
            x = params[spec.name] * math.exp(rng.uniform(-math.log(MUTATION_SCALE),
                                                         math.log(MUTATION_SCALE)))
            x = min(max(x, spec.low), spec.high)
            x = int(round(x)) if spec.kind is int else min(max(_round_sig(x), spec.low), spec.high)
            out[spec.name] = x
        return genome(parent.module, fam.name, **out)

    def propose(self, request: ProposerRequest) -> list[HeuristicGenome]:
        rng = random.Random(f"{self.seed}:{request.archetype.id}:{request.module}:{request.generation}")
        seen = set(request.seen)
        parents = [g for g, _ in request.population]
        out: list[HeuristicGenome] = []
        for slot in range(request.count):
            parent = parents[slot % len(parents)]
            child = parent
            for _ in range(MAX_RETRIES):
                child = self.mutate(parent, rng)
                if child.id not in seen:
                    break
            seen.add(child.id)
            out.append(child)
        return out


class SubprocessProposer:
    """External proposer: one JSON request line in, one JSON response line out."""

    def __init__(self, command: str | Sequence[str], timeout: float = 120.0) -> None:
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ConfigurationError("empty proposer command")
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()

    def _start(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1,
                )
            except OSError as exc:
                raise ProposerError(f"cannot start proposer {self.argv[0]}: {exc}") from None
            self._lines = queue.Queue()
            threading.Thread(target=self._pump, args=(self._proc, self._lines), daemon=True).start()
        return self._proc

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.Queue) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def propose(self, request: ProposerRequest) -> list[Any]:
        proc = self._start()
        try:
            assert proc.stdin is not None
            proc.stdin.write(json.dumps(request.to_json()) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.close()
            raise ProposerError(f"proposer stdin closed: {exc}") from None
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.close()
            raise ProposerError(f"proposer did not answer within {self.timeout:g}s") from None
        if line is None:
            self.close()
            raise ProposerError("proposer exited without answering")
        try:
            data = json.loads(line)
            candidates = data["candidates"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ProposerError(f"malformed proposer response: {exc!r}") from None
        if not isinstance(candidates, list):
            raise ProposerError("'candidates' must be a list")
        return candidates

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.poll() is None:
                self._proc.kill()
            self._proc.wait()
            for stream in (self._proc.stdin, self._proc.stdout):
                if stream is not None:
                    try:
                        stream.close()
                    except OSError:
                        pass
            self._proc = None

    def __enter__(self) -> "SubprocessProposer":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


@dataclass
class ModuleResult:
    """Every genome evaluated for one (archetype, module) search, in discovery order."""

    archetype: str
    module: str
    baseline_fitness: float
    candidates: list[tuple[HeuristicGenome, float]]
    subset: list[str]
    fell_back: bool = False

    def top(self, k: int) -> list[tuple[HeuristicGenome, float]]:
        order = sorted(range(len(self.candidates)), key=lambda i: (self.candidates[i][1], i))
        return [self.candidates[i] for i in order[:k]]

    def to_json(self) -> dict[str, Any]:
        return {
            "archetype": self.archetype,
            "module": self.module,
            "baseline_fitness": self.baseline_fitness,
            "subset": self.subset,
            "fell_back": self.fell_back,
            "candidates": [{"genome": g.to_json(), "fitness": f} for g, f in self.candidates],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ModuleResult":
        return cls(
            data["archetype"], data["module"], float(data["baseline_fitness"]),
            [(HeuristicGenome.from_json(c["genome"]), float(c["fitness"])) for c in data["candidates"]],
            list(data["subset"]), bool(data.get("fell_back", False)),
        )


def _validate(raw: Any, module: str) -> HeuristicGenome | None:
    try:
        g = raw if isinstance(raw, HeuristicGenome) else HeuristicGenome.from_json(
            {"module": module, **raw} if isinstance(raw, Mapping) else raw
        )
        g = genome(g.module, g.family, **g.param_dict)
    except (ConfigurationError, TypeError) as exc:
        log.warning("rejected %s candidate %r: %s", module, raw, exc)
        return None
    if g.module != module:
        log.warning("rejected candidate for module %s offered to %s", g.module, module)
        return None
    return g


def evolve_module(
    module: str,
    archetype: Archetype,
    subset: Sequence[str],
    paths: Mapping[str, Path],
    runner: Runner,
    config: SearchConfig = SearchConfig(),
    proposer: Proposer | None = None,
    fell_back: bool = False,
) -> ModuleResult:
    """Run ``config.generations`` rounds of propose-evaluate-select for ``module``.

    The baseline component seeds the population but is never reported as a
    candidate; at most ``generations * population`` genomes are evaluated.
    """
    if module not in MODULES:
        raise ConfigurationError(f"unknown module {module!r}")
    if not subset:
        raise ValueError("evolution needs a non-empty instance subset")
    builtin = RandomMutationProposer(config.seed)
    proposer = proposer or builtin
    base = dict(zip(MODULES, BASELINE_COMPONENTS))[module]
    (base_fit,) = runner.mean_par2([BASELINE_ENSEMBLE], list(subset), paths)
    evaluated: list[tuple[HeuristicGenome, float]] = [(base, base_fit)]

    def ranked() -> list[tuple[HeuristicGenome, float]]:
        order = sorted(range(len(evaluated)), key=lambda i: (evaluated[i][1], i))
        return [evaluated[i] for i in order]

    for gen in range(config.generations):
        population = tuple(ranked()[: config.population])
        request = ProposerRequest(module, archetype, population, config.population, gen,
                                  tuple(g.id for g, _ in evaluated))
        try:
            raw = proposer.propose(request)
        except ProposerError as exc:
            log.warning("proposer failed in generation %d (%s); using built-in mutation", gen, exc)
            raw = builtin.propose(request)
        known = {g for g, _ in evaluated}
        fresh: list[HeuristicGenome] = []
        for item in raw[: config.population]:
            g = _validate(item, module)
            if g is not None and g not in known and g not in fresh:
                fresh.append(g)
        if not fresh:
            continue  # keep the incumbent population
        scores = runner.mean_par2([BASELINE_ENSEMBLE.replace(g) for g in fresh], list(subset), paths)
        evaluated.extend(zip(fresh, scores))
        log.info("%s/%s gen %d: %s", archetype.id, module, gen,
                 ", ".join(f"{g.id}={s:g}" for g, s in zip(fresh, scores)))
    return ModuleResult(archetype.id, module, base_fit, evaluated[1:], list(subset), fell_back)


def merge_module_lists(results: Sequence[ModuleResult], k: int = MAX_PER_MODULE) -> dict[str, list[HeuristicGenome]]:
    """Per-module top-k genomes pooled across archetypes.

    Fitness scales differ between subsets, so genomes are compared by their
    fitness relative to the baseline on the same subset.
    """
    pooled: dict[str, list[tuple[float, int, int, HeuristicGenome]]] = {m: [] for m in MODULES}
    for ri, res in enumerate(results):
        for ci, (g, f) in enumerate(res.candidates):
            if g in BASELINE_COMPONENTS:
                continue
            if res.baseline_fitness > 0:
                rel = f / res.baseline_fitness
            else:
                rel = 1.0 if f == 0 else math.inf
            pooled[res.module].append((rel, ri, ci, g))
    out: dict[str, list[HeuristicGenome]] = {}
    for m in MODULES:
        chosen: list[HeuristicGenome] = []
        for _, _, _, g in sorted(pooled[m], key=lambda t: t[:3]):
            if len(chosen) >= k:
                break
            if g not in chosen:
                chosen.append(g)
        out[m] = chosen
    return out


def prune_portfolio(
    modules: Mapping[str, Sequence[HeuristicGenome]],
    instance_ids: Sequence[str],
    paths: Mapping[str, Path],
    runner: Runner,
    n: int | None = DEFAULT_PRUNE_SIZE,
    threshold: float | None = None,
    k: int = MAX_PER_MODULE,
    metadata: Mapping[str, Any] | None = None,
) -> Portfolio:
    """Expand module lists, score every ensemble and keep the best ones.

    An empty module list means the baseline component for that module. With
    ``threshold`` set, ensembles whose mean PAR-2 exceeds it are dropped
    instead of keeping a fixed count. The baseline ensemble is always kept.
    """
    expand = {m: list(modules.get(m, [])) or [dict(zip(MODULES, BASELINE_COMPONENTS))[m]] for m in MODULES}
    candidates = cartesian_expand(expand["restart"], expand["rephase"], expand["bump_var"],
                                  provenance="evolved", k=k)
    if not instance_ids:
        raise ValueError("pruning needs at least one instance")
    scored = candidates + ([] if BASELINE_ID in {e.id for e in candidates} else [BASELINE_ENSEMBLE])
    scores = dict(zip([e.id for e in scored], runner.mean_par2(scored, list(instance_ids), paths)))
    ranked = sorted(candidates, key=lambda e: (scores[e.id], e.id))
    if threshold is not None:
        kept = [e for e in ranked if scores[e.id] <= threshold]
    elif n is None or n >= len(ranked):
        kept = ranked
    else:
        kept = ranked[:n]
    if all(e.id != BASELINE_ID for e in kept):
        kept.append(BASELINE_ENSEMBLE)
    kept.sort(key=lambda e: e.id)
    meta = dict(metadata or {})
    meta["prune"] = {"n": n, "threshold": threshold, "scores": {e.id: scores[e.id] for e in kept}}
    portfolio = Portfolio(kept, {m: list(expand[m]) for m in MODULES}, meta)
    portfolio.check(k)
    return portfolio


def assemble_and_prune(
    results: Sequence[ModuleResult],
    instance_ids: Sequence[str],
    paths: Mapping[str, Path],
    runner: Runner,
    n: int | None = DEFAULT_PRUNE_SIZE,
    threshold: float | None = None,
    k: int = MAX_PER_MODULE,
    metadata: Mapping[str, Any] | None = None,
) -> Portfolio:
    """Merge per-archetype search results into a pruned portfolio."""
    return prune_portfolio(merge_module_lists(results, k), instance_ids, paths, runner,
                           n=n, threshold=threshold, k=k, metadata=metadata)

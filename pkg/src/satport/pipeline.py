"""Offline stages end to end: features, archetypes, evolution, pruning, matrix, cluster map.

Every stage writes its artifact into the output directory and is skipped on
re-invocation when the artifact already matches the configuration, so an
interrupted run resumes where it stopped. Solver cells are cached in
``cells.csv`` and never re-run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .archetypes import (
    ALL_INSTANCES,
    Archetype,
    default_archetypes,
    filter_subset,
    load_archetypes,
    save_archetypes,
)
from .cnf import DimacsError, read_dimacs
from .evolve import (
    DEFAULT_PRUNE_SIZE,
    ModuleResult,
    Proposer,
    SearchConfig,
    SubprocessProposer,
    assemble_and_prune,
    evolve_module,
    prune_portfolio,
)
from .features import FeatureVector, extract_features, read_features_csv, write_features_csv
from .heuristics import MODULES, ConfigurationError, HeuristicGenome, Portfolio, load_portfolio, save_portfolio
from .partition import (
    ClusterMap,
    PerformanceMatrix,
    build_cluster_map,
    evaluate_matrix,
    optimal_assignment,
    save_cluster_map,
    single_best,
)
from .runner import CellStore, Runner, discover_instances
from .solver import Budget

__all__ = ["PipelineConfig", "PipelineResult", "compute_features", "run_pipeline", "run_sweep", "train_stage"]

log = logging.getLogger(__name__)

FEATURES_FILE = "features.csv"
ARCHETYPES_FILE = "archetypes.json"
EVOLUTION_FILE = "evolution.json"
PORTFOLIO_FILE = "portfolio.json"
MATRIX_FILE = "matrix.csv"
CLUSTER_MAP_FILE = "cluster_map.json"
CELLS_FILE = "cells.csv"


@dataclass(frozen=True)
class PipelineConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    budget: Budget = field(default_factory=lambda: Budget(time_limit=1000.0))
    seed: int = 42
    prune_size: int | None = DEFAULT_PRUNE_SIZE
    threshold: float | None = None
    data_aware: bool = True
    jobs: int | None = None
    proposer: str | None = None
    archetypes_file: str | None = None

    def fingerprint(self) -> dict[str, Any]:
        return {
            "search": self.search.to_json(),
            "budget": self.budget.describe(),
            "seed": self.seed,
            "prune_size": self.prune_size,
            "threshold": self.threshold,
            "data_aware": self.data_aware,
            "proposer": self.proposer,
            "archetypes_file": self.archetypes_file,
        }


@dataclass
class PipelineResult:
    features: dict[str, FeatureVector]
    archetypes: list[Archetype]
    evolution: list[ModuleResult]
    portfolio: Portfolio
    matrix: PerformanceMatrix
    cluster_map: ClusterMap
    out_dir: Path
    solver_runs: int = 0


def _digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def compute_features(paths: Mapping[str, Path]) -> dict[str, FeatureVector]:
    """Features per readable instance; unreadable files are skipped with a warning."""
    out: dict[str, FeatureVector] = {}
    for iid in sorted(paths):
        try:
            out[iid] = extract_features(read_dimacs(paths[iid]))
        except (OSError, DimacsError) as exc:
            warnings.warn(f"skipping unreadable instance {iid}: {exc}", stacklevel=2)
    return out


def _stage_features(paths: Mapping[str, Path], out: Path) -> dict[str, FeatureVector]:
    target = out / FEATURES_FILE
    if target.exists():
        cached = read_features_csv(target)
        if set(cached) == set(paths):
            return cached
    feats = compute_features(paths)
    if not feats:
        raise ConfigurationError("no readable training instance")
    write_features_csv(feats.items(), target)
    return feats


def _stage_archetypes(feats: Mapping[str, FeatureVector], out: Path, config: PipelineConfig) -> list[Archetype]:
    target = out / ARCHETYPES_FILE
    if not config.data_aware:
        archetypes = [ALL_INSTANCES]
    elif config.archetypes_file:
        archetypes = [a.resolve([feats[i] for i in sorted(feats)])
                      for a in load_archetypes(config.archetypes_file)]
    elif len(feats) < 3:
        warnings.warn("fewer than 3 training instances; using a single all-instances archetype",
                      stacklevel=2)
        archetypes = [ALL_INSTANCES]
    else:
        archetypes = default_archetypes([feats[i] for i in sorted(feats)])
    save_archetypes(archetypes, target)
    return archetypes


def _make_proposer(config: PipelineConfig) -> Proposer | None:
    return SubprocessProposer(config.proposer) if config.proposer else None


def train_stage(
    paths: Mapping[str, Path],
    out: Path,
    config: PipelineConfig,
    store: CellStore,
) -> tuple[dict[str, FeatureVector], list[Archetype], list[ModuleResult], Runner]:
    """Features, archetypes and per-(archetype, module) evolution, resumable."""
    feats = _stage_features(paths, out)
    archetypes = _stage_archetypes(feats, out, config)
    usable = {i: paths[i] for i in feats}
    runner = Runner(config.search.budget, seed=config.seed, jobs=config.jobs, store=store)

    target = out / EVOLUTION_FILE
    header = {"config": config.search.to_json(), "proposer": config.proposer,
              "archetypes": _digest([a.to_json() for a in archetypes]),
              "instances": _digest(sorted(feats))}
    done: list[ModuleResult] = []
    if target.exists():
        try:
            data = json.loads(target.read_text())
            if data.get("header") == header:
                done = [ModuleResult.from_json(r) for r in data["results"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ConfigurationError):
            log.warning("ignoring unreadable %s", target)
    finished = {(r.archetype, r.module) for r in done}
    proposer = _make_proposer(config)
    try:
        for arch in archetypes:
            subset, fell_back = filter_subset(arch, feats)
            if fell_back:
                warnings.warn(f"archetype {arch.id} matched no instance; using the full training set",
                              stacklevel=2)
            for module in MODULES:
                if (arch.id, module) in finished:
                    continue
                done.append(evolve_module(module, arch, subset, usable, runner, config.search,
                                          proposer, fell_back))
                target.write_text(json.dumps(
                    {"header": header, "results": [r.to_json() for r in done]}, indent=2) + "\n")
    finally:
        if isinstance(proposer, SubprocessProposer):
            proposer.close()
    order = {(a.id, m): (ai, mi) for ai, a in enumerate(archetypes) for mi, m in enumerate(MODULES)}
    done.sort(key=lambda r: order[(r.archetype, r.module)])
    target.write_text(json.dumps({"header": header, "results": [r.to_json() for r in done]},
                                 indent=2) + "\n")
    return feats, archetypes, done, runner


def _partition(
    portfolio: Portfolio,
    feats: Mapping[str, FeatureVector],
    paths: Mapping[str, Path],
    runner: Runner,
    matrix_path: Path | None,
) -> tuple[PerformanceMatrix, ClusterMap]:
    usable = {i: paths[i] for i in feats}
    matrix = evaluate_matrix(portfolio, usable, runner, matrix_path)
    assignment = optimal_assignment(matrix)
    cmap = build_cluster_map(assignment, feats, portfolio.ids, single_best(matrix),
                             matrix.digest(), portfolio.fingerprint())
    return matrix, cmap


def run_pipeline(train_dir: str | Path, out_dir: str | Path, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Build portfolio and cluster map from the instances in ``train_dir``."""
    paths = discover_instances(train_dir)
    if not paths:
        raise ConfigurationError(f"no DIMACS files in {train_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = CellStore(out / CELLS_FILE)
    feats, archetypes, results, evo_runner = train_stage(paths, out, config, store)
    usable = {i: paths[i] for i in feats}

    meta = {"seed": config.seed, "config": _digest(config.fingerprint()),
            "archetypes": _digest([a.to_json() for a in archetypes]),
            "data_aware": config.data_aware}
    target = out / PORTFOLIO_FILE
    portfolio = None
    if target.exists():
        try:
            cached = load_portfolio(target)
            if {k: cached.metadata.get(k) for k in meta} == meta:
                portfolio = cached
        except ConfigurationError:
            log.warning("ignoring unreadable %s", target)
    if portfolio is None:
        portfolio = assemble_and_prune(results, sorted(usable), usable, evo_runner,
                                       n=config.prune_size, threshold=config.threshold,
                                       k=config.search.k, metadata=meta)
        save_portfolio(portfolio, target)

    runner = Runner(config.budget, seed=config.seed, jobs=config.jobs, store=store)
    matrix, cmap = _partition(portfolio, feats, paths, runner, out / MATRIX_FILE)
    save_cluster_map(cmap, out / CLUSTER_MAP_FILE)
    return PipelineResult(feats, archetypes, results, portfolio, matrix, cmap, out,
                          evo_runner.executed + runner.executed)


@dataclass
class SweepCell:
    k_restart: int
    k_bump: int
    portfolio: Portfolio
    cluster_map: ClusterMap
    par2: float


def run_sweep(
    train: Mapping[str, Path],
    test: Mapping[str, Path],
    restarts: Sequence[HeuristicGenome],
    bumps: Sequence[HeuristicGenome],
    runner: Runner,
    k_restart: Sequence[int] = (0, 1, 2, 3),
    k_bump: Sequence[int] = (0, 1, 2, 3),
    prune_size: int | None = DEFAULT_PRUNE_SIZE,
    train_features: Mapping[str, FeatureVector] | None = None,
    test_features: Mapping[str, FeatureVector] | None = None,
) -> list[SweepCell]:
    """Adaptive PAR-2 on ``test`` for each (k_restart, k_bump) portfolio size.

    Each cell keeps the first k genomes of each list, fixes rephase to the
    baseline ``none`` and reruns pruning, partitioning and selection. k = 0
    means the baseline component only.
    """
    from .bench import run_bench

    for k in (*k_restart, *k_bump):
        if not 0 <= k <= 3:
            raise ConfigurationError(f"sweep cardinalities must lie in 0..3, got {k}")
    if max(k_restart, default=0) > len(restarts) or max(k_bump, default=0) > len(bumps):
        raise ConfigurationError("not enough candidate genomes for the requested sweep range")
    train_feats = dict(train_features) if train_features is not None else compute_features(train)
    cells = []
    for kr in k_restart:
        for kb in k_bump:
            modules = {"restart": list(restarts[:kr]), "rephase": [], "bump_var": list(bumps[:kb])}
            portfolio = prune_portfolio(modules, sorted(train_feats), train, runner, n=prune_size,
                                        metadata={"sweep": [kr, kb]})
            _, cmap = _partition(portfolio, train_feats, train, runner, None)
            (report,) = run_bench(test, cmap, portfolio, ["adaptive"], runner, test_features)
            cells.append(SweepCell(kr, kb, portfolio, cmap, report.par2))
            log.info("sweep k_restart=%d k_bump=%d PAR-2=%g", kr, kb, report.par2)
    return cells


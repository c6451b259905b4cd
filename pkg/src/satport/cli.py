"""Command-line entry point: ``satport <command> [options]``."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

from .bench import VIRTUAL_BEST, comparison_table, run_bench, solve_instance
from .cnf import DimacsError
from .evolve import DEFAULT_PRUNE_SIZE, SearchConfig
from .features import write_features_csv
from .generate import FAMILIES, GeneratorSpec, bimodal_specs, generate
from .heuristics import ConfigurationError, load_portfolio
from .partition import ClusterMapError, load_cluster_map
from .pipeline import (
    CELLS_FILE,
    CLUSTER_MAP_FILE,
    PORTFOLIO_FILE,
    PipelineConfig,
    compute_features,
    run_pipeline,
    run_sweep,
    train_stage,
)
from .evolve import merge_module_lists
from .runner import CellStore, Runner, discover_instances
from .solver import Budget

log = logging.getLogger("satport")

DEFAULT_TIMEOUT = 1000.0
DEFAULT_EVOLUTION_CONFLICTS = 200_000
DEFAULT_BENCH_MODES = ("adaptive", "random", "single-best", VIRTUAL_BEST)


def _budget(args: argparse.Namespace, default: Budget) -> Budget:
    if args.timeout is None and args.conflicts is None:
        return default
    return Budget(time_limit=args.timeout, conflict_limit=args.conflicts)


def _k_range(text: str) -> list[int]:
    if "-" in text:
        lo, hi = text.split("-", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(x) for x in text.split(",") if x]
    if not values or any(not 0 <= v <= 3 for v in values):
        raise argparse.ArgumentTypeError(f"range must lie within 0..3, got {text!r}")
    return values


def _instances(inputs: Sequence[str]) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            found.update(discover_instances(p))
        elif p.exists():
            found[p.name] = p
        else:
            raise FileNotFoundError(f"{p} does not exist")
    return dict(sorted(found.items()))


def _artifacts(args: argparse.Namespace):
    base = Path(args.artifacts) if args.artifacts else None
    map_path = args.map or (base / CLUSTER_MAP_FILE if base else None)
    portfolio_path = args.portfolio or (base / PORTFOLIO_FILE if base else None)
    if map_path is None or portfolio_path is None:
        raise ConfigurationError("give --artifacts DIR or both --map and --portfolio")
    portfolio = load_portfolio(portfolio_path)
    return load_cluster_map(map_path, portfolio), portfolio


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    if args.family == "bimodal":
        specs = bimodal_specs(args.count, args.seed)
    else:
        specs = (GeneratorSpec(args.family, n=args.n, m=args.m, holes=args.holes,
                               seed=args.seed, count=args.count),)
    for spec in specs:
        for path in generate(spec, args.out):
            print(path)
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    feats = compute_features(_instances(args.inputs))
    if args.out:
        write_features_csv(feats.items(), args.out)
    else:
        buf = io.StringIO()
        write_features_csv(feats.items(), buf)
        sys.stdout.write(buf.getvalue())
    return 0


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    given = _budget(args, Budget(time_limit=DEFAULT_TIMEOUT))
    explicit = args.timeout is not None or args.conflicts is not None
    if args.evolution_conflicts is not None:
        search_budget = Budget(conflict_limit=args.evolution_conflicts)
    elif explicit:
        search_budget = given
    else:
        search_budget = Budget(conflict_limit=DEFAULT_EVOLUTION_CONFLICTS)
    search = SearchConfig(generations=args.generations, population=args.population,
                          seed=args.seed, k=args.k, budget=search_budget)
    return PipelineConfig(
        search=search, budget=given, seed=args.seed, prune_size=args.prune_size,
        threshold=args.threshold, data_aware=not args.no_data_aware, jobs=args.jobs,
        proposer=args.proposer, archetypes_file=args.archetypes,
    )


def cmd_pipeline(args: argparse.Namespace) -> int:
    result = run_pipeline(args.train, args.out, _pipeline_config(args))
    cmap = result.cluster_map
    print(f"portfolio: {len(result.portfolio)} ensembles -> {result.out_dir / PORTFOLIO_FILE}")
    for e in result.portfolio.ensembles:
        print(f"  {e.id:14s} {e.label()}")
    print(f"cluster map: {len(cmap.clusters)} clusters, single-best {cmap.single_best}"
          f" -> {result.out_dir / CLUSTER_MAP_FILE}")
    print(f"solver runs executed: {result.solver_runs}")
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    cmap, portfolio = _artifacts(args)
    budget = _budget(args, Budget(time_limit=DEFAULT_TIMEOUT))
    report = solve_instance(args.instance, cmap, portfolio, args.mode, budget, args.seed)
    out = report.outcome
    print(f"s {'SATISFIABLE' if out.status.value == 'SAT' else 'UNSATISFIABLE' if out.status.value == 'UNSAT' else 'UNKNOWN'}")
    print(f"c status {out.status.value}")
    print(f"c selected {report.selected} ({portfolio.get(report.selected).label()})")
    print(f"c selection_overhead_s {report.overhead:.6f}")
    print(f"c solve_time_s {out.stats.elapsed:.6f}")
    print(f"c conflicts {out.stats.conflicts}")
    if report.model_verified is not None:
        print(f"c model_verified {str(report.model_verified).lower()}")
    if args.model and out.model is not None:
        print("v " + " ".join(map(str, out.model)) + " 0")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cmap, portfolio = _artifacts(args)
    budget = _budget(args, Budget(time_limit=DEFAULT_TIMEOUT))
    modes = args.mode or list(DEFAULT_BENCH_MODES)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(budget, seed=args.seed, jobs=args.jobs, store=CellStore(out / CELLS_FILE))
    reports = run_bench(discover_instances(args.test), cmap, portfolio, modes, runner)
    for r in reports:
        r.write(out)
    table = comparison_table(reports)
    (out / "comparison.txt").write_text(comparison_table(reports, timing=False) + "\n")
    print(table)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = discover_instances(args.train)
    if not train:
        raise ConfigurationError(f"no DIMACS files in {args.train}")
    test = discover_instances(args.test)
    store = CellStore(out / CELLS_FILE)
    feats, _, results, _ = train_stage(train, out, config, store)
    lists = merge_module_lists(results, 3)
    runner = Runner(config.budget, seed=config.seed, jobs=config.jobs, store=store)
    cells = run_sweep({i: train[i] for i in feats}, test, lists["restart"], lists["bump_var"],
                      runner, args.k_restart, args.k_bump, config.prune_size, feats)
    lines = ["k_restart,k_bump,par2,portfolio_size"]
    lines += [f"{c.k_restart},{c.k_bump},{c.par2!r},{len(c.portfolio)}" for c in cells]
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    grid = {(c.k_restart, c.k_bump): c.par2 for c in cells}
    header = "k_restart \\ k_bump " + " ".join(f"{kb:>10d}" for kb in args.k_bump)
    print(header)
    for kr in args.k_restart:
        print(f"{kr:>19d} " + " ".join(f"{grid[(kr, kb)]:>10.2f}" for kb in args.k_bump))
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _add_budget(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timeout", type=float, help="wall-clock limit per run in seconds (default 1000)")
    p.add_argument("--conflicts", type=int, help="conflict limit per run (deterministic)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--generations", type=int, default=3)
    p.add_argument("--population", type=int, default=2)
    p.add_argument("--k", type=int, default=3, help="components kept per module")
    p.add_argument("--prune-size", type=int, default=DEFAULT_PRUNE_SIZE)
    p.add_argument("--threshold", type=float, default=None,
                   help="prune by mean PAR-2 threshold instead of a fixed size")
    p.add_argument("--evolution-conflicts", type=int, default=None,
                   help="conflict limit for fitness runs (default: the main budget, else 200000)")
    p.add_argument("--no-data-aware", action="store_true",
                   help="evolve on the full training set without archetype guidance")
    p.add_argument("--archetypes", help="JSON file with custom archetype definitions")
    p.add_argument("--proposer", help="external proposer command (line-delimited JSON)")


def _add_artifacts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--artifacts", help="pipeline output directory")
    p.add_argument("--map", help="cluster map file (overrides --artifacts)")
    p.add_argument("--portfolio", help="portfolio file (overrides --artifacts)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satport", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic DIMACS instances")
    p.add_argument("--family", choices=(*FAMILIES, "bimodal"), required=True)
    p.add_argument("--n", type=int, default=0, help="variables")
    p.add_argument("--m", type=int, default=0, help="clauses")
    p.add_argument("--holes", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("features", help="extract feature vectors to CSV")
    p.add_argument("inputs", nargs="+", help="DIMACS files or directories")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("pipeline", help="build portfolio and cluster map from training instances")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    _add_budget(p)
    _add_training(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("solve", help="solve one instance with the selected ensemble")
    p.add_argument("instance")
    _add_artifacts(p)
    p.add_argument("--mode", default="adaptive",
                   help="adaptive | random | single-best | fixed:ID")
    p.add_argument("--model", action="store_true", help="print the model on a v line")
    _add_budget(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="PAR-2 benchmark across selection modes")
    p.add_argument("--test", required=True)
    _add_artifacts(p)
    p.add_argument("--mode", action="append",
                   help="adaptive | random | single-best | fixed:ID | virtual-best (repeatable)")
    p.add_argument("--out", required=True)
    _add_budget(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="PAR-2 grid over restart and bump_var portfolio sizes")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-restart", type=_k_range, default=[0, 1, 2, 3])
    p.add_argument("--k-bump", type=_k_range, default=[0, 1, 2, 3])
    _add_budget(p)
    _add_training(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except (ConfigurationError, ClusterMapError, DimacsError, ValueError) as exc:
        print(f"satport: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"satport: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

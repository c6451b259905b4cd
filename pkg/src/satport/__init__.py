"""Data-aware heuristic portfolios for a CDCL SAT solver with per-instance selection."""

from .cnf import Assignment, CnfFormula, DimacsError, check_assignment, parse_dimacs, read_dimacs, to_dimacs
from .features import FEATURE_NAMES, FeatureVector, extract_features
from .heuristics import (
    BASELINE_ENSEMBLE,
    HeuristicEnsemble,
    HeuristicGenome,
    Portfolio,
    builtin_families,
    cartesian_expand,
    genome,
    load_portfolio,
    save_portfolio,
)
from .solver import Budget, SolveOutcome, Solver, Status, solve

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BASELINE_ENSEMBLE",
    "Budget",
    "CnfFormula",
    "DimacsError",
    "FEATURE_NAMES",
    "FeatureVector",
    "HeuristicEnsemble",
    "HeuristicGenome",
    "Portfolio",
    "SolveOutcome",
    "Solver",
    "Status",
    "builtin_families",
    "cartesian_expand",
    "check_assignment",
    "extract_features",
    "genome",
    "load_portfolio",
    "parse_dimacs",
    "read_dimacs",
    "save_portfolio",
    "solve",
    "to_dimacs",
]

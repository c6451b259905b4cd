"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

import filecmp
import random
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

import bimodal
from conftest import ACCEPTANCE_RESULTS, brute_force_sat
from oracles import FEATURE_ORDER, nearest_centroid, par2_reference, reference_features
from test_features import HAND_FIXTURES, relabel
from test_solver import ENSEMBLES as SOLVER_ENSEMBLES
from satport.bench import par2, run_bench
from satport.cnf import CnfFormula, check_assignment
from satport.evolve import SearchConfig
from satport.features import FEATURE_NAMES, FeatureVector, extract_features
from satport.generate import GeneratorSpec, generate, pigeonhole, random_ksat
from satport.heuristics import BASELINE_ID
from satport.partition import (
    NO_WINNER,
    build_cluster_map,
    evaluate_matrix,
    load_cluster_map,
    optimal_assignment,
    save_cluster_map,
    select_ensemble,
    single_best,
)
from satport.pipeline import PipelineConfig, compute_features, run_pipeline, run_sweep
from satport.runner import Runner, discover_instances
from satport.solver import Budget, Status, solve

MODES = ["adaptive", "single-best", "random", "virtual-best"]
REPLICATES = 5


@contextmanager
def criterion(n, text):
    try:
        yield
    except BaseException:
        ACCEPTANCE_RESULTS[n] = (False, text)
        print(f"FAIL criterion {n}: {text}")
        raise
    ACCEPTANCE_RESULTS[n] = (True, text)
    print(f"PASS criterion {n}: {text}")


# --------------------------------------------------------------------------
# 1. solver soundness
# --------------------------------------------------------------------------

SOUNDNESS_ENSEMBLES = SOLVER_ENSEMBLES + [bimodal.ENSEMBLE_A, bimodal.ENSEMBLE_B, bimodal.ENSEMBLE_C]


def test_criterion_1_solver_soundness():
    with criterion(1, "solver verdicts match the truth-table oracle on 500 random 3-SAT "
                      "instances and pigeonhole(1..5), for every ensemble; SAT models verified"):
        rng = random.Random(1)
        budget = Budget(conflict_limit=10_000_000)
        seen = {"SAT": 0, "UNSAT": 0}
        for k in range(500):
            n = rng.randint(4, 16)
            m = round(n * rng.uniform(3.0, 5.5))
            f = random_ksat(n, m, seed=k)
            truth = brute_force_sat(n, [list(c) for c in f.clauses])
            seen["SAT" if truth is not None else "UNSAT"] += 1
            for ens in SOUNDNESS_ENSEMBLES:
                out = solve(f, ens, budget, seed=k)
                assert out.status is (Status.SAT if truth is not None else Status.UNSAT), (k, ens.id)
                if out.status is Status.SAT:
                    assert check_assignment(f, out.model_mapping()), (k, ens.id)
        assert min(seen.values()) > 50  # both verdicts well represented
        for holes in range(1, 6):
            for ens in SOUNDNESS_ENSEMBLES:
                assert solve(pigeonhole(holes), ens, budget).status is Status.UNSAT, (holes, ens.id)


# --------------------------------------------------------------------------
# 2. feature fixtures
# --------------------------------------------------------------------------


def test_criterion_2_feature_fixtures():
    with criterion(2, f"{len(HAND_FIXTURES)} hand fixtures match the reference extractor to 1e-9; "
                      "100 relabelings leave features unchanged"):
        assert "F1" in HAND_FIXTURES and len(HAND_FIXTURES) >= 6
        for name, (formula, expected) in HAND_FIXTURES.items():
            got = extract_features(formula)._asdict()
            ref = reference_features(formula.num_variables, [list(c) for c in formula.clauses])
            for key in FEATURE_ORDER:
                assert abs(got[key] - ref[key]) <= 1e-9, (name, key)
            for key, value in expected.items():
                assert abs(got[key] - value) <= 1e-9, (name, key)
        rng = random.Random(99)
        n = 40
        clauses = [[v if rng.random() < 0.5 else -v for v in rng.sample(range(1, n + 1), rng.randint(1, 7))]
                   for _ in range(120)]
        ref = extract_features(CnfFormula.from_clauses(n, clauses)).as_array()
        for _ in range(100):
            got = extract_features(CnfFormula.from_clauses(n, relabel(n, clauses, rng))).as_array()
            assert np.max(np.abs(got - ref)) <= 1e-9


# --------------------------------------------------------------------------
# 3. PAR-2
# --------------------------------------------------------------------------


def test_criterion_3_par2():
    import itertools

    with criterion(3, "PAR-2 equals the reference formula on exhaustive small cases "
                      "(incl. 1250.0) and never increases when an unsolved run becomes solved"):
        assert par2([(True, 500.0), (False, 0.0)], 1000.0) == 1250.0
        runtimes = [0.0, 0.5, 1.0, 250.0, 999.0, 1000.0]
        for n in range(1, 4):
            for results in itertools.product(itertools.product([False, True], runtimes), repeat=n):
                assert par2(results, 1000.0) == pytest.approx(par2_reference(results, 1000.0), abs=1e-12)
        rng = random.Random(3)
        for _ in range(2000):
            t = rng.choice([1.0, 60.0, 1000.0])
            results = [(rng.random() < 0.5, rng.uniform(0, t)) for _ in range(rng.randint(1, 20))]
            unsolved = [i for i, (ok, _) in enumerate(results) if not ok]
            if not unsolved:
                continue
            flipped = list(results)
            flipped[rng.choice(unsolved)] = (True, rng.uniform(0, t))
            assert par2(flipped, t) <= par2(results, t)


# --------------------------------------------------------------------------
# shared bimodal benchmark (criteria 4-7)
# --------------------------------------------------------------------------


class Replicate:
    def __init__(self, root, r):
        split = bimodal.build(root, r)
        self.train = discover_instances(split.train)
        self.test = discover_instances(split.test)
        self.train_features = compute_features(self.train)
        self.test_features = compute_features(self.test)
        self.portfolio = bimodal.portfolio()
        self.runner = Runner(Budget(conflict_limit=bimodal.BUDGET_CONFLICTS), seed=r, jobs=1)
        self.matrix = evaluate_matrix(self.portfolio, self.train, self.runner)
        self.cmap = build_cluster_map(optimal_assignment(self.matrix), self.train_features,
                                      self.portfolio.ids, single_best(self.matrix),
                                      self.matrix.digest(), self.portfolio.fingerprint())
        self.reports = {rep.mode: rep for rep in run_bench(self.test, self.cmap, self.portfolio, MODES,
                                                           self.runner, self.test_features)}


@pytest.fixture(scope="module")
def replicates(tmp_path_factory):
    root = tmp_path_factory.mktemp("bimodal")
    return [Replicate(root, r) for r in range(REPLICATES)]


def test_criterion_4_partition(replicates):
    with criterion(4, "on evaluated matrices clusters are disjoint, cover every winner-bearing "
                      "instance, centroids are member means (1e-9) and each winner is a row minimum"):
        for rep in replicates:
            m = rep.matrix
            assign = optimal_assignment(m)
            assert set(assign) == set(m.instances)
            for iid, eid in assign.items():
                row = {e: m.p(e, iid) for e in m.ensembles}
                if eid is NO_WINNER:
                    assert all(not m.cells[(e, iid)].solved for e in m.ensembles)
                else:
                    assert row[eid] == min(row.values())
            members = [i for c in rep.cmap.clusters for i in c.members]
            assert len(members) == len(set(members))
            assert set(members) == {i for i, e in assign.items() if e is not NO_WINNER}
            for c in rep.cmap.clusters:
                assert all(assign[i] == c.ensemble_id for i in c.members)
                mean = np.mean([rep.train_features[i].as_array() for i in c.members], axis=0)
                assert np.max(np.abs(np.asarray(c.centroid) - mean)) <= 1e-9


def test_criterion_5_selection(replicates, tmp_path):
    with criterion(5, "centroid queries return their own ensemble, selections survive per-dimension "
                      "rescaling, and a saved map reproduces 100 random selections"):
        rng = random.Random(5)
        for rep in replicates:
            cmap = rep.cmap
            for c in cmap.clusters:
                assert select_ensemble(cmap, c.centroid) == c.ensemble_id
            scale = np.array([rng.uniform(0.01, 100.0) for _ in FEATURE_NAMES])
            scaled_feats = {i: FeatureVector(*(v.as_array() * scale)) for i, v in rep.train_features.items()}
            scaled = build_cluster_map(optimal_assignment(rep.matrix), scaled_feats, rep.portfolio.ids,
                                       cmap.single_best)
            lo = np.min([v.as_array() for v in rep.train_features.values()], axis=0)
            hi = np.max([v.as_array() for v in rep.train_features.values()], axis=0)
            path = tmp_path / "map.json"
            save_cluster_map(cmap, path)
            loaded = load_cluster_map(path, rep.portfolio)
            for _ in range(100):
                q = np.array([rng.uniform(a - 0.2 * (b - a), b + 0.2 * (b - a)) for a, b in zip(lo, hi)])
                picked = select_ensemble(cmap, FeatureVector(*q))
                assert picked == nearest_centroid(q, [(c.ensemble_id, c.centroid) for c in cmap.clusters],
                                                  cmap.mu, cmap.sigma)
                assert select_ensemble(scaled, FeatureVector(*(q * scale))) == picked
                assert select_ensemble(loaded, FeatureVector(*q)) == picked


def _family_means(replicates):
    """Pooled mean test PAR-2 per (family, ensemble), from the virtual-best runs."""
    pooled = {}
    for rep in replicates:
        ensembles = sorted(rep.portfolio.ensembles, key=lambda e: e.id)
        cells = rep.runner.run([(e, i) for i in sorted(rep.test) for e in ensembles], rep.test)
        for c in cells:
            pooled.setdefault((bimodal.family(c.instance_id), c.ensemble_id), []).append(c.par2)
    return {k: float(np.mean(v)) for k, v in pooled.items()}


def test_criterion_6_directional_ablation(replicates):
    means = {mode: float(np.mean([rep.reports[mode].par2 for rep in replicates])) for mode in MODES}
    text = ("bimodal benchmark over 5 seeds: virtual-best <= adaptive <= single-best <= random; "
            + ", ".join(f"{m}={means[m]:.1f}" for m in MODES))
    with criterion(6, text):
        fam = _family_means(replicates)
        for family, winner in (("planted", bimodal.ENSEMBLE_A.id), ("random", bimodal.ENSEMBLE_B.id)):
            scores = {e: s for (f, e), s in fam.items() if f == family}
            assert min(scores, key=scores.get) == winner, (family, scores)
        assert means["virtual-best"] <= means["adaptive"]
        assert means["adaptive"] <= means["single-best"]
        assert means["single-best"] <= means["random"]


def test_criterion_7_sweep(replicates):
    rep = replicates[0]
    cells = run_sweep(rep.train, rep.test, bimodal.RESTARTS, bimodal.BUMPS, rep.runner,
                      train_features=rep.train_features, test_features=rep.test_features)
    grid = {(c.k_restart, c.k_bump): c.par2 for c in cells}
    (fixed,) = run_bench(rep.test, rep.cmap, rep.portfolio, [f"fixed:{BASELINE_ID}"], rep.runner,
                         rep.test_features)
    text = (f"sweep cell (0,0)={grid[(0, 0)]:.1f} equals baseline fixed-mode {fixed.par2:.1f}; "
            f"(3,3)={grid[(3, 3)]:.1f} <= (0,0)")
    with criterion(7, text):
        assert len(grid) == 16
        assert cells[0].portfolio.ids == [BASELINE_ID]
        assert grid[(0, 0)] == fixed.par2
        assert grid[(3, 3)] <= grid[(0, 0)]


# --------------------------------------------------------------------------
# 8. determinism
# --------------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path):
    with criterion(8, "two full pipeline runs (built-in proposer, conflict budgets, seed 42) give "
                      "byte-identical portfolio, matrix CSV, cluster map and bench reports"):
        for spec in (GeneratorSpec("planted-sat", n=120, m=480, seed=7, count=4),
                     GeneratorSpec("random-3sat", n=70, m=320, seed=7, count=4)):
            generate(spec, tmp_path / "train")
        for spec in (GeneratorSpec("planted-sat", n=120, m=480, seed=77, count=3),
                     GeneratorSpec("random-3sat", n=70, m=320, seed=77, count=3)):
            generate(spec, tmp_path / "test")
        budget = Budget(conflict_limit=400)
        config = PipelineConfig(search=SearchConfig(generations=2, population=2, seed=42, budget=budget),
                                budget=budget, seed=42, jobs=1)
        test = discover_instances(tmp_path / "test")
        for run in ("a", "b"):
            out = tmp_path / run
            res = run_pipeline(tmp_path / "train", out, config)
            runner = Runner(budget, seed=42, jobs=1)
            for report in run_bench(test, res.cluster_map, res.portfolio, MODES, runner):
                report.write(out / "reports")
        files = ["portfolio.json", "matrix.csv", "cluster_map.json"] + \
                [f"reports/report-{m}.{ext}" for m in MODES for ext in ("csv", "json")]
        for name in files:
            a, b = tmp_path / "a" / name, tmp_path / "b" / name
            assert a.read_bytes() == b.read_bytes(), name
            assert filecmp.cmp(a, b, shallow=False)


# --------------------------------------------------------------------------
# 9. selection overhead
# --------------------------------------------------------------------------


def test_criterion_9_selection_overhead(replicates):
    rep = replicates[0]
    worst = {}
    formulas = {
        "3-SAT": random_ksat(60_000, 333_333, seed=9),
        "mixed": CnfFormula.from_clauses(100_000, _mixed_clauses(1_000_000, 100_000)),
    }
    for name, f in formulas.items():
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            v = extract_features(f)
            select_ensemble(rep.cmap, v)
            times.append(time.perf_counter() - t0)
        worst[name] = max(times)
    text = "feature extraction + selection on ~10^6-literal instances: " + \
           ", ".join(f"{k} {v:.3f}s" for k, v in worst.items()) + " (< 1 s)"
    with criterion(9, text):
        assert all(900_000 <= len(f.literals) <= 1_000_000 for f in formulas.values())
        assert max(worst.values()) < 1.0


def _mixed_clauses(total_literals, n):
    rng = random.Random(4)
    clauses, used = [], 0
    while used < total_literals - 12:
        k = rng.choice([1, 2, 2, 3, 3, 3, 4, 8, 12])
        clauses.append([v if rng.random() < 0.5 else -v for v in rng.sample(range(1, n + 1), k)])
        used += k
    return clauses

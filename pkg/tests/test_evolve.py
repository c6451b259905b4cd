import math
import random
import sys
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from satport.archetypes import ALL_INSTANCES, Archetype
from satport.evolve import (
    ModuleResult,
    ProposerError,
    ProposerRequest,
    RandomMutationProposer,
    SearchConfig,
    SubprocessProposer,
    assemble_and_prune,
    evolve_module,
    merge_module_lists,
    prune_portfolio,
)
from satport.generate import GeneratorSpec, generate
from satport.heuristics import (
    BASELINE_COMPONENTS,
    BASELINE_ENSEMBLE,
    BASELINE_ID,
    ConfigurationError,
    builtin_families,
    genome,
)
from satport.runner import Runner, discover_instances
from satport.solver import Budget

FAKE = [sys.executable, str(Path(__file__).with_name("fake_proposer.py"))]
CONFIG = SearchConfig(budget=Budget(conflict_limit=300))
ARCH = Archetype("demo", "instances with many clauses per variable", ())


@pytest.fixture(scope="module")
def instances(tmp_path_factory):
    root = tmp_path_factory.mktemp("evo")
    generate(GeneratorSpec("random-3sat", n=60, m=260, seed=1, count=3), root)
    generate(GeneratorSpec("planted-sat", n=80, m=330, seed=1, count=3), root)
    return discover_instances(root)


def run(instances, module="restart", proposer=None, config=CONFIG):
    runner = Runner(config.budget, seed=42, jobs=1)
    res = evolve_module(module, ARCH, sorted(instances), instances, runner, config, proposer)
    return res, runner


def test_reproducible_and_bounded(instances):
    a, runner = run(instances)
    b, _ = run(instances)
    assert [(g.id, f) for g, f in a.candidates] == [(g.id, f) for g, f in b.candidates]
    assert len(a.candidates) <= CONFIG.generations * CONFIG.population
    assert runner.executed <= (1 + 6) * len(instances)
    assert all(g not in BASELINE_COMPONENTS for g, _ in a.candidates)
    fits = [f for _, f in a.top(3)]
    assert fits == sorted(fits)


def test_baseline_fitness_is_baseline_par2(instances):
    res, runner = run(instances, module="bump_var")
    (expected,) = runner.mean_par2([BASELINE_ENSEMBLE], sorted(instances), instances)
    assert res.baseline_fitness == expected


def test_top_tie_prefers_earlier_discovery():
    g1, g2 = genome("restart", "fixed", c=5), genome("restart", "fixed", c=6)
    res = ModuleResult("a", "restart", 10.0, [(g2, 3.0), (g1, 3.0)], ["x"])
    assert [g for g, _ in res.top(2)] == [g2, g1]


@given(st.integers(0, 10_000), st.sampled_from(["restart", "rephase", "bump_var"]))
def test_mutation_stays_in_range(seed, module):
    rng = random.Random(seed)
    prop = RandomMutationProposer()
    for fam in builtin_families()[module]:
        child = prop.mutate(fam.default_genome(), rng)
        for name, value in child.params:
            spec = next(p for p in builtin_families()[module] if p.name == child.family).param_spec(name)
            assert spec.low <= value <= spec.high
            if spec.kind is float:
                assert value == float(f"{value:.4g}")


def test_invalid_candidates_rejected(instances, caplog):
    class Bad:
        def propose(self, request):
            return [{"family": "luby", "params": {"u": 0}}, {"family": "nope"}, 17]

    res, _ = run(instances, proposer=Bad())
    assert res.candidates == []  # incumbent population kept every generation
    assert "rejected" in caplog.text


def test_protocol_violation_falls_back_to_builtin(instances):
    class Broken:
        def propose(self, request):
            raise ProposerError("boom")

    broken, _ = run(instances, proposer=Broken())
    builtin, _ = run(instances)
    assert broken.candidates == builtin.candidates


def test_subprocess_proposer_valid(instances):
    with SubprocessProposer(FAKE + ["valid"]) as prop:
        res, _ = run(instances, module="bump_var", proposer=prop)
    ids = [g.id for g, _ in res.candidates]
    assert ids == ["classic-vsids(decay=0.81)", "classic-vsids(decay=0.82)", "classic-vsids(decay=0.83)"]


@pytest.mark.parametrize("mode", ["garbage", "crash", "missing"])
def test_subprocess_proposer_failures(mode):
    request = ProposerRequest("restart", ALL_INSTANCES, ((BASELINE_COMPONENTS[0], 1.0),), 2, 0)
    with SubprocessProposer(FAKE + [mode], timeout=10) as prop:
        with pytest.raises(ProposerError):
            prop.propose(request)


def test_subprocess_proposer_timeout():
    request = ProposerRequest("restart", ALL_INSTANCES, ((BASELINE_COMPONENTS[0], 1.0),), 2, 0)
    with SubprocessProposer(FAKE + ["slow"], timeout=0.5) as prop:
        with pytest.raises(ProposerError, match="within"):
            prop.propose(request)


def test_request_json_shape():
    req = ProposerRequest("restart", ARCH, ((BASELINE_COMPONENTS[0], 12.5),), 2, 1)
    data = req.to_json()
    assert data["archetype"] == {"id": "demo", "description": ARCH.description}
    assert data["population"][0]["fitness"] == 12.5
    assert {f["family"] for f in data["catalog"]} == {"luby", "geometric", "fixed", "lbd-dynamic"}


def test_search_config_validation():
    with pytest.raises(ConfigurationError):
        SearchConfig(generations=0)
    with pytest.raises(ConfigurationError):
        SearchConfig(population=0)


class ScoreRunner:
    """Runner stand-in that scores ensembles from a lookup, no solving."""

    def __init__(self, score):
        self.score = score

    def mean_par2(self, ensembles, ids, paths):
        return [self.score(e) for e in ensembles]


def _lists():
    rs = [genome("restart", "fixed", c=c) for c in (10, 20, 30)]
    ps = [genome("rephase", "flip", R=r) for r in (10, 20, 30)]
    bs = [genome("bump_var", "classic-vsids", decay=d) for d in (0.6, 0.7, 0.8)]
    return {"restart": rs, "rephase": ps, "bump_var": bs}


def test_prune_keeps_n_plus_baseline():
    def score(e):
        if e.id == BASELINE_ID:
            return 1e9
        return e.restart.param("c") + e.rephase.param("R") + 100 * e.bump_var.param("decay")
    pf = prune_portfolio(_lists(), ["i"], {}, ScoreRunner(score), n=6)
    assert len(pf) == 7 and BASELINE_ID in pf
    pf.check()
    everything = prune_portfolio(_lists(), ["i"], {}, ScoreRunner(score), n=27)
    assert len(everything) == 28


def test_prune_tie_at_rank_n_keeps_smaller_id():
    pf = prune_portfolio(_lists(), ["i"], {}, ScoreRunner(lambda e: 1.0), n=2)
    from satport.heuristics import cartesian_expand

    all_ids = sorted(e.id for e in cartesian_expand(*_lists().values()))
    assert sorted(i for i in pf.ids if i != BASELINE_ID) == all_ids[:2]


def test_prune_threshold_mode():
    score = lambda e: 5.0 if e.id == BASELINE_ID else float(e.restart.param("c"))
    pf = prune_portfolio(_lists(), ["i"], {}, ScoreRunner(score), threshold=15.0)
    kept = [e for e in pf.ensembles if e.id != BASELINE_ID]
    assert len(kept) == 9 and all(e.restart.param("c") == 10 for e in kept)


def test_merge_ranks_relative_to_baseline():
    g = [genome("restart", "fixed", c=c) for c in (1, 2, 3, 4, 5)]
    a = ModuleResult("a1", "restart", 100.0, [(g[0], 90.0), (g[1], 50.0)], ["x"])
    b = ModuleResult("a2", "restart", 10.0, [(g[2], 2.0), (g[0], 1.0), (g[3], 9.0), (g[4], 30.0)], ["y"])
    lists = merge_module_lists([a, b], k=3)
    assert lists["restart"] == [g[0], g[2], g[1]]
    assert lists["rephase"] == [] and lists["bump_var"] == []


def test_assemble_end_to_end(instances):
    results = []
    runner = Runner(CONFIG.budget, seed=42, jobs=1)
    for module in ("restart", "rephase", "bump_var"):
        results.append(evolve_module(module, ARCH, sorted(instances), instances, runner, CONFIG))
    pf = assemble_and_prune(results, sorted(instances), instances, runner, n=6)
    pf.check()
    assert BASELINE_ID in pf and len(pf) <= 7
    scores = pf.metadata["prune"]["scores"]
    assert all(math.isfinite(s) for s in scores.values())

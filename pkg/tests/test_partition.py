import json
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import nearest_centroid
from satport.features import FEATURE_NAMES, FeatureVector
from satport.generate import GeneratorSpec, generate
from satport.heuristics import BASELINE_ENSEMBLE, ConfigurationError, HeuristicEnsemble, Portfolio, genome
from satport.partition import (
    NO_WINNER,
    Cluster,
    ClusterMap,
    ClusterMapError,
    PerformanceMatrix,
    build_cluster_map,
    evaluate_matrix,
    load_cluster_map,
    load_matrix,
    optimal_assignment,
    save_cluster_map,
    select_ensemble,
    single_best,
)
from satport.runner import Cell, Runner, discover_instances
from satport.solver import Budget

D = len(FEATURE_NAMES)
T = 1000.0


def matrix_from(table):
    """``table``: {instance: {ensemble: runtime or None for timeout}}."""
    m = PerformanceMatrix(Budget(conflict_limit=int(T)), 42)
    for iid, row in table.items():
        for eid, rt in row.items():
            solved = rt is not None
            m.cells[(eid, iid)] = Cell(eid, iid, "SAT" if solved else "TIMEOUT",
                                       rt if solved else T, rt if solved else 2 * T)
    return m


def vec(*xs):
    return FeatureVector(*(list(xs) + [0.0] * (D - len(xs))))


def test_argmin_and_ties():
    m = matrix_from({
        "a": {"e1": 5.0, "e2": 3.0, "e3": None},
        "b": {"e1": 3.0, "e2": 3.0, "e3": 4.0},
        "c": {"e1": None, "e2": None, "e3": None},
    })
    assert optimal_assignment(m) == {"a": "e2", "b": "e1", "c": NO_WINNER}


def test_single_best_over_whole_matrix():
    m = matrix_from({"a": {"e1": 1.0, "e2": 10.0}, "b": {"e1": None, "e2": 10.0}})
    assert single_best(m) == "e2"  # e1 mean is (1 + 2000) / 2


def test_centroids_and_normalization():
    feats = {"a": vec(1.0, 2.0), "b": vec(3.0, 6.0), "c": vec(10.0, 0.0)}
    cmap = build_cluster_map({"a": "e1", "b": "e1", "c": NO_WINNER}, feats, ["e1", "e2"], "e1")
    (cluster,) = cmap.clusters
    assert cluster.members == ("a", "b")
    assert np.allclose(cluster.centroid[:2], [2.0, 4.0])
    all_x = np.array([feats[i] for i in "abc"])
    assert np.allclose(cmap.mu, all_x.mean(axis=0))  # NO_WINNER counts for the stats
    assert min(cmap.sigma) == 1e-9


def test_single_member_centroid():
    feats = {"a": vec(1.5, 2.5, 3.5)}
    cmap = build_cluster_map({"a": "e1"}, feats, ["e1"], "e1")
    assert cmap.clusters[0].centroid == tuple(feats["a"])


def test_zero_winners_is_an_error():
    with pytest.raises(ClusterMapError):
        build_cluster_map({"a": NO_WINNER}, {"a": vec(1.0)}, ["e1"], "e1")


@given(st.integers(0, 10_000), st.integers(1, 20), st.integers(1, 6))
def test_partition_properties(seed, n_inst, n_ens):
    rng = random.Random(seed)
    ens = [f"e{k}" for k in range(n_ens)]
    table = {f"i{j}": {e: (None if rng.random() < 0.3 else float(rng.randint(1, 20))) for e in ens}
             for j in range(n_inst)}
    m = matrix_from(table)
    assign = optimal_assignment(m)
    for iid, eid in assign.items():
        if eid is not NO_WINNER:
            assert all(m.p(eid, iid) <= m.p(e, iid) for e in ens)
    winners = {i for i, e in assign.items() if e is not NO_WINNER}
    if not winners:
        return
    feats = {i: FeatureVector(*[rng.uniform(-5, 5) for _ in range(D)]) for i in table}
    cmap = build_cluster_map(assign, feats, ens, single_best(m))
    members = [i for c in cmap.clusters for i in c.members]
    assert len(members) == len(set(members)) and set(members) == winners
    for c in cmap.clusters:
        mean = np.mean([feats[i] for i in c.members], axis=0)
        assert np.max(np.abs(np.array(c.centroid) - mean)) <= 1e-9
    # virtual-best bound on the training matrix
    vb = np.mean([min(m.p(e, i) for e in ens) for i in table])
    means = [m.mean_par2(e) for e in ens]
    assert vb <= min(means) + 1e-9 and min(means) <= max(means)


def three_cluster_map():
    centroids = {"a": vec(0.0, 0.0), "b": vec(10.0, 0.0), "c": vec(0.0, 10.0)}
    feats = {f"{k}{j}": FeatureVector(*(np.array(v) + np.r_[[j * 0.1, -j * 0.1], [0.0] * (D - 2)]))
             for k, v in centroids.items() for j in (-1, 1)}
    assign = {i: i[0] for i in feats}
    return build_cluster_map(assign, feats, ["a", "b", "c"], "a"), feats


def test_identity_and_brute_force_oracle():
    cmap, _ = three_cluster_map()
    for c in cmap.clusters:
        assert select_ensemble(cmap, c.centroid) == c.ensemble_id
    rng = random.Random(7)
    for _ in range(200):
        v = vec(rng.uniform(-3, 13), rng.uniform(-3, 13))
        expected = nearest_centroid(v, [(c.ensemble_id, c.centroid) for c in cmap.clusters],
                                    cmap.mu, cmap.sigma)
        assert select_ensemble(cmap, v) == expected
    assert select_ensemble(cmap, vec(9.0, 1.0)) == "b"


def test_equidistant_prefers_smaller_id():
    feats = {"x": vec(-1.0), "y": vec(1.0)}
    cmap = build_cluster_map({"x": "zz", "y": "aa"}, feats, ["aa", "zz"], "aa")
    assert select_ensemble(cmap, vec(0.0)) == "aa"


@given(st.integers(0, 1000), st.lists(st.floats(0.01, 100), min_size=D, max_size=D))
def test_rescaling_invariance(seed, scale):
    rng = random.Random(seed)
    feats = {f"i{j}": FeatureVector(*[rng.uniform(0, 10) for _ in range(D)]) for j in range(12)}
    assign = {i: f"e{rng.randint(0, 3)}" for i in feats}
    ens = [f"e{k}" for k in range(4)]
    s = np.array(scale)
    scaled = {i: FeatureVector(*(np.array(v) * s)) for i, v in feats.items()}
    a = build_cluster_map(assign, feats, ens, "e0")
    b = build_cluster_map(assign, scaled, ens, "e0")
    for _ in range(20):
        q = np.array([rng.uniform(0, 10) for _ in range(D)])
        assert select_ensemble(a, FeatureVector(*q)) == select_ensemble(b, FeatureVector(*(q * s)))


def test_modes():
    cmap, _ = three_cluster_map()
    v = vec(10.0, 0.0)
    assert select_ensemble(cmap, v, "single-best") == "a"
    assert select_ensemble(cmap, v, "fixed:c") == "c"
    draws = [select_ensemble(cmap, v, "random", random.Random(3)) for _ in range(3)]
    assert len(set(draws)) == 1
    seq1 = [select_ensemble(cmap, v, "random", r) for r in [random.Random(5)] for _ in range(30)]
    r = random.Random(5)
    assert seq1 == [select_ensemble(cmap, v, "random", r) for _ in range(30)]
    assert set(seq1) <= {"a", "b", "c"}
    with pytest.raises(ConfigurationError):
        select_ensemble(cmap, v, "fixed:nope")
    with pytest.raises(ConfigurationError):
        select_ensemble(cmap, v, "fastest")
    with pytest.raises(ConfigurationError):
        select_ensemble(cmap, v, "random")  # needs a generator


def test_save_load_round_trip(tmp_path):
    cmap, _ = three_cluster_map()
    path = tmp_path / "map.json"
    save_cluster_map(cmap, path)
    back = load_cluster_map(path)
    assert back == cmap
    rng = random.Random(11)
    for _ in range(100):
        q = FeatureVector(*[rng.uniform(-5, 15) for _ in range(D)])
        assert select_ensemble(back, q) == select_ensemble(cmap, q)
        assert np.array_equal(back.distances(q), cmap.distances(q))


def test_load_errors_and_provenance(tmp_path):
    cmap, _ = three_cluster_map()
    path = tmp_path / "map.json"
    path.write_text("{broken")
    with pytest.raises(ClusterMapError):
        load_cluster_map(path)
    data = cmap.to_json()
    data["clusters"] = []
    path.write_text(json.dumps(data))
    with pytest.raises(ClusterMapError):
        load_cluster_map(path)
    data = cmap.to_json()
    data["normalization"]["mu"] = data["normalization"]["mu"][:3]
    path.write_text(json.dumps(data))
    with pytest.raises(ClusterMapError):
        load_cluster_map(path)
    with pytest.raises(ClusterMapError):
        ClusterMap((), cmap.mu, cmap.sigma, cmap.ensembles, "a")
    save_cluster_map(cmap, path)
    with pytest.warns(UserWarning, match="different portfolio"):
        load_cluster_map(path, Portfolio([BASELINE_ENSEMBLE]))


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("mx")
    generate(GeneratorSpec("random-3sat", n=50, m=215, seed=3, count=3), root)
    generate(GeneratorSpec("planted-sat", n=60, m=250, seed=3, count=2), root)
    return root


def _pf():
    other = HeuristicEnsemble(genome("restart", "fixed", c=50), genome("rephase", "none"),
                              genome("bump_var", "classic-vsids", decay=0.8))
    return Portfolio([BASELINE_ENSEMBLE, other])


def test_evaluate_matrix_complete_and_resumable(small_set, tmp_path):
    paths = discover_instances(small_set)
    pf = _pf()
    path = tmp_path / "matrix.csv"
    runner = Runner(Budget(conflict_limit=400), seed=42, jobs=1)
    m = evaluate_matrix(pf, paths, runner, path, chunk=3)
    assert len(m.cells) == len(pf) * len(paths) == runner.executed
    for c in m.cells.values():
        assert c.par2 == (c.metric if c.solved else 800.0)
    assert load_matrix(path).to_csv_text() == m.to_csv_text()

    # simulate an interrupt: drop the last rows of the file, then resume
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-4]) + "\n")
    again = Runner(Budget(conflict_limit=400), seed=42, jobs=1)
    m2 = evaluate_matrix(pf, paths, again, path)
    assert again.executed == 4
    assert m2.to_csv_text() == m.to_csv_text()

    other_budget = Runner(Budget(conflict_limit=300), seed=42, jobs=1)
    evaluate_matrix(pf, paths, other_budget, path)
    assert other_budget.executed == len(m.cells)  # budget is part of the key


def test_unreadable_instance_marked_error(small_set, tmp_path):
    paths = dict(discover_instances(small_set))
    bad = tmp_path / "broken.cnf"
    bad.write_text("p cnf 2 1\n1 3 0\n")
    paths["broken.cnf"] = bad
    with pytest.warns(UserWarning, match="unreadable"):
        m = evaluate_matrix(_pf(), paths, Runner(Budget(conflict_limit=400), jobs=1))
    assert m.errored() == ["broken.cnf"]
    assert "broken.cnf" not in optimal_assignment(m)


def test_evaluate_matrix_parallel_matches_serial(small_set):
    paths = discover_instances(small_set)
    serial = evaluate_matrix(_pf(), paths, Runner(Budget(conflict_limit=400), jobs=1))
    parallel = evaluate_matrix(_pf(), paths, Runner(Budget(conflict_limit=400), jobs=2))
    assert serial.to_csv_text() == parallel.to_csv_text()


def test_empty_portfolio_rejected(small_set):
    with pytest.raises(ConfigurationError):
        evaluate_matrix(Portfolio([]), discover_instances(small_set), Runner(Budget(conflict_limit=10)))

"""Performance matrix, per-instance winners, clusters and nearest-centroid selection."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import FEATURE_NAMES, FeatureVector
from .heuristics import ConfigurationError, Portfolio
from .runner import ERROR, Cell, Runner
from .solver import Budget

__all__ = [
    "NO_WINNER",
    "Cluster",
    "ClusterMap",
    "ClusterMapError",
    "PerformanceMatrix",
    "build_cluster_map",
    "evaluate_matrix",
    "load_cluster_map",
    "load_matrix",
    "optimal_assignment",
    "parse_mode",
    "save_cluster_map",
    "select_ensemble",
    "single_best",
]

NO_WINNER = None
SIGMA_FLOOR = 1e-9
CLUSTER_MAP_VERSION = 1
SELECTION_MODES = ("adaptive", "random", "single-best", "fixed")


class ClusterMapError(ValueError):
    """A cluster map that cannot be built, saved or loaded."""


# --------------------------------------------------------------------------
# Performance matrix
# --------------------------------------------------------------------------


@dataclass
class PerformanceMatrix:
    budget: Budget
    seed: int
    cells: dict[tuple[str, str], Cell] = field(default_factory=dict)

    @property
    def ensembles(self) -> list[str]:
        return sorted({e for e, _ in self.cells})

    @property
    def instances(self) -> list[str]:
        return sorted({i for _, i in self.cells})

    def p(self, eid: str, iid: str) -> float:
        return self.cells[(eid, iid)].par2

    def errored(self) -> list[str]:
        """Instances whose file could not be read."""
        return sorted({i for (_, i), c in self.cells.items() if c.status == ERROR})

    def usable_instances(self) -> list[str]:
        bad = set(self.errored())
        return [i for i in self.instances if i not in bad]

    def mean_par2(self, eid: str, instance_ids: Sequence[str] | None = None) -> float:
        ids = self.usable_instances() if instance_ids is None else list(instance_ids)
        if not ids:
            raise ValueError("no instances to average over")
        return sum(self.p(eid, i) for i in ids) / len(ids)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["ensemble_id", "instance_id", "status", "metric", "par2"])
        for key in sorted(self.cells):
            c = self.cells[key]
            writer.writerow([c.ensemble_id, c.instance_id, c.status, repr(c.metric), repr(c.par2)])
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv_text().encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(self.to_csv_text())
        tmp.replace(path)
        _meta_path(path).write_text(
            json.dumps({"budget": self.budget.describe(), "seed": self.seed}, indent=2) + "\n"
        )


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def load_matrix(path: str | Path) -> PerformanceMatrix:
    path = Path(path)
    try:
        meta = json.loads(_meta_path(path).read_text())
        matrix = PerformanceMatrix(Budget.parse(meta["budget"]), int(meta["seed"]))
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                cell = Cell(row["ensemble_id"], row["instance_id"], row["status"],
                            float(row["metric"]), float(row["par2"]))
                matrix.cells[(cell.ensemble_id, cell.instance_id)] = cell
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"cannot load performance matrix {path}: {exc}") from None
    return matrix


def evaluate_matrix(
    portfolio: Portfolio,
    instances: Mapping[str, Path],
    runner: Runner,
    path: str | Path | None = None,
    chunk: int = 32,
) -> PerformanceMatrix:
    """Solve every (ensemble, instance) pair of ``portfolio`` x ``instances``.

    With ``path`` set, cells already present in a matrix file with the same
    budget and seed are reused and the file is rewritten as work progresses.
    """
    if len(portfolio) == 0:
        raise ConfigurationError("cannot evaluate an empty portfolio")
    matrix = PerformanceMatrix(runner.budget, runner.seed)
    if path is not None and Path(path).exists():
        try:
            old = load_matrix(path)
        except ValueError as exc:
            warnings.warn(f"ignoring unreadable partial matrix: {exc}", stacklevel=2)
        else:
            if old.budget == runner.budget and old.seed == runner.seed:
                for cell in old.cells.values():
                    if cell.status != ERROR:
                        runner.store.remember(cell, runner.budget, runner.seed)
    wanted = {(e.id, i) for e in portfolio.ensembles for i in instances}
    pairs = [(e, i) for e in portfolio.ensembles for i in sorted(instances)]
    for start in range(0, len(pairs), chunk):
        batch = pairs[start:start + chunk]
        for cell in runner.run(batch, instances):
            matrix.cells[(cell.ensemble_id, cell.instance_id)] = Cell(
                cell.ensemble_id, cell.instance_id, cell.status, cell.metric, cell.par2
            )
        if path is not None:
            matrix.save(path)
    assert set(matrix.cells) == wanted
    bad = matrix.errored()
    if bad:
        warnings.warn(f"{len(bad)} unreadable instance(s) excluded: {', '.join(bad)}", stacklevel=2)
    return matrix


def optimal_assignment(matrix: PerformanceMatrix) -> dict[str, str | None]:
    """h*(j) per usable instance; NO_WINNER where every ensemble timed out."""
    out: dict[str, str | None] = {}
    ensembles = matrix.ensembles
    for iid in matrix.usable_instances():
        best: str | None = NO_WINNER
        best_p = math.inf
        for eid in ensembles:  # sorted, so strict < keeps the smaller id on ties
            c = matrix.cells[(eid, iid)]
            if c.solved and c.par2 < best_p:
                best, best_p = eid, c.par2
        out[iid] = best
    return out


def single_best(matrix: PerformanceMatrix) -> str:
    """Ensemble with the lowest mean PAR-2 over the usable training instances."""
    scores = {eid: matrix.mean_par2(eid) for eid in matrix.ensembles}
    return min(scores, key=lambda e: (scores[e], e))


# --------------------------------------------------------------------------
# Cluster map
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cluster:
    ensemble_id: str
    members: tuple[str, ...]
    centroid: tuple[float, ...]


@dataclass(frozen=True)
class ClusterMap:
    clusters: tuple[Cluster, ...]
    mu: tuple[float, ...]
    sigma: tuple[float, ...]
    ensembles: tuple[str, ...]
    single_best: str
    matrix_hash: str = ""
    portfolio_hash: str = ""

    def __post_init__(self) -> None:
        if not self.clusters:
            raise ClusterMapError("cluster map has no clusters")
        d = len(FEATURE_NAMES)
        if len(self.mu) != d or len(self.sigma) != d:
            raise ClusterMapError("normalization vectors must have one entry per feature")
        for c in self.clusters:
            if len(c.centroid) != d:
                raise ClusterMapError(f"centroid of {c.ensemble_id} has wrong length")
            if c.ensemble_id not in self.ensembles:
                raise ClusterMapError(f"cluster ensemble {c.ensemble_id} not in the portfolio list")
        values = np.array([*self.mu, *self.sigma, *(x for c in self.clusters for x in c.centroid)])
        if not np.all(np.isfinite(values)):
            raise ClusterMapError("non-finite value in cluster map")
        if min(self.sigma) < SIGMA_FLOOR:
            raise ClusterMapError("sigma below the floor")
        ids = [c.ensemble_id for c in self.clusters]
        if ids != sorted(set(ids)):
            raise ClusterMapError("clusters must be unique and ordered by ensemble id")
        if self.single_best not in self.ensembles:
            raise ClusterMapError(f"single-best {self.single_best} not in the portfolio list")
        # Derived arrays for fast queries; the dataclass itself stays the source of truth.
        sigma = np.array(self.sigma)
        active = sigma > SIGMA_FLOOR
        object.__setattr__(self, "_mu", np.array(self.mu)[active])
        object.__setattr__(self, "_sigma", sigma[active])
        object.__setattr__(self, "_active", active)
        centroids = np.array([c.centroid for c in self.clusters])[:, active]
        object.__setattr__(self, "_z", (centroids - self._mu) / self._sigma)

    def distances(self, v: FeatureVector | Sequence[float]) -> np.ndarray:
        """Squared z-space distance from ``v`` to each centroid.

        Dimensions whose spread was floored (constant over training) carry no
        information and are left out.
        """
        x = np.asarray(v, dtype=float)
        if x.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got shape {x.shape}")
        z = (x[self._active] - self._mu) / self._sigma
        return np.sum((self._z - z) ** 2, axis=1)

    def nearest(self, v: FeatureVector | Sequence[float]) -> str:
        d = self.distances(v)
        return self.clusters[int(np.argmin(d))].ensemble_id  # first minimum = smallest id

    def to_json(self) -> dict:
        return {
            "version": CLUSTER_MAP_VERSION,
            "feature_names": list(FEATURE_NAMES),
            "normalization": {"mu": list(self.mu), "sigma": list(self.sigma)},
            "clusters": [
                {"ensemble_id": c.ensemble_id, "centroid": list(c.centroid), "members": list(c.members)}
                for c in self.clusters
            ],
            "ensembles": list(self.ensembles),
            "single_best": self.single_best,
            "matrix_hash": self.matrix_hash,
            "portfolio_hash": self.portfolio_hash,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "ClusterMap":
        try:
            if data["version"] != CLUSTER_MAP_VERSION:
                raise ClusterMapError(f"unsupported cluster map version {data['version']!r}")
            if list(data.get("feature_names", FEATURE_NAMES)) != list(FEATURE_NAMES):
                raise ClusterMapError("cluster map was built over a different feature set")
            clusters = tuple(
                Cluster(str(c["ensemble_id"]), tuple(str(m) for m in c["members"]),
                        tuple(float(x) for x in c["centroid"]))
                for c in data["clusters"]
            )
            return cls(
                clusters,
                tuple(float(x) for x in data["normalization"]["mu"]),
                tuple(float(x) for x in data["normalization"]["sigma"]),
                tuple(str(e) for e in data["ensembles"]),
                str(data["single_best"]),
                str(data.get("matrix_hash", "")),
                str(data.get("portfolio_hash", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ClusterMapError):
                raise
            raise ClusterMapError(f"malformed cluster map: {exc!r}") from None


def build_cluster_map(
    assignment: Mapping[str, str | None],
    features: Mapping[str, FeatureVector],
    ensembles: Sequence[str],
    single_best_id: str,
    matrix_hash: str = "",
    portfolio_hash: str = "",
) -> ClusterMap:
    """Group winner-bearing instances by h*(j) and freeze z-score statistics.

    Normalization covers every assigned instance, winners and NO_WINNER alike.
    """
    ids = sorted(assignment)
    missing = [i for i in ids if i not in features]
    if missing:
        raise ClusterMapError(f"no features for {len(missing)} instance(s), e.g. {missing[0]}")
    winners = [i for i in ids if assignment[i] is not NO_WINNER]
    if not winners:
        raise ClusterMapError("no training instance was solved by any ensemble")
    all_x = np.array([features[i] for i in ids], dtype=float)
    mu = all_x.mean(axis=0)
    sigma = all_x.std(axis=0)
    sigma = np.where(sigma > SIGMA_FLOOR, sigma, SIGMA_FLOOR)
    groups: dict[str, list[str]] = {}
    for i in winners:
        groups.setdefault(assignment[i], []).append(i)  # type: ignore[arg-type]
    clusters = []
    for eid in sorted(groups):
        members = groups[eid]
        centroid = np.array([features[i] for i in members], dtype=float).mean(axis=0)
        clusters.append(Cluster(eid, tuple(members), tuple(float(x) for x in centroid)))
    return ClusterMap(
        tuple(clusters),
        tuple(float(x) for x in mu),
        tuple(float(x) for x in sigma),
        tuple(sorted(ensembles)),
        single_best_id,
        matrix_hash,
        portfolio_hash,
    )


def parse_mode(mode: str) -> tuple[str, str | None]:
    """Split ``fixed:ID`` style modes into (kind, argument)."""
    kind, sep, arg = mode.partition(":")
    if kind not in SELECTION_MODES:
        raise ConfigurationError(f"unknown selection mode {mode!r}")
    if kind == "fixed":
        if not arg:
            raise ConfigurationError("fixed mode needs an ensemble id, e.g. fixed:baseline")
        return kind, arg
    if sep:
        raise ConfigurationError(f"mode {kind} takes no argument")
    return kind, None


def select_ensemble(
    cluster_map: ClusterMap,
    v_new: FeatureVector | Sequence[float],
    mode: str = "adaptive",
    rng: random.Random | None = None,
) -> str:
    """Pick an ensemble id for a new instance under one of the selection modes.

    Random mode draws from ``rng`` (uniform over the portfolio ids in sorted
    order); pass the same seeded generator across a run for reproducibility.
    """
    if cluster_map is None or not cluster_map.clusters:
        raise ClusterMapError("empty cluster map")
    kind, arg = parse_mode(mode)
    if kind == "adaptive":
        return cluster_map.nearest(v_new)
    if kind == "random":
        if rng is None:
            raise ConfigurationError("random mode needs a seeded generator")
        return rng.choice(sorted(cluster_map.ensembles))
    if kind == "single-best":
        return cluster_map.single_best
    if arg not in cluster_map.ensembles:
        raise ConfigurationError(f"unknown ensemble id {arg!r}")
    return arg  # type: ignore[return-value]


def save_cluster_map(cluster_map: ClusterMap, path: str | Path) -> None:
    if not cluster_map.clusters:
        raise ClusterMapError("refusing to save a cluster map with no clusters")
    Path(path).write_text(json.dumps(cluster_map.to_json(), indent=2) + "\n")


def load_cluster_map(path: str | Path, portfolio: Portfolio | None = None) -> ClusterMap:
    """Read a cluster map; warns when it was built for a different portfolio."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ClusterMapError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, Mapping):
        raise ClusterMapError(f"{path}: not a cluster map object")
    cmap = ClusterMap.from_json(data)
    if portfolio is not None:
        check_provenance(cmap, portfolio)
    return cmap


def check_provenance(cluster_map: ClusterMap, portfolio: Portfolio) -> bool:
    ok = cluster_map.portfolio_hash in ("", portfolio.fingerprint()) and all(
        e in portfolio for e in cluster_map.ensembles
    )
    if not ok:
        warnings.warn("cluster map was built for a different portfolio", stacklevel=2)
    return ok

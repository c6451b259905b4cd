"""Heuristic families for the restart, rephase and bump_var hooks.

A :class:`HeuristicGenome` names a family and its parameters. Genomes are
plain data; :func:`make_policy` turns one into the stateful policy object the
solver calls during a single run. Three genomes (one per module) form a
:class:`HeuristicEnsemble`; a :class:`Portfolio` is an ordered set of ensembles
plus the per-module component lists they were drawn from.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

__all__ = [
    "BASELINE_ENSEMBLE",
    "BASELINE_ID",
    "MODULES",
    "ConfigurationError",
    "Family",
    "HeuristicEnsemble",
    "HeuristicGenome",
    "ParamSpec",
    "Portfolio",
    "PortfolioError",
    "builtin_families",
    "cartesian_expand",
    "ensemble_id",
    "genome",
    "load_portfolio",
    "luby",
    "make_policy",
    "save_portfolio",
]

MODULES = ("restart", "rephase", "bump_var")
PORTFOLIO_VERSION = 1
MAX_PER_MODULE = 3
BASELINE_ID = "baseline"


class ConfigurationError(ValueError):
    """An invalid genome, ensemble or portfolio definition."""


class PortfolioError(ConfigurationError):
    """A portfolio file that cannot be loaded."""


# --------------------------------------------------------------------------
# Runtime policies
# --------------------------------------------------------------------------


def luby(i: int) -> int:
    """The i-th term (1-based) of the Luby sequence 1,1,2,1,1,2,4,..."""
    if i < 1:
        raise ValueError("luby index is 1-based")
    x = i - 1
    size, exponent = 1, 0
    while size < x + 1:
        exponent += 1
        size = 2 * size + 1
    while size - 1 != x:
        size = (size - 1) >> 1
        exponent -= 1
        x %= size
    return 1 << exponent


class RestartPolicy:
    def should_restart(self, solver: Any) -> bool:
        raise NotImplementedError

    def on_restart(self) -> None:
        pass


class LubyRestart(RestartPolicy):
    def __init__(self, u: int) -> None:
        self.unit = u
        self.step = 1

    def interval(self) -> int:
        return self.unit * luby(self.step)

    def should_restart(self, solver: Any) -> bool:
        return solver.conflicts_since_restart >= self.interval()

    def on_restart(self) -> None:
        self.step += 1


class GeometricRestart(RestartPolicy):
    def __init__(self, c: int, g: float) -> None:
        self.first = c
        self.growth = g
        self.limit = float(c)

    def should_restart(self, solver: Any) -> bool:
        return solver.conflicts_since_restart >= self.limit

    def on_restart(self) -> None:
        self.limit *= self.growth


class FixedRestart(RestartPolicy):
    def __init__(self, c: int) -> None:
        self.interval = c

    def should_restart(self, solver: Any) -> bool:
        return solver.conflicts_since_restart >= self.interval


class LbdDynamicRestart(RestartPolicy):
    """Glucose-style: restart when recent learned clauses are worse than average.

    Fires once ``w`` conflicts have been seen since the last restart and the
    mean LBD of that window, scaled by ``K``, exceeds the global mean LBD.
    """

    def __init__(self, w: int, K: float) -> None:
        self.window: deque[int] = deque(maxlen=w)
        self.factor = K
        self.total = 0
        self.count = 0

    def should_restart(self, solver: Any) -> bool:
        lbd = solver.last_lbd
        self.window.append(lbd)
        self.total += lbd
        self.count += 1
        if len(self.window) < self.window.maxlen:
            return False
        recent = sum(self.window) / len(self.window)
        return recent * self.factor > self.total / self.count

    def on_restart(self) -> None:
        self.window.clear()


class RephasePolicy:
    period: int | None = None

    def apply(self, phases: list[bool], rng: random.Random) -> None:
        pass


class NoRephase(RephasePolicy):
    pass


class ResetRephase(RephasePolicy):
    def __init__(self, R: int) -> None:
        self.period = R

    def apply(self, phases: list[bool], rng: random.Random) -> None:
        phases[:] = [False] * len(phases)


class FlipRephase(RephasePolicy):
    def __init__(self, R: int) -> None:
        self.period = R

    def apply(self, phases: list[bool], rng: random.Random) -> None:
        phases[:] = [not p for p in phases]


class RandomRephase(RephasePolicy):
    def __init__(self, R: int, p: float) -> None:
        self.period = R
        self.prob = p

    def apply(self, phases: list[bool], rng: random.Random) -> None:
        for v in range(len(phases)):
            if rng.random() < self.prob:
                phases[v] = rng.random() < 0.5


class BumpPolicy:
    """Activity update run once per conflict.

    ``learned`` are the variables of the learned clause, ``reason_side`` the
    variables occurring in the reasons of those literals but not in the clause
    itself, and ``seen`` every variable touched by conflict analysis.
    """

    def __init__(self, decay: float) -> None:
        self.decay = decay

    def on_conflict(
        self, solver: Any, learned: Sequence[int], reason_side: Sequence[int], seen: Sequence[int]
    ) -> None:
        raise NotImplementedError


class ClassicVsids(BumpPolicy):
    def on_conflict(self, solver, learned, reason_side, seen):
        for v in learned:
            solver.bump_activity(v, 1.0)
        solver.decay_activity(self.decay)


class ReasonSideBump(BumpPolicy):
    def __init__(self, decay: float, beta: float) -> None:
        super().__init__(decay)
        self.beta = beta

    def on_conflict(self, solver, learned, reason_side, seen):
        for v in learned:
            solver.bump_activity(v, 1.0)
        if self.beta > 0.0:
            for v in reason_side:
                solver.bump_activity(v, self.beta)
        solver.decay_activity(self.decay)


class ConflictFrequencyBump(BumpPolicy):
    """VSIDS plus a bonus proportional to a variable's recent conflict share.

    Participation is an exponential moving average (factor ``memory`` per
    conflict) of whether the variable was seen during analysis; it is kept
    lazily so each conflict costs O(seen).
    """

    memory = 0.9

    def __init__(self, decay: float, bonus: float) -> None:
        super().__init__(decay)
        self.bonus = bonus
        self.score: dict[int, float] = {}
        self.stamp: dict[int, int] = {}
        self.tick = 0

    def _participation(self, v: int) -> float:
        s = self.score.get(v)
        if s is None:
            return 0.0
        return s * self.memory ** (self.tick - self.stamp[v])

    def on_conflict(self, solver, learned, reason_side, seen):
        self.tick += 1
        keep = 1.0 - self.memory
        for v in seen:
            self.score[v] = self._participation(v) + keep
            self.stamp[v] = self.tick
        for v in learned:
            solver.bump_activity(v, 1.0 + self.bonus * self._participation(v))
        solver.decay_activity(self.decay)


# --------------------------------------------------------------------------
# Catalog
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: type  # int or float
    low: float
    high: float
    default: float

    def validate(self, value: Any) -> int | float:
        if isinstance(value, bool):
            raise ConfigurationError(f"parameter {self.name} must be numeric")
        if self.kind is int:
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, int):
                raise ConfigurationError(f"parameter {self.name} must be an integer, got {value!r}")
        else:
            if not isinstance(value, (int, float)):
                raise ConfigurationError(f"parameter {self.name} must be a number, got {value!r}")
            value = float(value)
            if not math.isfinite(value):
                raise ConfigurationError(f"parameter {self.name} must be finite")
        if not self.low <= value <= self.high:
            raise ConfigurationError(
                f"parameter {self.name}={value} outside [{self.low}, {self.high}]"
            )
        return value


@dataclass(frozen=True)
class Family:
    module: str
    name: str
    params: tuple[ParamSpec, ...]
    factory: Callable[..., Any] = field(compare=False, repr=False)
    description: str = ""

    def param_spec(self, name: str) -> ParamSpec:
        for spec in self.params:
            if spec.name == name:
                return spec
        raise ConfigurationError(f"family {self.name} has no parameter {name!r}")

    def default_genome(self) -> "HeuristicGenome":
        return genome(self.module, self.name, **{p.name: p.default for p in self.params})


_DECAY = ParamSpec("decay", float, 0.5, 0.999, 0.95)
_PERIOD = ParamSpec("R", int, 10, 100_000, 1000)

_FAMILIES: tuple[Family, ...] = (
    Family("restart", "luby", (ParamSpec("u", int, 1, 10_000, 100),), LubyRestart,
           "restart after u * luby(i) conflicts"),
    Family("restart", "geometric",
           (ParamSpec("c", int, 1, 10_000, 100), ParamSpec("g", float, 1.0, 4.0, 1.5)),
           GeometricRestart, "first interval c conflicts, each next one g times longer"),
    Family("restart", "fixed", (ParamSpec("c", int, 1, 10_000, 100),), FixedRestart,
           "restart every c conflicts"),
    Family("restart", "lbd-dynamic",
           (ParamSpec("w", int, 5, 1000, 50), ParamSpec("K", float, 0.5, 1.5, 0.8)),
           LbdDynamicRestart, "restart when K * mean LBD of last w conflicts > global mean"),
    Family("rephase", "none", (), NoRephase, "saved phases are never altered"),
    Family("rephase", "reset-false", (_PERIOD,), ResetRephase,
           "every R conflicts set all saved phases to false"),
    Family("rephase", "flip", (_PERIOD,), FlipRephase,
           "every R conflicts negate all saved phases"),
    Family("rephase", "random", (_PERIOD, ParamSpec("p", float, 0.0, 1.0, 0.5)), RandomRephase,
           "every R conflicts re-draw each saved phase with probability p"),
    Family("bump_var", "classic-vsids", (_DECAY,), ClassicVsids,
           "bump learned-clause variables, then grow the increment by 1/decay"),
    Family("bump_var", "reason-side", (_DECAY, ParamSpec("beta", float, 0.0, 1.0, 0.5)),
           ReasonSideBump, "classic VSIDS plus beta * inc on reason-side variables"),
    Family("bump_var", "conflict-frequency",
           (_DECAY, ParamSpec("bonus", float, 0.0, 10.0, 1.0)), ConflictFrequencyBump,
           "classic VSIDS with an extra bump proportional to recent conflict participation"),
)
_BY_NAME = {(f.module, f.name): f for f in _FAMILIES}


def builtin_families() -> dict[str, list[Family]]:
    """Catalog of parameterized families, keyed by module."""
    return {m: [f for f in _FAMILIES if f.module == m] for m in MODULES}


def get_family(module: str, name: str) -> Family:
    if module not in MODULES:
        raise ConfigurationError(f"unknown module {module!r}")
    try:
        return _BY_NAME[(module, name)]
    except KeyError:
        raise ConfigurationError(f"unknown {module} family {name!r}") from None


def catalog_json() -> dict[str, list[dict[str, Any]]]:
    """The catalog in a serializable form (for external proposers)."""
    return {
        module: [
            {
                "family": f.name,
                "description": f.description,
                "params": [
                    {"name": p.name, "type": p.kind.__name__, "low": p.low, "high": p.high,
                     "default": p.default}
                    for p in f.params
                ],
            }
            for f in families
        ]
        for module, families in builtin_families().items()
    }


# --------------------------------------------------------------------------
# Genomes, ensembles, portfolios
# --------------------------------------------------------------------------


def _fmt(value: int | float) -> str:
    return str(value) if isinstance(value, int) else repr(float(value))


@dataclass(frozen=True, order=True)
class HeuristicGenome:
    module: str
    family: str
    params: tuple[tuple[str, int | float], ...] = ()

    @property
    def id(self) -> str:
        inner = ",".join(f"{k}={_fmt(v)}" for k, v in self.params)
        return f"{self.family}({inner})" if inner else self.family

    def param(self, name: str) -> int | float:
        for k, v in self.params:
            if k == name:
                return v
        raise KeyError(name)

    @property
    def param_dict(self) -> dict[str, int | float]:
        return dict(self.params)

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "module": self.module, "family": self.family,
                "params": self.param_dict}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "HeuristicGenome":
        try:
            return genome(data["module"], data["family"], **dict(data.get("params") or {}))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed genome {data!r}") from exc


def genome(module: str, family: str, **params: Any) -> HeuristicGenome:
    """Build a validated genome; parameters are stored in catalog order."""
    fam = get_family(module, family)
    unknown = set(params) - {p.name for p in fam.params}
    if unknown:
        raise ConfigurationError(f"family {family} has no parameter(s) {sorted(unknown)}")
    missing = [p.name for p in fam.params if p.name not in params]
    if missing:
        raise ConfigurationError(f"family {family} missing parameter(s) {missing}")
    values = tuple((p.name, p.validate(params[p.name])) for p in fam.params)
    return HeuristicGenome(module, family, values)


def make_policy(g: HeuristicGenome) -> Any:
    fam = get_family(g.module, g.family)
    for k, v in g.params:
        fam.param_spec(k).validate(v)
    return fam.factory(**g.param_dict)


def ensemble_id(restart: HeuristicGenome, rephase: HeuristicGenome, bump: HeuristicGenome) -> str:
    if (restart, rephase, bump) == BASELINE_COMPONENTS:
        return BASELINE_ID
    key = f"{restart.id}|{rephase.id}|{bump.id}"
    return "e-" + hashlib.sha256(key.encode()).hexdigest()[:10]


@dataclass(frozen=True)
class HeuristicEnsemble:
    restart: HeuristicGenome
    rephase: HeuristicGenome
    bump_var: HeuristicGenome
    provenance: str = "manual"

    def __post_init__(self) -> None:
        for module in MODULES:
            g = getattr(self, module)
            if not isinstance(g, HeuristicGenome) or g.module != module:
                raise ConfigurationError(f"ensemble slot {module} holds {g!r}")

    @property
    def id(self) -> str:
        return ensemble_id(self.restart, self.rephase, self.bump_var)

    @property
    def components(self) -> tuple[HeuristicGenome, HeuristicGenome, HeuristicGenome]:
        return (self.restart, self.rephase, self.bump_var)

    def label(self) -> str:
        return " + ".join(g.id for g in self.components)

    def replace(self, g: HeuristicGenome, provenance: str | None = None) -> "HeuristicEnsemble":
        parts = {m: getattr(self, m) for m in MODULES}
        parts[g.module] = g
        return HeuristicEnsemble(**parts, provenance=provenance or self.provenance)


BASELINE_COMPONENTS = (
    genome("restart", "luby", u=100),
    genome("rephase", "none"),
    genome("bump_var", "classic-vsids", decay=0.95),
)
BASELINE_ENSEMBLE = HeuristicEnsemble(*BASELINE_COMPONENTS, provenance="baseline")


def cartesian_expand(
    restarts: Sequence[HeuristicGenome],
    rephases: Sequence[HeuristicGenome],
    bumps: Sequence[HeuristicGenome],
    provenance: str = "manual",
    k: int | None = MAX_PER_MODULE,
) -> list[HeuristicEnsemble]:
    """All restart x rephase x bump_var combinations, ordered by ensemble id."""
    lists = {"restart": restarts, "rephase": rephases, "bump_var": bumps}
    for module, items in lists.items():
        if not items:
            raise ConfigurationError(f"empty {module} list")
        if k is not None and len(items) > k:
            raise ConfigurationError(f"{len(items)} {module} components exceed k={k}")
        for g in items:
            if g.module != module:
                raise ConfigurationError(f"{g.id} is not a {module} genome")
    seen: dict[str, HeuristicEnsemble] = {}
    for r, p, b in itertools.product(restarts, rephases, bumps):
        e = HeuristicEnsemble(r, p, b, provenance=provenance)
        seen.setdefault(e.id, e)
    return [seen[i] for i in sorted(seen)]


@dataclass
class Portfolio:
    ensembles: list[HeuristicEnsemble]
    modules: dict[str, list[HeuristicGenome]] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for m in MODULES:
            self.modules.setdefault(m, [])
        ids = [e.id for e in self.ensembles]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate ensemble ids in portfolio")

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.ensembles]

    def get(self, eid: str) -> HeuristicEnsemble:
        for e in self.ensembles:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def __contains__(self, eid: object) -> bool:
        return any(e.id == eid for e in self.ensembles)

    def __len__(self) -> int:
        return len(self.ensembles)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(sorted(self.ids)).encode()).hexdigest()[:16]

    def check(self, k: int = MAX_PER_MODULE) -> None:
        """Enforce the k-per-module cap and the product-membership invariant."""
        for m in MODULES:
            evolved = [g for g in self.modules[m] if g not in BASELINE_COMPONENTS]
            if len(evolved) > k:
                raise ConfigurationError(f"{len(evolved)} {m} components exceed k={k}")
        for e in self.ensembles:
            if e.id == BASELINE_ID:
                continue
            for g in e.components:
                if g not in self.modules[g.module]:
                    raise ConfigurationError(f"ensemble {e.id} uses unlisted component {g.id}")

    def to_json(self) -> dict[str, Any]:
        return {
            "version": PORTFOLIO_VERSION,
            "metadata": self.metadata,
            "modules": {m: [g.to_json() for g in self.modules[m]] for m in MODULES},
            "ensembles": [
                {"id": e.id, "restart_ref": e.restart.id, "rephase_ref": e.rephase.id,
                 "bump_ref": e.bump_var.id, "provenance": e.provenance}
                for e in self.ensembles
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Portfolio":
        if not isinstance(data, Mapping):
            raise PortfolioError("portfolio file is not an object")
        if data.get("version") != PORTFOLIO_VERSION:
            raise PortfolioError(
                f"unsupported portfolio version {data.get('version')!r} "
                f"(expected {PORTFOLIO_VERSION})"
            )
        try:
            modules = {
                m: [HeuristicGenome.from_json(g) for g in data["modules"].get(m, [])]
                for m in MODULES
            }
            pool = {m: {g.id: g for g in modules[m]} for m in MODULES}
            for g in BASELINE_COMPONENTS:
                pool[g.module].setdefault(g.id, g)
            ensembles = []
            for rec in data["ensembles"]:
                e = HeuristicEnsemble(
                    pool["restart"][rec["restart_ref"]],
                    pool["rephase"][rec["rephase_ref"]],
                    pool["bump_var"][rec["bump_ref"]],
                    provenance=rec.get("provenance", "manual"),
                )
                if "id" in rec and rec["id"] != e.id:
                    raise PortfolioError(f"ensemble id {rec['id']} does not match its components")
                ensembles.append(e)
        except KeyError as exc:
            raise PortfolioError(f"unresolvable reference or missing field: {exc}") from None
        except (TypeError, AttributeError) as exc:
            raise PortfolioError(f"malformed portfolio: {exc}") from None
        return cls(ensembles, modules, dict(data.get("metadata") or {}))


def save_portfolio(portfolio: Portfolio, path: str | Path) -> None:
    Path(path).write_text(json.dumps(portfolio.to_json(), indent=2, sort_keys=False) + "\n")


def load_portfolio(path: str | Path) -> Portfolio:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PortfolioError(f"{path}: not valid JSON ({exc})") from None
    return Portfolio.from_json(data)


def baseline_portfolio() -> Portfolio:
    return Portfolio([BASELINE_ENSEMBLE], {m: [] for m in MODULES}, {"source": "baseline"})


def unique(items: Iterable[HeuristicGenome]) -> list[HeuristicGenome]:
    """Drop repeated genomes, keeping first occurrences."""
    out: list[HeuristicGenome] = []
    for g in items:
        if g not in out:
            out.append(g)
    return out

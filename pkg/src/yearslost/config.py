"""TOML configuration files.

A file may hold any of these tables; every key is optional::

    seed = 0
    [crossfit]   K, cause, tstar, eta, level
    [learners]   flavor, min_events, tol, max_iter
    [learners.terms]   hazard1, hazard2, censoring, propensity (lists of terms)
    [learners.forest]  n_trees, mtry, min_leaf, nsplit, propensity_min_leaf
    [data]       time, event, treatment, covariates
    [sim]        tstar, alpha0, alpha, and [sim.hazard1|hazard2|censoring] tables
                 with scale, shape, beta_x, beta_a, beta_ax
    [simulate]   methods, n, reps, coords
    [oracle]     mc_draws

Values given on the command line override the file, which overrides the
defaults.
"""

from __future__ import annotations

import dataclasses
import sys

from .errors import ConfigError, UnreadableConfig
from .estimators import CrossFitConfig
from .learners import ForestParams, LearnerConfig
from .simlab import HazardSpec, SimConfig
from .survdata import Schema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALLOWED = {
    "": {"seed", "crossfit", "learners", "data", "sim", "simulate", "oracle"},
    "crossfit": {"K", "cause", "tstar", "eta", "level"},
    "learners": {"flavor", "min_events", "tol", "max_iter", "terms", "forest"},
    "learners.terms": {"hazard1", "hazard2", "censoring", "propensity"},
    "learners.forest": {"n_trees", "mtry", "min_leaf", "nsplit", "propensity_min_leaf"},
    "data": {"time", "event", "treatment", "covariates"},
    "sim": {"tstar", "alpha0", "alpha", "hazard1", "hazard2", "censoring"},
    "sim.hazard": {"scale", "shape", "beta_x", "beta_a", "beta_ax"},
    "simulate": {"methods", "n", "reps", "coords"},
    "oracle": {"mc_draws"},
}


def _check(table: dict, where: str) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    extra = set(table) - ALLOWED[where]
    if extra:
        raise ConfigError(f"unknown keys in [{where or 'top level'}]: {sorted(extra)}")


def validate(tree: dict) -> dict:
    _check(tree, "")
    for key in ("crossfit", "learners", "data", "sim", "simulate", "oracle"):
        if key in tree:
            _check(tree[key], key)
    learners = tree.get("learners", {})
    for key in ("terms", "forest"):
        if key in learners:
            _check(learners[key], f"learners.{key}")
    for key in ("hazard1", "hazard2", "censoring"):
        if key in tree.get("sim", {}):
            _check(tree["sim"][key], "sim.hazard")
    return tree


def load_config(path) -> dict:
    """Parse and validate a TOML file; ``None`` gives an empty tree."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except OSError as exc:
        raise UnreadableConfig(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UnreadableConfig(f"invalid TOML in {path}: {exc}") from None
    return validate(tree)


def _build(cls, kwargs, what):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {what} settings: {exc}") from None


def learner_config(tree: dict, flavor: str | None = None) -> LearnerConfig:
    t = dict(tree.get("learners", {}))
    forest = _build(ForestParams, t.pop("forest", {}), "forest")
    terms = {k: tuple(v) for k, v in t.pop("terms", {}).items()}
    if flavor is not None:
        t["flavor"] = flavor
    return _build(LearnerConfig, dict(t, terms=terms, forest=forest), "learner")


def crossfit_config(tree: dict, **overrides) -> CrossFitConfig:
    """``CrossFitConfig`` from the tree; non-``None`` overrides win."""
    t = dict(tree.get("crossfit", {}))
    if "seed" in tree:
        t["seed"] = tree["seed"]
    flavor = overrides.pop("flavor", None)
    t.update({k: v for k, v in overrides.items() if v is not None})
    t["learners"] = learner_config(tree, flavor)
    if "tstar" in t:
        t["tstar"] = float(t["tstar"])
    return _build(CrossFitConfig, t, "cross-fitting")


def schema(tree: dict) -> Schema:
    t = dict(tree.get("data", {}))
    if "covariates" in t:
        t["covariates"] = tuple(t["covariates"])
    return _build(Schema, t, "data")


def sim_config(tree: dict, tstar: float | None = None) -> SimConfig:
    t = dict(tree.get("sim", {}))
    default = SimConfig()
    for key in ("hazard1", "hazard2", "censoring"):
        if key in t:
            base = dataclasses.asdict(getattr(default, key))
            base.update(t[key])
            t[key] = _build(HazardSpec, base, f"sim.{key}")
    if tstar is not None:
        t["tstar"] = tstar
    if "tstar" in t:
        t["tstar"] = float(t["tstar"])
    return _build(SimConfig, t, "simulation")


def to_plain(obj):
    """Dataclasses and tuples as JSON-ready dicts and lists."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj

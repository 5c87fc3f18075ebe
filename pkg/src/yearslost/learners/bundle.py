"""The nuisance bundle: two cause hazards, the censoring hazard and the propensity."""

from __future__ import annotations

import dataclasses

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, FoldTooSmall
from ..survdata import SurvivalDataset
from .cox import CENSORING, fit_cox_cause_specific
from .forest import (ForestParams, fit_forest_propensity, fit_linear_regression,
                     fit_regression_forest, fit_survival_forest)
from .logistic import fit_logistic_propensity

FLAVORS = ("cor", "RF")


@dataclass(frozen=True)
class LearnerConfig:
    """Learner selection for the nuisance bundle and the projection regressions.

    Parameters
    ----------
    flavor : {'cor', 'RF'}
        ``'cor'``: Cox hazards, logistic propensity, linear projections.
        ``'RF'``: survival forests, probability forest, regression forests.
    eta : float
        Positivity floor for the propensity and the censoring survival.
    terms : dict
        Optional Cox/logistic terms keyed by ``'hazard1'``, ``'hazard2'``,
        ``'censoring'`` and ``'propensity'``.
    forest : ForestParams
        Hyperparameters for every forest; the seed is overridden per fit.
    min_events : int
        Fewest events of each cause a training set may contain.
    """

    flavor: str = "cor"
    eta: float = 0.01
    terms: dict = field(default_factory=dict)
    forest: ForestParams = field(default_factory=ForestParams)
    tol: float = 1e-8
    max_iter: int = 100
    min_events: int = 5

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ConfigError(f"flavor must be one of {FLAVORS}, got {self.flavor!r}")
        if not 0 < self.eta < 0.5:
            raise ConfigError("eta must lie in (0, 0.5)")
        unknown = set(self.terms) - {"hazard1", "hazard2", "censoring", "propensity"}
        if unknown:
            raise ConfigError(f"unknown term groups {sorted(unknown)}")


class ZeroHazard:
    """Hazard predictor used when the training data contain no events of a kind."""

    kind = "zero"

    def increments(self, a, X, tmax: float = np.inf):
        m = np.atleast_2d(X).shape[0]
        return np.empty(0), np.zeros((m, 0))


def _seeds(seed, k):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def _with_seed(params: ForestParams, seed: int) -> ForestParams:
    return dataclasses.replace(params, seed=seed)


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    """Fitted ``(Lambda1, Lambda2, Lambda_c, pi)`` with positivity floor ``eta``.

    Every hazard member exposes ``increments(a, X, tmax) -> (times, (m, G))``
    and the propensity exposes unclipped ``predict(X)``.
    """

    lambda1: object
    lambda2: object
    lambdac: object
    propensity: object
    eta: float
    config: LearnerConfig
    learners: dict

    def cause_hazards(self, a, X, tstar: float = np.inf):
        """Both cause increments on the union of their jump times up to ``tstar``."""
        t1, d1 = self.lambda1.increments(a, X, tstar)
        t2, d2 = self.lambda2.increments(a, X, tstar)
        grid = np.union1d(t1, t2)
        D1 = np.zeros((d1.shape[0], grid.size))
        D2 = np.zeros_like(D1)
        D1[:, np.searchsorted(grid, t1)] = d1
        D2[:, np.searchsorted(grid, t2)] = d2
        return grid, D1, D2

    def censoring_survival_left(self, a, X, s):
        """Unfloored ``S_C(s- | a, x)`` by product limit; ``s`` is ``(m,)`` or ``(m, k)``."""
        X = np.atleast_2d(X)
        tc, dc = self.lambdac.increments(a, X)
        Sc = np.cumprod(1.0 - np.clip(dc, 0.0, 1.0), axis=1)
        Sc = np.concatenate([np.ones((Sc.shape[0], 1)), Sc], axis=1)
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(tc, s, side="left")
        if s.ndim == 1:
            return Sc[np.arange(Sc.shape[0]), idx]
        return np.take_along_axis(Sc, idx, axis=1)

    def floored_censoring_left(self, a, X, s):
        """``max(S_C(s-), eta)`` and the number of floored entries."""
        raw = self.censoring_survival_left(a, X, s)
        low = raw < self.eta
        return np.where(low, self.eta, raw), int(low.sum())

    def pi(self, X):
        """``P(A = 1 | X)`` clipped to ``[eta, 1 - eta]`` and the number of clipped rows."""
        raw = self.propensity.predict(X)
        clipped = np.clip(raw, self.eta, 1.0 - self.eta)
        return clipped, int(np.sum(clipped != raw))


def fit_nuisance_bundle(train: SurvivalDataset, config: LearnerConfig | None = None, *,
                        seed: int = 0) -> NuisanceFit:
    """Fit all four nuisance components on ``train``.

    Raises :class:`FoldTooSmall` when either cause has fewer than
    ``config.min_events`` events; other errors come from the component fits.
    """
    config = config or LearnerConfig()
    for cause in (1, 2):
        k = train.n_events(cause)
        if k < config.min_events:
            raise FoldTooSmall(f"{k} events of cause {cause} in the training data; "
                               f"need {config.min_events}")
    terms = config.terms
    has_censoring = train.n_events(CENSORING) > 0
    if config.flavor == "cor":
        kw = dict(tol=config.tol, max_iter=config.max_iter)
        l1 = fit_cox_cause_specific(train, 1, terms.get("hazard1"), **kw)
        l2 = fit_cox_cause_specific(train, 2, terms.get("hazard2"), **kw)
        lc = (fit_cox_cause_specific(train, CENSORING, terms.get("censoring"), **kw)
              if has_censoring else ZeroHazard())
        prop = fit_logistic_propensity(train, terms.get("propensity"), **kw)
        names = {"lambda1": "cox", "lambda2": "cox", "propensity": "logistic"}
    else:
        s1, s2, sc, sp = _seeds(seed, 4)
        l1 = fit_survival_forest(train, 1, _with_seed(config.forest, s1))
        l2 = fit_survival_forest(train, 2, _with_seed(config.forest, s2))
        lc = (fit_survival_forest(train, CENSORING, _with_seed(config.forest, sc))
              if has_censoring else ZeroHazard())
        prop = fit_forest_propensity(train, _with_seed(config.forest, sp))
        names = {"lambda1": "forest", "lambda2": "forest", "propensity": "forest"}
    names["lambdac"] = "zero" if not has_censoring else names["lambda1"]
    return NuisanceFit(l1, l2, lc, prop, config.eta, config, names)


def fit_projection(X, y, config: LearnerConfig, *, seed: int = 0):
    """Regression learner for the projection step: linear for ``'cor'``, forest for ``'RF'``."""
    if config.flavor == "cor":
        return fit_linear_regression(X, y)
    return fit_regression_forest(X, y, _with_seed(config.forest, seed))

"""Random survival forests, regression forests and linear regression.

The survival forest grows log-rank trees on one cause-specific counting
process (other outcomes count as censored) and stores Nelson-Aalen
increments in the leaves. The ensemble hazard is the average of the leaf
hazards, so it is a nondecreasing step function on the training event times
of that cause.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InfeasibleParams, NoEvents, SingleArm
from ..survdata import StepFn, SurvivalDataset
from . import _trees


@dataclass(frozen=True)
class ForestParams:
    """Forest hyperparameters.

    ``mtry=None`` means ``ceil(sqrt(d))``. ``nsplit`` random cut points are
    tried per candidate variable (``0`` tries every midpoint). ``min_leaf``
    bounds the bootstrap-weighted size of both children of a split;
    ``propensity_min_leaf`` replaces it for the treatment-probability forest.
    """

    n_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 15
    nsplit: int = 10
    seed: int = 0
    propensity_min_leaf: int = 1

    def resolve_mtry(self, d: int) -> int:
        m = math.ceil(math.sqrt(d)) if self.mtry is None else int(self.mtry)
        if not 1 <= m <= d:
            raise InfeasibleParams(f"mtry={m} outside [1, {d}]")
        return m

    def check(self, n: int, d: int) -> int:
        if d < 1:
            raise InfeasibleParams("empty feature set")
        if self.n_trees < 1:
            raise InfeasibleParams("n_trees must be positive")
        if self.min_leaf < 1:
            raise InfeasibleParams("min_leaf must be positive")
        if n < 2 * self.min_leaf:
            raise InfeasibleParams(f"n={n} rows but min_leaf={self.min_leaf} needs at least "
                                   f"{2 * self.min_leaf}")
        return self.resolve_mtry(d)


def bootstrap_plan(n: int, n_trees: int, seed: int):
    """Per-tree bootstrap counts ``(n_trees, n)`` and per-tree split seeds."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=n_trees).astype(np.int64)
    seeds = rng.integers(0, 2**31 - 1, size=n_trees, dtype=np.int64)
    return counts, seeds


def _as_features(X):
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise InfeasibleParams("features must be a 2-d array")
    return X


def _content_order(X, *primary):
    """Row order sorted by ``primary`` keys (first is most significant), then by ``X``."""
    keys = tuple(X.T[::-1]) + tuple(primary[::-1])
    return np.lexsort(keys).astype(np.int64)


def _plan(order, params: ForestParams, counts, tree_seeds):
    """Bootstrap counts per row; the default plan is drawn in content order so fits
    do not depend on how the input rows happen to be arranged."""
    if counts is None or tree_seeds is None:
        drawn, tree_seeds = bootstrap_plan(order.size, params.n_trees, params.seed)
        counts = np.empty_like(drawn)
        counts[:, order] = drawn
    return (np.ascontiguousarray(counts, dtype=np.int64),
            np.ascontiguousarray(tree_seeds, dtype=np.int64))


# ---------------------------------------------------------------- survival


@dataclass(frozen=True, eq=False)
class SurvivalForestFit:
    """Ensemble of log-rank survival trees for one cause.

    The feature matrix of a prediction is the covariates with the treatment
    appended as the last column.
    """

    cause: int
    grid: np.ndarray
    params: ForestParams
    mtry: int
    oob_concordance: float
    _arrays: tuple = field(repr=False)

    @property
    def n_trees(self) -> int:
        return self.params.n_trees

    def _predict(self, Xq):
        feat, thr, left, right, estart, elen, _mort, egi, einc, tree_off = self._arrays
        return _trees.predict_survival_forest(Xq, feat, thr, left, right, estart, elen, egi,
                                              einc, tree_off, self.grid.size)

    def increments(self, a, X, tmax: float = np.inf):
        """Jump times (up to ``tmax``) and per-row hazard increments."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.broadcast_to(np.asarray(a, dtype=float), (X.shape[0],))
        inc = self._predict(np.ascontiguousarray(np.column_stack([X, a])))
        keep = self.grid <= tmax
        return self.grid[keep], inc[:, keep]

    def cumhaz(self, a, x) -> StepFn:
        times, inc = self.increments(a, np.atleast_2d(x))
        return StepFn(times, inc[0])


def fit_survival_forest(data: SurvivalDataset, cause: int,
                        params: ForestParams | None = None, *, counts=None,
                        tree_seeds=None) -> SurvivalForestFit:
    """Grow a random survival forest for the hazard of ``cause``.

    ``cause`` is 1, 2 or 0 (censoring). ``counts`` and ``tree_seeds`` override
    the bootstrap plan derived from ``params.seed``.

    Raises
    ------
    InfeasibleParams
        If there are fewer than ``2 * min_leaf`` rows or ``mtry`` is invalid.
    NoEvents
        If the cause never occurs.
    """
    params = params or ForestParams()
    X = _as_features(np.column_stack([data.X, data.treatment.astype(float)]))
    n, d = X.shape
    mtry = params.check(n, d)
    ev = (data.event == cause).astype(np.int64)
    if ev.sum() == 0:
        raise NoEvents(f"no events of cause {cause}")
    times, trank = np.unique(data.time, return_inverse=True)
    grid = np.unique(data.time[ev == 1])
    gidx = np.full(times.size, -1, np.int64)
    gidx[np.searchsorted(times, grid)] = np.arange(grid.size)
    order = _content_order(X, trank, ev)
    counts, tree_seeds = _plan(order, params, counts, tree_seeds)
    arrays = _trees.build_survival_forest(X, trank.astype(np.int64), ev, gidx, grid.size, order,
                                          counts, tree_seeds, mtry, params.min_leaf,
                                          params.nsplit)
    feat, thr, left, right, _es, _el, mort, _eg, _ei, tree_off = arrays
    risk = _trees.oob_mortality(X, counts, feat, thr, left, right, mort, tree_off)
    conc = float(_trees.harrell_concordance(data.time, ev, risk))
    return SurvivalForestFit(cause, grid, params, mtry, conc, arrays)


# -------------------------------------------------------------- regression


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """Fitted regression of a real target on a feature matrix.

    ``kind`` is ``'linear'`` (``coef[0]`` is the intercept) or ``'forest'``.
    """

    kind: str
    d: int
    coef: np.ndarray | None = None
    params: ForestParams | None = None
    _arrays: tuple | None = field(default=None, repr=False)

    def predict(self, X) -> np.ndarray:
        X = _as_features(np.atleast_2d(X))
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} features, got {X.shape[1]}")
        if self.kind == "linear":
            return self.coef[0] + X @ self.coef[1:]
        return _trees.predict_regression_forest(X, *self._arrays)


def fit_regression_forest(X, y, params: ForestParams | None = None, *, counts=None,
                          tree_seeds=None) -> RegressionFit:
    """Bagged variance-split regression trees."""
    params = params or ForestParams()
    X = _as_features(X)
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    n, d = X.shape
    if y.shape != (n,):
        raise ValueError("target length must match the number of rows")
    mtry = params.check(n, d)
    order = _content_order(X, y)
    counts, tree_seeds = _plan(order, params, counts, tree_seeds)
    arrays = _trees.build_regression_forest(X, y, order, counts, tree_seeds,
                                            mtry, params.min_leaf, params.nsplit)
    return RegressionFit("forest", d, params=params, _arrays=arrays)


def fit_linear_regression(X, y) -> RegressionFit:
    """Ordinary least squares with an intercept."""
    X = _as_features(X)
    y = np.asarray(y, dtype=float)
    D = np.column_stack([np.ones(X.shape[0]), X])
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    return RegressionFit("linear", X.shape[1], coef=coef)


@dataclass(frozen=True, eq=False)
class ForestPropensityFit:
    """Probability forest for ``P(A = 1 | x)``: a regression forest on the 0/1 treatment."""

    forest: RegressionFit
    kind: str = "forest"

    def predict(self, X) -> np.ndarray:
        """Unclipped ``P(A = 1 | X)``."""
        return self.forest.predict(X)


def fit_forest_propensity(data: SurvivalDataset,
                          params: ForestParams | None = None) -> ForestPropensityFit:
    if data.treatment.min() == data.treatment.max():
        raise SingleArm("both treatment arms are required")
    params = params or ForestParams()
    params = dataclasses.replace(params, min_leaf=params.propensity_min_leaf)
    return ForestPropensityFit(fit_regression_forest(data.X, data.treatment.astype(float), params))

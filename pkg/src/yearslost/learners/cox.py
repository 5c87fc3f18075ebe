"""Cause-specific Cox regression with Breslow ties and Breslow baseline hazard."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoEvents, SingularDesign
from ..survdata import StepFn, SurvivalDataset
from ._newton import newton_maximize
from .features import FeatureMap, default_censoring_terms, default_hazard_terms

CENSORING = 0


def _risk_sums(eta, Z, first):
    """Reverse cumulative sums over time-sorted rows, indexed at each tie group's first row."""
    c = eta.max()
    w = np.exp(eta - c)
    r0 = np.cumsum(w[::-1])[::-1]
    wz = w[:, None] * Z
    r1 = np.cumsum(wz[::-1], axis=0)[::-1]
    r2 = np.cumsum((wz[:, :, None] * Z[:, None, :])[::-1], axis=0)[::-1]
    return c, r0[first], r1[first], r2[first]


def partial_loglik(beta, Z, event, first):
    """Breslow partial log-likelihood, gradient and Hessian.

    Rows of ``Z`` and ``event`` must be sorted by time; ``first[i]`` is the
    index of the first row tied with row ``i``.
    """
    eta = Z @ beta
    c, r0, r1, r2 = _risk_sums(eta, Z, first)
    ev = event.astype(bool)
    r0e, r1e, r2e = r0[ev], r1[ev], r2[ev]
    mean = r1e / r0e[:, None]
    value = float(np.sum(eta[ev] - c - np.log(r0e)))
    grad = np.sum(Z[ev] - mean, axis=0)
    hess = -(np.sum(r2e / r0e[:, None, None], axis=0) - mean.T @ mean)
    return value, grad, hess


@dataclass(frozen=True, eq=False)
class CoxFit:
    """Fitted cause-specific Cox model.

    ``Lambda(t | a, x) = baseline_cumhaz(t) * exp(coef . z(a, x) - offset)``.
    """

    coef: np.ndarray
    cov: np.ndarray
    baseline_cumhaz: StepFn
    features: FeatureMap
    offset: float
    cause: int
    n_iter: int
    gradient: np.ndarray

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def risk(self, a, X) -> np.ndarray:
        return np.exp(self.features.design(a, X) @ self.coef - self.offset)

    def increments(self, a, X, tmax: float = np.inf):
        """Jump times (up to ``tmax``) and per-row hazard increments."""
        keep = self.baseline_cumhaz.jump_times <= tmax
        times = self.baseline_cumhaz.jump_times[keep]
        base = self.baseline_cumhaz.jump_sizes[keep]
        return times, np.outer(self.risk(a, X), base)

    def cumhaz(self, a, x) -> StepFn:
        r = float(self.risk(a, np.atleast_2d(x))[0])
        return StepFn(self.baseline_cumhaz.jump_times, self.baseline_cumhaz.jump_sizes * r)


def _cause_indicator(event, cause):
    return (event == cause).astype(np.int64)


def fit_cox_cause_specific(data: SurvivalDataset, cause: int, terms=None, *,
                           tol: float = 1e-8, max_iter: int = 100) -> CoxFit:
    """Maximise the Breslow partial likelihood for one cause.

    ``cause`` is 1, 2 or 0 (censoring, i.e. ``event == 0`` treated as the
    event). Raises :class:`NoEvents`, :class:`SingularDesign` or
    :class:`~yearslost.errors.NonConvergence`.
    """
    if terms is None:
        terms = (default_censoring_terms if cause == CENSORING else default_hazard_terms)(
            data.covariate_names)
    fmap = FeatureMap(terms, data.covariate_names)
    ev = _cause_indicator(data.event, cause)
    if ev.sum() == 0:
        raise NoEvents(f"no events of cause {cause}")
    order = np.argsort(data.time, kind="stable")
    t = data.time[order]
    ev = ev[order]
    Z = fmap.design(data.treatment[order], data.X[order])
    if fmap.p and np.linalg.matrix_rank(Z) < fmap.p:
        raise SingularDesign("design matrix is rank deficient")
    if fmap.p and np.any(np.ptp(Z, axis=0) == 0):
        raise SingularDesign("constant column in design; Cox models have no intercept")
    first = np.searchsorted(t, t, side="left")

    def objective(beta):
        return partial_loglik(beta, Z, ev, first)

    beta, grad, hess, n_iter = newton_maximize(objective, np.zeros(fmap.p), tol=tol,
                                               max_iter=max_iter)
    try:
        cov = np.linalg.inv(-hess) if fmap.p else np.zeros((0, 0))
    except np.linalg.LinAlgError:
        raise SingularDesign("information matrix is singular at the optimum") from None

    eta = Z @ beta
    c = eta.max() if eta.size else 0.0
    w = np.exp(eta - c)
    r0 = np.cumsum(w[::-1])[::-1][first]
    times, start = np.unique(t[ev == 1], return_index=True)
    ev_idx = np.flatnonzero(ev == 1)
    d = np.bincount(np.searchsorted(times, t[ev_idx]), minlength=times.size).astype(float)
    base = d / r0[ev_idx][start]
    return CoxFit(beta, cov, StepFn(times, base), fmap, c, cause, n_iter, grad)

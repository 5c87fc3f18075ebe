"""Logistic-regression propensity model fitted by Newton-Raphson."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from ..errors import SeparableData, SingleArm, SingularDesign
from ..survdata import SurvivalDataset
from ._newton import newton_maximize
from .features import FeatureMap


def logistic_loglik(beta, D, y):
    eta = D @ beta
    value = float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))
    p = expit(eta)
    grad = D.T @ (y - p)
    hess = -(D * (p * (1 - p))[:, None]).T @ D
    return value, grad, hess


@dataclass(frozen=True, eq=False)
class LogisticFit:
    """``P(A = 1 | x) = expit(intercept + coef . z(x))``; ``coef[0]`` is the intercept."""

    coef: np.ndarray
    cov: np.ndarray
    features: FeatureMap
    n_iter: int
    gradient: np.ndarray
    kind: str = "logistic"

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def design(self, X) -> np.ndarray:
        Z = self.features.design(0, X)
        return np.column_stack([np.ones(Z.shape[0]), Z])

    def predict(self, X) -> np.ndarray:
        """Unclipped ``P(A = 1 | X)``."""
        return expit(self.design(X) @ self.coef)


def fit_logistic_propensity(data: SurvivalDataset, terms=None, *, tol: float = 1e-8,
                            max_iter: int = 100) -> LogisticFit:
    """Maximum-likelihood logistic regression of treatment on covariates.

    Raises :class:`SingleArm` when only one arm is present and
    :class:`SeparableData` when the coefficients diverge.
    """
    y = data.treatment.astype(float)
    if y.min() == y.max():
        raise SingleArm("both treatment arms are required")
    terms = tuple(data.covariate_names) if terms is None else tuple(terms)
    fmap = FeatureMap(terms, data.covariate_names)
    if fmap.uses_treatment():
        raise SingularDesign("propensity terms cannot involve the treatment")
    D = np.column_stack([np.ones(data.n), fmap.design(0, data.X)])
    if np.linalg.matrix_rank(D) < D.shape[1]:
        raise SingularDesign("design matrix is rank deficient")

    def objective(beta):
        return logistic_loglik(beta, D, y)

    def check(beta):
        # |eta| > 30 means fitted probabilities within 1e-13 of 0 or 1
        if np.max(np.abs(D @ beta)) > 30:
            raise SeparableData("linear predictor diverging; data look separable")

    beta, grad, hess, n_iter = newton_maximize(objective, np.zeros(D.shape[1]), tol=tol,
                                               max_iter=max_iter, check=check)
    cov = np.linalg.inv(-hess)
    return LogisticFit(beta, cov, fmap, n_iter, grad)

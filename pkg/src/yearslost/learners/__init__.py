"""Nuisance learners for hazards, propensity and projection regressions."""

from .bundle import LearnerConfig, NuisanceFit, ZeroHazard, fit_nuisance_bundle, fit_projection
from .cox import CENSORING, CoxFit, fit_cox_cause_specific, partial_loglik
from .features import FeatureMap, default_censoring_terms, default_hazard_terms
from .forest import (ForestParams, ForestPropensityFit, RegressionFit, SurvivalForestFit,
                     bootstrap_plan, fit_forest_propensity, fit_linear_regression,
                     fit_regression_forest, fit_survival_forest)
from .logistic import LogisticFit, fit_logistic_propensity, logistic_loglik

__all__ = [
    "CENSORING", "CoxFit", "FeatureMap", "ForestParams", "ForestPropensityFit", "LearnerConfig",
    "LogisticFit", "NuisanceFit", "RegressionFit", "SurvivalForestFit", "ZeroHazard",
    "bootstrap_plan", "default_censoring_terms", "default_hazard_terms",
    "fit_cox_cause_specific", "fit_forest_propensity", "fit_linear_regression",
    "fit_logistic_propensity", "fit_nuisance_bundle", "fit_projection", "fit_regression_forest",
    "fit_survival_forest", "logistic_loglik", "partial_loglik",
]

"""Cross-fitted one-step estimators of the average years-lost contrast and the
best partially linear projection of the conditional contrast on one covariate.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .eif import (EifContext, Projection, arm_system, eif_omega_contrib, phi_chi_values,
                  phi_gamma_values, uncentered_eif_ate_batch)
from .errors import ConfigError, DegenerateDenominator, YearsLostError
from .learners import LearnerConfig, fit_nuisance_bundle, fit_projection
from .survdata import EstimateReport, FoldPlan, SurvivalDataset, make_folds, normal_ci


@dataclass(frozen=True)
class CrossFitConfig:
    """Cross-fitting settings. ``eta`` overrides ``learners.eta``."""

    K: int = 10
    seed: int = 0
    learners: LearnerConfig = field(default_factory=LearnerConfig)
    cause: int = 1
    tstar: float = 30.0
    eta: float = 0.01
    level: float = 0.95

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if not self.tstar > 0:
            raise ConfigError("tstar must be positive")
        if not 0 < self.eta < 0.5:
            raise ConfigError("eta must lie in (0, 0.5)")
        if self.cause not in (1, 2):
            raise ConfigError("cause must be 1 or 2")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.learners.eta != self.eta:
            object.__setattr__(self, "learners", dataclasses.replace(self.learners, eta=self.eta))


@dataclass
class VimReport(EstimateReport):
    """Projection coefficient ``omega = gamma / chi`` for 0-based covariate ``l``."""

    l: int = 0
    covariate: str = ""
    gamma: float = float("nan")
    chi: float = float("nan")
    degenerate: bool = False
    error: str | None = None

    @property
    def omega(self) -> float:
        return self.point

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(l=self.l, covariate=self.covariate, gamma=self.gamma, chi=self.chi,
                 omega=self.point, degenerate=self.degenerate, error=self.error)
        return d


@dataclass
class CrossFitResult:
    """Everything one cross-fitting pass produces."""

    plan: FoldPlan
    phi: np.ndarray
    phi_gamma: dict
    phi_chi: dict
    projection_errors: dict
    diagnostics: list


def _fold_seeds(seed: int, K: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(K)]


def _default_fitter(cfg: CrossFitConfig):
    def fit(train, seed):
        return fit_nuisance_bundle(train, cfg.learners, seed=seed)
    return fit


def fit_cate_projection(train: SurvivalDataset, nuisance, cfg: CrossFitConfig, l: int, *,
                        tau=None, seed: int = 0) -> Projection:
    """Regress the fitted conditional contrast and ``X_l`` on ``X_{-l}`` within ``train``.

    ``tau`` may pass precomputed ``tau_j(X)`` for the rows of ``train``.
    """
    if not 0 <= l < train.d:
        raise ValueError(f"coordinate {l} outside 0..{train.d - 1}")
    if train.d < 2:
        raise ValueError("the projection needs at least two covariates")
    if tau is None:
        tau = _tau(nuisance, train.X, cfg)
    others = np.delete(train.X, l, axis=1)
    s_tau, s_e = _fold_seeds(seed, 2)
    return Projection(l, fit_projection(others, tau, cfg.learners, seed=s_tau),
                      fit_projection(others, train.X[:, l], cfg.learners, seed=s_e))


def _tau(nuisance, X, cfg):
    s1 = arm_system(nuisance, 1, X, cfg.tstar)
    s0 = arm_system(nuisance, 0, X, cfg.tstar)
    return s1.years_lost(cfg.cause, cfg.tstar) - s0.years_lost(cfg.cause, cfg.tstar)


def cross_fit(data: SurvivalDataset, cfg: CrossFitConfig, coords=(), *, fit_nuisance=None,
              plan: FoldPlan | None = None) -> CrossFitResult:
    """Fit nuisances out of fold and evaluate influence values in fold.

    ``coords`` lists 0-based covariates whose projection terms are also
    evaluated. ``fit_nuisance(train, seed)`` replaces the learner bundle,
    e.g. with fixed true nuisances.
    """
    plan = plan or make_folds(data.n, cfg.K, cfg.seed)
    fit = fit_nuisance or _default_fitter(cfg)
    n = data.n
    phi = np.empty(n)
    pg = {l: np.empty(n) for l in coords}
    pc = {l: np.empty(n) for l in coords}
    errors = {}
    diags = []
    for k, seed in enumerate(_fold_seeds(cfg.seed, plan.K)):
        tr, te = plan.train_indices(k), plan.test_indices(k)
        train, test = data.subset(tr), data.subset(te)
        nu = fit(train, seed)
        batch = uncentered_eif_ate_batch(test, EifContext(nu, cfg.cause, cfg.tstar))
        phi[te] = batch.phi
        if coords:
            tau_train = _tau(nu, train.X, cfg)
            for l in coords:
                if l in errors:
                    continue
                try:
                    proj = fit_cate_projection(train, nu, cfg, l, tau=tau_train,
                                               seed=seed + 1 + l)
                    pg[l][te] = phi_gamma_values(batch.phi, test.X, proj)
                    pc[l][te] = phi_chi_values(test.X, proj)
                except YearsLostError as exc:
                    errors[l] = exc
        diags.append({
            "fold": k,
            "n_train": int(tr.size),
            "n_test": int(te.size),
            "plan_redraws": plan.redraws,
            "train_events": [int(train.n_events(c)) for c in (0, 1, 2)],
            "n_pi_clipped": batch.n_pi_clipped,
            "n_sc_floored": batch.n_sc_floored,
            "n_rescaled": batch.n_rescaled,
            "learners": dict(getattr(nu, "learners", {})),
        })
    return CrossFitResult(plan, phi, pg, pc, errors, diags)


def _fold_mean(values, plan: FoldPlan) -> float:
    sizes = plan.sizes()
    means = np.array([values[plan.test_indices(k)].mean() for k in range(plan.K)])
    return float(np.sum(sizes / plan.n * means))


def ate_report(res: CrossFitResult, cfg: CrossFitConfig) -> EstimateReport:
    point = _fold_mean(res.phi, res.plan)
    centred = res.phi - point
    se = float(np.sqrt(np.mean(centred ** 2) / res.plan.n))
    lo, hi = normal_ci(point, se, cfg.level)
    return EstimateReport("ate", cfg.cause, cfg.tstar, point, se, lo, hi, centred,
                          fold_diagnostics=res.diagnostics,
                          extra={"K": res.plan.K, "seed": cfg.seed,
                                 "flavor": cfg.learners.flavor})


def _degenerate(l, name, cfg, res, message) -> VimReport:
    nan = float("nan")
    return VimReport("vim", cfg.cause, cfg.tstar, nan, nan, nan, nan, np.zeros(0), nan, nan,
                     res.diagnostics, l=l, covariate=name, degenerate=True, error=message)


def vim_report(res: CrossFitResult, cfg: CrossFitConfig, l: int, data: SurvivalDataset,
               ) -> VimReport:
    """Projection estimate for coordinate ``l``. Raises :class:`DegenerateDenominator`."""
    name = data.covariate_names[l]
    if l in res.projection_errors:
        raise res.projection_errors[l]
    if np.ptp(data.X[:, l]) == 0:
        raise DegenerateDenominator(f"covariate {name} is constant")
    gamma = _fold_mean(res.phi_gamma[l], res.plan)
    chi = _fold_mean(res.phi_chi[l], res.plan)
    if not chi > 1e-14 * max(1.0, float(np.mean(data.X[:, l] ** 2))):
        raise DegenerateDenominator(f"residual variance of {name} is {chi:.3g}")
    omega = gamma / chi
    contrib = eif_omega_contrib(res.phi_gamma[l], res.phi_chi[l], gamma, chi, omega)
    se = float(np.sqrt(np.mean(contrib ** 2) / data.n))
    tst = omega / se if se > 0 else float("inf") * np.sign(omega)
    p = float(2 * norm.sf(abs(tst)))
    lo, hi = normal_ci(omega, se, cfg.level)
    return VimReport("vim", cfg.cause, cfg.tstar, omega, se, lo, hi, contrib, tst, p,
                     res.diagnostics, l=l, covariate=name, gamma=gamma, chi=chi)


def estimate_ate(data: SurvivalDataset, cfg: CrossFitConfig | None = None, *,
                 fit_nuisance=None, plan: FoldPlan | None = None) -> EstimateReport:
    """K-fold cross-fitted one-step estimate of the average years-lost contrast.

    With ``K == 1`` the nuisances are fit and evaluated on the full sample.
    """
    cfg = cfg or CrossFitConfig()
    return ate_report(cross_fit(data, cfg, fit_nuisance=fit_nuisance, plan=plan), cfg)


def estimate_vim(data: SurvivalDataset, cfg: CrossFitConfig | None, l: int, *,
                 fit_nuisance=None, plan: FoldPlan | None = None) -> VimReport:
    """Cross-fitted projection coefficient and its test for 0-based covariate ``l``."""
    cfg = cfg or CrossFitConfig()
    if data.d < 2:
        raise ValueError("the projection needs at least two covariates")
    res = cross_fit(data, cfg, (l,), fit_nuisance=fit_nuisance, plan=plan)
    return vim_report(res, cfg, l, data)


def _rank_key(r: VimReport):
    if r.degenerate:
        return (1, 0.0, 0.0, r.l)
    return (0, r.p_value, -abs(r.test_stat), r.l)


def rank_reports(reports) -> list:
    """Sort by p-value, then by ``|TST|`` descending; degenerate entries last."""
    return sorted(reports, key=_rank_key)


def rank_covariates(data: SurvivalDataset, cfg: CrossFitConfig | None = None, *,
                    fit_nuisance=None, with_ate: bool = False):
    """One report per covariate from a single cross-fitting pass, ranked.

    Coordinates that fail are kept as degenerate entries. With
    ``with_ate=True`` the average-contrast report is returned as well.
    """
    cfg = cfg or CrossFitConfig()
    if data.d < 2:
        raise ValueError("ranking needs at least two covariates")
    res = cross_fit(data, cfg, tuple(range(data.d)), fit_nuisance=fit_nuisance)
    reports = []
    for l in range(data.d):
        try:
            reports.append(vim_report(res, cfg, l, data))
        except YearsLostError as exc:
            reports.append(_degenerate(l, data.covariate_names[l], cfg, res, str(exc)))
    ranked = rank_reports(reports)
    return (ranked, ate_report(res, cfg)) if with_ate else ranked


def positivity_check(nuisance, data: SurvivalDataset, tstar: float, eta: float | None = None
                     ) -> dict:
    """Smallest fitted propensity, survival and censoring survival over sample and arms.

    Flags are raised when a minimum falls to or below ``eta``; the counts are
    of predictions that would be clipped at ``eta``.
    """
    eta = nuisance.eta if eta is None else eta
    raw = nuisance.propensity.predict(data.X) if hasattr(nuisance, "propensity") \
        else nuisance.pi(data.X)[0]
    arm_prob = np.concatenate([raw, 1.0 - raw])
    S_t, Sc_t = [], []
    for a in (0, 1):
        system = arm_system(nuisance, a, data.X, tstar)
        S_t.append(system.S[:, -1] if system.grid.size else np.ones(data.n))
        Sc_t.append(nuisance.censoring_survival_left(a, data.X, np.full(data.n, tstar))
                    if hasattr(nuisance, "censoring_survival_left")
                    else nuisance.floored_censoring_left(a, data.X, np.full(data.n, tstar))[0])
    S_t = np.concatenate(S_t)
    Sc_t = np.concatenate(Sc_t)
    out = {
        "eta": eta,
        "min_propensity": float(arm_prob.min()),
        "min_survival": float(S_t.min()),
        "min_censoring_survival": float(Sc_t.min()),
        "n_propensity_clipped": int(np.sum(arm_prob < eta)),
        "n_censoring_clipped": int(np.sum(Sc_t < eta)),
        "n_survival_low": int(np.sum(S_t < eta)),
    }
    out["flags"] = {
        "propensity": out["min_propensity"] <= eta,
        "survival": out["min_survival"] <= eta,
        "censoring": out["min_censoring_survival"] <= eta,
    }
    return out

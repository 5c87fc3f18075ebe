"""Simulation laboratory: Weibull-Cox competing-risks DGP, truth oracles, a Monte
Carlo harness and the second-order remainder diagnostic.

Hazards are ``lambda(t | a, x) = scale * shape * t**(shape - 1) * exp(lp)`` with
``lp = beta_x . x + a * (beta_a + beta_ax . x)``; covariates are i.i.d.
``Unif[-1, 1]`` and ``P(A = 1 | x) = expit(alpha_0 + alpha . x)``.
"""

from __future__ import annotations

import csv
import io
import dataclasses
import json
import math
import os
import time as _time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import expit

from .eif import arm_system
from .errors import ConfigError, QuadratureFailure, YearsLostError
from .estimators import CrossFitConfig, ate_report, cross_fit, vim_report
from .learners import ForestParams, LearnerConfig
from .survdata import SurvivalDataset


@dataclass(frozen=True)
class HazardSpec:
    scale: float
    shape: float
    beta_x: tuple
    beta_a: float = 0.0
    beta_ax: tuple = ()

    def __post_init__(self):
        if self.scale < 0 or not self.shape > 0:
            raise ConfigError("hazard scale must be >= 0 and shape > 0")
        object.__setattr__(self, "beta_x", tuple(float(b) for b in self.beta_x))
        bax = tuple(float(b) for b in self.beta_ax) or (0.0,) * len(self.beta_x)
        if len(bax) != len(self.beta_x):
            raise ConfigError("beta_ax must match beta_x in length")
        object.__setattr__(self, "beta_ax", bax)

    def lp(self, a, X):
        a = np.asarray(a, dtype=float)
        return X @ np.array(self.beta_x) + a * (self.beta_a + X @ np.array(self.beta_ax))

    def rate(self, a, X):
        """``scale * exp(lp)``, so that ``Lambda(t) = rate * t**shape``."""
        return self.scale * np.exp(self.lp(a, X))

    def cumhaz(self, a, X, t):
        return self.rate(a, X)[..., None] * np.asarray(t, dtype=float) ** self.shape

    def hazard(self, a, X, t):
        t = np.asarray(t, dtype=float)
        return self.rate(a, X)[..., None] * self.shape * t ** (self.shape - 1)


def _default_h1():
    return HazardSpec(0.0025, 2.0, (-1, -1, -0.2, 0), -2.0, (0.5, -0.3, 0, 0))


def _default_h2():
    return HazardSpec(0.00025, 2.0, (-1, -1, -0.2, 0), 1.0)


def _default_hc():
    return HazardSpec(0.00025, 2.0, (-0.5, 0, 0, 0))


@dataclass(frozen=True)
class SimConfig:
    """Data-generating process; the defaults are the four-covariate study design."""

    hazard1: HazardSpec = field(default_factory=_default_h1)
    hazard2: HazardSpec = field(default_factory=_default_h2)
    censoring: HazardSpec = field(default_factory=_default_hc)
    alpha0: float = 0.0
    alpha: tuple = (0.5, 0.5, 0.0, 0.0)
    tstar: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        d = len(self.alpha)
        for h in (self.hazard1, self.hazard2, self.censoring):
            if len(h.beta_x) != d:
                raise ConfigError("all coefficient vectors need one entry per covariate")
        if self.hazard1.shape != self.hazard2.shape:
            raise ConfigError("both cause hazards must share one Weibull shape")
        if not self.tstar > 0:
            raise ConfigError("tstar must be positive")

    @property
    def d(self) -> int:
        return len(self.alpha)

    def propensity(self, X):
        return expit(self.alpha0 + np.asarray(X) @ np.array(self.alpha))


# Cox and logistic terms matching the default design exactly
SIM_COR_TERMS = {
    "hazard1": ("X1", "X2", "X3", "A", "A:X1", "A:X2"),
    "hazard2": ("X1", "X2", "X3", "A"),
    "censoring": ("X1",),
    "propensity": ("X1", "X2"),
}


def sample_dgp(cfg: SimConfig, n: int, seed: int) -> SurvivalDataset:
    """Draw ``n`` observations by closed-form inversion of the Weibull hazards."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, cfg.d))
    A = (rng.random(n) < cfg.propensity(X)).astype(np.int64)
    e_event = rng.exponential(size=n)
    u_cause = rng.random(n)
    e_cens = rng.exponential(size=n)
    r1 = cfg.hazard1.rate(A, X)
    r2 = cfg.hazard2.rate(A, X)
    T = (e_event / (r1 + r2)) ** (1.0 / cfg.hazard1.shape)
    cause = np.where(u_cause < r1 / (r1 + r2), 1, 2)
    rc = cfg.censoring.rate(A, X)
    with np.errstate(divide="ignore"):
        C = np.where(rc > 0, (e_cens / np.where(rc > 0, rc, 1.0)) ** (1.0 / cfg.censoring.shape),
                     np.inf)
    observed = T <= C
    return SurvivalDataset(np.where(observed, T, C), np.where(observed, cause, 0), A, X)


class TrueNuisance:
    """The exact nuisances of a :class:`SimConfig`, usable wherever a fitted bundle is.

    Cause hazards are discretised on ``n_grid`` intervals of ``[0, tstar]``
    with all the mass of an interval placed at its midpoint, split so that the
    product-limit survival matches ``exp(-Lambda1 - Lambda2)`` at interval
    ends. Censoring survival and propensity are exact.
    """

    def __init__(self, cfg: SimConfig, tstar: float | None = None, n_grid: int = 1000,
                 eta: float = 0.01):
        self.cfg = cfg
        self.tstar = cfg.tstar if tstar is None else float(tstar)
        self.eta = eta
        self.edges = np.linspace(0.0, self.tstar, n_grid + 1)
        self.grid = 0.5 * (self.edges[1:] + self.edges[:-1])
        self.learners = {"lambda1": "truth", "lambda2": "truth", "lambdac": "truth",
                         "propensity": "truth"}

    def cause_hazards(self, a, X, tstar=np.inf):
        X = np.atleast_2d(X)
        L1 = self.cfg.hazard1.cumhaz(a, X, self.edges)
        L2 = self.cfg.hazard2.cumhaz(a, X, self.edges)
        dl1, dl2 = np.diff(L1, axis=1), np.diff(L2, axis=1)
        tot = dl1 + dl2
        jump = -np.expm1(-tot)
        share = np.divide(jump, tot, out=np.zeros_like(tot), where=tot > 0)
        keep = self.grid <= tstar
        return self.grid[keep], (dl1 * share)[:, keep], (dl2 * share)[:, keep]

    def censoring_survival_left(self, a, X, s):
        X = np.atleast_2d(X)
        s = np.asarray(s, dtype=float)
        rate = self.cfg.censoring.rate(a, X)
        rate = rate[:, None] if s.ndim == 2 else rate
        return np.exp(-rate * s ** self.cfg.censoring.shape)

    def floored_censoring_left(self, a, X, s):
        raw = self.censoring_survival_left(a, X, s)
        low = raw < self.eta
        return np.where(low, self.eta, raw), int(low.sum())

    @property
    def propensity(self):
        return self

    def predict(self, X):
        return self.cfg.propensity(X)

    def pi(self, X):
        raw = self.cfg.propensity(X)
        clipped = np.clip(raw, self.eta, 1.0 - self.eta)
        return clipped, int(np.sum(clipped != raw))


# ----------------------------------------------------------------- oracle


@dataclass
class OracleResult:
    """True contrasts and projection coefficients with Monte Carlo standard errors.

    ``omega`` is indexed by 0-based covariate for the chosen ``cause``.
    """

    tstar: float
    cause: int
    psi: tuple
    psi_se: tuple
    gamma: np.ndarray
    chi: float
    omega: np.ndarray
    omega_se: np.ndarray
    mc_draws: int
    seed: int
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"tstar": self.tstar, "cause": self.cause, "psi": list(self.psi),
                "psi_se": list(self.psi_se), "gamma": self.gamma.tolist(), "chi": self.chi,
                "omega": self.omega.tolist(), "omega_se": self.omega_se.tolist(),
                "mc_draws": self.mc_draws, "seed": self.seed, "seconds": self.seconds}


QUAD_TOL = 1e-8


def years_lost_exact(cfg: SimConfig, X, tstar: float):
    """``L_j(0, tstar | a, x)`` for both arms and causes, shape ``(2, 2, m)``.

    Uses ``int_0^tstar F_j = int_0^tstar (tstar - s) S(s) lambda_j(s) ds``.
    """
    X = np.atleast_2d(X)
    h1, h2 = cfg.hazard1, cfg.hazard2
    rates = [(h1.rate(a, X), h2.rate(a, X)) for a in (0, 1)]

    def integrand(s):
        out = np.empty((2, 2, X.shape[0]))
        for a, (r1, r2) in enumerate(rates):
            S = np.exp(-r1 * s ** h1.shape - r2 * s ** h2.shape)
            out[a, 0] = (tstar - s) * S * r1 * h1.shape * s ** (h1.shape - 1)
            out[a, 1] = (tstar - s) * S * r2 * h2.shape * s ** (h2.shape - 1)
        return out

    val, err, info = quad_vec(integrand, 0.0, tstar, epsabs=QUAD_TOL, epsrel=0.0, norm="max",
                              full_output=True)
    if not info.success or err > QUAD_TOL:
        raise QuadratureFailure(f"quadrature error {err:.3g} exceeds {QUAD_TOL}")
    return val


def true_cate(cfg: SimConfig, X, tstar: float, cause: int = 1):
    L = years_lost_exact(cfg, X, tstar)
    return L[1, cause - 1] - L[0, cause - 1]


def true_values_oracle(cfg: SimConfig | None = None, tstar: float | None = None,
                       mc_draws: int = 100_000, seed: int = 0, *, cause: int = 1,
                       n_nodes: int = 12, chunk: int = 20_000) -> OracleResult:
    """True contrasts ``psi_1, psi_2`` and projection coefficients ``omega^l``.

    The conditional contrast is integrated over time by adaptive quadrature.
    ``psi`` averages it over ``mc_draws`` covariate draws. ``Gamma^l`` averages
    ``cov(X_l, tau | X_{-l})`` over draws of ``X_{-l}``, the inner covariance
    taken by Gauss-Legendre quadrature in ``X_l``; ``chi = 1/3``.
    """
    t0 = _time.perf_counter()
    cfg = cfg or SimConfig()
    tstar = cfg.tstar if tstar is None else float(tstar)
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(mc_draws, cfg.d))
    taus = np.concatenate([
        (lambda L: L[1] - L[0])(years_lost_exact(cfg, X[lo:lo + chunk], tstar))
        for lo in range(0, mc_draws, chunk)], axis=1)
    psi = tuple(float(v) for v in taus.mean(axis=1))
    psi_se = tuple(float(v) for v in taus.std(axis=1, ddof=1) / math.sqrt(mc_draws))

    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    weights = weights / 2.0  # Unif[-1, 1] density
    chi = 1.0 / 3.0
    gamma = np.zeros(cfg.d)
    gamma_se = np.zeros(cfg.d)
    n_outer = max(2, mc_draws // n_nodes)
    for l in range(cfg.d):
        base = X[:n_outer]
        cov = np.empty(n_outer)
        for lo in range(0, n_outer, max(1, chunk // n_nodes)):
            blk = base[lo:lo + max(1, chunk // n_nodes)]
            grid = np.repeat(blk, n_nodes, axis=0)
            grid[:, l] = np.tile(nodes, blk.shape[0])
            tau = true_cate(cfg, grid, tstar, cause).reshape(blk.shape[0], n_nodes)
            mean_x = float(np.dot(weights, nodes))
            mean_tau = tau @ weights
            cov[lo:lo + blk.shape[0]] = tau @ (weights * nodes) - mean_x * mean_tau
        gamma[l] = cov.mean()
        gamma_se[l] = cov.std(ddof=1) / math.sqrt(n_outer)
    return OracleResult(tstar, cause, psi, psi_se, gamma, chi, gamma / chi, gamma_se / chi,
                        mc_draws, seed, _time.perf_counter() - t0)


# ------------------------------------------------------------ Monte Carlo


@dataclass(frozen=True)
class Method:
    """A named estimator configuration for the harness."""

    name: str
    crossfit: CrossFitConfig
    coords: tuple = ()


METHODS = ("cor", "corCF", "RF", "RFCF")


def standard_method(name: str, *, tstar: float = 30.0, cause: int = 1, coords=(), K: int = 10,
                    forest: ForestParams | None = None, eta: float = 0.01) -> Method:
    """One of the four study estimators.

    ``cor`` fits correctly specified Cox and logistic models, ``RF`` forests;
    the ``CF`` variants cross-fit with ``K`` folds, the others use ``K = 1``.
    """
    if name not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {name!r}")
    if name.startswith("cor"):
        learners = LearnerConfig("cor", eta, terms=dict(SIM_COR_TERMS))
    else:
        learners = LearnerConfig("RF", eta, forest=forest or ForestParams())
    k = K if name.endswith("CF") else 1
    return Method(name, CrossFitConfig(k, 0, learners, cause, tstar, eta), tuple(coords))


def replication_seeds(master_seed: int, n: int, rep: int):
    """Data seed and estimator seed for one replication, independent of run order."""
    state = np.random.SeedSequence([master_seed, n, rep]).generate_state(2)
    return int(state[0]), int(state[1])


def run_replication(sim: SimConfig, methods, n: int, rep: int, master_seed: int) -> list:
    """All methods on one simulated dataset; failures become records with an error."""
    data_seed, est_seed = replication_seeds(master_seed, n, rep)
    data = sample_dgp(sim, n, data_seed)
    out = []
    for m in methods:
        cfg = dataclasses.replace(m.crossfit, seed=est_seed)
        rec = {"method": m.name, "n": n, "rep": rep, "data_seed": data_seed,
               "est_seed": est_seed}
        try:
            res = cross_fit(data, cfg, tuple(m.coords))
            ate = ate_report(res, cfg)
            rec.update(point=ate.point, se=ate.se, ci_lower=ate.ci_lower,
                       ci_upper=ate.ci_upper)
            vims = {}
            for l in m.coords:
                try:
                    v = vim_report(res, cfg, l, data)
                    vims[str(l)] = {"omega": v.point, "se": v.se, "tst": v.test_stat,
                                    "p_value": v.p_value}
                except YearsLostError as exc:
                    vims[str(l)] = {"error": f"{type(exc).__name__}: {exc}"}
            rec["vim"] = vims
        except YearsLostError as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        out.append(rec)
    return out


def _mc_stats(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), (float(x.std(ddof=1)) if x.size > 1 else float("nan"))


@dataclass
class SimSummary:
    """Aggregates per method and sample size plus the raw replication records."""

    rows: list
    records: list
    master_seed: int
    reps: int
    truth: dict

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "reps": self.reps, "truth": self.truth,
                "rows": self.rows, "records": self.records}

    def to_json(self, path) -> None:
        _atomic_write(path, json.dumps(self.to_dict(), indent=2, sort_keys=True))

    CSV_COLUMNS = ("method", "n", "reps_ok", "reps_failed", "bias", "bias_mcse", "sd",
                   "mean_se", "coverage", "coverage_mcse")

    def csv_text(self, extra=None) -> str:
        """One line per method and sample size; ``extra`` maps further column names to
        values repeated on every line."""
        extra = extra or {}
        coords = sorted({k for r in self.rows for k in r.get("rejection", {})}, key=int)
        header = list(self.CSV_COLUMNS) + [f"reject_l{int(c) + 1}" for c in coords] + list(extra)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in self.rows:
            w.writerow([r[c] for c in self.CSV_COLUMNS]
                       + [r.get("rejection", {}).get(c, {}).get("rate", "") for c in coords]
                       + list(extra.values()))
        return buf.getvalue()

    def to_csv(self, path) -> None:
        _atomic_write(path, self.csv_text())

    def row(self, method: str, n: int) -> dict:
        for r in self.rows:
            if r["method"] == method and r["n"] == n:
                return r
        raise KeyError((method, n))


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def summarize(records, truth_psi: float, master_seed: int, reps: int, truth: dict,
              alpha: float = 0.05) -> SimSummary:
    """Bias, SD, mean SE, coverage and rejection rates with Monte Carlo errors."""
    keys = sorted({(r["method"], r["n"]) for r in records}, key=lambda k: (k[1], k[0]))
    rows = []
    for method, n in keys:
        recs = sorted((r for r in records if r["method"] == method and r["n"] == n),
                      key=lambda r: r["rep"])
        ok = [r for r in recs if "error" not in r]
        row = {"method": method, "n": n, "reps_ok": len(ok), "reps_failed": len(recs) - len(ok)}
        if ok:
            pts = np.array([r["point"] for r in ok])
            ses = np.array([r["se"] for r in ok])
            hit = np.array([r["ci_lower"] <= truth_psi <= r["ci_upper"] for r in ok], float)
            mean_pt, sd = _mc_stats(pts)
            cov = float(hit.mean())
            row.update(bias=mean_pt - truth_psi, sd=sd, sd_undefined=len(ok) < 2,
                       bias_mcse=sd / math.sqrt(len(ok)) if len(ok) > 1 else float("nan"),
                       mean_se=float(ses.mean()), coverage=cov,
                       coverage_mcse=math.sqrt(cov * (1 - cov) / len(ok)))
            rej = {}
            for c in sorted({c for r in ok for c in r.get("vim", {})}, key=int):
                ps = [r["vim"][c]["p_value"] for r in ok if "p_value" in r["vim"].get(c, {})]
                if ps:
                    rate = float(np.mean(np.array(ps) < alpha))
                    rej[c] = {"rate": rate, "mcse": math.sqrt(rate * (1 - rate) / len(ps)),
                              "count": len(ps)}
            row["rejection"] = rej
        else:
            nan = float("nan")
            row.update(bias=nan, sd=nan, sd_undefined=True, bias_mcse=nan, mean_se=nan,
                       coverage=nan, coverage_mcse=nan, rejection={})
        rows.append(row)
    return SimSummary(rows, records, master_seed, reps, truth)


def run_monte_carlo(sim: SimConfig, methods, n_grid, reps: int, master_seed: int, *,
                    truth: OracleResult | float, checkpoint=None, progress=None) -> SimSummary:
    """Repeat sample-then-estimate ``reps`` times for each ``n`` in ``n_grid``.

    Every replication draws its seeds from ``(master_seed, n, rep)``, so runs
    are reproducible and a JSONL ``checkpoint`` file lets an interrupted run
    resume where it stopped.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    methods = list(methods)
    names = {m.name for m in methods}
    truth_psi = truth.psi[methods[0].crossfit.cause - 1] if isinstance(truth, OracleResult) \
        else float(truth)
    truth_dict = truth.to_dict() if isinstance(truth, OracleResult) else {"psi": truth_psi}
    truth_dict.pop("seconds", None)  # wall-clock time would break reproducibility
    done = {}
    if checkpoint and os.path.exists(checkpoint):
        with open(checkpoint) as fh:
            for line in fh:
                if line.strip():
                    r = json.loads(line)
                    if r["method"] in names:
                        done[(r["method"], r["n"], r["rep"])] = r
    records = []
    fh = open(checkpoint, "a") if checkpoint else None
    try:
        for n in n_grid:
            for rep in range(reps):
                todo = [m for m in methods if (m.name, n, rep) not in done]
                got = run_replication(sim, todo, n, rep, master_seed) if todo else []
                for r in got:
                    done[(r["method"], n, rep)] = r
                    if fh:
                        fh.write(json.dumps(r) + "\n")
                        fh.flush()
                records.extend(done[(m.name, n, rep)] for m in methods)
                if progress:
                    progress(n, rep)
    finally:
        if fh:
            fh.close()
    return summarize(records, truth_psi, master_seed, reps, truth_dict)


# ---------------------------------------------------------------- remainder


def remainder_diagnostic(nuisance, cfg: SimConfig, tstar: float | None = None,
                         mc_draws: int = 2000, seed: int = 0, *, cause: int = 1,
                         n_nodes: int = 8) -> dict:
    """Second-order remainder of the one-step estimator for each arm.

    Estimates ``E sum_i int_0^tstar S H^_ij (1 - pi S_C / (pi^ S^_C)) d(Lambda^_i - Lambda_i)``
    with true ``S``, ``pi``, ``S_C``, ``Lambda_i`` and fitted ``H^``, ``pi^``,
    ``S^_C``, ``Lambda^_i``, by Monte Carlo over covariate draws. The jump part
    sums over the fitted jumps; the continuous part is integrated by
    Gauss-Legendre on every interval between fitted jumps.
    """
    tstar = cfg.tstar if tstar is None else float(tstar)
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(mc_draws, cfg.d))
    pi1_hat, _ = nuisance.pi(X)
    pi1 = cfg.propensity(X)
    gl_x, gl_w = np.polynomial.legendre.leggauss(n_nodes)
    out = {}
    for a in (0, 1):
        system = arm_system(nuisance, a, X, tstar)
        g = system.grid[system.grid <= tstar]
        pa, pa_hat = (pi1, pi1_hat) if a == 1 else (1 - pi1, 1 - pi1_hat)
        # continuous-part nodes: Gauss-Legendre on each piece between fitted jumps
        cuts = np.unique(np.concatenate([[0.0], g, [tstar]]))
        lo, hi = cuts[:-1], cuts[1:]
        s = (0.5 * (hi - lo)[:, None] * gl_x + 0.5 * (hi + lo)[:, None]).ravel()
        w = (0.5 * (hi - lo)[:, None] * gl_w).ravel()

        def weight_factor(t):
            sc_hat, _ = nuisance.floored_censoring_left(a, X, np.broadcast_to(t, (mc_draws,
                                                                                t.size)))
            sc = np.exp(-cfg.censoring.rate(a, X)[:, None] * t ** cfg.censoring.shape)
            return 1.0 - (pa[:, None] * sc) / (pa_hat[:, None] * sc_hat)

        def true_surv(t):
            return np.exp(-cfg.hazard1.cumhaz(a, X, t) - cfg.hazard2.cumhaz(a, X, t))

        total = np.zeros(mc_draws)
        k = g.size
        wf_g = weight_factor(g)
        S_g = true_surv(g)
        wf_s = weight_factor(s)
        S_s = true_surv(s)
        for i, h in ((1, cfg.hazard1), (2, cfg.hazard2)):
            H_g = system.h_grid(i, cause, tstar)[:, :k]
            jump = np.sum(S_g * H_g * wf_g * system.dlam[i - 1][:, :k], axis=1)
            H_s = system.h_matrix(i, cause, s, tstar)
            cont = (S_s * H_s * wf_s * h.hazard(a, X, s)) @ w
            total += jump - cont
        out[a] = (float(total.mean()), float(total.std(ddof=1) / math.sqrt(mc_draws)))
    return {"arm0": out[0][0], "arm0_se": out[0][1], "arm1": out[1][0], "arm1_se": out[1][1],
            "contrast": out[1][0] - out[0][0], "total_abs": abs(out[0][0]) + abs(out[1][0])}

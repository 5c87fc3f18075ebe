import numpy as np
import pytest

from yearslost.eif import (EifContext, Projection, eif_omega_contrib, gateaux_fd_check,
                           martingale_correction, martingale_correction_batch, phi_chi,
                           phi_chi_values, phi_gamma, phi_gamma_values, plugin_eif,
                           uncentered_eif_ate, uncentered_eif_ate_batch, CellPlugin)
from yearslost.errors import DegenerateDenominator, SparseCell
from yearslost.learners import ForestParams, fit_regression_forest
from yearslost.lifeyears import CauseSystem
from yearslost.simlab import SimConfig, TrueNuisance, true_values_oracle
from yearslost.survdata import ObservationRecord, SurvivalDataset

from conftest import discrete_dataset


class StubNuisance:
    """Fixed per-arm hazard increments on one grid; no censoring; constant propensity."""

    def __init__(self, grid, by_arm, p=0.5):
        self.grid, self.by_arm, self.p = np.asarray(grid, float), by_arm, p

    def cause_hazards(self, a, X, tstar=np.inf):
        m = np.atleast_2d(X).shape[0]
        keep = self.grid <= tstar
        d1, d2 = (np.asarray(v, float)[keep] for v in self.by_arm[a])
        return self.grid[keep], np.tile(d1, (m, 1)), np.tile(d2, (m, 1))

    def floored_censoring_left(self, a, X, s):
        return np.ones(np.shape(s)), 0

    def pi(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.p), 0


class Const:
    def __init__(self, c):
        self.c = c

    def predict(self, X):
        return np.full(np.atleast_2d(X).shape[0], float(self.c))


class Column:
    def __init__(self, k):
        self.k = k

    def predict(self, X):
        return np.atleast_2d(X)[:, self.k]


GRID = [1.0, 2.0, 3.0]
ZERO = (np.zeros(3), np.zeros(3))
SOME = (np.array([0.1, 0.2, 0.1]), np.array([0.05, 0.0, 0.1]))


def _obs(time, event, a, x=(0.0,)):
    return ObservationRecord(time, event, a, np.array(x))


def test_martingale_zero_without_hazards_or_events():
    ctx = EifContext(StubNuisance(GRID, {0: ZERO, 1: ZERO}), 1, 2.5)
    assert martingale_correction(_obs(5.0, 1, 1), ctx, 1) == 0.0


def test_null_system_gives_zero():
    ctx = EifContext(StubNuisance(GRID, {0: ZERO, 1: ZERO}), 1, 2.5)
    assert uncentered_eif_ate(_obs(5.0, 0, 0), ctx) == 0.0


def test_correction_vanishes_when_observed_arm_has_no_hazard():
    nuis = StubNuisance(GRID, {0: SOME, 1: ZERO})
    ctx = EifContext(nuis, 1, 2.5)
    tau = -CauseSystem(np.array(GRID), *SOME).years_lost(1, 2.5)
    assert uncentered_eif_ate(_obs(5.0, 0, 1), ctx) == tau


def test_martingale_matches_hand_computation():
    # one jump of cause 1 at t=2 under arm 0; S_C = 1
    nuis = StubNuisance(GRID, {0: SOME, 1: SOME})
    ctx = EifContext(nuis, 1, 2.5)
    system = CauseSystem(np.array(GRID), *SOME)
    H11 = system.h_grid(1, 1, 2.5)
    H21 = system.h_grid(2, 1, 2.5)
    comp = H11[0] * 0.1 + H11[1] * 0.2 + H21[0] * 0.05 + H21[1] * 0.0
    expect = system.h_at(1, 1, 2.0, 2.5) - comp
    assert martingale_correction(_obs(2.0, 1, 0), ctx, 0) == pytest.approx(expect, abs=1e-14)


def test_batch_agrees_with_scalar_wrappers(sim):
    from yearslost.simlab import sample_dgp
    data = sample_dgp(sim, 40, 3)
    ctx = EifContext(TrueNuisance(sim, 30.0, n_grid=200), 1, 30.0)
    batch = uncentered_eif_ate_batch(data, ctx)
    for i in range(0, 40, 7):
        assert batch.phi[i] == pytest.approx(uncentered_eif_ate(data.record(i), ctx), abs=1e-12)
    vals, _ = martingale_correction_batch(data.time, data.event, data.X, 1, ctx)
    for i in range(0, 40, 9):
        assert vals[i] == pytest.approx(martingale_correction(data.record(i), ctx, 1), abs=1e-12)


# ---------------------------------------------------------------- projection


def test_phi_gamma_zero_when_covariate_fully_predicted():
    proj = Projection(0, Const(1.0), Column(0))  # E^0 uses X_{-0}[0] = X2, and X1 == X2
    X = np.repeat(np.linspace(-1, 1, 6)[:, None], 2, axis=1)
    np.testing.assert_array_equal(phi_gamma_values(np.arange(6.0), X, proj), 0.0)
    np.testing.assert_array_equal(phi_chi_values(X, proj), 0.0)


def test_phi_gamma_zero_for_constant_effect():
    c = 1.7
    proj = Projection(1, Const(c), Const(0.0))
    X = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    np.testing.assert_array_equal(phi_gamma_values(np.full(10, c), X, proj), 0.0)


def test_record_wrappers_for_projection():
    ctx = EifContext(StubNuisance(GRID, {0: ZERO, 1: ZERO}), 1, 2.5,
                     Projection(0, Const(0.0), Const(0.25)))
    o = _obs(5.0, 0, 1, (0.75, 0.1))
    assert phi_chi(o, ctx) == pytest.approx(0.25)
    assert phi_gamma(o, ctx) == 0.0


def test_phi_chi_mean_for_independent_uniform():
    n = 100_000
    X = np.random.default_rng(1).uniform(-1, 1, (n, 3))
    v = phi_chi_values(X, Projection(2, Const(0.0), Const(0.0)))
    assert abs(v.mean() - 1 / 3) <= 4 * v.std() / np.sqrt(n)


def test_phi_chi_zero_for_constant_column_fit_by_forest():
    rng = np.random.default_rng(2)
    X = np.column_stack([rng.uniform(-1, 1, 200), np.full(200, 0.4)])
    e = fit_regression_forest(X[:, :1], X[:, 1], ForestParams(n_trees=20))
    np.testing.assert_allclose(phi_chi_values(X, Projection(1, Const(0.0), e)), 0.0, atol=1e-24)


def test_omega_contrib_examples():
    assert eif_omega_contrib(2.0, 3.0, 2.0, 3.0, 0.7) == 0.0
    assert eif_omega_contrib(5.0, 9.0, 2.0, 3.0, 0.0) == pytest.approx(1.0)
    with pytest.raises(DegenerateDenominator):
        eif_omega_contrib(1.0, 1.0, 1.0, 0.0, 1.0)


# ------------------------------------------------------- Gateaux derivative


def test_fd_gap_small_and_first_order():
    data = discrete_dataset(n=200, seed=0, d=1)
    tstar = 5.0
    ratios = []
    for idx in (0, 17, 101, 150):
        fd, eif, gap = gateaux_fd_check(data, idx, 1e-4, tstar=tstar)
        assert gap <= 5e-2 * (1 + abs(eif))
        _, _, gap_half = gateaux_fd_check(data, idx, 5e-5, tstar=tstar)
        ratios.append(gap_half / gap)
    assert all(0.3 <= r <= 0.7 for r in ratios), ratios


def test_fd_check_for_cause_two_and_default_horizon():
    data = discrete_dataset(n=200, seed=4, d=1)
    fd, eif, gap = gateaux_fd_check(data, 3, 1e-4, cause=2)
    assert gap <= 5e-2 * (1 + abs(eif))


def test_self_perturbation_is_flat():
    data = discrete_dataset(n=200, seed=1, d=1)
    base = CellPlugin(data).psi(1, 5.0)
    same = CellPlugin(data, np.full(data.n, 1.0 / data.n)).psi(1, 5.0)
    assert same - base == 0.0
    centred, _ = plugin_eif(data, 1, 5.0)
    assert abs(centred.mean()) <= 1e-10


def test_sparse_cell():
    data = discrete_dataset(n=30, seed=2, d=2)
    with pytest.raises(SparseCell):
        gateaux_fd_check(data, 0, 1e-4)


# -------------------------------------------------------- exact nuisances


@pytest.fixture(scope="module")
def oracle_psi():
    return true_values_oracle(SimConfig(), 30.0, 100_000, 1).psi[0]


@pytest.mark.parametrize("n", [10_000, 100_000])
def test_mean_zero_under_true_nuisances(n, oracle_psi):
    from yearslost.simlab import sample_dgp
    sim = SimConfig()
    data = sample_dgp(sim, n, 100 + n)
    phi = uncentered_eif_ate_batch(data, EifContext(TrueNuisance(sim, 30.0, n_grid=400), 1,
                                                      30.0)).phi
    assert abs(phi.mean() - oracle_psi) <= 4 * phi.std() / np.sqrt(n)


def _discrete_dgp(cfg, n, seed, levels=(-1.0, 1.0)):
    """The simulation hazards with covariates on a finite grid of values."""
    rng = np.random.default_rng(seed)
    X = rng.choice(levels, size=(n, cfg.d))
    A = (rng.random(n) < cfg.propensity(X)).astype(int)
    r1, r2 = cfg.hazard1.rate(A, X), cfg.hazard2.rate(A, X)
    T = (rng.exponential(size=n) / (r1 + r2)) ** (1 / cfg.hazard1.shape)
    cause = np.where(rng.random(n) < r1 / (r1 + r2), 1, 2)
    C = (rng.exponential(size=n) / cfg.censoring.rate(A, X)) ** (1 / cfg.censoring.shape)
    return SurvivalDataset(np.minimum(T, C), np.where(T <= C, cause, 0), A, X)


def test_martingale_has_zero_mean_within_each_cell():
    full = SimConfig()
    sim = SimConfig(*(type(h)(h.scale, h.shape, h.beta_x[:2], h.beta_a, h.beta_ax[:2])
                      for h in (full.hazard1, full.hazard2, full.censoring)), alpha=(0.5, 0.5))
    data = _discrete_dgp(sim, 40_000, 5)
    ctx = EifContext(TrueNuisance(sim, 30.0, n_grid=500), 1, 30.0)
    cells = np.column_stack([data.treatment, data.X])
    for key in np.unique(cells, axis=0):
        rows = np.flatnonzero(np.all(cells == key, axis=1))
        sub = data.subset(rows)
        mc, _ = martingale_correction_batch(sub.time, sub.event, sub.X, int(key[0]), ctx)
        assert abs(mc.mean()) <= 4 * mc.std() / np.sqrt(rows.size), key

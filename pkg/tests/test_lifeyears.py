import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from yearslost.errors import PositivityBreach, SuperunitJump
from yearslost.lifeyears import (CauseSystem, cate, compose_cause_system, h_kernel,
                                 years_lost)
from yearslost.simlab import TrueNuisance, true_cate
from yearslost.survdata import StepFn


def _random_system(rng, G=None, batch=()):
    G = G or int(rng.integers(1, 30))
    grid = np.sort(rng.choice(np.arange(1, 200), size=G, replace=False)) / 10.0
    tot = rng.uniform(0, 0.95, size=batch + (G,))
    share = rng.uniform(size=batch + (G,))
    return CauseSystem(grid, tot * share, tot * (1 - share))


def _step_integral(f_at, knots, lo, hi):
    """Exact integral over [lo, hi] of a right-continuous step function with the given knots."""
    pts = np.concatenate([[lo], knots[(knots > lo) & (knots < hi)], [hi]])
    return float(sum(f_at(a) * (b - a) for a, b in zip(pts[:-1], pts[1:])))


def test_product_limit_example():
    sys_ = compose_cause_system(StepFn([1.0], [0.2]), StepFn([2.0], [0.3]))
    S, F1, F2 = sys_.survival_fn(), sys_.cif_fn(1), sys_.cif_fn(2)
    assert S(2.0) == pytest.approx(0.56)
    assert F1(2.0) == pytest.approx(0.2)
    assert F2(2.0) == pytest.approx(0.24)
    assert S(2.0) + F1(2.0) + F2(2.0) == pytest.approx(1.0, abs=1e-15)


def test_null_system():
    sys_ = CauseSystem(np.array([1.0, 2.0]), np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(sys_.S, 1.0)
    assert years_lost(sys_, 1, 5.0) == 0.0


def test_superunit_jump():
    with pytest.raises(SuperunitJump):
        compose_cause_system(StepFn([1.0], [0.6]), StepFn([1.0], [0.5]))
    sys_ = CauseSystem(np.array([1.0]), np.array([0.6]), np.array([0.5]), on_superunit="rescale")
    assert sys_.n_rescaled == 1 and sys_.S[-1] == pytest.approx(0.0, abs=1e-15)


def test_years_lost_rectangle():
    sys_ = compose_cause_system(StepFn([1.0], [0.2]), StepFn())
    assert years_lost(sys_, 1, 3.0) == pytest.approx(0.4)
    assert years_lost(sys_, 2, 3.0) == 0.0


def test_decomposition_over_1000_systems():
    rng = np.random.default_rng(20)
    worst_sum = worst_area = 0.0
    for _ in range(1000):
        s = _random_system(rng)
        tstar = float(rng.uniform(0.05, 25))
        worst_sum = max(worst_sum, np.max(np.abs(s.S + s.F[0] + s.F[1] - 1.0)))
        lhs = s.years_lost(1, tstar) + s.years_lost(2, tstar)
        worst_area = max(worst_area, abs(lhs - (tstar - s.restricted_mean(tstar))))
    assert worst_sum <= 1e-12
    assert worst_area <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(1, 1), (1, 2), (2, 1), (2, 2)]))
def test_h_vanishes_at_horizon(seed, ij):
    rng = np.random.default_rng(seed)
    s = _random_system(rng)
    for tstar in (float(s.grid[-1]), float(s.grid[0]) + 0.05, 30.0):
        assert s.h_at(*ij, tstar, tstar) == 0.0
        assert s.h_at(*ij, tstar, tstar, limits="left") == 0.0


def test_h_examples_constant_incidence():
    # a single early jump: F_j is constant on [s, t*]
    s = compose_cause_system(StepFn([0.5], [0.3]), StepFn([0.7], [0.2]))
    assert h_kernel(s, 1, 1, 2.0, 10.0) == pytest.approx(8.0)
    assert h_kernel(s, 2, 1, 2.0, 10.0) == pytest.approx(0.0, abs=1e-15)
    assert h_kernel(s, 1, 1, 10.0, 10.0) == 0.0


def test_h_positivity_breach():
    s = compose_cause_system(StepFn([1.0], [0.995]), StepFn())
    with pytest.raises(PositivityBreach):
        h_kernel(s, 1, 1, 2.0, 5.0, eta=0.01)


@pytest.mark.parametrize("limits", ["right", "left"])
def test_h_matches_direct_integral(limits):
    rng = np.random.default_rng(3)
    for _ in range(100):
        sys_ = _random_system(rng)
        S, F = sys_.survival_fn(), {j: sys_.cif_fn(j) for j in (1, 2)}
        tstar = float(rng.uniform(1, 22))
        s = float(rng.uniform(0, tstar))
        if rng.uniform() < 0.3:  # land exactly on a jump
            s = float(sys_.grid[rng.integers(sys_.grid.size)])
            if s > tstar:
                continue
        for i in (1, 2):
            for j in (1, 2):
                if limits == "right":
                    Fs, Ss = F[j](s), S(s)
                else:
                    Fs, Ss = F[j].left(s), S.left(s)
                # the bracket loses about eps * t* / S digits; skip the near-empty risk sets
                if Ss < 1e-4:
                    continue
                integral = _step_integral(lambda u: F[j](u), sys_.grid, s, tstar)
                expect = (tstar - s) * (i == j) + (Fs * (tstar - s) - integral) / Ss
                got = sys_.h_at(i, j, s, tstar, limits=limits)
                assert got == pytest.approx(expect, abs=1e-10)


def test_h_grid_and_matrix_agree_with_h_at():
    rng = np.random.default_rng(4)
    s = _random_system(rng, G=15, batch=(3,))
    tstar = float(s.grid[10]) + 0.01
    g = s.h_grid(1, 2, tstar)
    for b in range(3):
        for k in range(15):
            single = CauseSystem(s.grid, s.dlam[0][b], s.dlam[1][b])
            assert g[b, k] == pytest.approx(single.h_at(1, 2, s.grid[k], tstar), abs=1e-12)
    q = np.array([0.0, 0.3, float(s.grid[4]), tstar, tstar + 1])
    m = s.h_matrix(2, 2, q, tstar)
    for b in range(3):
        single = CauseSystem(s.grid, s.dlam[0][b], s.dlam[1][b])
        np.testing.assert_allclose(m[b], [single.h_at(2, 2, v, tstar) for v in q], atol=1e-12)


class _ArmHazards:
    """Fixed per-arm increments on one grid, in the nuisance-bundle interface."""

    def __init__(self, grid, by_arm):
        self.grid, self.by_arm = grid, by_arm

    def cause_hazards(self, a, X, tstar=np.inf):
        m = np.atleast_2d(X).shape[0]
        d1, d2 = self.by_arm[a]
        return self.grid, np.tile(d1, (m, 1)), np.tile(d2, (m, 1))


def test_cate_null_and_sign():
    grid = np.array([1.0, 2.0, 3.0])
    same = (np.array([0.1, 0.2, 0.1]), np.array([0.05, 0.0, 0.1]))
    assert cate(_ArmHazards(grid, {0: same, 1: same}), 1, 5.0, [0.0]) == 0.0
    zero = (np.zeros(3), np.zeros(3))
    tau = cate(_ArmHazards(grid, {0: same, 1: zero}), 1, 5.0, [0.0])
    assert tau < 0
    assert abs(tau) <= 5.0


def test_cate_matches_quadrature_under_truth(sim):
    x = np.array([0.5, -0.5, 0.0, 0.0])
    got = cate(TrueNuisance(sim, 30.0, n_grid=4000), 1, 30.0, x)
    assert got == pytest.approx(float(true_cate(sim, x[None], 30.0)[0]), abs=1e-2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_years_lost_nondecreasing_in_horizon(seed):
    rng = np.random.default_rng(seed)
    s = _random_system(rng)
    horizons = np.sort(rng.uniform(0.01, 25, size=8))
    for j in (1, 2):
        vals = [s.years_lost(j, t) for t in horizons]
        assert np.all(np.diff(vals) >= -1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.01, 0.05, 0.2]))
def test_h_bounded_where_survival_above_floor(seed, eta):
    rng = np.random.default_rng(seed)
    s = _random_system(rng)
    S = s.survival_fn()
    tstar = float(rng.uniform(0.5, 25))
    for v in rng.uniform(0, tstar, size=10):
        if S(v) < eta:
            continue
        for i in (1, 2):
            for j in (1, 2):
                assert abs(s.h_at(i, j, v, tstar)) <= (tstar - v) * (1 + 1 / eta) + 1e-12

"""Efficient influence functions for the years-lost contrast and its projection.

The uncentered influence function of the average contrast
``psi_j = E[L_j(1, X) - L_j(0, X)]`` is

    phi_j = tau_j(X) + (A / pi(1|X) - (1 - A) / pi(0|X)) * MC_j,

    MC_j = sum_i int_0^tstar H_ij(s) / S_C(s-) dM_i(s),

with ``M_i`` the cause-``i`` counting-process martingale. Everything here is
vectorised over observations; the per-record functions are thin wrappers.

A nuisance object must provide ``cause_hazards(a, X, tstar)``,
``floored_censoring_left(a, X, s)`` and ``pi(X)`` as
:class:`~yearslost.learners.NuisanceFit` does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator, SparseCell
from .lifeyears import CauseSystem
from .survdata import ObservationRecord, SurvivalDataset

CHUNK = 4096


@dataclass(frozen=True)
class Projection:
    """Fitted ``tau^l(x_{-l})`` and ``E^l(x_{-l}) = E[X_l | X_{-l}]`` for 0-based coordinate ``l``."""

    l: int
    tau_fit: object
    e_fit: object

    def others(self, X) -> np.ndarray:
        return np.delete(np.atleast_2d(X), self.l, axis=1)

    def residual(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return X[:, self.l] - self.e_fit.predict(self.others(X))


@dataclass(frozen=True)
class EifContext:
    nuisance: object
    cause: int
    tstar: float
    projection: Projection | None = None

    def __post_init__(self):
        if not self.tstar > 0:
            raise ValueError("tstar must be positive")
        if self.cause not in (1, 2):
            raise ValueError("cause must be 1 or 2")


@dataclass
class EifBatch:
    """Per-observation pieces of ``phi_j`` plus positivity counters."""

    phi: np.ndarray
    tau: np.ndarray
    mc: np.ndarray
    pi1: np.ndarray
    n_pi_clipped: int = 0
    n_sc_floored: int = 0
    n_rescaled: int = 0


def arm_system(nuisance, a: int, X, tstar: float) -> CauseSystem:
    grid, d1, d2 = nuisance.cause_hazards(a, X, tstar)
    return CauseSystem(grid, d1, d2, on_superunit="rescale")


def _martingale(system: CauseSystem, nuisance, a, time, event, X, cause, tstar):
    m = time.shape[0]
    grid = system.grid
    sc_grid, f1 = nuisance.floored_censoring_left(a, X, np.broadcast_to(grid, (m, grid.size)))
    sc_t, f2 = nuisance.floored_censoring_left(a, X, time)
    # compensator runs over jumps s <= min(T, tstar), the jump at T included
    inside = grid[None, :] <= np.minimum(time, tstar)[:, None]
    total = np.zeros(m)
    for i in (1, 2):
        H = system.h_grid(i, cause, tstar)
        comp = np.sum(np.where(inside, H * system.dlam[i - 1] / sc_grid, 0.0), axis=1)
        jumped = (time <= tstar) & (event == i)
        h_t = system.h_at(i, cause, time, tstar)
        total += np.where(jumped, h_t / sc_t, 0.0) - comp
    return total, f1 + f2


def martingale_correction_batch(time, event, X, a: int, ctx: EifContext):
    """Martingale correction for rows that all received treatment ``a``.

    Returns the values and the number of floored censoring-survival entries.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(time.shape[0])
    floored = 0
    for lo in range(0, time.shape[0], CHUNK):
        sl = slice(lo, lo + CHUNK)
        sys_a = arm_system(ctx.nuisance, a, X[sl], ctx.tstar)
        out[sl], f = _martingale(sys_a, ctx.nuisance, a, time[sl], event[sl], X[sl], ctx.cause,
                                 ctx.tstar)
        floored += f
    return out, floored


def uncentered_eif_ate_batch(data: SurvivalDataset, ctx: EifContext) -> EifBatch:
    """``phi_j`` for every row of ``data``."""
    n = data.n
    tau = np.empty(n)
    mc = np.empty(n)
    floored = 0
    rescaled = 0
    for lo in range(0, n, CHUNK):
        sl = slice(lo, lo + CHUNK)
        X, A = data.X[sl], data.treatment[sl]
        systems = [arm_system(ctx.nuisance, a, X, ctx.tstar) for a in (0, 1)]
        rescaled += sum(s.n_rescaled for s in systems)
        tau[sl] = systems[1].years_lost(ctx.cause, ctx.tstar) - systems[0].years_lost(
            ctx.cause, ctx.tstar)
        part = np.empty(X.shape[0])
        for a in (0, 1):
            rows = np.flatnonzero(A == a)
            if rows.size == 0:
                continue
            sub = systems[a].rows(rows)
            part[rows], f = _martingale(sub, ctx.nuisance, a, data.time[sl][rows],
                                        data.event[sl][rows], X[rows], ctx.cause, ctx.tstar)
            floored += f
        mc[sl] = part
    pi1, clipped = ctx.nuisance.pi(data.X)
    weight = np.where(data.treatment == 1, 1.0 / pi1, -1.0 / (1.0 - pi1))
    return EifBatch(tau + weight * mc, tau, mc, pi1, clipped, floored, rescaled)


def _one(o: ObservationRecord) -> SurvivalDataset:
    return SurvivalDataset(np.array([o.time]), np.array([o.event]), np.array([o.treatment]),
                           np.atleast_2d(o.x))


def martingale_correction(o: ObservationRecord, ctx: EifContext, a: int) -> float:
    """Martingale correction of one observation evaluated under arm ``a``."""
    vals, _ = martingale_correction_batch([o.time], [o.event], np.atleast_2d(o.x), a, ctx)
    return float(vals[0])


def uncentered_eif_ate(o: ObservationRecord, ctx: EifContext) -> float:
    return float(uncentered_eif_ate_batch(_one(o), ctx).phi[0])


# ------------------------------------------------------------ projection


def _require_projection(ctx: EifContext) -> Projection:
    if ctx.projection is None:
        raise ValueError("context has no projection")
    return ctx.projection


def phi_gamma_values(phi, X, projection: Projection) -> np.ndarray:
    """``(phi_j - tau^l(X_{-l})) * (X_l - E^l(X_{-l}))`` from precomputed ``phi_j``."""
    others = projection.others(X)
    return (phi - projection.tau_fit.predict(others)) * projection.residual(X)


def phi_chi_values(X, projection: Projection) -> np.ndarray:
    return projection.residual(X) ** 2


def phi_gamma(o: ObservationRecord, ctx: EifContext) -> float:
    proj = _require_projection(ctx)
    phi = uncentered_eif_ate(o, ctx)
    return float(phi_gamma_values(np.array([phi]), np.atleast_2d(o.x), proj)[0])


def phi_chi(o: ObservationRecord, ctx: EifContext) -> float:
    return float(phi_chi_values(np.atleast_2d(o.x), _require_projection(ctx))[0])


def eif_omega_contrib(phi_g, phi_c, gamma: float, chi: float, omega: float):
    """``(phi_gamma - gamma - omega * (phi_chi - chi)) / chi``; works elementwise."""
    if not chi > 0:
        raise DegenerateDenominator(f"projection denominator {chi} is not positive")
    out = (np.asarray(phi_g) - gamma - omega * (np.asarray(phi_c) - chi)) / chi
    return float(out) if np.ndim(out) == 0 else out


# ------------------------------------------------- finite-difference check


class CellPlugin:
    """Empirical plug-in nuisances on discrete covariates under row weights ``w``.

    Cause hazards are cell-wise weighted Nelson-Aalen increments. Censoring
    at a time is taken to follow the events at that time, so its risk set
    excludes them; then ``S(s-) S_C(s-)`` equals the cell's at-risk fraction.
    """

    def __init__(self, data: SurvivalDataset, w=None, min_cell: int = 5):
        self.data = data
        self.w = np.full(data.n, 1.0 / data.n) if w is None else np.asarray(w, dtype=float)
        self.cells, self.cell_of = np.unique(data.X, axis=0, return_inverse=True)
        self.cell_of = self.cell_of.ravel()
        self.grid = np.unique(data.time)
        counts = np.zeros((len(self.cells), 2), int)
        np.add.at(counts, (self.cell_of, data.treatment), 1)
        if counts.min() < min_cell:
            raise SparseCell(f"smallest (a, x) cell has {counts.min()} rows; need {min_cell}")
        G = self.grid.size
        k = len(self.cells)
        pos = np.searchsorted(self.grid, data.time)
        shape = (k, 2, G)
        at_event = {e: np.zeros(shape) for e in (0, 1, 2)}
        for e in (0, 1, 2):
            sel = data.event == e
            np.add.at(at_event[e], (self.cell_of[sel], data.treatment[sel], pos[sel]), self.w[sel])
        leaving = at_event[0] + at_event[1] + at_event[2]
        risk = np.cumsum(leaving[..., ::-1], axis=-1)[..., ::-1]
        safe = np.where(risk > 0, risk, 1.0)
        self.d1 = np.where(risk > 0, at_event[1] / safe, 0.0)
        self.d2 = np.where(risk > 0, at_event[2] / safe, 0.0)
        crisk = risk - at_event[1] - at_event[2]
        self.dc = np.where(crisk > 0, at_event[0] / np.where(crisk > 0, crisk, 1.0), 0.0)
        mass = np.zeros((k, 2))
        np.add.at(mass, (self.cell_of, data.treatment), self.w)
        self.pi_cell = mass[:, 1] / mass.sum(axis=1)
        self.p_cell = mass.sum(axis=1) / mass.sum()

    def _cells(self, X):
        X = np.atleast_2d(X)
        idx = np.array([np.flatnonzero(np.all(self.cells == x, axis=1))[0] for x in X])
        return idx

    def cause_hazards(self, a, X, tstar=np.inf):
        c = self._cells(X)
        keep = self.grid <= tstar
        return self.grid[keep], self.d1[c, a][:, keep], self.d2[c, a][:, keep]

    def floored_censoring_left(self, a, X, s):
        c = self._cells(X)
        Sc = np.cumprod(1.0 - self.dc[c, a], axis=1)
        Sc = np.concatenate([np.ones((len(c), 1)), Sc], axis=1)
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.grid, s, side="left")
        if s.ndim == 1:
            return Sc[np.arange(len(c)), idx], 0
        return np.take_along_axis(Sc, idx, axis=1), 0

    def pi(self, X):
        return self.pi_cell[self._cells(X)], 0

    def psi(self, cause: int, tstar: float) -> float:
        keep = self.grid <= tstar
        L = [CauseSystem(self.grid[keep], self.d1[:, a][:, keep], self.d2[:, a][:, keep],
                         on_superunit="rescale").years_lost(cause, tstar) for a in (0, 1)]
        return float(np.sum(self.p_cell * (L[1] - L[0])))


def plugin_eif(data: SurvivalDataset, cause: int, tstar: float, *, min_cell: int = 5):
    """Centered influence values of the cell-wise plug-in at every row, and the plug-in."""
    plug = CellPlugin(data, min_cell=min_cell)
    psi = plug.psi(cause, tstar)
    batch = uncentered_eif_ate_batch(data, EifContext(plug, cause, tstar))
    return batch.phi - psi, psi


def gateaux_fd_check(data: SurvivalDataset, index: int, eps: float, *, cause: int = 1,
                     tstar: float | None = None, min_cell: int = 5):
    """Compare a finite-difference Gateaux derivative with the influence function.

    The plug-in functional is re-evaluated at ``(1 - eps) P_n + eps * delta_index``.
    Returns ``(fd, eif, gap)``. Raises :class:`SparseCell` when some
    ``(a, x)`` cell has fewer than ``min_cell`` rows.
    """
    if tstar is None:
        tstar = float(data.time.max())
    base = CellPlugin(data, min_cell=min_cell)
    psi0 = base.psi(cause, tstar)
    w = np.full(data.n, (1.0 - eps) / data.n)
    w[index] += eps
    psi_eps = CellPlugin(data, w, min_cell=min_cell).psi(cause, tstar)
    fd = (psi_eps - psi0) / eps
    sub = data.subset([index])
    eif = float(uncentered_eif_ate_batch(sub, EifContext(base, cause, tstar)).phi[0]) - psi0
    return fd, eif, abs(fd - eif)

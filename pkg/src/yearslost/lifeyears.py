"""Survival, cumulative incidence and years-lost functionals of two cause hazards.

Everything here works on hazard increments sitting on a common, strictly
increasing jump grid.  Arrays may carry leading batch dimensions, the grid
is always the last axis, so one :class:`CauseSystem` can describe many
``(a, x)`` strata at once.

Survival is composed by product limit,
``S(t) = prod_{s <= t} (1 - dL1(s) - dL2(s))`` and
``F_j(t) = sum_{s <= t} S(s-) dL_j(s)``, so ``S + F1 + F2 == 1`` holds up to
rounding.
"""

from __future__ import annotations

import numpy as np

from .errors import PositivityBreach, SuperunitJump
from .survdata import StepFn


def _tail_sum(a):
    """``out[..., k] = sum_{m >= k} a[..., m]`` with an extra trailing zero."""
    rev = np.cumsum(a[..., ::-1], axis=-1)[..., ::-1]
    return np.concatenate([rev, np.zeros(a.shape[:-1] + (1,))], axis=-1)


class CauseSystem:
    """Product-limit composition of two cause-specific hazards.

    Parameters
    ----------
    grid : (G,) array
        Strictly increasing jump times.
    dlam1, dlam2 : (..., G) arrays
        Hazard increments of cause 1 and cause 2 at ``grid``.
    on_superunit : {'raise', 'rescale'}
        What to do when ``dlam1 + dlam2 >= 1`` at some time. ``'rescale'``
        scales both increments down so their sum is exactly one (survival
        drops to zero) and records the number of affected cells in
        ``n_rescaled``.
    survival : {'product', 'exp'}
        ``'exp'`` uses ``exp(-L1 - L2)`` instead of the product limit; the
        decomposition identity then only holds approximately.
    """

    def __init__(self, grid, dlam1, dlam2, *, on_superunit="raise", survival="product"):
        grid = np.asarray(grid, dtype=float)
        d1 = np.asarray(dlam1, dtype=float)
        d2 = np.asarray(dlam2, dtype=float)
        if grid.ndim != 1 or d1.shape[-1:] != grid.shape or d1.shape != d2.shape:
            raise ValueError("hazard increments must have the grid as last axis")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        total = d1 + d2
        bad = total >= 1.0
        self._bad = bad
        self.n_rescaled = int(bad.sum())
        if self.n_rescaled:
            if on_superunit == "raise":
                raise SuperunitJump("total hazard jump >= 1 at some time")
            scale = np.where(bad, 1.0 / np.where(bad, total, 1.0), 1.0)
            d1, d2 = d1 * scale, d2 * scale
            total = d1 + d2
        if survival == "product":
            S = np.cumprod(1.0 - total, axis=-1)
        elif survival == "exp":
            S = np.exp(-np.cumsum(total, axis=-1))
        else:
            raise ValueError(f"unknown survival construction {survival!r}")
        ones = np.ones(d1.shape[:-1] + (1,))
        self.grid = grid
        self.dlam = (d1, d2)
        self.S = S
        self.S_left = np.concatenate([ones, S[..., :-1]], axis=-1)
        self._cif = {}
        self._parts = {}

    def rows(self, idx) -> "CauseSystem":
        """The same system restricted to batch rows ``idx``, without recomposing."""
        out = object.__new__(CauseSystem)
        out.grid = self.grid
        out.dlam = (self.dlam[0][idx], self.dlam[1][idx])
        out.S = self.S[idx]
        out.S_left = self.S_left[idx]
        out._bad = self._bad[idx]
        out.n_rescaled = int(out._bad.sum())
        out._cif = {j: F[idx] for j, F in self._cif.items()}
        out._parts = {}
        return out

    def cif(self, j: int):
        """``F_j`` at the grid points, computed on first use."""
        if j not in self._cif:
            self._cif[j] = np.cumsum(self.S_left * self.dlam[j - 1], axis=-1)
        return self._cif[j]

    @property
    def F(self):
        return self.cif(1), self.cif(2)

    @classmethod
    def from_stepfns(cls, lam1: StepFn, lam2: StepFn, **kw) -> "CauseSystem":
        grid = np.union1d(lam1.jump_times, lam2.jump_times)
        d1 = np.zeros(grid.size)
        d2 = np.zeros(grid.size)
        d1[np.searchsorted(grid, lam1.jump_times)] = lam1.jump_sizes
        d2[np.searchsorted(grid, lam2.jump_times)] = lam2.jump_sizes
        return cls(grid, d1, d2, **kw)

    @property
    def batch_shape(self):
        return self.S.shape[:-1]

    # step-function views (single system only)
    def survival_fn(self) -> StepFn:
        return StepFn.from_values(self.grid, self.S, baseline=1.0)

    def cif_fn(self, j: int) -> StepFn:
        return StepFn.from_values(self.grid, self.cif(j), baseline=0.0)

    def _widths(self, tstar):
        nxt = np.append(self.grid[1:], np.inf)
        return np.clip(np.minimum(nxt, tstar) - self.grid, 0.0, None)

    def years_lost(self, j: int, tstar: float):
        """``int_0^tstar F_j(u) du``, exact for the step function ``F_j``."""
        return np.sum(self.cif(j) * self._widths(tstar), axis=-1)

    def restricted_mean(self, tstar: float):
        """``int_0^tstar S(u) du``."""
        w = self._widths(tstar)
        first = min(self.grid[0], tstar) if self.grid.size else tstar
        return first + np.sum(self.S * w, axis=-1)

    def _h_parts(self, j, tstar):
        key = (j, float(tstar))
        if key not in self._parts:
            self._parts[key] = self._compute_h_parts(j, tstar)
        return self._parts[key]

    def _compute_h_parts(self, j, tstar):
        w = self._widths(tstar)
        F = self.cif(j)
        zero = np.zeros(F.shape[:-1] + (1,))
        Fx = np.concatenate([zero, F], axis=-1)
        Sx = np.concatenate([zero + 1.0, self.S], axis=-1)
        tail = _tail_sum(F * w)
        wtail = np.broadcast_to(_tail_sum(w), Fx.shape)
        # gx[p] is the first jump strictly after a point with p jumps at or before it
        gx = np.broadcast_to(np.append(self.grid, np.inf), Fx.shape)
        return Fx, Sx, tail, wtail, gx

    def h_grid(self, i: int, j: int, tstar: float):
        """``H_ij(g_k, tstar)`` at every grid point (right-limit convention).

        Values at grid points beyond ``tstar`` are set to zero.
        """
        Fx, Sx, tail, wtail, _ = self._h_parts(j, tstar)
        # a point at g_k has p = k + 1 jumps at or before it
        Q = tail[..., 1:] - Fx[..., 1:] * wtail[..., 1:]
        ratio = np.divide(Q, Sx[..., 1:], out=np.zeros_like(Q), where=Sx[..., 1:] > 0)
        base = np.clip(tstar - self.grid, 0.0, None) if i == j else 0.0
        return np.where(self.grid <= tstar, base - ratio, 0.0)

    def h_matrix(self, i: int, j: int, s, tstar: float):
        """``H_ij(s_q, tstar)`` at times ``s`` shared by every batch row, shape ``(..., Q)``.

        Right-limit convention, zero beyond ``tstar``.
        """
        s = np.asarray(s, dtype=float)
        Fx, Sx, tail, wtail, _ = self._h_parts(j, tstar)
        p = np.searchsorted(self.grid, s, side="right")
        Q = tail[..., p] - Fx[..., p] * wtail[..., p]
        S_s = Sx[..., p]
        ratio = np.divide(Q, S_s, out=np.zeros_like(Q), where=S_s > 0)
        base = np.clip(tstar - s, 0.0, None) if i == j else 0.0
        return np.where(s <= tstar, base - ratio, 0.0)

    def h_at(self, i: int, j: int, s, tstar: float, limits: str = "right"):
        """``H_ij(s, tstar)`` at arbitrary times ``s`` (one per batch row).

        ``limits='right'`` evaluates the bracket with ``F_j(s)`` and ``S(s)``,
        which makes the kernel the exact derivative of the discrete years-lost
        functional. ``limits='left'`` uses ``F_j(s-)`` and ``S(s-)``.
        """
        s = np.asarray(s, dtype=float)
        Fx, Sx, tail, wtail, gx = self._h_parts(j, tstar)
        bshape = self.batch_shape
        s_b = np.broadcast_to(s, bshape) if bshape else s
        p = np.searchsorted(self.grid, s_b, side="right")

        def take(a, idx):
            if not bshape:
                return a[idx]
            return np.take_along_axis(a, np.asarray(idx)[..., None], axis=-1)[..., 0]

        base = np.clip(tstar - s_b, 0.0, None) * (1.0 if i == j else 0.0)
        if limits == "right":
            Q = take(tail, p) - take(Fx, p) * take(wtail, p)
            S_s = take(Sx, p)
            ratio = np.divide(Q, S_s, out=np.zeros(np.shape(Q)), where=S_s > 0)
            out = base - ratio
        elif limits == "left":
            q = np.searchsorted(self.grid, s_b, side="left")
            Fs = take(Fx, p)
            integral = Fs * np.clip(np.minimum(take(gx, p), tstar) - s_b, 0.0, None) + take(tail, p)
            num = take(Fx, q) * np.clip(tstar - s_b, 0.0, None) - integral
            S_l = take(Sx, q)
            out = base + np.divide(num, S_l, out=np.zeros(np.shape(num)), where=S_l > 0)
        else:
            raise ValueError(f"limits must be 'right' or 'left', got {limits!r}")
        return np.where(s_b <= tstar, out, 0.0)


def compose_cause_system(lam1: StepFn, lam2: StepFn) -> CauseSystem:
    """Compose two cumulative hazards; raises :class:`SuperunitJump`."""
    if not (lam1.is_cumulative_hazard() and lam2.is_cumulative_hazard()):
        raise ValueError("inputs must be cumulative hazards (zero baseline, nonnegative jumps)")
    return CauseSystem.from_stepfns(lam1, lam2)


def years_lost(system: CauseSystem, j: int, tstar: float) -> float:
    if tstar <= 0:
        raise ValueError("tstar must be positive")
    return float(system.years_lost(j, tstar))


def h_kernel(system: CauseSystem, i: int, j: int, s: float, tstar: float, *,
             eta: float | None = None, limits: str = "right") -> float:
    """``H_ij(s, tstar) = int_s^tstar 1(i=j) + (F_j(s) - F_j(u)) / S(s) du``.

    Raises :class:`PositivityBreach` when ``eta`` is given and ``S(s-) < eta``.
    """
    if not 0 <= s <= tstar:
        raise ValueError("need 0 <= s <= tstar")
    if eta is not None and system.survival_fn().left(s) < eta:
        raise PositivityBreach(f"S({s}-) below {eta}")
    return float(system.h_at(i, j, s, tstar, limits=limits))


def cate(nuisance, j: int, tstar: float, x) -> float:
    """``L_j(0, tstar | 1, x) - L_j(0, tstar | 0, x)`` under fitted hazards."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = []
    for a in (1, 0):
        grid, d1, d2 = nuisance.cause_hazards(a, X, tstar)
        out.append(CauseSystem(grid, d1, d2, on_superunit="rescale").years_lost(j, tstar))
    tau = out[0] - out[1]
    return float(tau[0]) if np.ndim(x) == 1 else tau

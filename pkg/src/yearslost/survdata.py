"""Data model for right-censored competing-risks observations.

Holds the observation container, the step-function type used for every
cumulative hazard / survival curve / cumulative incidence, the fold plan
driving cross-fitting, and the report record emitted by the estimators.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    BadEventCode,
    BadTreatmentCode,
    InfeasibleFolds,
    InputError,
    MissingColumn,
    NonFiniteValue,
)

EVENT_CODES = (0, 1, 2)


class ObservationRecord(NamedTuple):
    time: float
    event: int
    treatment: int
    x: np.ndarray


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Columnar container of ``n`` observations ``(time, event, treatment, X)``.

    Event codes are 0 (censored), 1 and 2 (the two competing causes).
    Arrays are copied and made read-only at construction.
    """

    time: np.ndarray
    event: np.ndarray
    treatment: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        time = _frozen(self.time, float)
        event = np.asarray(self.event)
        treatment = np.asarray(self.treatment)
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        n = time.shape[0]
        if time.ndim != 1 or event.shape != (n,) or treatment.shape != (n,) or X.shape[0] != n:
            raise InputError("time, event, treatment and X must have matching first dimension")
        if X.shape[1] < 1:
            raise InputError("at least one covariate is required")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise NonFiniteValue("observed times must be finite and nonnegative")
        if not np.all(np.isfinite(X)):
            raise NonFiniteValue("covariates must be finite")
        if not np.all(np.isin(event, EVENT_CODES)):
            raise BadEventCode(f"event codes must lie in {EVENT_CODES}")
        if not np.all(np.isin(treatment, (0, 1))):
            raise BadTreatmentCode("treatment must be coded 0/1")
        X.setflags(write=False)
        names = tuple(self.covariate_names) or tuple(f"X{i + 1}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InputError("covariate_names length does not match X")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", _frozen(event, np.int64))
        object.__setattr__(self, "treatment", _frozen(treatment, np.int64))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def record(self, i: int) -> ObservationRecord:
        return ObservationRecord(float(self.time[i]), int(self.event[i]),
                                 int(self.treatment[i]), self.X[i])

    @property
    def rows(self) -> list[ObservationRecord]:
        return [self.record(i) for i in range(self.n)]

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(self.time[idx], self.event[idx], self.treatment[idx],
                               self.X[idx], self.covariate_names)

    def with_covariates(self, X, names=None) -> "SurvivalDataset":
        return SurvivalDataset(self.time, self.event, self.treatment, X,
                               names if names is not None else self.covariate_names)

    def n_events(self, cause: int) -> int:
        return int(np.sum(self.event == cause))

    def equals(self, other: "SurvivalDataset") -> bool:
        return (self.covariate_names == other.covariate_names
                and np.array_equal(self.time, other.time)
                and np.array_equal(self.event, other.event)
                and np.array_equal(self.treatment, other.treatment)
                and np.array_equal(self.X, other.X))


@dataclass(frozen=True)
class Schema:
    """Column mapping for CSV input. ``covariates=None`` takes all other columns."""

    time: str = "time"
    event: str = "event"
    treatment: str = "treatment"
    covariates: tuple[str, ...] | None = None


def _parse_int(value: str, column: str, exc):
    try:
        f = float(value)
    except ValueError:
        raise exc(f"column {column!r}: cannot parse {value!r}") from None
    if not math.isfinite(f) or f != int(f):
        raise exc(f"column {column!r}: {value!r} is not an integer code")
    return int(f)


def load_dataset(path, schema: Schema | None = None) -> SurvivalDataset:
    """Read a CSV file with a header row into a validated dataset.

    Raises :class:`MissingColumn`, :class:`NonFiniteValue`,
    :class:`BadEventCode` or :class:`BadTreatmentCode`.
    """
    schema = schema or Schema()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    special = (schema.time, schema.event, schema.treatment)
    for col in special:
        if col not in header:
            raise MissingColumn(f"column {col!r} not found in {path}")
    covs = schema.covariates
    if covs is None:
        covs = tuple(h for h in header if h not in special)
    if not covs:
        raise MissingColumn("no covariate columns")
    for col in covs:
        if col not in header:
            raise MissingColumn(f"column {col!r} not found in {path}")
    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    time = np.empty(n)
    event = np.empty(n, dtype=np.int64)
    treat = np.empty(n, dtype=np.int64)
    X = np.empty((n, len(covs)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError(f"{path}: row {r + 2} has {len(row)} fields, expected {len(header)}")
        try:
            time[r] = float(row[pos[schema.time]])
            X[r] = [float(row[pos[c]]) for c in covs]
        except ValueError as exc:
            raise NonFiniteValue(f"{path}: row {r + 2}: {exc}") from None
        event[r] = _parse_int(row[pos[schema.event]], schema.event, BadEventCode)
        treat[r] = _parse_int(row[pos[schema.treatment]], schema.treatment, BadTreatmentCode)
    return SurvivalDataset(time, event, treat, X, tuple(covs))


def write_dataset(data: SurvivalDataset, path, schema: Schema | None = None) -> None:
    """Write a dataset as CSV with reals at full (round-trip) precision."""
    schema = schema or Schema()
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([schema.time, schema.event, schema.treatment, *data.covariate_names])
        for i in range(data.n):
            w.writerow([repr(float(data.time[i])), int(data.event[i]), int(data.treatment[i]),
                        *(repr(float(v)) for v in data.X[i])])
    os.replace(tmp, path)


class StepFn:
    """Right-continuous step function ``f(t) = baseline + sum_{s <= t} jump(s)``.

    Tied jump times are merged by summing their sizes. Instances are
    immutable.
    """

    __slots__ = ("jump_times", "jump_sizes", "baseline", "_values")

    def __init__(self, jump_times=(), jump_sizes=(), baseline: float = 0.0):
        t = np.asarray(jump_times, dtype=float).ravel()
        s = np.asarray(jump_sizes, dtype=float).ravel()
        if t.shape != s.shape:
            raise ValueError("jump_times and jump_sizes must have the same length")
        if t.size and (np.any(t < 0) or not np.all(np.isfinite(t))):
            raise ValueError("jump times must be finite and nonnegative")
        if t.size and np.any(np.diff(t) <= 0):
            order = np.argsort(t, kind="stable")
            t, s = t[order], s[order]
            t, inv = np.unique(t, return_inverse=True)
            s = np.bincount(inv, weights=s, minlength=t.size)
        t.setflags(write=False)
        s.setflags(write=False)
        vals = baseline + np.cumsum(s)
        vals.setflags(write=False)
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "jump_sizes", s)
        object.__setattr__(self, "baseline", float(baseline))
        object.__setattr__(self, "_values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("StepFn is immutable")

    @classmethod
    def from_values(cls, times, values, baseline: float = 0.0) -> "StepFn":
        """Build from function values just after each jump time."""
        v = np.asarray(values, dtype=float)
        return cls(times, np.diff(np.concatenate([[baseline], v])), baseline)

    def __repr__(self):
        return f"StepFn(n_jumps={self.jump_times.size}, baseline={self.baseline})"

    @property
    def values(self) -> np.ndarray:
        """Function values at (just after) each jump time."""
        return self._values

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.jump_times, t, side="right")
        out = np.where(k > 0, self._values[np.maximum(k - 1, 0)] if self._values.size else 0.0,
                       self.baseline)
        return out if out.ndim else float(out)

    def left(self, t):
        """Left limit ``f(t-)``."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.jump_times, t, side="left")
        out = np.where(k > 0, self._values[np.maximum(k - 1, 0)] if self._values.size else 0.0,
                       self.baseline)
        return out if out.ndim else float(out)

    def jump_at(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.jump_times, t, side="left")
        kk = np.minimum(k, max(self.jump_times.size - 1, 0))
        hit = (k < self.jump_times.size) & (self.jump_times[kk] == t) if self.jump_times.size \
            else np.zeros(t.shape, bool)
        out = np.where(hit, self.jump_sizes[kk] if self.jump_sizes.size else 0.0, 0.0)
        return out if out.ndim else float(out)

    def restrict(self, upper: float) -> "StepFn":
        """Drop jumps after ``upper``."""
        keep = self.jump_times <= upper
        return StepFn(self.jump_times[keep], self.jump_sizes[keep], self.baseline)

    def is_cumulative_hazard(self) -> bool:
        return self.baseline == 0.0 and bool(np.all(self.jump_sizes >= 0))

    def is_survival(self) -> bool:
        v = np.concatenate([[self.baseline], self._values])
        return bool(np.all(v >= -1e-15) and np.all(v <= 1 + 1e-15) and np.all(np.diff(v) <= 0))


def stieltjes_integrate(g: Callable[[np.ndarray], np.ndarray] | np.ndarray, step: StepFn,
                        upper: float, lower: float = 0.0) -> float:
    """Exact ``int_(lower, upper] g(s) dF(s)`` against a step function ``F``.

    ``g`` is either a vectorised callable or an array of integrand values at
    ``step.jump_times``.
    """
    t = step.jump_times
    mask = (t > lower) & (t <= upper)
    if not mask.any():
        return 0.0
    gv = g(t[mask]) if callable(g) else np.asarray(g, dtype=float)[mask]
    return float(np.dot(np.broadcast_to(gv, t[mask].shape), step.jump_sizes[mask]))


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Partition of ``{0..n-1}`` into ``K`` nonempty folds.

    ``K == 1`` is the no-cross-fitting plan whose training split equals the
    evaluation split.
    """

    assignment: np.ndarray
    K: int
    seed: int
    redraws: int = 0

    def __post_init__(self):
        object.__setattr__(self, "assignment", _frozen(self.assignment, np.int64))

    @property
    def n(self) -> int:
        return self.assignment.size

    def test_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train_indices(self, k: int) -> np.ndarray:
        if self.K == 1:
            return np.arange(self.n)
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)


MAX_FOLD_REDRAWS = 100


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Assign each index independently and uniformly to one of ``K`` folds.

    Draws with an empty fold are discarded and redrawn with the seed
    incremented, up to ``MAX_FOLD_REDRAWS`` times.
    """
    if K < 1 or K > n:
        raise InfeasibleFolds(f"need 1 <= K <= n, got K={K}, n={n}")
    if K == 1:
        return FoldPlan(np.zeros(n, dtype=np.int64), 1, seed)
    for r in range(MAX_FOLD_REDRAWS):
        rng = np.random.default_rng(seed + r)
        a = rng.integers(0, K, size=n)
        if np.bincount(a, minlength=K).min() > 0:
            return FoldPlan(a, K, seed, redraws=r)
    raise InfeasibleFolds(f"could not draw {K} nonempty folds for n={n}")


@dataclass
class EstimateReport:
    """Point estimate with influence-function based inference.

    ``if_values`` holds the centred influence values, so their mean is zero
    and ``se = sqrt(mean(if_values**2) / n)``.
    """

    estimand: str
    cause: int
    tstar: float
    point: float
    se: float
    ci_lower: float
    ci_upper: float
    if_values: np.ndarray
    test_stat: float | None = None
    p_value: float | None = None
    fold_diagnostics: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.if_values)

    @property
    def variance(self) -> float:
        return self.se ** 2 * self.n

    def to_dict(self) -> dict:
        d = {
            "estimand": self.estimand,
            "cause": self.cause,
            "tstar": self.tstar,
            "point": self.point,
            "se": self.se,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "test_stat": self.test_stat,
            "p_value": self.p_value,
            "n": self.n,
            "if_values": [float(v) for v in self.if_values],
            "fold_diagnostics": self.fold_diagnostics,
        }
        d.update(self.extra)
        return d


def normal_ci(point: float, se: float, level: float = 0.95) -> tuple[float, float]:
    from scipy.stats import norm

    z = norm.ppf(0.5 + level / 2)
    return point - z * se, point + z * se


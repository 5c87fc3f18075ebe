"""Design-matrix terms for the parametric learners.

A term is a covariate name (``"X1"``), the treatment (``"A"``) or a product
of those joined by ``":"`` (``"A:X1"``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

TREATMENT = "A"


@dataclass(frozen=True)
class FeatureMap:
    terms: tuple[str, ...]
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        for term in self.terms:
            for part in term.split(":"):
                if part != TREATMENT and part not in self.covariate_names:
                    raise ConfigError(f"unknown variable {part!r} in term {term!r}")

    @property
    def p(self) -> int:
        return len(self.terms)

    def uses_treatment(self) -> bool:
        return any(TREATMENT in t.split(":") for t in self.terms)

    def design(self, a, X) -> np.ndarray:
        """Feature matrix for treatment ``a`` (scalar or per-row) and covariates ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.broadcast_to(np.asarray(a, dtype=float), (X.shape[0],))
        pos = {name: i for i, name in enumerate(self.covariate_names)}
        Z = np.ones((X.shape[0], self.p))
        for c, term in enumerate(self.terms):
            for part in term.split(":"):
                Z[:, c] *= a if part == TREATMENT else X[:, pos[part]]
        return Z


def default_hazard_terms(names) -> tuple[str, ...]:
    """Main effects, treatment and treatment-by-covariate interactions."""
    names = tuple(names)
    return names + (TREATMENT,) + tuple(f"{TREATMENT}:{n}" for n in names)


def default_censoring_terms(names) -> tuple[str, ...]:
    return tuple(names) + (TREATMENT,)

from __future__ import annotations

import numpy as np

from ..errors import NonConvergence, SingularDesign


def newton_maximize(objective, beta0, *, tol=1e-8, max_iter=100, check=None):
    """Damped Newton ascent for a concave objective.

    ``objective(beta)`` returns ``(value, gradient, hessian)``. Iterates until
    the Euclidean gradient norm is at most ``tol``. Returns the optimum, the
    final gradient, the final Hessian and the iteration count. ``check(beta)``
    is called after every step and may raise to abort.
    """
    beta = np.array(beta0, dtype=float)
    value, grad, hess = objective(beta)
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) <= tol:
            return beta, grad, hess, it - 1
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise SingularDesign("information matrix is singular") from None
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            v, g, h = objective(cand)
            if np.isfinite(v) and v >= value - 1e-12 * abs(value):
                break
            t *= 0.5
        else:
            raise NonConvergence("line search failed")
        beta, value, grad, hess = cand, v, g, h
        if check is not None:
            check(beta)
    if np.linalg.norm(grad) <= tol:
        return beta, grad, hess, max_iter
    raise NonConvergence(f"gradient norm {np.linalg.norm(grad):.3g} after {max_iter} iterations")

"""Smooth unconstrained maximization via Newton or BFGS ascent.

The solver works in maximization convention. When the objective supplies
a Hessian, it takes safeguarded Newton steps (falling back to a gradient
step whenever the Newton direction is not an ascent direction);
otherwise it maintains a BFGS approximation of the inverse Hessian of
the negated objective. Steps are accepted by Armijo backtracking only,
so the sequence of accepted objective values is nondecreasing; the BFGS
update is skipped when the curvature condition fails.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import LineSearchError, as_vector


@dataclass(frozen=True)
class OptimizeSettings:
    """Stopping and line search parameters.

    grad_tol is the sup-norm gradient threshold; the line search halves
    the step (shrink 0.5) until the sufficient-decrease condition with
    constant 1e-4 holds, giving up after 60 halvings.
    """

    grad_tol: float = 1e-6
    max_iters: int = 200
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    ls_max_halvings: int = 60

    def __post_init__(self):
        if self.grad_tol <= 0 or self.max_iters <= 0:
            raise ValueError("grad_tol and max_iters must be positive")
        if not 0 < self.ls_shrink < 1 or not 0 < self.ls_c1 < 1:
            raise ValueError("line search parameters must lie in (0, 1)")


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    status: str
    trace: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status == "converged"


def _evaluate(objective, x):
    out = objective(x)
    if len(out) == 2:
        value, grad = out
        hess = None
    else:
        value, grad, hess = out
    return float(value), np.asarray(grad, dtype=float), hess


def _newton_direction(grad, hess):
    try:
        chol = np.linalg.cholesky(-hess)
        d = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
    except np.linalg.LinAlgError:
        return grad
    if grad @ d <= 0.0:
        return grad
    return d


def maximize(objective, init, settings=None, on_stall="raise"):
    """Maximize a smooth function from ``init``.

    Parameters
    ----------
    objective : callable
        Maps a parameter vector to ``(value, gradient)`` or
        ``(value, gradient, hessian)``. A Hessian enables Newton steps.
    init : (n,) array
        Starting point; the objective must be finite here.
    settings : OptimizeSettings, optional
    on_stall : {"raise", "return"}
        What to do when the line search exhausts its halvings: raise
        LineSearchError (default), or return the best point found with
        status "stalled". Stalls happen when the remaining improvement
        is below floating-point resolution of the objective.

    Returns
    -------
    OptimizeResult with status "converged" (gradient sup-norm <=
    grad_tol), "max_iters", or "stalled"; ``trace`` holds the accepted
    objective values, which are nondecreasing.
    """
    settings = settings or OptimizeSettings()
    if on_stall not in ("raise", "return"):
        raise ValueError("on_stall must be 'raise' or 'return'")
    x = as_vector(init, name="init").copy()
    value, grad, hess = _evaluate(objective, x)
    if not np.isfinite(value):
        raise ValueError("objective is not finite at init")
    trace = [value]
    n = x.shape[0]
    inv_h = np.eye(n)
    scaled = False
    iterations = 0

    while True:
        if np.abs(grad).max() <= settings.grad_tol:
            return OptimizeResult(x, value, grad, iterations, "converged", trace)
        if iterations >= settings.max_iters:
            return OptimizeResult(x, value, grad, iterations, "max_iters", trace)

        if hess is not None:
            direction = _newton_direction(grad, hess)
        else:
            direction = inv_h @ grad
            if grad @ direction <= 0.0:
                inv_h = np.eye(n)
                scaled = False
                direction = grad
        slope = grad @ direction

        step = 1.0
        accepted = None
        for _ in range(settings.ls_max_halvings):
            x_new = x + step * direction
            if np.array_equal(x_new, x):
                break  # step underflowed; no progress is possible
            value_new, grad_new, hess_new = _evaluate(objective, x_new)
            if np.isfinite(value_new) and value_new >= value + settings.ls_c1 * step * slope:
                accepted = (x_new, value_new, grad_new, hess_new)
                break
            step *= settings.ls_shrink
        if accepted is None:
            if on_stall == "return":
                return OptimizeResult(x, value, grad, iterations, "stalled", trace)
            raise LineSearchError(
                f"no acceptable step after {settings.ls_max_halvings} halvings "
                f"(gradient sup-norm {np.abs(grad).max():.3g})")

        x_new, value_new, grad_new, hess_new = accepted
        if hess is None:
            # BFGS update on the negated objective's inverse Hessian;
            # skipped when the curvature condition fails.
            s = x_new - x
            y = grad - grad_new
            sy = s @ y
            if sy > 0.0:
                if not scaled:
                    inv_h *= sy / (y @ y)
                    scaled = True
                rho = 1.0 / sy
                hy = inv_h @ y
                inv_h -= rho * (np.outer(s, hy) + np.outer(hy, s))
                inv_h += rho * (rho * (y @ hy) + 1.0) * np.outer(s, s)
        x, value, grad, hess = x_new, value_new, grad_new, hess_new
        iterations += 1
        trace.append(value)

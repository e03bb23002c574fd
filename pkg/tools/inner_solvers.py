"""Inner iterative solvers for inexact primal subproblems.

Gradient and Nesterov loops, optionally projected, that stop when the
(projected) gradient norm meets a scheduled tolerance or the iteration
cap is reached. Both perform at least one step, so a loose tolerance
degrades gracefully to a single primal step per outer iteration.
"""

from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.logging_config import get_logger
from state.schema import InnerMethod


logger = get_logger(__name__)

GradientFn = Callable[[np.ndarray], np.ndarray]
ProjectionFn = Callable[[np.ndarray], np.ndarray]


class ToleranceSchedule(BaseModel):
    """Inner tolerance per outer iteration k.

    ``fixed`` returns ``eps`` for every k; ``polynomial`` returns
    ``c / (k + 1) ** p``.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["fixed", "polynomial"] = "fixed"
    eps: float = Field(default=1e-8, gt=0)
    c: float = Field(default=1.0, gt=0)
    p: float = Field(default=2.0, ge=0)

    def at(self, k: int) -> float:
        """Tolerance for outer iteration k (k >= 0)."""
        if self.kind == "fixed":
            return self.eps
        return self.c / (k + 1) ** self.p


class InexactConfig(BaseModel):
    """How an inexact primal subproblem is solved.

    Attributes:
        method: Inner iteration (gradient or Nesterov).
        schedule: Inner tolerance schedule.
        max_inner: Iteration cap R per subproblem.
        step: Inner step size; defaults to 1/L of the subproblem.
    """

    model_config = ConfigDict(frozen=True)

    method: InnerMethod = InnerMethod.NESTEROV
    schedule: ToleranceSchedule = Field(default_factory=ToleranceSchedule)
    max_inner: int = Field(default=1000, ge=1)
    step: float | None = Field(default=None, gt=0)


@dataclass(frozen=True)
class InnerResult:
    """Outcome of one inner solve.

    Attributes:
        x: Final iterate.
        iterations: Steps taken.
        converged: Whether the tolerance was met.
        residual: Final (projected) gradient norm.
    """

    x: np.ndarray
    iterations: int
    converged: bool
    residual: float


def stationarity(
    grad_fn: GradientFn,
    x: np.ndarray,
    step: float,
    project: ProjectionFn | None = None,
) -> float:
    """Gradient norm, or gradient-mapping norm when a projection is given."""
    g = grad_fn(x)
    if project is None:
        return float(np.linalg.norm(g))
    return float(np.linalg.norm(x - project(x - step * g)) / step)


def gradient_descent(
    grad_fn: GradientFn,
    x0: np.ndarray,
    step: float,
    tol: float,
    max_iter: int,
    project: ProjectionFn | None = None,
) -> InnerResult:
    """(Projected) gradient descent with a fixed step.

    Args:
        grad_fn: Gradient of the smooth objective.
        x0: Warm start.
        step: Step size, at most 1/L.
        tol: Stationarity target.
        max_iter: Iteration cap.
        project: Optional projection onto the feasible set.

    Returns:
        InnerResult after at least one step.
    """
    x = x0.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        g = grad_fn(x)
        x_next = x - step * g
        if project is not None:
            x_next = project(x_next)
        x = x_next
        residual = stationarity(grad_fn, x, step, project)
        if residual <= tol:
            return InnerResult(x, it, True, residual)
    return InnerResult(x, max_iter, False, residual)


def nesterov(
    grad_fn: GradientFn,
    x0: np.ndarray,
    step: float,
    tol: float,
    max_iter: int,
    project: ProjectionFn | None = None,
    mu: float = 0.0,
) -> InnerResult:
    """Accelerated (projected) gradient.

    Uses the constant momentum (sqrt(kappa) - 1)/(sqrt(kappa) + 1) when a
    strong convexity constant is known, the FISTA sequence otherwise.

    Args:
        grad_fn: Gradient of the smooth objective.
        x0: Warm start.
        step: Step size 1/L.
        tol: Stationarity target.
        max_iter: Iteration cap.
        project: Optional projection onto the feasible set.
        mu: Strong convexity constant of the objective.

    Returns:
        InnerResult after at least one step.
    """
    x = x0.copy()
    y = x0.copy()
    t = 1.0
    fixed_momentum = None
    if mu > 0:
        q = np.sqrt(mu * step)
        fixed_momentum = (1.0 - q) / (1.0 + q)

    residual = np.inf
    for it in range(1, max_iter + 1):
        x_next = y - step * grad_fn(y)
        if project is not None:
            x_next = project(x_next)
        if fixed_momentum is not None:
            momentum = fixed_momentum
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            momentum = (t - 1.0) / t_next
            t = t_next
        y = x_next + momentum * (x_next - x)
        x = x_next
        residual = stationarity(grad_fn, x, step, project)
        if residual <= tol:
            return InnerResult(x, it, True, residual)
    return InnerResult(x, max_iter, False, residual)


def minimize_inner(
    grad_fn: GradientFn,
    x0: np.ndarray,
    step: float,
    tol: float,
    max_iter: int,
    method: InnerMethod,
    project: ProjectionFn | None = None,
    mu: float = 0.0,
) -> InnerResult:
    """Dispatch to the configured inner method."""
    if method == InnerMethod.GRADIENT:
        result = gradient_descent(grad_fn, x0, step, tol, max_iter, project)
    else:
        result = nesterov(grad_fn, x0, step, tol, max_iter, project, mu)
    if not result.converged:
        logger.debug(
            f"Inner {method.value} loop hit cap {max_iter} at residual {result.residual:.3e} (tol {tol:.3e})"
        )
    return result

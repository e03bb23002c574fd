"""Euclidean projections onto simple polyhedra.

Peers' feasible sets are intersections of a box with one halfspace.
Dykstra's alternating projections handle the intersection; a
brute-force active-set enumeration serves as the exact reference for
small strictly convex QPs.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from config.logging_config import get_logger


logger = get_logger(__name__)

DYKSTRA_TOLERANCE = 1e-12
DYKSTRA_MAX_ITERS = 10_000
FEASIBILITY_TOLERANCE = 1e-10
MAX_ENUMERATED_CONSTRAINTS = 16


def project_box(x: np.ndarray, lower: np.ndarray | float, upper: np.ndarray | float) -> np.ndarray:
    """Clamp x into [lower, upper]."""
    return np.clip(x, lower, upper)


def project_halfspace(x: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Project x onto {y : a'y <= b}."""
    violation = a @ x - b
    if violation <= 0:
        return x.copy()
    return x - (violation / (a @ a)) * a


def dykstra_projection(
    point: np.ndarray,
    projections: Sequence[Callable[[np.ndarray], np.ndarray]],
    tol: float = DYKSTRA_TOLERANCE,
    max_iter: int = DYKSTRA_MAX_ITERS,
) -> tuple[np.ndarray, int]:
    """Project onto an intersection of convex sets by Dykstra's method.

    Args:
        point: Point to project.
        projections: Projection onto each set.
        tol: Stop when a full sweep moves the iterate less than tol.
        max_iter: Sweep cap.

    Returns:
        Tuple of (projection, sweeps performed).
    """
    x = np.asarray(point, dtype=float).copy()
    increments = [np.zeros_like(x) for _ in projections]
    for sweep in range(1, max_iter + 1):
        x_start = x.copy()
        for idx, project in enumerate(projections):
            y = project(x + increments[idx])
            increments[idx] = x + increments[idx] - y
            x = y
        if np.linalg.norm(x - x_start) <= tol:
            return x, sweep
    logger.debug(f"Dykstra stopped at sweep cap {max_iter}")
    return x, max_iter


@dataclass(frozen=True)
class BoxHalfspace:
    """The set {lower <= x <= upper, a'x <= b}.

    Attributes:
        lower: Lower bounds.
        upper: Upper bounds.
        a: Halfspace normal.
        b: Halfspace offset.
    """

    lower: np.ndarray
    upper: np.ndarray
    a: np.ndarray
    b: float

    def contains(self, x: np.ndarray, tol: float = FEASIBILITY_TOLERANCE) -> bool:
        return bool(
            np.all(x >= self.lower - tol)
            and np.all(x <= self.upper + tol)
            and self.a @ x <= self.b + tol
        )

    def project(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection, by Dykstra when the clamp alone is infeasible."""
        clamped = project_box(x, self.lower, self.upper)
        if self.a @ clamped <= self.b:
            return clamped
        result, _ = dykstra_projection(
            x,
            [
                lambda v: project_box(v, self.lower, self.upper),
                lambda v: project_halfspace(v, self.a, self.b),
            ],
        )
        # Final clamp removes the last halfspace step's roundoff outside the box
        return project_box(result, self.lower, self.upper)

    def as_inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """(G, h) with the set written as Gx <= h (infinite bounds dropped)."""
        n = self.a.shape[0]
        rows, rhs = [], []
        for j in range(n):
            if np.isfinite(self.lower[j]):
                row = np.zeros(n)
                row[j] = -1.0
                rows.append(row)
                rhs.append(-self.lower[j])
        for j in range(n):
            if np.isfinite(self.upper[j]):
                row = np.zeros(n)
                row[j] = 1.0
                rows.append(row)
                rhs.append(self.upper[j])
        rows.append(self.a)
        rhs.append(self.b)
        return np.array(rows), np.array(rhs)


def active_set_qp(
    P: np.ndarray,
    p: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    initial_active: tuple[int, ...] | None = None,
    tol: float = FEASIBILITY_TOLERANCE,
) -> tuple[np.ndarray, tuple[int, ...]]:
    """Solve min x'Px/2 + p'x s.t. Gx <= h by enumerating active sets.

    P must be positive definite. Candidate active sets are tried smallest
    first, after an optional hint; the first one whose KKT point is
    primal feasible with nonnegative multipliers is returned.

    Args:
        P: Positive definite Hessian.
        p: Linear term.
        G: Constraint matrix (at most 16 rows).
        h: Constraint right-hand side.
        initial_active: Active set to try first.
        tol: Feasibility and multiplier-sign tolerance.

    Returns:
        Tuple of (minimizer, active set).

    Raises:
        ValueError: If G has too many rows or no active set qualifies.
    """
    m, n = G.shape
    if m > MAX_ENUMERATED_CONSTRAINTS:
        raise ValueError(f"Active-set enumeration supports at most {MAX_ENUMERATED_CONSTRAINTS} constraints, got {m}")

    def candidates():
        if initial_active is not None:
            yield tuple(initial_active)
        for size in range(0, min(m, n) + 1):
            yield from combinations(range(m), size)

    scale = 1.0 + float(np.max(np.abs(h), initial=0.0))
    for active in candidates():
        x = _equality_qp(P, p, G, h, active)
        if x is None:
            continue
        x, multipliers = x
        if np.all(G @ x <= h + tol * scale) and np.all(multipliers >= -tol * scale):
            return x, tuple(active)
    raise ValueError("No active set satisfies the KKT conditions; is P positive definite?")


def project_polyhedron_bruteforce(point: np.ndarray, G: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Exact projection onto {Gx <= h} by active-set enumeration."""
    n = point.shape[0]
    x, _ = active_set_qp(np.eye(n), -np.asarray(point, dtype=float), G, h)
    return x


def _equality_qp(
    P: np.ndarray,
    p: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    active: tuple[int, ...],
) -> tuple[np.ndarray, np.ndarray] | None:
    n = P.shape[0]
    if not active:
        return np.linalg.solve(P, -p), np.zeros(0)
    rows = G[list(active)]
    if np.linalg.matrix_rank(rows) < len(active):
        return None
    k = len(active)
    kkt = np.block([[P, rows.T], [rows, np.zeros((k, k))]])
    rhs = np.concatenate([-p, h[list(active)]])
    try:
        solution = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    return solution[:n], solution[n:]

"""Steppers for linearly constrained problems min sum_i f_i(x_i) s.t. sum_i A_i x_i = 0.

Exact and inexact ALM, proximal point on the dual, AHU, two-block ADMM,
Jacobi dual decomposition and PDMM. Every stepper is a pure function
from one SolverState to the next; run_saddle drives them and records a
Trace.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import linalg

from config.logging_config import get_logger
from config.settings import get_settings
from state.errors import CapabilityError, ConfigError, DimensionError
from state.schema import SADDLE_COLUMNS, SaddleMethod, Trace, TraceFlag
from tools.inner_solvers import InexactConfig, minimize_inner
from tools.oracle import FunctionOracle, SeparableOracle


logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Separable objective blocks with coupling constraint blocks.

    Attributes:
        blocks: Objective oracles f_i.
        constraints: Matrices A_i (m x n_i), one per block.
        rho: Penalty parameter.
    """

    blocks: tuple[FunctionOracle, ...]
    constraints: tuple[np.ndarray, ...]
    rho: float

    def __post_init__(self) -> None:
        if len(self.blocks) != len(self.constraints):
            raise DimensionError(
                f"{len(self.blocks)} blocks but {len(self.constraints)} constraint blocks"
            )
        if not self.blocks:
            raise DimensionError("A problem needs at least one block")
        rows = {A.shape[0] for A in self.constraints}
        if len(rows) != 1:
            raise DimensionError(f"Constraint blocks disagree on row count: {sorted(rows)}")
        for i, (oracle, A) in enumerate(zip(self.blocks, self.constraints)):
            if A.ndim != 2 or A.shape[1] != oracle.dimension:
                raise DimensionError(
                    f"A_{i} has shape {A.shape}, block {i} has dimension {oracle.dimension}"
                )
        if self.rho < 0:
            raise ConfigError(f"Penalty rho must be nonnegative, got {self.rho}")

    @cached_property
    def oracle(self) -> SeparableOracle:
        """All blocks as one oracle on the stacked variable."""
        return SeparableOracle(self.blocks)

    @cached_property
    def A(self) -> np.ndarray:
        """Stacked constraint matrix [A_1 ... A_N]."""
        return np.hstack(self.constraints)

    @cached_property
    def gram(self) -> np.ndarray:
        """A'A."""
        return self.A.T @ self.A

    @cached_property
    def lambda_max_gram(self) -> float:
        return float(np.linalg.eigvalsh(self.gram)[-1]) if self.n else 0.0

    @cached_property
    def alm_factor(self) -> tuple[np.ndarray, bool] | None:
        """Cholesky factor of Q + rho A'A for all-quadratic problems."""
        form = self.oracle.quadratic_form()
        if form is None:
            return None
        try:
            return linalg.cho_factor(form[0] + self.rho * self.gram)
        except linalg.LinAlgError:
            return None

    @cached_property
    def dual_factor(self) -> tuple[tuple[np.ndarray, bool], np.ndarray]:
        """Cholesky factor of Q and the vector q for strictly convex quadratics.

        Raises:
            CapabilityError: If some block is not a strictly convex quadratic.
        """
        form = self.oracle.quadratic_form()
        if form is None:
            raise CapabilityError("Closed-form dual needs quadratic blocks")
        try:
            return linalg.cho_factor(form[0]), form[1]
        except linalg.LinAlgError as e:
            raise CapabilityError("Closed-form dual needs positive definite Q") from e

    @property
    def n(self) -> int:
        return self.oracle.dimension

    @property
    def m(self) -> int:
        return int(self.constraints[0].shape[0])

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def smooth(self) -> bool:
        return all(b.smooth for b in self.blocks)

    def block_slice(self, i: int) -> slice:
        return self.oracle.block_slice(i)


def make_problem(
    blocks: Sequence[tuple[FunctionOracle, np.ndarray]],
    rho: float,
) -> ProblemSpec:
    """Build a ProblemSpec from (oracle, A_i) pairs.

    One-dimensional A_i are read as a single constraint row.
    """
    oracles = tuple(o for o, _ in blocks)
    matrices = tuple(np.atleast_2d(np.asarray(A, dtype=float)) for _, A in blocks)
    return ProblemSpec(blocks=oracles, constraints=matrices, rho=float(rho))


@dataclass(frozen=True, eq=False)
class SolverState:
    """Iterate of a saddle-point method.

    Attributes:
        x: Stacked primal blocks.
        lam: Dual vector (length m).
        lam_hat: Forwarded dual used by PDMM.
        k: Iteration counter.
        flags: Warning flags raised so far.
    """

    x: np.ndarray
    lam: np.ndarray
    lam_hat: np.ndarray | None = None
    k: int = 0
    flags: frozenset[str] = field(default_factory=frozenset)


class PdmmConfig(BaseModel):
    """Parameters of randomized-block PDMM.

    ``tau`` and ``nu`` scale the dual rows and may be scalars or length-m
    vectors; ``eta`` holds one Bregman weight per block or a shared one.
    """

    model_config = ConfigDict(frozen=True)

    K: int = Field(default=1, ge=1)
    tau: float | list[float] | None = None
    nu: float | list[float] = 0.0
    eta: float | list[float] = 0.0
    bregman: str = Field(default="euclidean", pattern="^(euclidean|quadratic)$")
    bregman_matrix: list[list[float]] | None = None
    seed: int = 0

    @field_validator("tau")
    @classmethod
    def _tau_positive(cls, v: float | list[float] | None) -> float | list[float] | None:
        if v is not None and np.any(np.asarray(v) <= 0):
            raise ValueError("tau entries must be positive")
        return v

    @field_validator("nu")
    @classmethod
    def _nu_range(cls, v: float | list[float]) -> float | list[float]:
        arr = np.asarray(v)
        if np.any(arr < 0) or np.any(arr >= 1):
            raise ValueError("nu entries must lie in [0, 1)")
        return v

    @field_validator("eta")
    @classmethod
    def _eta_nonnegative(cls, v: float | list[float]) -> float | list[float]:
        if np.any(np.asarray(v) < 0):
            raise ValueError("eta entries must be nonnegative")
        return v

    def tau_vector(self, m: int) -> np.ndarray:
        """Dual scaling Theta as a length-m vector (default 1/K)."""
        return _row_vector(1.0 / self.K if self.tau is None else self.tau, m, "tau")

    def nu_vector(self, m: int) -> np.ndarray:
        """Backward-step scaling Theta' as a length-m vector."""
        return _row_vector(self.nu, m, "nu")

    def eta_for(self, i: int, n_blocks: int) -> float:
        """Bregman weight of block i."""
        if isinstance(self.eta, list):
            if len(self.eta) != n_blocks:
                raise DimensionError(f"eta has {len(self.eta)} entries for {n_blocks} blocks")
            return float(self.eta[i])
        return float(self.eta)

    def generator_matrix(self, dimension: int) -> np.ndarray:
        """Hessian-defining matrix M of the quadratic Bregman generator."""
        if self.bregman_matrix is None:
            raise ConfigError("Quadratic Bregman generator needs bregman_matrix")
        M = np.asarray(self.bregman_matrix, dtype=float)
        if M.shape != (dimension, dimension):
            raise DimensionError(f"bregman_matrix has shape {M.shape}, block has dimension {dimension}")
        if np.max(np.abs(M - M.T)) > 1e-12 or np.linalg.eigvalsh(M)[0] < -1e-12:
            raise ConfigError("Bregman generator matrix must be symmetric positive semidefinite")
        return M


def initial_state(
    p: ProblemSpec,
    x0: np.ndarray | None = None,
    lam0: np.ndarray | None = None,
) -> SolverState:
    """Zero (or given) starting point with matching dimensions."""
    x = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    lam = np.zeros(p.m) if lam0 is None else np.asarray(lam0, dtype=float).copy()
    state = SolverState(x=x, lam=lam)
    _check_state(p, state)
    return state


def aug_lagrangian(p: ProblemSpec, x: np.ndarray, lam: np.ndarray) -> float:
    """f(x) + lam'Ax + (rho/2)||Ax||^2."""
    x, lam = _check_primal_dual(p, x, lam)
    residual = p.A @ x
    return p.oracle.evaluate(x) + float(lam @ residual) + 0.5 * p.rho * float(residual @ residual)


def alm_step(p: ProblemSpec, s: SolverState) -> SolverState:
    """Exact ALM: x+ = argmin_x L_rho(x, lam), lam+ = lam + rho A x+.

    Raises:
        CapabilityError: If the joint primal minimization has no exact
            solver (use inexact_alm_step instead).
    """
    _check_state(p, s)
    a = p.A.T @ s.lam
    if p.alm_factor is not None:
        _, q = p.oracle.quadratic_form()
        x = linalg.cho_solve(p.alm_factor, -(q + a))
    else:
        try:
            x = p.oracle.argmin_shifted(a, p.rho * p.gram)
        except CapabilityError as e:
            raise CapabilityError(f"{e}; use inexact_alm_step for this problem") from e
    lam = s.lam + p.rho * (p.A @ x)
    logger.debug(f"ALM step k={s.k}: |Ax|={np.linalg.norm(p.A @ x):.3e}")
    return replace(s, x=x, lam=lam, k=s.k + 1)


def prox_point_dual_step(p: ProblemSpec, lam: np.ndarray) -> np.ndarray:
    """argmax_mu D(mu) - ||mu - lam||^2 / (2 rho) for strictly convex quadratics.

    Raises:
        CapabilityError: If some block is not a strictly convex quadratic.
    """
    lam = _check_dual(p, lam)
    factor, q = p.dual_factor
    if p.rho == 0:
        return lam.copy()
    sensitivity = p.A @ linalg.cho_solve(factor, p.A.T)
    offset = p.A @ linalg.cho_solve(factor, q)
    system = np.eye(p.m) / p.rho + sensitivity
    return np.linalg.solve(system, lam / p.rho - offset)


def dual_function_value(p: ProblemSpec, lam: np.ndarray) -> float:
    """D(lam) = inf_x f(x) + lam'Ax for strictly convex quadratic blocks.

    Raises:
        CapabilityError: If some block is not a strictly convex quadratic.
    """
    lam = _check_dual(p, lam)
    factor, q = p.dual_factor
    shifted = q + p.A.T @ lam
    return float(-0.5 * shifted @ linalg.cho_solve(factor, shifted))


def dual_minimizer(p: ProblemSpec, lam: np.ndarray) -> np.ndarray:
    """Primal minimizer of the Lagrangian at lam (strictly convex quadratics)."""
    factor, q = p.dual_factor
    return -linalg.cho_solve(factor, q + p.A.T @ _check_dual(p, lam))


def default_ahu_step(p: ProblemSpec) -> float:
    """alpha = 1 / (ell + rho lambda_max(A'A))."""
    bound = p.oracle.ell + p.rho * p.lambda_max_gram
    return 1.0 / bound if bound > 0 else 1.0


def ahu_step(p: ProblemSpec, s: SolverState, alpha: float | None = None) -> SolverState:
    """x+ = x - alpha grad_x L_rho(x, lam), lam+ = lam + rho A x+.

    Raises:
        CapabilityError: If some block is nonsmooth.
    """
    _check_state(p, s)
    if not p.smooth:
        raise CapabilityError("AHU needs every block to be smooth")
    alpha = default_ahu_step(p) if alpha is None else float(alpha)
    if alpha < 0:
        raise ConfigError(f"AHU step must be nonnegative, got {alpha}")
    x = s.x - alpha * lagrangian_gradient(p, s.x, s.lam)
    lam = s.lam + p.rho * (p.A @ x)
    return replace(s, x=x, lam=lam, k=s.k + 1)


def admm_step(p: ProblemSpec, s: SolverState) -> SolverState:
    """Two-block Gauss-Seidel sweep followed by a dual step.

    Raises:
        CapabilityError: If the problem does not have exactly two blocks.
    """
    _check_state(p, s)
    if p.n_blocks != 2:
        raise CapabilityError(f"ADMM needs exactly 2 blocks, got {p.n_blocks}")
    (f1, f2), (A1, A2) = p.blocks, p.constraints
    s1, s2 = p.block_slice(0), p.block_slice(1)

    x1 = f1.argmin_shifted(A1.T @ (s.lam + p.rho * (A2 @ s.x[s2])), p.rho * A1.T @ A1)
    x2 = f2.argmin_shifted(A2.T @ (s.lam + p.rho * (A1 @ x1)), p.rho * A2.T @ A2)

    x = np.empty_like(s.x)
    x[s1], x[s2] = x1, x2
    lam = s.lam + p.rho * (A1 @ x1 + A2 @ x2)
    return replace(s, x=x, lam=lam, k=s.k + 1)


def jacobi_step(p: ProblemSpec, s: SolverState) -> SolverState:
    """All blocks minimize L_rho against frozen others, then a dual step.

    May diverge for coupled blocks; runners flag divergence instead of
    raising.
    """
    _check_state(p, s)
    coupled = p.A @ s.x
    x = np.empty_like(s.x)
    for i, (block, A_i) in enumerate(zip(p.blocks, p.constraints)):
        rows = p.block_slice(i)
        others = coupled - A_i @ s.x[rows]
        x[rows] = block.argmin_shifted(A_i.T @ (s.lam + p.rho * others), p.rho * A_i.T @ A_i)
    lam = s.lam + p.rho * (p.A @ x)
    return replace(s, x=x, lam=lam, k=s.k + 1)


def pdmm_step(p: ProblemSpec, s: SolverState, c: PdmmConfig) -> SolverState:
    """Randomized-block PDMM with Bregman regularization and a backward dual step.

    The K selected blocks minimize L_rho(x_i, x_{j != i}, lam_hat) +
    eta_i B(x_i, x_i^k) in parallel; then lam+ = lam + Theta rho A x+ and
    lam_hat+ = lam+ - Theta' rho A x+.

    Raises:
        ConfigError: If K exceeds the block count or the Bregman
            generator is not positive semidefinite.
    """
    _check_state(p, s)
    if c.K > p.n_blocks:
        raise ConfigError(f"PDMM selects K={c.K} blocks but the problem has {p.n_blocks}")
    selected = select_blocks(c, s.k, p.n_blocks)
    lam_hat = s.lam if s.lam_hat is None else s.lam_hat

    coupled = p.A @ s.x
    x = s.x.copy()
    for i in selected:
        block, A_i = p.blocks[i], p.constraints[i]
        rows = p.block_slice(i)
        x_i = s.x[rows]
        a = A_i.T @ (lam_hat + p.rho * (coupled - A_i @ x_i))
        h = p.rho * A_i.T @ A_i
        eta = c.eta_for(i, p.n_blocks)
        if eta > 0:
            if c.bregman == "euclidean":
                # B(u, v) = ||u - v||^2
                h = h + 2.0 * eta * np.eye(block.dimension)
                a = a - 2.0 * eta * x_i
            else:
                M = c.generator_matrix(block.dimension)
                h = h + eta * M
                a = a - eta * (M @ x_i)
        x[rows] = block.argmin_shifted(a, h)

    residual = p.A @ x
    lam = s.lam + c.tau_vector(p.m) * p.rho * residual
    lam_hat_next = lam - c.nu_vector(p.m) * p.rho * residual
    return replace(s, x=x, lam=lam, lam_hat=lam_hat_next, k=s.k + 1)


def select_blocks(c: PdmmConfig, k: int, n_blocks: int) -> np.ndarray:
    """Blocks drawn at iteration k; a pure function of (seed, k)."""
    rng = np.random.default_rng([c.seed, k])
    return np.sort(rng.choice(n_blocks, size=c.K, replace=False))


def inexact_alm_step(
    p: ProblemSpec,
    s: SolverState,
    c: InexactConfig,
) -> tuple[SolverState, int]:
    """ALM whose primal subproblem is solved by an inner gradient loop.

    The inner loop stops at ||grad_x L_rho|| <= eps_in(k) or after
    max_inner steps; hitting the cap sets the inner_tolerance_unmet flag.

    Returns:
        Tuple of (next state, inner iterations used).
    """
    _check_state(p, s)
    if not p.smooth:
        raise CapabilityError("Inexact ALM needs every block to be smooth")
    tol = c.schedule.at(s.k)
    step = c.step if c.step is not None else default_ahu_step(p)
    result = minimize_inner(
        lambda x: lagrangian_gradient(p, x, s.lam),
        s.x,
        step,
        tol,
        c.max_inner,
        c.method,
        mu=p.oracle.mu,
    )
    flags = s.flags
    if not result.converged:
        flags = flags | {TraceFlag.INNER_TOLERANCE_UNMET.value}
    lam = s.lam + p.rho * (p.A @ result.x)
    return replace(s, x=result.x, lam=lam, k=s.k + 1, flags=flags), result.iterations


def lagrangian_gradient(p: ProblemSpec, x: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """grad_x L_rho(x, lam) = grad f(x) + A'(lam + rho A x)."""
    return p.oracle.grad(x) + p.A.T @ (lam + p.rho * (p.A @ x))


def kkt_residual(p: ProblemSpec, s: SolverState) -> tuple[float, float]:
    """(||Ax||, ||grad f(x) + A'lam||); the second is nan for nonsmooth blocks."""
    primal = float(np.linalg.norm(p.A @ s.x))
    if not p.smooth:
        return primal, float("nan")
    dual = float(np.linalg.norm(p.oracle.grad(s.x) + p.A.T @ s.lam))
    return primal, dual


def iteration_map_radius(
    step: Callable[[ProblemSpec, SolverState], SolverState],
    p: ProblemSpec,
    s: SolverState,
) -> float:
    """Spectral radius of the linear part of an affine stepper.

    Columns of the iteration Jacobian are taken as unit-perturbation
    differences, which is exact for affine maps (quadratic blocks).
    """
    base = step(p, s)
    z0 = np.concatenate([base.x, base.lam])
    size = p.n + p.m
    jacobian = np.empty((size, size))
    for j in range(size):
        x, lam = s.x.copy(), s.lam.copy()
        if j < p.n:
            x[j] += 1.0
        else:
            lam[j - p.n] += 1.0
        moved = step(p, replace(s, x=x, lam=lam))
        jacobian[:, j] = np.concatenate([moved.x, moved.lam]) - z0
    return float(np.max(np.abs(np.linalg.eigvals(jacobian))))


def run_saddle(
    p: ProblemSpec,
    method: SaddleMethod,
    *,
    max_iters: int = 1000,
    tol: float = 1e-8,
    alpha: float | None = None,
    pdmm: PdmmConfig | None = None,
    inexact: InexactConfig | None = None,
    x0: np.ndarray | None = None,
    lam0: np.ndarray | None = None,
) -> Trace:
    """Run one saddle-point method until KKT residual <= tol or the budget ends.

    Divergence (non-finite iterates or norms above the configured
    threshold) sets the diverged flag and stops the run.

    Returns:
        Trace with SADDLE_COLUMNS; metadata holds the final iterate.
    """
    method = SaddleMethod(method)
    threshold = get_settings().divergence_threshold
    pdmm = pdmm or PdmmConfig()
    inexact = inexact or InexactConfig()
    state = initial_state(p, x0, lam0)
    trace = Trace(columns=SADDLE_COLUMNS)
    logger.info(f"Starting {method.value} run: n={p.n}, m={p.m}, blocks={p.n_blocks}, budget={max_iters}")

    kkt = _record(trace, p, state, inner_iters=0)
    for _ in range(max_iters):
        if kkt <= tol:
            break
        inner = 0
        if method == SaddleMethod.ALM:
            state = alm_step(p, state)
        elif method == SaddleMethod.PROX_POINT:
            lam = prox_point_dual_step(p, state.lam)
            state = replace(state, x=dual_minimizer(p, lam), lam=lam, k=state.k + 1)
        elif method == SaddleMethod.AHU:
            state = ahu_step(p, state, alpha)
        elif method == SaddleMethod.ADMM:
            state = admm_step(p, state)
        elif method == SaddleMethod.JACOBI:
            state = jacobi_step(p, state)
        elif method == SaddleMethod.PDMM:
            state = pdmm_step(p, state, pdmm)
        else:
            state, inner = inexact_alm_step(p, state, inexact)

        size = max(np.max(np.abs(state.x), initial=0.0), np.max(np.abs(state.lam), initial=0.0))
        if not np.isfinite(size) or size > threshold:
            logger.warning(f"{method.value} diverged at k={state.k} (max |z| = {size:.3e})")
            state = replace(state, flags=state.flags | {TraceFlag.DIVERGED.value})
            break
        kkt = _record(trace, p, state, inner_iters=inner)

    trace.merge_flags(state.flags)
    trace.metadata.update(
        {
            "method": method.value,
            "iterations": state.k,
            "x": state.x.tolist(),
            "lam": state.lam.tolist(),
        }
    )
    logger.info(f"Finished {method.value} run after {state.k} iterations, kkt={kkt:.3e}")
    return trace


def _record(trace: Trace, p: ProblemSpec, s: SolverState, inner_iters: int) -> float:
    primal, dual = kkt_residual(p, s)
    try:
        dual_value = dual_function_value(p, s.lam)
    except CapabilityError:
        dual_value = float("nan")
    kkt = primal + dual
    trace.append(
        k=s.k,
        objective=p.oracle.evaluate(s.x),
        primal_residual=primal,
        dual_residual=dual,
        kkt_residual=kkt,
        dual_value=dual_value,
        inner_iters=inner_iters,
    )
    return kkt


def _row_vector(value: float | list[float], m: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(m, float(arr))
    if arr.shape != (m,):
        raise DimensionError(f"{name} has {arr.shape[0]} entries for {m} dual rows")
    return arr


def _check_primal_dual(p: ProblemSpec, x: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        raise DimensionError(f"x has shape {x.shape}, problem has n={p.n}")
    return x, _check_dual(p, lam)


def _check_dual(p: ProblemSpec, lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (p.m,):
        raise DimensionError(f"lambda has shape {lam.shape}, problem has m={p.m}")
    return lam


def _check_state(p: ProblemSpec, s: SolverState) -> None:
    _check_primal_dual(p, s.x, s.lam)

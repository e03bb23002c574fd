"""Consensus optimization over a graph.

Agents hold rows of an (N, d) array and cooperate to minimize
sum_i f_i(x_i) subject to L x = 0. Provides distributed ALM, EXTRA and
gradient tracking, each native recursion paired with its primal-dual
form. The primal-dual forms carry the scaled dual eta = rho L^{1/2} lam,
so L^{1/2} itself is never formed.
"""

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from config.logging_config import get_logger
from config.settings import get_settings
from state.errors import ConfigError, DimensionError, TopologyError
from state.schema import CONSENSUS_COLUMNS, ConsensusMethod, ConsensusMetrics, Trace, TraceFlag
from tools.inner_solvers import InexactConfig, minimize_inner
from tools.oracle import FunctionOracle
from tools.topology import Topology, WeightMatrix, metropolis_weights


logger = get_logger(__name__)

COUPLING_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class ConsensusProblem:
    """Agents' objectives on a connected graph.

    Attributes:
        oracles: One objective per agent, all of dimension d.
        topology: Communication graph.
        weights: Mixing matrix W with Laplacian L = I - W.
        rho: Penalty parameter.
        alpha: Step size.
    """

    oracles: tuple[FunctionOracle, ...]
    topology: Topology
    weights: WeightMatrix
    rho: float
    alpha: float

    @property
    def n_agents(self) -> int:
        return len(self.oracles)

    @property
    def dimension(self) -> int:
        return self.oracles[0].dimension

    @property
    def W(self) -> np.ndarray:
        return self.weights.matrix

    @property
    def laplacian(self) -> np.ndarray:
        return self.weights.laplacian

    @cached_property
    def ell_max(self) -> float:
        return max(o.ell for o in self.oracles)

    @property
    def coupled(self) -> bool:
        """Whether alpha rho = 1 (the native/primal-dual equivalence regime)."""
        return abs(self.alpha * self.rho - 1.0) <= COUPLING_TOLERANCE

    def gradients(self, x: np.ndarray) -> np.ndarray:
        """Row i is grad f_i(x_i)."""
        return np.stack([o.grad(xi) for o, xi in zip(self.oracles, x)])

    def objective(self, x: np.ndarray) -> float:
        """sum_i f_i(x_i)."""
        return float(sum(o.evaluate(xi) for o, xi in zip(self.oracles, x)))

    def consensus_objective(self, z: np.ndarray) -> float:
        """sum_i f_i(z) at a common point."""
        return float(sum(o.evaluate(z) for o in self.oracles))

    def check(self, x: np.ndarray, name: str = "x") -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.shape != (self.n_agents, self.dimension):
            raise DimensionError(
                f"{name} has shape {arr.shape}, expected ({self.n_agents}, {self.dimension})"
            )
        return arr


@dataclass(frozen=True, eq=False)
class ConsensusState:
    """Iterate of a consensus method.

    Attributes:
        x: Agent estimates, shape (N, d).
        eta: Dual (distributed ALM and primal-dual forms).
        s: Gradient tracker.
        x_prev: Previous iterate (EXTRA native form).
        grad: Cached gradients at x.
        grad_prev: Cached gradients at x_prev.
        k: Iteration counter.
        flags: Warning flags raised so far.
    """

    x: np.ndarray
    eta: np.ndarray | None = None
    s: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    grad: np.ndarray | None = None
    grad_prev: np.ndarray | None = None
    k: int = 0
    flags: frozenset[str] = field(default_factory=frozenset)


@dataclass(frozen=True)
class ConsensusReference:
    """Reference optimum for metrics.

    Attributes:
        x: Common optimal point (length d).
        value: Optimal value of sum_i f_i.
    """

    x: np.ndarray
    value: float


def default_step(oracles: Sequence[FunctionOracle], weights: WeightMatrix, rho: float) -> float:
    """alpha = min(1/rho, 1/(ell_max + rho lambda_max(L)))."""
    bound = max(o.ell for o in oracles) + rho * weights.lambda_max_laplacian
    return min(1.0 / rho, 1.0 / bound) if bound > 0 else 1.0 / rho


def build_consensus_problem(
    oracles: Sequence[FunctionOracle],
    topology: Topology,
    rho: float,
    alpha: float | None = None,
    weights: WeightMatrix | None = None,
    coupled: bool = False,
) -> ConsensusProblem:
    """Assemble a consensus problem on a connected topology.

    Args:
        oracles: Agent objectives, one per node.
        topology: Connected communication graph.
        rho: Penalty parameter (> 0).
        alpha: Step size; defaults to the safe step, or 1/rho if coupled.
        weights: Mixing matrix; defaults to Metropolis weights.
        coupled: Require alpha rho = 1.

    Returns:
        Validated ConsensusProblem.

    Raises:
        TopologyError: If the topology is disconnected.
        DimensionError: On oracle count or dimension mismatch.
        ConfigError: On nonpositive parameters or a violated coupling.
    """
    if not topology.connected:
        raise TopologyError("Consensus needs a connected topology")
    if len(oracles) != topology.n_nodes:
        raise DimensionError(f"{len(oracles)} oracles for {topology.n_nodes} nodes")
    dims = {o.dimension for o in oracles}
    if len(dims) != 1:
        raise DimensionError(f"Agent oracles disagree on dimension: {sorted(dims)}")
    if rho <= 0:
        raise ConfigError(f"rho must be positive, got {rho}")
    weights = weights or metropolis_weights(topology)
    if alpha is None:
        alpha = 1.0 / rho if coupled else default_step(oracles, weights, rho)
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    problem = ConsensusProblem(tuple(oracles), topology, weights, float(rho), float(alpha))
    if coupled and not problem.coupled:
        raise ConfigError(f"Coupling requested but alpha*rho = {alpha * rho}")
    return problem


def init_consensus_state(
    cp: ConsensusProblem,
    method: ConsensusMethod,
    x0: np.ndarray | None = None,
) -> ConsensusState:
    """Starting state with the initialization each method expects.

    Duals start at 0; the tracker starts at grad f(x0).
    """
    method = ConsensusMethod(method)
    x = np.zeros((cp.n_agents, cp.dimension)) if x0 is None else cp.check(x0, "x0").copy()
    g = cp.gradients(x)
    if method == ConsensusMethod.GRADIENT_TRACKING:
        return ConsensusState(x=x, s=g.copy(), grad=g)
    if method == ConsensusMethod.EXTRA:
        return ConsensusState(x=x, grad=g)
    return ConsensusState(x=x, eta=np.zeros_like(x), grad=g)


def distributed_alm_step(
    cp: ConsensusProblem,
    state: ConsensusState,
    inner: InexactConfig,
) -> tuple[ConsensusState, int]:
    """Inexactly minimize f(x) + <x, eta> + (rho/2) x'Lx, then eta+ = eta + rho L x+.

    Each inner gradient iteration reads only neighbor rows, i.e. one
    communication round.

    Returns:
        Tuple of (next state, inner iterations used).
    """
    x = cp.check(state.x)
    eta = _require(state.eta, "eta")
    L = cp.laplacian

    def gradient(v: np.ndarray) -> np.ndarray:
        return cp.gradients(v) + eta + cp.rho * (L @ v)

    bound = cp.ell_max + cp.rho * cp.weights.lambda_max_laplacian
    step = inner.step if inner.step is not None else (1.0 / bound if bound > 0 else 1.0)
    result = minimize_inner(
        gradient,
        x,
        step,
        inner.schedule.at(state.k),
        inner.max_inner,
        inner.method,
        mu=min(o.mu for o in cp.oracles),
    )
    flags = state.flags
    if not result.converged:
        flags = flags | {TraceFlag.INNER_TOLERANCE_UNMET.value}
    x_next = result.x
    return (
        replace(
            state,
            x=x_next,
            eta=eta + cp.rho * (L @ x_next),
            grad=cp.gradients(x_next),
            k=state.k + 1,
            flags=flags,
        ),
        result.iterations,
    )


def extra_step_native(cp: ConsensusProblem, state: ConsensusState) -> ConsensusState:
    """EXTRA: x+ = 2Wx - W x_prev - alpha (grad f(x) - grad f(x_prev)).

    The first step (no x_prev yet) is x1 = W x0 - alpha grad f(x0).
    """
    x = cp.check(state.x)
    g = state.grad if state.grad is not None else cp.gradients(x)
    if state.x_prev is None:
        x_next = cp.W @ x - cp.alpha * g
    else:
        g_prev = state.grad_prev if state.grad_prev is not None else cp.gradients(state.x_prev)
        x_next = 2.0 * (cp.W @ x) - cp.W @ state.x_prev - cp.alpha * (g - g_prev)
    return replace(
        state,
        x=x_next,
        x_prev=x,
        grad=cp.gradients(x_next),
        grad_prev=g,
        k=state.k + 1,
    )


def extra_step_pd(cp: ConsensusProblem, state: ConsensusState) -> ConsensusState:
    """Primal-dual EXTRA: x+ = x - alpha grad_x L(x, eta), eta+ = eta + alpha rho^2 L x+.

    Raises:
        ConfigError: If alpha rho != 1.
    """
    _require_coupling(cp)
    x = cp.check(state.x)
    eta = _require(state.eta, "eta")
    g = state.grad if state.grad is not None else cp.gradients(x)
    x_next = x - cp.alpha * (g + eta + cp.rho * (cp.laplacian @ x))
    eta_next = eta + cp.alpha * cp.rho**2 * (cp.laplacian @ x_next)
    return replace(state, x=x_next, eta=eta_next, grad=cp.gradients(x_next), k=state.k + 1)


def gradient_tracking_step(cp: ConsensusProblem, state: ConsensusState) -> ConsensusState:
    """x+ = Wx - alpha s, s+ = Ws + grad f(x+) - grad f(x)."""
    x = cp.check(state.x)
    s = _require(state.s, "s")
    g = state.grad if state.grad is not None else cp.gradients(x)
    x_next = cp.W @ x - cp.alpha * s
    g_next = cp.gradients(x_next)
    return replace(state, x=x_next, s=cp.W @ s + g_next - g, grad=g_next, k=state.k + 1)


def gradient_tracking_step_pd(cp: ConsensusProblem, state: ConsensusState) -> ConsensusState:
    """Primal-dual gradient tracking.

    x+ = x - alpha grad_x L(x, eta) and
    eta+ = eta + alpha rho^2 (L x+ - W L x); the native tracker is
    s = grad f(x) + eta.

    Raises:
        ConfigError: If alpha rho != 1.
    """
    _require_coupling(cp)
    x = cp.check(state.x)
    eta = _require(state.eta, "eta")
    g = state.grad if state.grad is not None else cp.gradients(x)
    L = cp.laplacian
    x_next = x - cp.alpha * (g + eta + cp.rho * (L @ x))
    eta_next = eta + cp.alpha * cp.rho**2 * (L @ x_next - cp.W @ (L @ x))
    return replace(state, x=x_next, eta=eta_next, grad=cp.gradients(x_next), k=state.k + 1)


def kkt_residual(cp: ConsensusProblem, state: ConsensusState) -> float:
    """||Lx|| plus the stationarity residual the state can certify.

    With a dual: ||grad f(x) + eta||; with a tracker: ||s||; otherwise the
    norm of the average gradient.
    """
    x = cp.check(state.x)
    consensus = float(np.linalg.norm(cp.laplacian @ x))
    g = state.grad if state.grad is not None else cp.gradients(x)
    if state.eta is not None:
        stationarity = float(np.linalg.norm(g + state.eta))
    elif state.s is not None:
        stationarity = float(np.linalg.norm(state.s))
    else:
        stationarity = float(np.linalg.norm(g.mean(axis=0)))
    return consensus + stationarity


def consensus_metrics(
    cp: ConsensusProblem,
    state: ConsensusState,
    reference: ConsensusReference,
) -> ConsensusMetrics:
    """Consensus error, KKT residual and objective gap of a state."""
    x = cp.check(state.x)
    mean = x.mean(axis=0)
    return ConsensusMetrics(
        consensus_error=float(np.max(np.linalg.norm(x - mean, axis=1))),
        kkt_residual=kkt_residual(cp, state),
        objective_gap=cp.consensus_objective(mean) - reference.value,
    )


def consensus_step(
    cp: ConsensusProblem,
    method: ConsensusMethod,
    state: ConsensusState,
    inner: InexactConfig | None = None,
) -> tuple[ConsensusState, int]:
    """One step of any consensus method; returns (state, communication rounds)."""
    if method == ConsensusMethod.DISTRIBUTED_ALM:
        return distributed_alm_step(cp, state, inner or InexactConfig())
    if method == ConsensusMethod.EXTRA:
        return extra_step_native(cp, state), 1
    if method == ConsensusMethod.EXTRA_PD:
        return extra_step_pd(cp, state), 1
    if method == ConsensusMethod.GRADIENT_TRACKING:
        return gradient_tracking_step(cp, state), 2
    return gradient_tracking_step_pd(cp, state), 2


def run_consensus(
    cp: ConsensusProblem,
    method: ConsensusMethod,
    reference: ConsensusReference,
    *,
    max_iters: int = 1000,
    tol: float = 1e-8,
    inner: InexactConfig | None = None,
    x0: np.ndarray | None = None,
) -> Trace:
    """Run a consensus method until kkt_residual <= tol or the budget ends.

    Returns:
        Trace with CONSENSUS_COLUMNS; metadata holds the final iterate.
    """
    method = ConsensusMethod(method)
    threshold = get_settings().divergence_threshold
    state = init_consensus_state(cp, method, x0)
    trace = Trace(columns=CONSENSUS_COLUMNS)
    rounds, grad_evals = 0, cp.n_agents
    logger.info(
        f"Starting {method.value} run: N={cp.n_agents}, d={cp.dimension}, "
        f"rho={cp.rho}, alpha={cp.alpha:.4g}, budget={max_iters}"
    )

    metrics = consensus_metrics(cp, state, reference)
    trace.append(k=0, rounds=0, grad_evals=grad_evals, **metrics)
    for _ in range(max_iters):
        if metrics["kkt_residual"] <= tol:
            break
        state, used = consensus_step(cp, method, state, inner)
        rounds += used
        # Inner iterations each evaluate every agent's gradient once
        grad_evals += cp.n_agents * (used if method == ConsensusMethod.DISTRIBUTED_ALM else 1)
        size = float(np.max(np.abs(state.x)))
        if not np.isfinite(size) or size > threshold:
            logger.warning(f"{method.value} diverged at k={state.k}")
            trace.add_flag(TraceFlag.DIVERGED)
            break
        metrics = consensus_metrics(cp, state, reference)
        trace.append(k=state.k, rounds=rounds, grad_evals=grad_evals, **metrics)

    trace.merge_flags(state.flags)
    trace.metadata.update({"method": method.value, "iterations": state.k, "x": state.x.tolist()})
    logger.info(f"Finished {method.value} run after {state.k} iterations")
    return trace


def run_equivalence(
    cp: ConsensusProblem,
    native: ConsensusMethod,
    iterations: int,
    x0: np.ndarray | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Run a native method and its primal-dual form side by side.

    Args:
        cp: Problem with alpha rho = 1.
        native: EXTRA or GRADIENT_TRACKING.
        iterations: Steps to compare.
        x0: Shared starting point.

    Returns:
        Tuple of (max iterate deviation, native iterates, primal-dual iterates).
    """
    native = ConsensusMethod(native)
    pd_method = {
        ConsensusMethod.EXTRA: ConsensusMethod.EXTRA_PD,
        ConsensusMethod.GRADIENT_TRACKING: ConsensusMethod.GRADIENT_TRACKING_PD,
    }.get(native)
    if pd_method is None:
        raise ConfigError(f"No primal-dual counterpart for {native.value}")
    _require_coupling(cp)
    a = init_consensus_state(cp, native, x0)
    b = init_consensus_state(cp, pd_method, x0)
    native_iterates, pd_iterates = [a.x], [b.x]
    deviation = 0.0
    for _ in range(iterations):
        a, _ = consensus_step(cp, native, a)
        b, _ = consensus_step(cp, pd_method, b)
        native_iterates.append(a.x)
        pd_iterates.append(b.x)
        deviation = max(deviation, float(np.max(np.abs(a.x - b.x))))
    return deviation, native_iterates, pd_iterates


def _require(value: np.ndarray | None, name: str) -> np.ndarray:
    if value is None:
        raise ConfigError(f"State has no '{name}'; initialize it with init_consensus_state")
    return value


def _require_coupling(cp: ConsensusProblem) -> None:
    if not cp.coupled:
        raise ConfigError(f"Primal-dual form needs alpha*rho = 1, got {cp.alpha * cp.rho}")

"""Continuous-time primal-dual flow with a Lyapunov monitor.

Integrates x' = -grad f(x) - L eta - L x, eta' = L x by explicit Euler
and tracks V = ||x - x*||^2/2 + ||eta - eta*||^2/2 along the way. The
same vector field is the closed loop of a gradient plant with a
proportional-integral consensus controller (pi_controller_view).
"""

from dataclasses import dataclass

import numpy as np

from config.logging_config import get_logger
from config.settings import get_settings
from solvers.consensus import ConsensusProblem
from state.errors import ConfigError, DivergenceError
from state.schema import FLOW_COLUMNS, Trace


logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class FlowState:
    """Point on the flow.

    Attributes:
        x: Agent states, shape (N, d).
        eta: Integral (dual) states, shape (N, d).
        t: Time.
        h: Euler step.
    """

    x: np.ndarray
    eta: np.ndarray
    t: float = 0.0
    h: float = 1e-2

    def __post_init__(self) -> None:
        if self.h <= 0:
            raise ConfigError(f"Flow step h must be positive, got {self.h}")


@dataclass(frozen=True, eq=False)
class FlowOptimum:
    """KKT point of the flow: L x* = 0 and grad f(x*) + L eta* = 0."""

    x: np.ndarray
    eta: np.ndarray


@dataclass(frozen=True, eq=False)
class LyapunovReport:
    """Monitor output aligned with the time grid.

    Attributes:
        times: Time of every recorded point (initial point included).
        values: V at each time.
        derivatives: Analytic V' at each time.
        consensus_residuals: ||L x|| at each time.
        stationarity_residuals: ||grad f(x) + L eta|| at each time.
    """

    times: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    consensus_residuals: np.ndarray
    stationarity_residuals: np.ndarray

    @property
    def max_increase(self) -> float:
        """Largest positive one-step increment of V (0 if V never grows)."""
        if self.values.size < 2:
            return 0.0
        return float(max(0.0, np.max(np.diff(self.values))))

    @property
    def terminal_consensus(self) -> float:
        return float(self.consensus_residuals[-1])

    @property
    def terminal_stationarity(self) -> float:
        return float(self.stationarity_residuals[-1])

    def to_trace(self) -> Trace:
        """Rows t, V, V_dot, consensus_residual, stationarity_residual."""
        trace = Trace(columns=FLOW_COLUMNS)
        for row in zip(
            self.times,
            self.values,
            self.derivatives,
            self.consensus_residuals,
            self.stationarity_residuals,
        ):
            trace.append(**dict(zip(FLOW_COLUMNS, row)))
        return trace


def flow_step_bound(cp: ConsensusProblem) -> float:
    """h_max = 1 / (ell_max + 2 lambda_max(L))."""
    return 1.0 / (cp.ell_max + 2.0 * cp.weights.lambda_max_laplacian)


def pi_controller_view(cp: ConsensusProblem, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Actuator u = e + L integral(e) with e = -L x, i.e. u = -L x - L eta."""
    L = cp.laplacian
    return -(L @ cp.check(x)) - L @ cp.check(eta, "eta")


def flow_rhs(cp: ConsensusProblem, x: np.ndarray, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(x', eta') of the primal-dual flow, written as plant plus controller."""
    x = cp.check(x)
    return -cp.gradients(x) + pi_controller_view(cp, x, eta), cp.laplacian @ x


def lyapunov_value(x: np.ndarray, eta: np.ndarray, optimum: FlowOptimum) -> float:
    """V = ||x - x*||^2/2 + ||eta - eta*||^2/2."""
    return 0.5 * float(np.sum((x - optimum.x) ** 2) + np.sum((eta - optimum.eta) ** 2))


def lyapunov_dot(
    cp: ConsensusProblem,
    x: np.ndarray,
    eta: np.ndarray,
    optimum: FlowOptimum,
) -> float:
    """V' = -(x - x*)'(grad f(x) - grad f(x*)) - (x - x*)'L(x - x*).

    The eta terms cancel, so V' depends on eta only through the
    reference point; it is <= 0 for convex smooth f.
    """
    cp.check(eta, "eta")
    dx = cp.check(x) - optimum.x
    dg = cp.gradients(x) - cp.gradients(optimum.x)
    return -float(np.sum(dx * dg)) - float(np.sum(dx * (cp.laplacian @ dx)))


def euler_flow(
    cp: ConsensusProblem,
    init: FlowState,
    steps: int,
    optimum: FlowOptimum,
) -> tuple[FlowState, LyapunovReport]:
    """Integrate the flow for a number of explicit Euler steps.

    Args:
        cp: Consensus problem providing f and L.
        init: Initial state; init.h is the step.
        steps: Number of Euler steps.
        optimum: Reference KKT point for V.

    Returns:
        Tuple of (final state, monitor report with steps + 1 points).

    Raises:
        ConfigError: If h exceeds flow_step_bound.
        DivergenceError: If the state norm exceeds the divergence threshold.
    """
    h_max = flow_step_bound(cp)
    if init.h > h_max * (1.0 + 1e-12):
        raise ConfigError(f"Flow step h={init.h} exceeds the stability bound {h_max:.4g}")
    threshold = get_settings().divergence_threshold
    L = cp.laplacian

    x, eta, t = cp.check(init.x).copy(), cp.check(init.eta, "eta").copy(), init.t
    times, values, derivatives, consensus, stationarity = [], [], [], [], []

    def record() -> None:
        g = cp.gradients(x)
        times.append(t)
        values.append(lyapunov_value(x, eta, optimum))
        derivatives.append(lyapunov_dot(cp, x, eta, optimum))
        consensus.append(float(np.linalg.norm(L @ x)))
        stationarity.append(float(np.linalg.norm(g + L @ eta)))

    record()
    for step in range(steps):
        dx, deta = flow_rhs(cp, x, eta)
        x = x + init.h * dx
        eta = eta + init.h * deta
        t = init.t + (step + 1) * init.h
        size = max(float(np.max(np.abs(x))), float(np.max(np.abs(eta))))
        if not np.isfinite(size) or size > threshold:
            raise DivergenceError(f"Flow diverged at t={t:.4g} (max |state| = {size:.3e})")
        record()

    logger.debug(f"Euler flow: {steps} steps of h={init.h}, final V={values[-1]:.3e}")
    report = LyapunovReport(
        times=np.array(times),
        values=np.array(values),
        derivatives=np.array(derivatives),
        consensus_residuals=np.array(consensus),
        stationarity_residuals=np.array(stationarity),
    )
    return FlowState(x=x, eta=eta, t=t, h=init.h), report

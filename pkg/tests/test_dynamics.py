"""Tests for the primal-dual flow and its Lyapunov monitor."""

import numpy as np
import pytest

from services.instances import standard_consensus_instances
from services.reference import flow_optimum
from solvers.consensus import ConsensusProblem
from solvers.dynamics import (
    FlowState,
    LyapunovReport,
    euler_flow,
    flow_rhs,
    flow_step_bound,
    lyapunov_dot,
    lyapunov_value,
    pi_controller_view,
)
from state.errors import ConfigError
from state.schema import FLOW_COLUMNS


@pytest.fixture
def flow_problem() -> ConsensusProblem:
    """Complete4 benchmark with the safe step (no coupling needed)."""
    return standard_consensus_instances()[0].problem(coupled=False, alpha=None)


def zero_state(cp: ConsensusProblem, h: float) -> FlowState:
    """Flow state at the origin."""
    zeros = np.zeros((cp.n_agents, cp.dimension))
    return FlowState(x=zeros, eta=zeros.copy(), h=h)


class TestFlowField:
    """Tests for the vector field."""

    def test_pi_identity(self, flow_problem: ConsensusProblem, rng: np.random.Generator) -> None:
        """Test plant plus PI controller equals -grad f - L eta - L x."""
        x, eta = rng.standard_normal((2, flow_problem.n_agents, flow_problem.dimension))
        dx, deta = flow_rhs(flow_problem, x, eta)
        L = flow_problem.laplacian
        assert np.allclose(dx, -flow_problem.gradients(x) - L @ eta - L @ x, atol=1e-12)
        assert np.allclose(deta, L @ x, atol=1e-12)

    def test_controller_output(self, flow_problem: ConsensusProblem, rng: np.random.Generator) -> None:
        """Test u = -L x - L eta."""
        x, eta = rng.standard_normal((2, flow_problem.n_agents, flow_problem.dimension))
        L = flow_problem.laplacian
        assert np.allclose(pi_controller_view(flow_problem, x, eta), -L @ x - L @ eta)

    def test_optimum_is_stationary(self, flow_problem: ConsensusProblem) -> None:
        """Test the vector field vanishes at the KKT point."""
        optimum = flow_optimum(flow_problem)
        dx, deta = flow_rhs(flow_problem, optimum.x, optimum.eta)
        assert np.max(np.abs(dx)) <= 1e-10
        assert np.max(np.abs(deta)) <= 1e-10

    def test_minimum_norm_dual(self, flow_problem: ConsensusProblem) -> None:
        """Test eta* has no component along the consensus direction."""
        optimum = flow_optimum(flow_problem)
        assert np.allclose(optimum.eta.sum(axis=0), 0.0, atol=1e-10)


class TestLyapunov:
    """Tests for V and its derivative."""

    def test_value_at_optimum(self, flow_problem: ConsensusProblem) -> None:
        """Test V(x*, eta*) = 0."""
        optimum = flow_optimum(flow_problem)
        assert lyapunov_value(optimum.x, optimum.eta, optimum) == 0.0

    def test_derivative_nonpositive(self, flow_problem: ConsensusProblem, rng: np.random.Generator) -> None:
        """Test V' <= 0 at random points."""
        optimum = flow_optimum(flow_problem)
        for _ in range(20):
            x, eta = 3.0 * rng.standard_normal((2, flow_problem.n_agents, flow_problem.dimension))
            assert lyapunov_dot(flow_problem, x, eta, optimum) <= 1e-10

    def test_derivative_matches_field(self, flow_problem: ConsensusProblem, rng: np.random.Generator) -> None:
        """Test V' equals the inner product of grad V with the flow."""
        optimum = flow_optimum(flow_problem)
        x, eta = rng.standard_normal((2, flow_problem.n_agents, flow_problem.dimension))
        dx, deta = flow_rhs(flow_problem, x, eta)
        chain = float(np.sum((x - optimum.x) * dx) + np.sum((eta - optimum.eta) * deta))
        assert lyapunov_dot(flow_problem, x, eta, optimum) == pytest.approx(chain, abs=1e-10)

    def test_max_increase(self) -> None:
        """Test only positive increments count."""
        report = LyapunovReport(
            times=np.arange(4.0),
            values=np.array([3.0, 2.0, 2.5, 1.0]),
            derivatives=np.zeros(4),
            consensus_residuals=np.zeros(4),
            stationarity_residuals=np.zeros(4),
        )
        assert report.max_increase == pytest.approx(0.5)


class TestEulerFlow:
    """Tests for the explicit Euler integrator."""

    def test_monitor_along_trajectory(self, flow_problem: ConsensusProblem) -> None:
        """Test V' <= 0 at every recorded point and V decays overall."""
        optimum = flow_optimum(flow_problem)
        _, report = euler_flow(flow_problem, zero_state(flow_problem, flow_step_bound(flow_problem)), 500, optimum)
        assert np.max(report.derivatives) <= 1e-10
        assert report.values[-1] < report.values[0]
        assert report.times.size == 501

    def test_converges(self, flow_problem: ConsensusProblem) -> None:
        """Test both residuals vanish and x reaches the optimum."""
        optimum = flow_optimum(flow_problem)
        final, report = euler_flow(
            flow_problem, zero_state(flow_problem, flow_step_bound(flow_problem)), 5000, optimum
        )
        assert report.terminal_consensus <= 1e-8
        assert report.terminal_stationarity <= 1e-8
        assert np.allclose(final.x, optimum.x, atol=1e-7)

    def test_time_advances(self, flow_problem: ConsensusProblem) -> None:
        """Test t = steps * h at the end."""
        optimum = flow_optimum(flow_problem)
        final, _ = euler_flow(flow_problem, zero_state(flow_problem, 0.05), 10, optimum)
        assert final.t == pytest.approx(0.5)

    def test_step_above_bound_rejected(self, flow_problem: ConsensusProblem) -> None:
        """Test h above 1/(ell_max + 2 lambda_max(L)) is a ConfigError."""
        optimum = flow_optimum(flow_problem)
        h = 1.5 * flow_step_bound(flow_problem)
        with pytest.raises(ConfigError, match="stability bound"):
            euler_flow(flow_problem, zero_state(flow_problem, h), 10, optimum)

    def test_nonpositive_step_rejected(self) -> None:
        """Test FlowState refuses h <= 0."""
        with pytest.raises(ConfigError):
            FlowState(x=np.zeros((2, 1)), eta=np.zeros((2, 1)), h=0.0)

    def test_report_trace(self, flow_problem: ConsensusProblem) -> None:
        """Test the report becomes a flow trace with one row per point."""
        optimum = flow_optimum(flow_problem)
        _, report = euler_flow(flow_problem, zero_state(flow_problem, 0.05), 20, optimum)
        trace = report.to_trace()
        assert trace.columns == FLOW_COLUMNS
        assert len(trace) == 21
        assert np.array_equal(trace.column("V"), report.values)

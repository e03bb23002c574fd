"""Tests for the peer-to-peer energy trading simulator."""

import numpy as np
import pytest

from services.instances import energy_linear_adversarial, energy_ring_benchmark
from services.reference import reference_solve
from simulators.energy import (
    EnergyNetwork,
    RoundLedger,
    TradeState,
    TradingConfig,
    TradingMode,
    allocation_dump,
    balance_residual,
    detect_oscillation,
    generation,
    peer_feasible_set,
    peer_subproblem_solve,
    price_update,
    project_feasible_i,
    repair_trades,
    run_dual_decomposition,
    run_trading,
)
from state.errors import ConfigError, DimensionError, TopologyError
from state.schema import ENERGY_COLUMNS, TraceFlag
from tools.oracle import QuadraticOracle, QuadraticSineOracle
from tools.projection import project_polyhedron_bruteforce
from tools.topology import build_topology, path_graph


def scalar_quadratic(curvature: float, slope: float) -> QuadraticOracle:
    """C(y) = curvature y^2/2 + slope y."""
    return QuadraticOracle(np.array([[curvature]]), np.array([slope]))


class TestEnergyNetwork:
    """Tests for network validation and bookkeeping."""

    def test_arc_bookkeeping(self, two_peer_market: EnergyNetwork) -> None:
        """Test sellers, buyers and per-peer variable positions."""
        assert two_peer_market.arcs == ((0, 1), (1, 0))
        assert two_peer_market.sellers.tolist() == [0, 1]
        assert two_peer_market.buyers.tolist() == [1, 0]
        # Peer 0 owns eps_0 and the arc it buys on, (1, 0)
        assert two_peer_market.peer_index[0].tolist() == [0, 3]

    def test_default_cap(self, two_peer_market: EnergyNetwork) -> None:
        """Test the cap defaults to ten times the peak consumption."""
        assert two_peer_market.cap == pytest.approx(10.0)

    def test_missing_transfer_cost(self) -> None:
        """Test every arc needs a transfer cost."""
        topology = build_topology(2, [(0, 1)])
        with pytest.raises(TopologyError, match="arcs"):
            EnergyNetwork(
                topology,
                np.ones(2),
                (scalar_quadratic(1.0, 0.0), scalar_quadratic(1.0, 0.0)),
                {(0, 1): scalar_quadratic(0.1, 0.0)},
            )

    def test_nonconvex_cost_rejected(self) -> None:
        """Test trading costs must be convex."""
        topology = build_topology(2, [(0, 1)])
        with pytest.raises(ConfigError, match="convex"):
            EnergyNetwork(
                topology,
                np.ones(2),
                (QuadraticSineOracle(np.eye(1), np.zeros(1), 0.5, 1.0), scalar_quadratic(1.0, 0.0)),
                {arc: scalar_quadratic(0.1, 0.0) for arc in topology.arcs},
            )

    def test_negative_consumption(self) -> None:
        """Test consumption must be nonnegative."""
        topology = build_topology(2, [(0, 1)])
        with pytest.raises(ConfigError):
            EnergyNetwork(
                topology,
                np.array([1.0, -1.0]),
                (scalar_quadratic(1.0, 0.0), scalar_quadratic(1.0, 0.0)),
                {arc: scalar_quadratic(0.1, 0.0) for arc in topology.arcs},
            )


class TestBalance:
    """Tests for residuals, generation and repairs."""

    def test_residual_and_generation(self, two_peer_market: EnergyNetwork) -> None:
        """Test r_i = eps_i - sales and y_i = E^c + eps_i - purchases."""
        state = TradeState(eps=np.array([0.5, 0.1]), flows=np.array([0.5, 0.2]), prices=np.zeros(2))
        assert np.allclose(balance_residual(two_peer_market, state), [0.0, -0.1])
        assert np.allclose(generation(two_peer_market, state), [1.3, 0.6])

    def test_shape_checked(self, two_peer_market: EnergyNetwork) -> None:
        """Test mismatched states raise DimensionError."""
        with pytest.raises(DimensionError):
            balance_residual(two_peer_market, TradeState(np.zeros(3), np.zeros(2), np.zeros(2)))

    def test_price_update(self, two_peer_market: EnergyNetwork) -> None:
        """Test prices move by alpha times the residual."""
        state = TradeState(eps=np.array([1.0, 0.0]), flows=np.zeros(2), prices=np.array([0.5, 0.5]))
        assert np.allclose(price_update(two_peer_market, state, 0.5), [1.0, 0.5])
        with pytest.raises(ConfigError):
            price_update(two_peer_market, state, -0.1)

    def test_repair_trades(self, two_peer_market: EnergyNetwork) -> None:
        """Test repaired trades clear exactly and keep generation nonnegative."""
        state = TradeState(eps=np.zeros(2), flows=np.array([0.0, 4.0]), prices=np.zeros(2))
        repaired = repair_trades(two_peer_market, state)
        assert np.allclose(balance_residual(two_peer_market, repaired), 0.0)
        assert np.all(generation(two_peer_market, repaired) >= -1e-12)

    def test_allocation_dump(self, two_peer_market: EnergyNetwork) -> None:
        """Test the dump keys peers and sales by index."""
        state = TradeState(eps=np.array([0.7, 0.0]), flows=np.array([0.7, 0.0]), prices=np.array([-1.0, -2.0]))
        dump = allocation_dump(two_peer_market, state)
        assert set(dump) == {"0", "1"}
        assert dump["0"]["sales"] == {"1": 0.7}
        assert dump["1"]["price"] == -2.0


class TestPeerSubproblem:
    """Tests for feasible sets and the peer solve."""

    def test_feasible_set_shape(self) -> None:
        """Test peer i has 1 + (purchases) variables and the generation halfspace."""
        net = energy_ring_benchmark()
        box = peer_feasible_set(net, 0)
        assert box.a.tolist() == [-1.0, 1.0, 1.0]
        assert box.b == pytest.approx(1.0)
        assert np.all(box.upper == net.cap)

    def test_projection_matches_enumeration(self, rng: np.random.Generator) -> None:
        """Test Dykstra projection against exact enumeration on every peer."""
        net = energy_ring_benchmark()
        for i in range(net.n_peers):
            G, h = peer_feasible_set(net, i, capped=False).as_inequalities()
            for _ in range(5):
                point = 2.0 * rng.standard_normal(G.shape[1])
                assert np.allclose(
                    project_feasible_i(net, i, point), project_polyhedron_bruteforce(point, G, h), atol=1e-8
                )

    def test_projection_shape_checked(self, two_peer_market: EnergyNetwork) -> None:
        """Test the point must match the peer's variable count."""
        with pytest.raises(DimensionError):
            project_feasible_i(two_peer_market, 0, np.zeros(3))

    def test_exact_solve_is_feasible(self, two_peer_market: EnergyNetwork) -> None:
        """Test the active-set solve lands in the capped feasible set."""
        solution = peer_subproblem_solve(two_peer_market, 0, np.array([-1.0, 0.5]), TradingConfig())
        assert solution.converged
        assert solution.active is not None
        assert peer_feasible_set(two_peer_market, 0).contains(solution.values)


    def test_autarky_at_zero_prices(self) -> None:
        """Test peers whose costs bottom out at their own consumption neither sell nor buy at zero prices."""
        topology = build_topology(2, [(0, 1)])
        net = EnergyNetwork(
            topology,
            np.ones(2),
            (scalar_quadratic(1.0, -1.0), scalar_quadratic(2.0, -2.0)),
            {arc: scalar_quadratic(0.2, 0.1) for arc in topology.arcs},
        )
        for i in range(2):
            solution = peer_subproblem_solve(net, i, np.zeros(2), TradingConfig())
            assert np.allclose(solution.values, 0.0, atol=1e-10)

    def test_selling_price_first_order(self, two_peer_market: EnergyNetwork) -> None:
        """Test a negative own price pays for generation up to y_0 + 0.5 = -lambda_0."""
        solution = peer_subproblem_solve(two_peer_market, 0, np.array([-2.0, -3.0]), TradingConfig())
        # y_0 = 1 + eps_0 = 1.5; buying from peer 1 costs -lambda_1 = 3, above peer 0's marginal cost
        assert solution.values == pytest.approx([0.5, 0.0], abs=1e-10)

    @pytest.mark.parametrize(("price", "offer"), [(5.0, 0.0), (-5.0, 10.0)])
    def test_price_sign(self, two_peer_market: EnergyNetwork, price: float, offer: float) -> None:
        """Test a positive price suppresses selling and a negative one drives the offer to the cap."""
        solution = peer_subproblem_solve(two_peer_market, 0, np.array([price, 0.0]), TradingConfig())
        assert solution.values[0] == pytest.approx(offer, abs=1e-9)


class TestRoundLedger:
    """Tests for message accounting."""

    def test_off_edge_message_rejected(self) -> None:
        """Test peers may only message neighbors."""
        ledger = RoundLedger(path_graph(3))
        with pytest.raises(TopologyError, match="non-neighbor"):
            ledger.send(0, 2, "price")

    def test_counts(self, two_peer_market: EnergyNetwork) -> None:
        """Test a trade exchange costs two messages per arc and take() resets."""
        ledger = RoundLedger(two_peer_market.topology)
        ledger.exchange_trades(two_peer_market)
        ledger.broadcast(0, "price")
        assert ledger.take() == 5
        assert ledger.take() == 0


class TestOscillationDetector:
    """Tests for the residual oscillation detector."""

    def test_needs_full_window(self) -> None:
        """Test short histories never fire."""
        assert detect_oscillation([1.0] * 5, window=5, relative=1e-3) is False

    def test_stalled_residual(self) -> None:
        """Test a residual bouncing between the same values fires."""
        assert detect_oscillation([1.0, 0.5] * 10, window=4, relative=1e-3) is True

    def test_improving_residual(self) -> None:
        """Test a steadily shrinking residual does not fire."""
        assert detect_oscillation([0.9**k for k in range(20)], window=4, relative=1e-3) is False

    def test_early_low_residual_does_not_latch(self) -> None:
        """Test one tiny early residual does not flag a run that keeps improving."""
        history = [1e-9] + [0.9**k for k in range(40)]
        assert detect_oscillation(history, window=4, relative=1e-3) is False


class TestTradingRuns:
    """Tests for both market-clearing runners."""

    def test_trading_config_steps(self) -> None:
        """Test constant and inverse square root schedules."""
        assert TradingConfig(alpha0=0.4, step_schedule="constant").step(8) == pytest.approx(0.4)
        assert TradingConfig(alpha0=0.4).step(3) == pytest.approx(0.2)

    def test_dual_decomposition_clears_two_peers(self, two_peer_market: EnergyNetwork) -> None:
        """Test constant-step dual decomposition reaches the centralized optimum."""
        cfg = TradingConfig(alpha0=0.1, step_schedule="constant", max_outer=2000)
        trace = run_dual_decomposition(two_peer_market, cfg)
        reference = reference_solve(two_peer_market)
        assert trace.columns == ENERGY_COLUMNS
        assert trace.last("max_residual") <= 1e-5
        assert trace.last("objective") == pytest.approx(reference.value, abs=1e-4)
        assert set(trace.metadata["allocation"]) == {"0", "1"}

    def test_inexact_alm_ring(self) -> None:
        """Test inexact ALM clears the ring benchmark at the centralized cost."""
        net = energy_ring_benchmark()
        trace = run_trading(net, TradingConfig(mode=TradingMode.INEXACT_ALM, rho=0.5, eps_out=1e-5))
        reference = reference_solve(net)
        assert trace.last("max_residual") <= 1e-5
        assert trace.last("objective") == pytest.approx(reference.value, abs=1e-4)
        assert trace.metadata["algorithm"] == "inexact_alm"

    def test_outer_iterations_scale_with_tolerance(self) -> None:
        """Test halving eps_out at most about doubles the outer iterations."""
        net = energy_ring_benchmark()
        counts = [
            len(run_trading(net, TradingConfig(mode=TradingMode.INEXACT_ALM, rho=0.5, eps_out=eps)))
            for eps in (1e-2, 5e-3, 2.5e-3)
        ]
        assert all(b <= 2.5 * a for a, b in zip(counts, counts[1:]))

    def test_linear_reference(self) -> None:
        """Test the adversarial instance ships one unit at total cost 2.1."""
        assert reference_solve(energy_linear_adversarial()).value == pytest.approx(2.1)

    def test_linear_costs_oscillate(self) -> None:
        """Test dual decomposition on linear costs is flagged, not raised."""
        trace = run_dual_decomposition(energy_linear_adversarial(), TradingConfig(max_outer=400))
        assert TraceFlag.OSCILLATION.value in trace.flags
        assert trace.flagged

    def test_inexact_alm_linear_costs(self) -> None:
        """Test inexact ALM clears the linear-cost instance that defeats dual decomposition."""
        trace = run_trading(energy_linear_adversarial(), TradingConfig(mode=TradingMode.INEXACT_ALM, rho=0.5))
        assert trace.last("max_residual") <= 1e-4
        assert trace.last("objective") == pytest.approx(2.1, abs=1e-3)

    def test_isolated_peers(self) -> None:
        """Test peers without edges trade nothing and prices stay at zero."""
        net = EnergyNetwork(
            build_topology(2, []),
            np.array([1.0, 2.0]),
            (scalar_quadratic(1.0, 0.5), scalar_quadratic(2.0, 2.0)),
            {},
        )
        trace = run_dual_decomposition(net, TradingConfig())
        assert len(trace) == 1
        assert trace.last("max_residual") <= 1e-12
        assert trace.metadata["flows"] == []
        assert trace.metadata["eps"] == pytest.approx([0.0, 0.0], abs=1e-12)
        assert trace.metadata["prices"] == [0.0, 0.0]

    def test_zero_budget(self, two_peer_market: EnergyNetwork) -> None:
        """Test max_outer = 0 records nothing and still reports an allocation."""
        trace = run_dual_decomposition(two_peer_market, TradingConfig(max_outer=0))
        assert len(trace) == 0
        assert trace.metadata["algorithm"] == "dual_decomposition"

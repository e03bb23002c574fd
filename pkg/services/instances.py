"""Benchmark instance generators.

Every generator is seeded and returns fresh objects, so tests and the
check suite can build the same instances independently.
"""

from dataclasses import dataclass

import numpy as np

from simulators.energy import EnergyNetwork
from simulators.federated import FederatedInstance, make_instance
from solvers.consensus import ConsensusProblem, build_consensus_problem
from solvers.saddle import ProblemSpec, make_problem
from tools.oracle import FunctionOracle, LinearOracle, QuadraticOracle, QuadraticSineOracle
from tools.topology import Topology, build_topology, complete_graph, path_graph, ring_graph, star_graph


# Penalty and step of the consensus benchmark (alpha * rho = 1)
CONSENSUS_RHO = 10.0
CONSENSUS_ALPHA = 0.1


def random_quadratic(dimension: int, rng: np.random.Generator, mu: float = 1.0, spread: float = 1.0) -> QuadraticOracle:
    """Strictly convex quadratic with eigenvalues in [mu, mu + spread * dimension]."""
    B = rng.standard_normal((dimension, dimension))
    Q = mu * np.eye(dimension) + spread * (B @ B.T) / dimension
    return QuadraticOracle(Q, rng.standard_normal(dimension))


def random_saddle_instance(
    seed: int,
    n_blocks: int = 2,
    block_dim: int = 3,
    m: int = 2,
    rho: float = 1.0,
) -> ProblemSpec:
    """Random strictly convex quadratic blocks with Gaussian coupling matrices."""
    rng = np.random.default_rng(seed)
    pairs = [
        (random_quadratic(block_dim, rng), rng.standard_normal((m, block_dim)))
        for _ in range(n_blocks)
    ]
    return make_problem(pairs, rho)


def standard_saddle_instances() -> list[ProblemSpec]:
    """Five two-block strictly convex quadratic problems."""
    shapes = [(2, 1), (3, 2), (3, 3), (4, 2), (5, 3)]
    return [
        random_saddle_instance(seed, n_blocks=2, block_dim=dim, m=m)
        for seed, (dim, m) in enumerate(shapes)
    ]


def jacobi_witness_instance(b: tuple[float, float] = (1.0, -2.0), rho: float = 2.0) -> ProblemSpec:
    """f_i = x_i^2/2 + b_i x_i with x_1 + x_2 = 0.

    Jacobi dual decomposition on this instance has an iteration map with
    an eigenvalue below -1, while PDMM with both blocks and tau = 1/2
    converges.
    """
    pairs = [(QuadraticOracle(np.eye(1), np.array([b_i])), np.ones((1, 1))) for b_i in b]
    return make_problem(pairs, rho)


@dataclass(frozen=True, eq=False)
class ConsensusBenchmark:
    """Named agent objectives on a topology."""

    name: str
    oracles: tuple[FunctionOracle, ...]
    topology: Topology

    def problem(
        self,
        rho: float = CONSENSUS_RHO,
        alpha: float | None = CONSENSUS_ALPHA,
        coupled: bool = True,
    ) -> ConsensusProblem:
        return build_consensus_problem(self.oracles, self.topology, rho, alpha=alpha, coupled=coupled)


def consensus_quadratics(n_agents: int, dimension: int, seed: int) -> tuple[QuadraticOracle, ...]:
    """Diagonal quadratics with curvature in [0.5, 1] and Gaussian linear terms."""
    rng = np.random.default_rng(seed)
    return tuple(
        QuadraticOracle(np.diag(rng.uniform(0.5, 1.0, dimension)), rng.standard_normal(dimension))
        for _ in range(n_agents)
    )


def standard_consensus_instances() -> list[ConsensusBenchmark]:
    """Five small consensus benchmarks on well-mixing graphs."""
    layouts = [
        ("complete4", complete_graph(4)),
        ("star5", star_graph(5)),
        ("path3", path_graph(3)),
        ("path4", path_graph(4)),
        ("complete6", complete_graph(6)),
    ]
    return [
        ConsensusBenchmark(name, consensus_quadratics(topology.n_nodes, 2, seed), topology)
        for seed, (name, topology) in enumerate(layouts)
    ]


def two_agent_consensus() -> ConsensusBenchmark:
    """f_1 = (x - 1)^2/2 and f_2 = (x + 1)^2/2 on one edge; the optimum is 0."""
    oracles = (
        QuadraticOracle(np.eye(1), np.array([-1.0])),
        QuadraticOracle(np.eye(1), np.array([1.0])),
    )
    return ConsensusBenchmark("two_agent", oracles, build_topology(2, [(0, 1)]))


def federated_quadratic_instance(n_devices: int = 20, dimension: int = 2, seed: int = 0) -> FederatedInstance:
    """Devices F_i = ||x - a_i||^2/2 (up to a constant) with scattered centers a_i."""
    rng = np.random.default_rng(seed)
    centers = 2.0 * rng.standard_normal((n_devices, dimension))
    devices = [QuadraticOracle(np.eye(dimension), -a) for a in centers]
    return make_instance(devices)


def heterogeneous_federated_instance(n_devices: int = 10, dimension: int = 3, seed: int = 0) -> FederatedInstance:
    """Random strictly convex quadratic devices with random positive weights."""
    rng = np.random.default_rng(seed)
    devices = [random_quadratic(dimension, rng, mu=0.5) for _ in range(n_devices)]
    weights = rng.uniform(0.5, 1.5, n_devices)
    return make_instance(devices, weights / weights.sum())


def nonconvex_federated_instance(
    n_devices: int = 10,
    dimension: int = 2,
    seed: int = 0,
    beta: float = 0.5,
    omega: float = 2.0,
) -> FederatedInstance:
    """Quadratic devices perturbed by beta * sum_j sin(omega x_j)."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_devices, dimension))
    devices = [QuadraticSineOracle(np.eye(dimension), -a, beta, omega) for a in centers]
    return make_instance(devices)


def _scalar_quadratic(curvature: float, slope: float) -> QuadraticOracle:
    return QuadraticOracle(np.array([[curvature]]), np.array([slope]))


def energy_ring_benchmark() -> EnergyNetwork:
    """Five peers on a ring with strictly convex quadratic costs."""
    topology = ring_graph(5)
    consumption = np.array([1.0, 2.0, 1.5, 0.5, 1.0])
    curvature = np.array([0.5, 2.0, 1.0, 0.8, 1.5])
    slope = np.array([0.5, 1.5, 1.0, 0.6, 1.2])
    costs = tuple(_scalar_quadratic(c, s) for c, s in zip(curvature, slope))
    transfer = {arc: _scalar_quadratic(0.1, 0.05) for arc in topology.arcs}
    return EnergyNetwork(topology, consumption, costs, transfer)


def energy_two_peer_quadratic() -> EnergyNetwork:
    """A cheap and an expensive quadratic producer on one edge."""
    topology = build_topology(2, [(0, 1)])
    costs = (_scalar_quadratic(1.0, 0.5), _scalar_quadratic(2.0, 2.0))
    transfer = {arc: _scalar_quadratic(0.2, 0.1) for arc in topology.arcs}
    return EnergyNetwork(topology, np.array([1.0, 1.0]), costs, transfer)


def energy_linear_adversarial() -> EnergyNetwork:
    """Two peers with linear costs C_1 = g, C_2 = 3g and transfer cost 0.1 E.

    The optimum ships one unit from peer 0 to peer 1 at total cost 2.1;
    dual decomposition keeps jumping between vertices of the peers' sets.
    """
    topology = build_topology(2, [(0, 1)])
    costs = (LinearOracle(np.array([1.0])), LinearOracle(np.array([3.0])))
    transfer = {arc: LinearOracle(np.array([0.1])) for arc in topology.arcs}
    return EnergyNetwork(topology, np.array([1.0, 1.0]), costs, transfer, trade_cap=10.0)

"""Invariant gates behind ``pdtool check``.

Each gate builds a small seeded instance, checks one property the
library guarantees and reports pass/fail with a one-line detail. Gates
are grouped by module so a run can be filtered to one of them; all
gates of a run execute on a thread pool and are reported in
registration order.
"""

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from config.logging_config import get_logger
from config.settings import get_settings
from services.instances import (
    energy_ring_benchmark,
    energy_two_peer_quadratic,
    heterogeneous_federated_instance,
    jacobi_witness_instance,
    random_quadratic,
    random_saddle_instance,
    standard_consensus_instances,
)
from services.reference import consensus_admm_reference, flow_optimum, reference_solve
from simulators.energy import TradingConfig, peer_feasible_set, project_feasible_i, run_dual_decomposition
from simulators.federated import FedConfig, iterate_federated
from solvers.consensus import gradient_tracking_step, init_consensus_state, run_equivalence
from solvers.dynamics import FlowState, euler_flow, flow_rhs, flow_step_bound
from solvers.saddle import (
    PdmmConfig,
    alm_step,
    initial_state,
    iteration_map_radius,
    jacobi_step,
    prox_point_dual_step,
    run_saddle,
)
from state.errors import ConfigError
from state.schema import ConsensusMethod, SaddleMethod, TraceFlag
from tools.oracle import LogisticOracle, certify_constants
from tools.projection import project_polyhedron_bruteforce
from tools.topology import masked_product, metropolis_weights, path_graph, ring_graph, star_graph


logger = get_logger(__name__)

MODULES = ("graph", "oracle", "saddle", "consensus", "dynamics", "fedsim", "energysim")


@dataclass(frozen=True)
class GateResult:
    """Verdict of one gate.

    Attributes:
        module: Module the gate belongs to.
        name: Gate name.
        passed: Whether the property held.
        detail: Measured quantity behind the verdict.
    """

    module: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.module}.{self.name}: {self.detail}"


@dataclass(frozen=True)
class CheckReport:
    """All gate results of one run."""

    results: tuple[GateResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failed_gates(self) -> list[str]:
        return [f"{r.module}.{r.name}" for r in self.results if not r.passed]


Gate = Callable[[], tuple[bool, str]]


def _metropolis_weights_gate() -> tuple[bool, str]:
    worst = 0.0
    gaps = []
    for topology in (ring_graph(6), star_graph(5), path_graph(4)):
        W = metropolis_weights(topology).matrix
        worst = max(worst, float(np.max(np.abs(W - W.T))), float(np.max(np.abs(W.sum(axis=1) - 1.0))))
        off_graph = (topology.adjacency() + np.eye(topology.n_nodes)) == 0
        worst = max(worst, float(np.max(np.abs(W[off_graph]), initial=0.0)))
        gaps.append(metropolis_weights(topology).gap)
    passed = worst <= 1e-12 and all(0.0 < g <= 1.0 for g in gaps)
    return passed, f"max stochasticity error {worst:.1e}, gaps {', '.join(f'{g:.3f}' for g in gaps)}"


def _locality_gate() -> tuple[bool, str]:
    topology = ring_graph(7)
    weights = metropolis_weights(topology)
    x = np.random.default_rng(0).standard_normal((7, 3))
    error = float(np.max(np.abs(masked_product(weights, x, topology) - weights.matrix @ x)))
    return error == 0.0, f"masked vs dense product difference {error:.1e}"


def _certification_gate() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    features = rng.standard_normal((30, 3))
    labels = np.where(rng.standard_normal(30) > 0, 1.0, -1.0)
    oracles = [random_quadratic(4, rng), LogisticOracle(features, labels, l2=0.1)]
    reports = [certify_constants(o, samples=10, seed=1) for o in oracles]
    worst = max(r.worst_gradient_error for r in reports)
    return all(r.passed for r in reports), f"quadratic and logistic certified, worst gradient error {worst:.1e}"


def _alm_prox_identity_gate() -> tuple[bool, str]:
    worst = 0.0
    for seed in range(3):
        p = random_saddle_instance(seed, n_blocks=3, block_dim=3, m=2)
        state, lam = initial_state(p), np.zeros(p.m)
        for _ in range(50):
            state = alm_step(p, state)
            lam = prox_point_dual_step(p, lam)
            worst = max(worst, float(np.max(np.abs(state.lam - lam))))
    return worst <= 1e-8, f"max dual deviation {worst:.1e} over 50 iterations"


def _jacobi_pdmm_gate() -> tuple[bool, str]:
    p = jacobi_witness_instance()
    radius = iteration_map_radius(jacobi_step, p, initial_state(p))
    jacobi = run_saddle(p, SaddleMethod.JACOBI, max_iters=200, tol=1e-12)
    pdmm = run_saddle(
        p,
        SaddleMethod.PDMM,
        max_iters=2000,
        tol=1e-6,
        pdmm=PdmmConfig(K=2, tau=0.5, nu=0.0, eta=1.0),
    )
    diverged = TraceFlag.DIVERGED.value in jacobi.flags
    kkt = pdmm.last("kkt_residual")
    return radius > 1.0 and diverged and kkt <= 1e-6, (
        f"Jacobi radius {radius:.3f} (diverged={diverged}), PDMM kkt {kkt:.1e}"
    )


def _extra_equivalence_gate() -> tuple[bool, str]:
    cp = standard_consensus_instances()[0].problem()
    deviation, _, _ = run_equivalence(cp, ConsensusMethod.EXTRA, 100)
    return deviation <= 1e-10, f"max native vs primal-dual deviation {deviation:.1e}"


def _tracking_mean_gate() -> tuple[bool, str]:
    worst = 0.0
    for bench in standard_consensus_instances():
        cp = bench.problem(coupled=False, alpha=None)
        state = init_consensus_state(cp, ConsensusMethod.GRADIENT_TRACKING)
        for _ in range(50):
            state = gradient_tracking_step(cp, state)
            worst = max(worst, float(np.max(np.abs(state.s.mean(axis=0) - state.grad.mean(axis=0)))))
    return worst <= 1e-12, f"max tracker mean error {worst:.1e}"


def _lyapunov_gate() -> tuple[bool, str]:
    cp = standard_consensus_instances()[0].problem(coupled=False, alpha=None)
    optimum = flow_optimum(cp)
    h = flow_step_bound(cp)
    init = FlowState(x=np.zeros((cp.n_agents, cp.dimension)), eta=np.zeros((cp.n_agents, cp.dimension)), h=h)
    _, report = euler_flow(cp, init, 500, optimum)
    worst_dot = float(np.max(report.derivatives))
    return worst_dot <= 1e-10, f"max V_dot {worst_dot:.1e}, terminal V {report.values[-1]:.1e}"


def _pi_identity_gate() -> tuple[bool, str]:
    cp = standard_consensus_instances()[1].problem(coupled=False, alpha=None)
    rng = np.random.default_rng(0)
    x, eta = rng.standard_normal((2, cp.n_agents, cp.dimension))
    dx, _ = flow_rhs(cp, x, eta)
    expected = -cp.gradients(x) - cp.laplacian @ eta - cp.laplacian @ x
    error = float(np.max(np.abs(dx - expected)))
    return error <= 1e-12, f"plant plus controller vs flow difference {error:.1e}"


def _fed_admm_gate() -> tuple[bool, str]:
    inst = heterogeneous_federated_instance(n_devices=5, dimension=3, seed=0)
    cfg = FedConfig(rho=1.0, M=inst.n_devices + 1, T=30)
    reference = consensus_admm_reference(inst, cfg.rho, cfg.T)
    deviation = max(
        float(np.max(np.abs(state.z - z))) for state, z in zip(iterate_federated(inst, cfg), reference[1:])
    )
    return deviation <= 1e-10, f"max server deviation from consensus ADMM {deviation:.1e}"


def _projection_gate() -> tuple[bool, str]:
    net = energy_ring_benchmark()
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(net.n_peers):
        G, h = peer_feasible_set(net, i, capped=False).as_inequalities()
        for _ in range(5):
            point = 2.0 * rng.standard_normal(G.shape[1])
            exact = project_polyhedron_bruteforce(point, G, h)
            worst = max(worst, float(np.max(np.abs(project_feasible_i(net, i, point) - exact))))
    return worst <= 1e-8, f"max Dykstra vs enumeration difference {worst:.1e}"


def _clearing_gate() -> tuple[bool, str]:
    net = energy_two_peer_quadratic()
    trace = run_dual_decomposition(net, TradingConfig(alpha0=0.1, step_schedule="constant", max_outer=2000))
    reference = reference_solve(net)
    residual = trace.last("max_residual")
    gap = abs(trace.last("objective") - reference.value)
    return residual <= 1e-5 and gap <= 1e-4, f"max residual {residual:.1e}, objective gap {gap:.1e}"


GATES: dict[str, list[tuple[str, Gate]]] = {
    "graph": [("metropolis_weights", _metropolis_weights_gate), ("locality", _locality_gate)],
    "oracle": [("certification", _certification_gate)],
    "saddle": [("alm_prox_identity", _alm_prox_identity_gate), ("jacobi_vs_pdmm", _jacobi_pdmm_gate)],
    "consensus": [("extra_equivalence", _extra_equivalence_gate), ("tracking_mean", _tracking_mean_gate)],
    "dynamics": [("lyapunov_decrease", _lyapunov_gate), ("pi_identity", _pi_identity_gate)],
    "fedsim": [("admm_identity", _fed_admm_gate)],
    "energysim": [("projection", _projection_gate), ("clearing", _clearing_gate)],
}


def run_checks(module: str | None = None) -> CheckReport:
    """Run every gate, or the gates of one module.

    Args:
        module: Module name to filter on, or None for all.

    Returns:
        CheckReport in registration order.

    Raises:
        ConfigError: If the module name is unknown.
    """
    if module is not None and module not in GATES:
        raise ConfigError(f"Unknown check module '{module}', expected one of {list(MODULES)}")
    selected = [
        (mod, name, gate) for mod, gates in GATES.items() if module in (None, mod) for name, gate in gates
    ]
    logger.info(f"Running {len(selected)} gates")

    def evaluate(entry: tuple[str, str, Gate]) -> GateResult:
        mod, name, gate = entry
        try:
            passed, detail = gate()
        except Exception as e:
            logger.error(f"Gate {mod}.{name} raised: {e}")
            return GateResult(mod, name, False, f"error: {e}")
        return GateResult(mod, name, bool(passed), detail)

    workers = get_settings().worker_count(len(selected))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = tuple(executor.map(evaluate, selected))

    report = CheckReport(results)
    if report.passed:
        logger.info("All gates passed")
    else:
        logger.warning(f"Failed gates: {', '.join(report.failed_gates)}")
    return report

"""Experiment harness.

Routes a validated experiment to its runner, attaches reference values
and reproducibility metadata, and writes the resulting traces. All
computation finishes before the first file is written, so a failed run
leaves nothing behind.

Routing:
- saddle: one saddle-point method on a linearly constrained problem
- consensus: one decentralized method, or a native/primal-dual pair
- dynamics: Euler integration of the primal-dual flow
- federated: PDMM federated simulator, optionally with the FedProx baseline
- energy: peer-to-peer market clearing
- check: the invariant gates
"""

import platform
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
import scipy

from config.experiment import (
    CheckExperiment,
    ConsensusExperiment,
    DynamicsExperiment,
    EnergyExperiment,
    ExperimentBase,
    FederatedExperiment,
    OracleSpec,
    SaddleExperiment,
    TopologySpec,
    config_hash,
)
from config.logging_config import get_logger
from config.settings import get_settings
from services.checks import CheckReport, run_checks
from services.reference import consensus_reference, flow_optimum, reference_solve
from services.trace_store import write_json, write_trace
from simulators.energy import EnergyNetwork, run_trading
from simulators.federated import FedConfig, make_instance, run_fedprox_baseline, run_federated, stabilized_config
from solvers.consensus import ConsensusProblem, build_consensus_problem, run_consensus, run_equivalence
from solvers.dynamics import FlowState, euler_flow, flow_step_bound
from solvers.saddle import make_problem, run_saddle
from state.errors import ConfigError, ReferenceSolveError
from state.schema import ConsensusMethod, Trace
from tools.oracle import FunctionOracle, oracle_from_config
from tools.topology import Topology, build_topology, topology_from_config


logger = get_logger(__name__)

PDTOOL_VERSION = "1.0.0"

# Methods whose iterations need alpha * rho = 1
_COUPLED_METHODS = (ConsensusMethod.EXTRA_PD, ConsensusMethod.GRADIENT_TRACKING_PD)


class ExitStatus(IntEnum):
    """Process exit codes of a run."""

    OK = 0
    ERROR = 1
    FLAGGED = 2


@dataclass
class ExperimentResult:
    """Outcome of one experiment.

    Attributes:
        name: Experiment name, used as the output file stem.
        traces: Traces keyed by tag; "" is the primary trace.
        extras: Additional JSON documents keyed by file suffix.
        report: Gate report for check runs.
        files: Paths written, in write order.
    """

    name: str
    traces: dict[str, Trace] = field(default_factory=dict)
    extras: dict[str, object] = field(default_factory=dict)
    report: CheckReport | None = None
    files: list[Path] = field(default_factory=list)

    @property
    def status(self) -> ExitStatus:
        if self.report is not None:
            return ExitStatus.OK if self.report.passed else ExitStatus.ERROR
        if any(trace.flagged for trace in self.traces.values()):
            return ExitStatus.FLAGGED
        return ExitStatus.OK

    @property
    def trace(self) -> Trace | None:
        return self.traces.get("")


def versions() -> dict[str, str]:
    """Versions recorded in trace metadata."""
    return {
        "pdtool": PDTOOL_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def run_experiment(
    cfg: ExperimentBase,
    out_dir: Path | str | None = None,
    base_dir: Path | None = None,
) -> ExperimentResult:
    """Run one experiment and write its outputs.

    Args:
        cfg: Validated experiment.
        out_dir: Output directory; None runs without writing files.
        base_dir: Directory that relative data files in the config refer to.

    Returns:
        ExperimentResult; its status is the process exit code.

    Raises:
        PdtoolError: On configuration, reference or numerical errors.
    """
    logger.info(f"Running experiment '{cfg.name}' (kind={getattr(cfg, 'kind', None)}, seed={cfg.seed})")
    if isinstance(cfg, SaddleExperiment):
        result = _run_saddle(cfg, base_dir)
    elif isinstance(cfg, ConsensusExperiment):
        result = _run_consensus(cfg, base_dir)
    elif isinstance(cfg, DynamicsExperiment):
        result = _run_dynamics(cfg, base_dir)
    elif isinstance(cfg, FederatedExperiment):
        result = _run_federated(cfg, base_dir)
    elif isinstance(cfg, EnergyExperiment):
        result = _run_energy(cfg, base_dir)
    elif isinstance(cfg, CheckExperiment):
        result = ExperimentResult(cfg.name, report=run_checks(cfg.filter))
    else:
        raise ConfigError(f"Unsupported experiment type {type(cfg).__name__}")

    metadata = {"config_hash": config_hash(cfg), "seed": cfg.seed, "versions": versions(), "name": cfg.name}
    for trace in result.traces.values():
        trace.metadata.update(metadata)

    if out_dir is not None:
        _write_outputs(result, Path(out_dir))
    logger.info(f"Experiment '{cfg.name}' finished with status {result.status.name}")
    return result


def run_experiments(
    cfgs: Sequence[ExperimentBase],
    out_dir: Path | str | None = None,
    base_dir: Path | None = None,
) -> list[ExperimentResult]:
    """Run independent experiments on the configured worker threads.

    Results come back in input order. Outputs are written only once every
    experiment has finished; the first error propagates and nothing is
    written.
    """
    names = [cfg.name for cfg in cfgs]
    if len(set(names)) != len(names):
        raise ConfigError(f"Experiment names must be unique within one run, got {names}")
    workers = get_settings().worker_count(len(cfgs))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(lambda cfg: run_experiment(cfg, None, base_dir), cfgs))
    if out_dir is not None:
        for result in results:
            _write_outputs(result, Path(out_dir))
    return results


def _write_outputs(result: ExperimentResult, out_dir: Path) -> None:
    for tag, trace in result.traces.items():
        stem = result.name if not tag else f"{result.name}.{tag}"
        result.files.extend(write_trace(trace, out_dir / f"{stem}.csv"))
    for suffix, payload in result.extras.items():
        result.files.append(write_json(payload, out_dir / f"{result.name}.{suffix}.json"))


def _oracles(specs: Sequence[OracleSpec], base_dir: Path | None) -> list[FunctionOracle]:
    return [oracle_from_config(spec.model_dump(), base_dir) for spec in specs]


def _topology(spec: TopologySpec) -> Topology:
    return topology_from_config(spec.model_dump())


def _run_saddle(cfg: SaddleExperiment, base_dir: Path | None) -> ExperimentResult:
    oracles = _oracles([block.oracle for block in cfg.blocks], base_dir)
    problem = make_problem([(o, np.array(block.A, dtype=float)) for o, block in zip(oracles, cfg.blocks)], cfg.rho)
    trace = run_saddle(
        problem,
        cfg.method,
        max_iters=cfg.max_iters,
        tol=cfg.tol,
        alpha=cfg.alpha,
        pdmm=cfg.pdmm,
        inexact=cfg.inexact,
    )
    # Saddle traces report residuals, so a missing reference only loses the optimal value
    try:
        trace.metadata["optimal_value"] = reference_solve(problem).value
    except ReferenceSolveError as e:
        logger.warning(f"No reference value for '{cfg.name}': {e}")
        trace.metadata["optimal_value"] = None
    return ExperimentResult(cfg.name, traces={"": trace})


def _consensus_problem(cfg: ConsensusExperiment, base_dir: Path | None) -> ConsensusProblem:
    coupled = cfg.equivalence or cfg.method in _COUPLED_METHODS
    return build_consensus_problem(
        _oracles(cfg.agents, base_dir),
        _topology(cfg.topology),
        cfg.rho,
        alpha=cfg.alpha,
        coupled=coupled,
    )


def _run_consensus(cfg: ConsensusExperiment, base_dir: Path | None) -> ExperimentResult:
    cp = _consensus_problem(cfg, base_dir)
    reference = consensus_reference(cp)

    def run(method: ConsensusMethod) -> Trace:
        return run_consensus(cp, method, reference, max_iters=cfg.max_iters, tol=cfg.tol, inner=cfg.inner)

    if not cfg.equivalence:
        trace = run(cfg.method)
        trace.metadata["optimal_value"] = reference.value
        return ExperimentResult(cfg.name, traces={"": trace})

    pd_method = ConsensusMethod(f"{cfg.method.value}_pd")
    deviation, _, _ = run_equivalence(cp, cfg.method, cfg.max_iters)
    logger.info(f"Native vs primal-dual deviation for '{cfg.name}': {deviation:.3e}")
    traces = {"native": run(cfg.method), "pd": run(pd_method)}
    for trace in traces.values():
        trace.metadata.update({"optimal_value": reference.value, "max_deviation": deviation})
    return ExperimentResult(cfg.name, traces=traces)


def _run_dynamics(cfg: DynamicsExperiment, base_dir: Path | None) -> ExperimentResult:
    cp = build_consensus_problem(_oracles(cfg.agents, base_dir), _topology(cfg.topology), rho=1.0)
    optimum = flow_optimum(cp)
    h = cfg.h if cfg.h is not None else flow_step_bound(cp)
    zeros = np.zeros((cp.n_agents, cp.dimension))
    _, report = euler_flow(cp, FlowState(x=zeros, eta=zeros.copy(), h=h), cfg.steps, optimum)
    trace = report.to_trace()
    trace.metadata.update(
        {
            "h": h,
            "max_increase": report.max_increase,
            "terminal_consensus": report.terminal_consensus,
            "terminal_stationarity": report.terminal_stationarity,
        }
    )
    return ExperimentResult(cfg.name, traces={"": trace})


def _run_federated(cfg: FederatedExperiment, base_dir: Path | None) -> ExperimentResult:
    inst = make_instance(_oracles(cfg.devices, base_dir), cfg.weights)
    fed = FedConfig(
        rho=cfg.rho,
        eta0=cfg.eta0,
        eta_i=cfg.eta_i,
        M=cfg.M,
        T=cfg.T,
        local_solver=cfg.local_solver,
        variant=cfg.variant,
        z_refresh=cfg.z_refresh,
        seed=cfg.seed,
    )
    if cfg.auto_bregman:
        fed = stabilized_config(inst, fed)
    f_star = reference_solve(inst).value
    traces = {"": run_federated(inst, fed, f_star)}
    if cfg.baseline:
        traces["fedprox"] = run_fedprox_baseline(inst, fed, f_star)
    for trace in traces.values():
        trace.metadata["optimal_value"] = f_star
    return ExperimentResult(cfg.name, traces=traces)


def _run_energy(cfg: EnergyExperiment, base_dir: Path | None) -> ExperimentResult:
    n = len(cfg.peers)
    topology = build_topology(n, [arc.edge for arc in cfg.arcs])
    transfer: dict[tuple[int, int], FunctionOracle] = {}
    for arc in cfg.arcs:
        gamma = oracle_from_config(arc.gamma.model_dump(), base_dir)
        i, j = arc.edge
        transfer[(i, j)] = gamma
        transfer[(j, i)] = gamma
    net = EnergyNetwork(
        topology,
        np.array([peer.consumption for peer in cfg.peers], dtype=float),
        tuple(_oracles([peer.cost for peer in cfg.peers], base_dir)),
        transfer,
        trade_cap=cfg.trading.trade_cap,
    )
    trace = run_trading(net, cfg.trading)
    try:
        trace.metadata["optimal_value"] = reference_solve(net).value
    except ReferenceSolveError as e:
        logger.warning(f"No reference value for '{cfg.name}': {e}")
        trace.metadata["optimal_value"] = None
    allocation = trace.metadata.pop("allocation", None)
    extras = {"allocation": allocation} if allocation is not None else {}
    return ExperimentResult(cfg.name, traces={"": trace}, extras=extras)

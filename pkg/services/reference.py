"""Centralized reference solutions.

Independent oracles for every gap the runners report: dense KKT solves
for quadratics, accelerated gradient on the centralized problem
otherwise, and scipy solvers for the energy market. None of these share
code with the distributed methods they check.
"""

from collections.abc import Callable
from dataclasses import dataclass
from functools import singledispatch

import numpy as np
from scipy import optimize
from scipy.linalg import null_space

from config.logging_config import get_logger
from config.settings import get_settings
from simulators.energy import EnergyNetwork, TradeState, trading_objective
from simulators.federated import FederatedInstance
from solvers.consensus import ConsensusProblem, ConsensusReference
from solvers.dynamics import FlowOptimum
from solvers.saddle import ProblemSpec
from state.errors import ReferenceSolveError
from tools.inner_solvers import nesterov
from tools.oracle import FunctionOracle


logger = get_logger(__name__)

# Largest problem the dense references accept
MAX_REFERENCE_VARIABLES = 5000


@dataclass(frozen=True)
class ReferenceSolution:
    """Optimum of a problem.

    Attributes:
        x: Primal optimum (stacked, or one row per agent/device).
        dual: Minimum-norm dual optimum, or None where none is defined.
        value: Optimal objective value.
    """

    x: np.ndarray
    dual: np.ndarray | None
    value: float


@singledispatch
def reference_solve(problem: object) -> ReferenceSolution:
    """Solve a problem centrally.

    Raises:
        ReferenceSolveError: For unsupported problem types, oversized
            problems, or when the centralized solver does not converge.
    """
    raise ReferenceSolveError(f"No reference solver for {type(problem).__name__}")


@reference_solve.register
def _(problem: ProblemSpec) -> ReferenceSolution:
    _check_size(problem.n + problem.m)
    form = problem.oracle.quadratic_form()
    if form is not None:
        Q, q = form
        n, m = problem.n, problem.m
        kkt = np.block([[Q, problem.A.T], [problem.A, np.zeros((m, m))]])
        rhs = np.concatenate([-q, np.zeros(m)])
        solution, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x, lam = solution[:n], solution[n:]
        if np.linalg.norm(kkt @ solution - rhs) > 1e-8 * (1.0 + np.linalg.norm(rhs)):
            raise ReferenceSolveError("KKT system of the quadratic problem is inconsistent")
        return ReferenceSolution(x, lam, problem.oracle.evaluate(x))

    if not problem.smooth:
        raise ReferenceSolveError("Reference solve needs smooth blocks or quadratic forms")
    # Feasible directions span the null space of A
    basis = null_space(problem.A) if problem.m else np.eye(problem.n)
    oracle = problem.oracle
    result = _accelerated(lambda z: basis.T @ oracle.grad(basis @ z), np.zeros(basis.shape[1]), oracle)
    x = basis @ result
    lam, *_ = np.linalg.lstsq(problem.A.T, -oracle.grad(x), rcond=None)
    return ReferenceSolution(x, lam, oracle.evaluate(x))


@reference_solve.register
def _(problem: ConsensusProblem) -> ReferenceSolution:
    z, value = _minimize_sum(problem.oracles, np.ones(problem.n_agents))
    x = np.tile(z, (problem.n_agents, 1))
    # Dual of the primal-dual forms: grad f(x*) + eta* = 0
    return ReferenceSolution(x, -problem.gradients(x), value)


@reference_solve.register
def _(problem: FederatedInstance) -> ReferenceSolution:
    z, value = _minimize_sum(problem.devices, problem.weights)
    dual = np.array([-p * o.grad(z) for p, o in zip(problem.weights, problem.devices)])
    return ReferenceSolution(z, dual, value)


@reference_solve.register
def _(problem: EnergyNetwork) -> ReferenceSolution:
    _check_size(problem.n_peers + problem.n_arcs)
    n, n_arcs = problem.n_peers, problem.n_arcs
    if n_arcs == 0:
        state = TradeState(np.zeros(n), np.zeros(0), np.zeros(n))
        return ReferenceSolution(np.zeros(n), None, trading_objective(problem, state))

    sells = np.zeros((n, n_arcs))
    buys = np.zeros((n, n_arcs))
    sells[problem.sellers, np.arange(n_arcs)] = 1.0
    buys[problem.buyers, np.arange(n_arcs)] = 1.0
    balance = sells - buys
    cap = problem.cap

    if problem.all_linear:
        slopes = np.array([c.grad(np.zeros(1))[0] for c in problem.costs])
        transfer = np.array([problem.transfer_cost(a).grad(np.zeros(1))[0] for a in range(n_arcs)])
        result = optimize.linprog(
            balance.T @ slopes + transfer,
            A_ub=np.vstack([-balance, sells]),
            b_ub=np.concatenate([problem.consumption, np.full(n, cap)]),
            bounds=[(0.0, cap)] * n_arcs,
            method="highs",
        )
        if not result.success:
            raise ReferenceSolveError(f"Energy linear program failed: {result.message}")
        flows = np.asarray(result.x)
    else:
        flows = _energy_slsqp(problem, balance, sells)

    flows = np.clip(flows, 0.0, cap)
    state = TradeState(eps=sells @ flows, flows=flows, prices=np.zeros(n))
    return ReferenceSolution(state.stacked(), None, trading_objective(problem, state))


def consensus_reference(cp: ConsensusProblem) -> ConsensusReference:
    """Common optimum and optimal value for consensus metrics."""
    solution = reference_solve(cp)
    return ConsensusReference(solution.x[0].copy(), solution.value)


def flow_optimum(cp: ConsensusProblem) -> FlowOptimum:
    """KKT point of the primal-dual flow with the minimum-norm dual.

    eta* solves L eta = -grad f(x*); among its solutions the one
    orthogonal to the consensus direction is returned.
    """
    solution = reference_solve(cp)
    eta, *_ = np.linalg.lstsq(cp.laplacian, -cp.gradients(solution.x), rcond=None)
    return FlowOptimum(x=solution.x, eta=eta)


def consensus_admm_reference(
    inst: FederatedInstance,
    rho: float,
    rounds: int,
    z0: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Server iterates of two-block consensus ADMM on min sum_i p_i F_i(x_i) s.t. x_i = z.

    Devices must be quadratic; each round updates z from the previous
    device variables and duals, then solves every device in closed form
    and finally takes the dual step.

    Returns:
        Server values z after each round (initial value first).
    """
    d, n = inst.dimension, inst.n_devices
    forms = [device.quadratic_form() for device in inst.devices]
    if any(form is None for form in forms):
        raise ReferenceSolveError("Consensus ADMM reference needs quadratic devices")
    z = np.zeros(d) if z0 is None else np.asarray(z0, dtype=float).copy()
    x = np.tile(z, (n, 1))
    lam = np.zeros((n, d))
    history = [z.copy()]
    for _ in range(rounds):
        z = x.mean(axis=0) + lam.mean(axis=0) / rho
        for i, (p_i, (Q, q)) in enumerate(zip(inst.weights, forms)):
            x[i] = np.linalg.solve(p_i * Q + rho * np.eye(d), rho * z - lam[i] - p_i * q)
        lam = lam + rho * (x - z)
        history.append(z.copy())
    return history


def _check_size(variables: int) -> None:
    if variables > MAX_REFERENCE_VARIABLES:
        raise ReferenceSolveError(
            f"Reference solve supports at most {MAX_REFERENCE_VARIABLES} variables, got {variables}"
        )


def _accelerated(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    oracle: FunctionOracle,
) -> np.ndarray:
    settings = get_settings()
    if not oracle.ell > 0 or not np.isfinite(oracle.ell):
        raise ReferenceSolveError(f"Accelerated reference needs a finite positive ell, got {oracle.ell}")
    result = nesterov(
        grad_fn,
        x0,
        1.0 / oracle.ell,
        settings.reference_tolerance,
        settings.reference_max_iters,
        mu=oracle.mu,
    )
    if not result.converged:
        raise ReferenceSolveError(
            f"Centralized gradient reference stopped at residual {result.residual:.3e} "
            f"after {result.iterations} iterations"
        )
    return result.x


def _minimize_sum(oracles: tuple[FunctionOracle, ...], weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimize sum_i w_i f_i(z) over a common z."""
    dimension = oracles[0].dimension
    _check_size(dimension)
    forms = [o.quadratic_form() for o in oracles]
    if all(form is not None for form in forms):
        Q = sum(w * form[0] for w, form in zip(weights, forms))
        q = sum(w * form[1] for w, form in zip(weights, forms))
        try:
            z = np.linalg.solve(Q, -q)
        except np.linalg.LinAlgError as e:
            raise ReferenceSolveError("Summed quadratic is singular; the optimum is not unique") from e
    else:
        ell = float(sum(w * o.ell for w, o in zip(weights, oracles)))
        mu = float(sum(w * o.mu for w, o in zip(weights, oracles)))
        if not all(o.convex for o in oracles) or not np.isfinite(ell) or ell <= 0:
            raise ReferenceSolveError("Centralized reference needs smooth convex objectives")
        settings = get_settings()
        result = nesterov(
            lambda v: sum(w * o.grad(v) for w, o in zip(weights, oracles)),
            np.zeros(dimension),
            1.0 / ell,
            settings.reference_tolerance,
            settings.reference_max_iters,
            mu=mu,
        )
        if not result.converged:
            raise ReferenceSolveError(f"Centralized reference stopped at residual {result.residual:.3e}")
        z = result.x
    value = float(sum(w * o.evaluate(z) for w, o in zip(weights, oracles)))
    return z, value


def _energy_slsqp(problem: EnergyNetwork, balance: np.ndarray, sells: np.ndarray) -> np.ndarray:
    n_arcs = problem.n_arcs

    def state_of(flows: np.ndarray) -> TradeState:
        return TradeState(eps=sells @ flows, flows=flows, prices=np.zeros(problem.n_peers))

    def objective(flows: np.ndarray) -> float:
        return trading_objective(problem, state_of(flows))

    def gradient(flows: np.ndarray) -> np.ndarray:
        y = problem.consumption + balance @ flows
        marginal = np.array([c.grad(np.array([y_i]))[0] for c, y_i in zip(problem.costs, y)])
        transfer = np.array([problem.transfer_cost(a).grad(flows[a : a + 1])[0] for a in range(n_arcs)])
        return balance.T @ marginal + transfer

    constraints = [
        {"type": "ineq", "fun": lambda f: problem.consumption + balance @ f, "jac": lambda f: balance},
        {"type": "ineq", "fun": lambda f: problem.cap - sells @ f, "jac": lambda f: -sells},
    ]
    result = optimize.minimize(
        objective,
        np.zeros(n_arcs),
        jac=gradient,
        method="SLSQP",
        bounds=[(0.0, problem.cap)] * n_arcs,
        constraints=constraints,
        options={"ftol": 1e-14, "maxiter": 2000},
    )
    if not result.success:
        raise ReferenceSolveError(f"Energy reference SLSQP failed: {result.message}")
    logger.debug(f"Energy reference converged in {result.nit} iterations, value {result.fun:.10g}")
    return np.asarray(result.x)

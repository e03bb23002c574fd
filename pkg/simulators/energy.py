"""Peer-to-peer energy trading by dual decomposition and inexact ALM.

Each peer i consumes E_i^c, generates y_i = E_i^c + eps_i - sum_j E_ji at
cost C_i(y_i), offers eps_i for sale and buys E_ji from its neighbors at
transfer cost gamma_ji(E_ji). The market clears when every offer matches
the purchases requested from that peer, r_i = eps_i - sum_j E_ij = 0.

Trades are stored per directed arc (seller, buyer) in the order of
``Topology.arcs``; peer i owns eps_i and the flows of the arcs it buys on.
"""

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from config.logging_config import get_logger
from config.settings import get_settings
from state.errors import ConfigError, DimensionError, TopologyError
from state.schema import ENERGY_COLUMNS, InnerMethod, PeerAllocation, Trace, TraceFlag
from tools.inner_solvers import minimize_inner
from tools.oracle import FunctionOracle
from tools.projection import MAX_ENUMERATED_CONSTRAINTS, BoxHalfspace, active_set_qp
from tools.topology import Topology


logger = get_logger(__name__)

CAP_TOLERANCE = 1e-9
REPAIR_TOLERANCE = 1e-12
REPAIR_MAX_PASSES = 1000


class TradingMode(str, Enum):
    """Market-clearing algorithm."""

    DUAL_DECOMPOSITION = "dual_decomposition"
    INEXACT_ALM = "inexact_alm"


class TradingConfig(BaseModel):
    """Parameters of both trading runners.

    Attributes:
        mode: Market-clearing algorithm.
        rho: Penalty (and dual step) of the inexact ALM variant.
        alpha0: Dual step scale of dual decomposition.
        step_schedule: ``constant`` uses alpha0, ``inverse_sqrt`` alpha0/sqrt(k+1).
        inner_method: Projected gradient or projected Nesterov inner loop.
        inner_c: Inner tolerance factor, inner tol = inner_c * eps_out.
        max_inner: Inner iteration cap R.
        eps_out: Target max |r_i|.
        max_outer: Outer iteration budget.
        trade_cap: Upper bound on every peer variable; None means
            10 * max consumption.
        linear_step: Step used when a subproblem has zero curvature.
        peer_tolerance: Stationarity target of dual-decomposition peer solves.
        oscillation_window: Rounds compared by the oscillation detector.
        oscillation_relative: Minimal relative improvement per window.
    """

    model_config = ConfigDict(frozen=True)

    mode: TradingMode = TradingMode.DUAL_DECOMPOSITION
    rho: float = Field(default=1.0, gt=0)
    alpha0: float = Field(default=0.1, gt=0)
    step_schedule: Literal["constant", "inverse_sqrt"] = "inverse_sqrt"
    inner_method: InnerMethod = InnerMethod.NESTEROV
    inner_c: float = Field(default=0.1, gt=0)
    max_inner: int = Field(default=5000, ge=1)
    eps_out: float = Field(default=1e-5, gt=0)
    max_outer: int = Field(default=5000, ge=0)
    trade_cap: float | None = Field(default=None, gt=0)
    linear_step: float = Field(default=1.0, gt=0)
    peer_tolerance: float = Field(default=1e-9, gt=0)
    oscillation_window: int = Field(default=50, ge=1)
    oscillation_relative: float = Field(default=1e-3, ge=0, lt=1)

    def step(self, k: int) -> float:
        """Dual step alpha_k of dual decomposition."""
        if self.step_schedule == "constant":
            return self.alpha0
        return self.alpha0 / np.sqrt(k + 1)


@dataclass(frozen=True, eq=False)
class EnergyNetwork:
    """Trading peers, their costs and the arcs they trade on.

    Attributes:
        topology: Undirected trading graph.
        consumption: E_i^c >= 0 per peer.
        costs: Scalar generation cost C_i per peer.
        transfer: Scalar cost gamma per directed arc (seller, buyer).
        trade_cap: Bound on every peer variable; None means 10 * max E^c.
    """

    topology: Topology
    consumption: np.ndarray
    costs: tuple[FunctionOracle, ...]
    transfer: Mapping[tuple[int, int], FunctionOracle]
    trade_cap: float | None = None

    def __post_init__(self) -> None:
        n = self.topology.n_nodes
        if self.consumption.shape != (n,) or len(self.costs) != n:
            raise DimensionError(
                f"Network has {n} peers but consumption shape {self.consumption.shape} and {len(self.costs)} costs"
            )
        if np.any(self.consumption < 0):
            raise ConfigError("Consumption must be nonnegative")
        if set(self.transfer) != set(self.topology.arcs):
            raise TopologyError("Transfer costs must be given for exactly the arcs of the topology")
        for oracle in (*self.costs, *self.transfer.values()):
            if oracle.dimension != 1:
                raise DimensionError(f"Cost oracles must be scalar, got dimension {oracle.dimension}")
            if not oracle.convex:
                raise ConfigError(f"Trading costs must be convex, got kind '{oracle.kind}'")

    @property
    def n_peers(self) -> int:
        return self.topology.n_nodes

    @property
    def arcs(self) -> tuple[tuple[int, int], ...]:
        return self.topology.arcs

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    @cached_property
    def cap(self) -> float:
        """Effective trade cap."""
        if self.trade_cap is not None:
            return float(self.trade_cap)
        peak = float(np.max(self.consumption, initial=0.0))
        return 10.0 * (peak if peak > 0 else 1.0)

    @cached_property
    def sellers(self) -> np.ndarray:
        return np.array([s for s, _ in self.arcs], dtype=int)

    @cached_property
    def buyers(self) -> np.ndarray:
        return np.array([b for _, b in self.arcs], dtype=int)

    @cached_property
    def purchases(self) -> tuple[np.ndarray, ...]:
        """Arc indices peer i buys on."""
        return tuple(np.flatnonzero(self.buyers == i) for i in range(self.n_peers))

    @cached_property
    def sales(self) -> tuple[np.ndarray, ...]:
        """Arc indices peer i sells on."""
        return tuple(np.flatnonzero(self.sellers == i) for i in range(self.n_peers))

    @cached_property
    def peer_index(self) -> tuple[np.ndarray, ...]:
        """Positions of peer i's variables in the stacked vector (eps, flows)."""
        return tuple(
            np.concatenate([[i], self.n_peers + self.purchases[i]]).astype(int) for i in range(self.n_peers)
        )

    def transfer_cost(self, arc: int) -> FunctionOracle:
        return self.transfer[self.arcs[arc]]

    def peer_smoothness(self, i: int) -> float:
        """Lipschitz constant of the gradient of peer i's cost in its own variables."""
        gammas = [self.transfer_cost(a).ell for a in self.purchases[i]]
        return self.costs[i].ell * (1 + len(gammas)) + max(gammas, default=0.0)

    def strictly_quadratic(self, i: int) -> bool:
        """Whether peer i's cost is a quadratic with positive curvature in every own variable."""
        oracles = [self.costs[i], *(self.transfer_cost(a) for a in self.purchases[i])]
        for oracle in oracles:
            form = oracle.quadratic_form()
            if oracle.kind != "quadratic" or form is None or form[0][0, 0] <= 0:
                return False
        return True

    @property
    def all_linear(self) -> bool:
        return all(o.kind == "linear" for o in (*self.costs, *self.transfer.values()))


@dataclass(frozen=True, eq=False)
class TradeState:
    """Offers, trades and prices after an outer iteration.

    Attributes:
        eps: Energy offered for sale per peer.
        flows: Energy per arc (seller, buyer), in arc order.
        prices: Dual price lambda_i per peer; buyers see -lambda_i.
        k: Outer iterations completed.
    """

    eps: np.ndarray
    flows: np.ndarray
    prices: np.ndarray
    k: int = 0

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.eps, self.flows])


def initial_trade_state(net: EnergyNetwork) -> TradeState:
    """No trades and zero prices."""
    return TradeState(eps=np.zeros(net.n_peers), flows=np.zeros(net.n_arcs), prices=np.zeros(net.n_peers))


@dataclass
class RoundLedger:
    """Counts messages and rejects any message off the trading graph."""

    topology: Topology
    messages: int = 0

    def send(self, sender: int, receiver: int, kind: str) -> None:
        """Record one message.

        Raises:
            TopologyError: If sender and receiver are not neighbors.
        """
        if not self.topology.has_edge(sender, receiver):
            raise TopologyError(f"Peer {sender} cannot send '{kind}' to non-neighbor {receiver}")
        self.messages += 1

    def broadcast(self, sender: int, kind: str) -> None:
        for receiver in self.topology.neighbors[sender]:
            self.send(sender, receiver, kind)

    def exchange_trades(self, net: EnergyNetwork) -> None:
        """Buyers post requests to sellers; sellers confirm them."""
        for seller, buyer in net.arcs:
            self.send(buyer, seller, "request")
            self.send(seller, buyer, "confirm")

    def take(self) -> int:
        """Messages since the last call."""
        count, self.messages = self.messages, 0
        return count


@dataclass(frozen=True)
class PeerSolution:
    """Outcome of one peer subproblem.

    Attributes:
        values: Peer variables (eps_i, E_ji for j in purchase order).
        iterations: Inner iterations (1 for an exact solve).
        converged: Whether the solve met its tolerance.
        active: Active constraint set of an exact solve.
    """

    values: np.ndarray
    iterations: int
    converged: bool
    active: tuple[int, ...] | None = None


def balance_residual(net: EnergyNetwork, st: TradeState) -> np.ndarray:
    """r_i = eps_i - sum_j E_ij (offer minus requested sales)."""
    if st.eps.shape != (net.n_peers,) or st.flows.shape != (net.n_arcs,):
        raise DimensionError("Trade state does not match the network")
    return st.eps - np.bincount(net.sellers, weights=st.flows, minlength=net.n_peers)


def generation(net: EnergyNetwork, st: TradeState) -> np.ndarray:
    """y_i = E_i^c + eps_i - sum_j E_ji."""
    return net.consumption + st.eps - np.bincount(net.buyers, weights=st.flows, minlength=net.n_peers)


def peer_feasible_set(net: EnergyNetwork, i: int, capped: bool = True) -> BoxHalfspace:
    """The set {0 <= v (<= cap), E_i^c + eps_i - sum_j E_ji >= 0} over peer i's variables."""
    size = 1 + len(net.purchases[i])
    a = np.ones(size)
    a[0] = -1.0
    upper = np.full(size, net.cap if capped else np.inf)
    return BoxHalfspace(lower=np.zeros(size), upper=upper, a=a, b=float(net.consumption[i]))


def project_feasible_i(net: EnergyNetwork, i: int, point: np.ndarray, capped: bool = False) -> np.ndarray:
    """Euclidean projection of peer i's variables onto its feasible set."""
    box = peer_feasible_set(net, i, capped)
    point = np.asarray(point, dtype=float)
    if point.shape != box.a.shape:
        raise DimensionError(f"Peer {i} has {box.a.shape[0]} variables, got shape {point.shape}")
    return box.project(point)


def peer_subproblem_solve(
    net: EnergyNetwork,
    i: int,
    prices: np.ndarray,
    cfg: TradingConfig,
    warm: np.ndarray | None = None,
    hint: tuple[int, ...] | None = None,
) -> PeerSolution:
    """Minimize peer i's Lagrangian term over its capped feasible set.

    The term is C_i(y_i) + sum_j gamma_ji(E_ji) + lambda_i eps_i - sum_j lambda_j E_ji.
    Strictly convex quadratic peers are solved exactly by active-set
    enumeration; other peers by projected (Nesterov) gradient.

    Args:
        net: Trading network.
        i: Peer index.
        prices: Current prices of all peers.
        cfg: Trading configuration.
        warm: Warm start for the iterative solve.
        hint: Active set to try first in the exact solve.

    Returns:
        PeerSolution with the peer's new variables.
    """
    box = peer_feasible_set(net, i, capped=True)
    purchases = net.purchases[i]
    sellers = net.sellers[purchases]
    direction = -box.a  # dy/dv
    shift = np.concatenate([[prices[i]], -prices[sellers]])
    cost = net.costs[i]
    e_c = float(net.consumption[i])

    if net.strictly_quadratic(i):
        G, h = box.as_inequalities()
        if G.shape[0] <= MAX_ENUMERATED_CONSTRAINTS:
            Q, q = cost.quadratic_form()
            gamma_forms = [net.transfer_cost(a).quadratic_form() for a in purchases]
            P = Q[0, 0] * np.outer(direction, direction)
            p = (Q[0, 0] * e_c + q[0]) * direction + shift
            for slot, (gQ, gq) in enumerate(gamma_forms, start=1):
                P[slot, slot] += gQ[0, 0]
                p[slot] += gq[0]
            try:
                x, active = active_set_qp(P, p, G, h, initial_active=hint)
                return PeerSolution(x, 1, True, active)
            except ValueError as e:
                logger.debug(f"Exact solve of peer {i} failed ({e}); using projected gradient")

    def grad_fn(v: np.ndarray) -> np.ndarray:
        y = e_c + direction @ v
        g = cost.grad(np.array([y]))[0] * direction + shift
        for slot, a in enumerate(purchases, start=1):
            g[slot] += net.transfer_cost(a).grad(v[slot : slot + 1])[0]
        return g

    ell = net.peer_smoothness(i)
    if not np.isfinite(ell):
        raise ConfigError(f"Peer {i} has a nonsmooth cost; trading requires smooth costs")
    step = 1.0 / ell if ell > 0 else cfg.linear_step
    x0 = np.zeros(box.a.shape[0]) if warm is None else warm
    result = minimize_inner(grad_fn, x0, step, cfg.peer_tolerance, cfg.max_inner, cfg.inner_method, box.project)
    return PeerSolution(result.x, result.iterations, result.converged)


def price_update(net: EnergyNetwork, st: TradeState, alpha: float) -> np.ndarray:
    """lambda_i+ = lambda_i + alpha (eps_i - sum_j E_ij)."""
    if alpha < 0:
        raise ConfigError(f"Dual step must be nonnegative, got {alpha}")
    return st.prices + alpha * balance_residual(net, st)


def trading_objective(net: EnergyNetwork, st: TradeState) -> float:
    """Total generation cost plus every arc's transfer cost once."""
    y = generation(net, st)
    total = sum(cost.evaluate(np.array([y_i])) for cost, y_i in zip(net.costs, y))
    total += sum(net.transfer_cost(a).evaluate(st.flows[a : a + 1]) for a in range(net.n_arcs))
    return float(total)


def repair_trades(net: EnergyNetwork, st: TradeState) -> TradeState:
    """Turn a near-clearing state into a feasible, exactly clearing one.

    Offers are set to the requested sales; purchases of any peer whose
    generation would turn negative are scaled down until none does, with
    the no-trade allocation as fallback.
    """
    flows = np.clip(st.flows, 0.0, net.cap)
    for _ in range(REPAIR_MAX_PASSES):
        repaired = TradeState(
            eps=np.bincount(net.sellers, weights=flows, minlength=net.n_peers),
            flows=flows,
            prices=st.prices,
            k=st.k,
        )
        y = generation(net, repaired)
        short = np.flatnonzero(y < -REPAIR_TOLERANCE)
        if short.size == 0:
            return repaired
        flows = flows.copy()
        for i in short:
            bought = flows[net.purchases[i]].sum()
            available = net.consumption[i] + repaired.eps[i]
            flows[net.purchases[i]] *= max(0.0, available / bought)
    logger.warning("Trade repair did not settle; falling back to no trades")
    return TradeState(eps=np.zeros(net.n_peers), flows=np.zeros(net.n_arcs), prices=st.prices, k=st.k)


def allocation_dump(net: EnergyNetwork, st: TradeState) -> dict[str, PeerAllocation]:
    """Final position of every peer keyed by peer index."""
    dump: dict[str, PeerAllocation] = {}
    for i in range(net.n_peers):
        sales = {str(net.buyers[a]): float(st.flows[a]) for a in net.sales[i]}
        dump[str(i)] = PeerAllocation(eps=float(st.eps[i]), sales=sales, price=float(st.prices[i]))
    return dump


def detect_oscillation(history: Sequence[float], window: int, relative: float) -> bool:
    """Whether the largest residual of the last window failed to improve on the window before it."""
    if len(history) < 2 * window:
        return False
    recent = max(history[-window:])
    previous = max(history[-2 * window : -window])
    return recent >= (1.0 - relative) * previous


def run_dual_decomposition(net: EnergyNetwork, cfg: TradingConfig) -> Trace:
    """Clear the market by dual decomposition.

    Every round each peer solves its subproblem for the posted prices,
    buyers send their requests to sellers, and every peer moves its price
    by the unmatched part of its offer.

    Args:
        net: Trading network.
        cfg: Trading configuration.

    Returns:
        Trace with ENERGY_COLUMNS; metadata holds the allocation at
        repaired trades.
    """
    logger.info(f"Starting dual decomposition: {net.n_peers} peers, {net.n_arcs} arcs, cap {net.cap:g}")
    trace = Trace(columns=ENERGY_COLUMNS)
    ledger = RoundLedger(net.topology)
    state = initial_trade_state(net)
    warm: dict[int, np.ndarray] = {}
    hints: dict[int, tuple[int, ...] | None] = {}
    history: list[float] = []
    threshold = get_settings().divergence_threshold
    workers = get_settings().worker_count(net.n_peers)

    with ThreadPoolExecutor(max_workers=workers) as executor:
        for k in range(cfg.max_outer):
            prices = state.prices

            def solve(i: int) -> PeerSolution:
                return peer_subproblem_solve(net, i, prices, cfg, warm.get(i), hints.get(i))

            solutions = list(executor.map(solve, range(net.n_peers)))
            stacked = np.zeros(net.n_peers + net.n_arcs)
            for i, solution in enumerate(solutions):
                stacked[net.peer_index[i]] = solution.values
                warm[i] = solution.values
                hints[i] = solution.active
                if not solution.converged:
                    trace.add_flag(TraceFlag.INNER_TOLERANCE_UNMET)
            ledger.exchange_trades(net)

            state = TradeState(eps=stacked[: net.n_peers], flows=stacked[net.n_peers :], prices=prices, k=k)
            _flag_cap(net, state, trace)
            residual = balance_residual(net, state)
            inner_iters = sum(s.iterations for s in solutions)
            converged = float(np.max(np.abs(residual), initial=0.0)) <= cfg.eps_out

            if not converged:
                state = TradeState(state.eps, state.flows, price_update(net, state, cfg.step(k)), k + 1)
                for i in range(net.n_peers):
                    ledger.broadcast(i, "price")
            _record(trace, net, state, k, residual, inner_iters, ledger.take())

            if converged:
                break
            if not np.all(np.isfinite(state.prices)) or np.max(np.abs(state.prices)) > threshold:
                logger.warning(f"Prices diverged at outer iteration {k}")
                trace.add_flag(TraceFlag.DIVERGED)
                break
            history.append(float(np.max(np.abs(residual))))
            if TraceFlag.OSCILLATION.value not in trace.flags and detect_oscillation(
                history, cfg.oscillation_window, cfg.oscillation_relative
            ):
                logger.warning(f"Residual stopped improving over {cfg.oscillation_window} rounds at k={k}")
                trace.add_flag(TraceFlag.OSCILLATION)

    return _finish(trace, net, state, "dual_decomposition")


def alm_gradient(net: EnergyNetwork, v: np.ndarray, prices: np.ndarray, rho: float) -> np.ndarray:
    """Gradient of the augmented Lagrangian in the stacked variables (eps, flows)."""
    n = net.n_peers
    st = TradeState(eps=v[:n], flows=v[n:], prices=prices)
    y = generation(net, st)
    r = balance_residual(net, st)
    marginal = np.array([cost.grad(np.array([y_i]))[0] for cost, y_i in zip(net.costs, y)])
    dual = prices + rho * r
    g = np.empty_like(v)
    g[:n] = marginal + dual
    transfer = np.array([net.transfer_cost(a).grad(v[n + a : n + a + 1])[0] for a in range(net.n_arcs)])
    g[n:] = -marginal[net.buyers] + transfer - dual[net.sellers]
    return g


def alm_smoothness(net: EnergyNetwork, rho: float) -> float:
    """Bound on the Lipschitz constant of alm_gradient."""
    degrees = [net.topology.degree(i) for i in range(net.n_peers)]
    cost_part = max(c.ell * (1 + d) for c, d in zip(net.costs, degrees))
    transfer_part = max((o.ell for o in net.transfer.values()), default=0.0)
    return cost_part + transfer_part + rho * (1 + max(degrees, default=0))


def project_trades(net: EnergyNetwork, v: np.ndarray) -> np.ndarray:
    """Project every peer's block of the stacked vector onto its capped feasible set."""
    out = v.copy()
    for i in range(net.n_peers):
        index = net.peer_index[i]
        out[index] = peer_feasible_set(net, i, capped=True).project(v[index])
    return out


def run_inexact_alm_trading(net: EnergyNetwork, cfg: TradingConfig) -> Trace:
    """Clear the market by the inexact augmented Lagrangian method.

    Each outer iteration minimizes the augmented Lagrangian over all
    peers' feasible sets by a projected inner loop (one neighbor exchange
    of trades per inner step) to tolerance inner_c * eps_out, then moves
    every price by rho times its residual.

    Args:
        net: Trading network.
        cfg: Trading configuration.

    Returns:
        Trace with ENERGY_COLUMNS; metadata holds the allocation at
        repaired trades.
    """
    logger.info(f"Starting inexact ALM trading: {net.n_peers} peers, rho={cfg.rho}, eps_out={cfg.eps_out:g}")
    trace = Trace(columns=ENERGY_COLUMNS)
    ledger = RoundLedger(net.topology)
    state = initial_trade_state(net)
    inner_tol = cfg.inner_c * cfg.eps_out
    ell = alm_smoothness(net, cfg.rho)
    if not np.isfinite(ell):
        raise ConfigError("Inexact ALM trading requires smooth costs")
    step = 1.0 / ell
    threshold = get_settings().divergence_threshold
    v = state.stacked()

    for k in range(cfg.max_outer):
        prices = state.prices
        result = minimize_inner(
            lambda u: alm_gradient(net, u, prices, cfg.rho),
            v,
            step,
            inner_tol,
            cfg.max_inner,
            cfg.inner_method,
            lambda u: project_trades(net, u),
        )
        v = result.x
        for _ in range(result.iterations):
            ledger.exchange_trades(net)
        if not result.converged:
            logger.warning(f"Inner loop hit R={cfg.max_inner} at outer iteration {k}")
            trace.add_flag(TraceFlag.INNER_TOLERANCE_UNMET)

        state = TradeState(eps=v[: net.n_peers], flows=v[net.n_peers :], prices=prices, k=k)
        _flag_cap(net, state, trace)
        residual = balance_residual(net, state)
        state = TradeState(state.eps, state.flows, price_update(net, state, cfg.rho), k + 1)
        for i in range(net.n_peers):
            ledger.broadcast(i, "price")
        _record(trace, net, state, k, residual, result.iterations, ledger.take())

        if float(np.max(np.abs(residual), initial=0.0)) <= cfg.eps_out and result.converged:
            break
        if not np.all(np.isfinite(state.prices)) or np.max(np.abs(state.prices)) > threshold:
            logger.warning(f"Prices diverged at outer iteration {k}")
            trace.add_flag(TraceFlag.DIVERGED)
            break

    return _finish(trace, net, state, "inexact_alm")


def run_trading(net: EnergyNetwork, cfg: TradingConfig) -> Trace:
    """Dispatch on cfg.mode."""
    if cfg.mode == TradingMode.INEXACT_ALM:
        return run_inexact_alm_trading(net, cfg)
    return run_dual_decomposition(net, cfg)


def _flag_cap(net: EnergyNetwork, st: TradeState, trace: Trace) -> None:
    if TraceFlag.TRADE_CAP_ACTIVE.value in trace.flags:
        return
    if np.any(st.stacked() >= net.cap - CAP_TOLERANCE):
        logger.warning(f"Trade cap {net.cap:g} active at outer iteration {st.k}")
        trace.add_flag(TraceFlag.TRADE_CAP_ACTIVE)


def _record(
    trace: Trace,
    net: EnergyNetwork,
    st: TradeState,
    k: int,
    residual: np.ndarray,
    inner_iters: int,
    msgs: int,
) -> None:
    repaired = repair_trades(net, st)
    trace.append(
        k=k,
        max_residual=float(np.max(np.abs(residual), initial=0.0)),
        residual_norm=float(np.linalg.norm(residual)),
        objective=trading_objective(net, repaired),
        price_norm=float(np.linalg.norm(st.prices)),
        inner_iters=inner_iters,
        msgs=msgs,
    )


def _finish(trace: Trace, net: EnergyNetwork, st: TradeState, algorithm: str) -> Trace:
    repaired = repair_trades(net, st)
    trace.metadata.update(
        {
            "algorithm": algorithm,
            "eps": st.eps.tolist(),
            "flows": st.flows.tolist(),
            "prices": st.prices.tolist(),
            "allocation": allocation_dump(net, repaired),
        }
    )
    status = f"max residual {trace.last('max_residual'):.3e}" if trace.rows else "no rounds"
    logger.info(f"Finished {algorithm} after {len(trace)} rounds, {status}")
    return trace

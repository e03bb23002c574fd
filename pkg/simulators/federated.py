"""PDMM-based federated learning simulator with a FedProx baseline.

Devices hold objectives f_i = p_i F_i and a copy x_i of the model; the
server holds z and every device dual lam_i. Each round samples a set of
blocks from {0 (server), 1..N (devices)}, lets the sampled blocks
minimize the augmented Lagrangian with a Bregman term, and updates the
duals.
"""

import math
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config.logging_config import get_logger
from config.settings import get_settings
from state.errors import ConfigError, DimensionError
from state.schema import FEDERATED_COLUMNS, Trace, TraceFlag
from tools.oracle import FunctionOracle, ScaledOracle


logger = get_logger(__name__)

SIMPLEX_TOLERANCE = 1e-12
# Probability that a block waits longer than the gap the Bregman floor covers
GAP_TAIL = 1e-3


class FedVariant(str, Enum):
    """Algorithm variant."""

    CONVEX = "convex"
    NONCONVEX = "nonconvex"


class ZRefresh(str, Enum):
    """Which server value sampled devices use within a round."""

    POST_UPDATE = "post_update"
    ROUND_START = "round_start"


class LocalSolverConfig(BaseModel):
    """Device-side solver: exact minimization or a few gradient steps."""

    model_config = ConfigDict(frozen=True)

    mode: str = Field(default="exact", pattern="^(exact|gradient)$")
    steps: int = Field(default=5, ge=1)
    step_size: float | None = Field(default=None, gt=0)


class FedConfig(BaseModel):
    """Round parameters of the federated simulator.

    Attributes:
        rho: Penalty parameter.
        eta0: Server proximal weight.
        eta_i: Device Bregman weights (shared scalar or one per device).
        M: Blocks sampled per round (server counts as block 0).
        T: Number of rounds.
        local_solver: Device-side solver.
        variant: Convex algorithm or its nonconvex modification.
        z_refresh: Server value devices read within a round.
        seed: Sampling seed.
    """

    model_config = ConfigDict(frozen=True)

    rho: float = Field(default=1.0, gt=0)
    eta0: float = Field(default=0.0, ge=0)
    eta_i: float | list[float] = 0.0
    M: int = Field(default=1, ge=1)
    T: int = Field(default=100, ge=0)
    local_solver: LocalSolverConfig = Field(default_factory=LocalSolverConfig)
    variant: FedVariant = FedVariant.CONVEX
    z_refresh: ZRefresh = ZRefresh.POST_UPDATE
    seed: int = 0

    @field_validator("eta_i")
    @classmethod
    def _eta_nonnegative(cls, v: float | list[float]) -> float | list[float]:
        if np.any(np.asarray(v) < 0):
            raise ValueError("eta_i entries must be nonnegative")
        return v

    def device_eta(self, i: int, n_devices: int) -> float:
        """Bregman weight of device i (1-based); 0 in the nonconvex variant."""
        if self.variant == FedVariant.NONCONVEX:
            return 0.0
        if isinstance(self.eta_i, list):
            if len(self.eta_i) != n_devices:
                raise DimensionError(f"eta_i has {len(self.eta_i)} entries for {n_devices} devices")
            return float(self.eta_i[i - 1])
        return float(self.eta_i)

    def server_eta(self) -> float:
        """Server proximal weight; 0 in the nonconvex variant."""
        return 0.0 if self.variant == FedVariant.NONCONVEX else self.eta0


@dataclass(frozen=True, eq=False)
class FederatedInstance:
    """Devices and their sample weights.

    Attributes:
        devices: Device objectives F_i.
        weights: Weights p_i > 0 summing to 1.
    """

    devices: tuple[FunctionOracle, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        if len(self.devices) != self.weights.shape[0]:
            raise DimensionError(f"{len(self.devices)} devices but {self.weights.shape[0]} weights")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise ConfigError("Device weights must be positive and sum to 1")
        if len({o.dimension for o in self.devices}) != 1:
            raise DimensionError("Device objectives disagree on dimension")

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def dimension(self) -> int:
        return self.devices[0].dimension

    def local(self, i: int) -> FunctionOracle:
        """f_i = p_i F_i for device i (1-based)."""
        return ScaledOracle(self.devices[i - 1], float(self.weights[i - 1]))

    def objective(self, z: np.ndarray) -> float:
        """f(z) = sum_i p_i F_i(z)."""
        return float(sum(p * o.evaluate(z) for p, o in zip(self.weights, self.devices)))


def make_instance(devices: Sequence[FunctionOracle], weights: Sequence[float] | None = None) -> FederatedInstance:
    """Instance with uniform weights unless given."""
    n = len(devices)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return FederatedInstance(tuple(devices), w)


def participation_gap(n_devices: int, M: int, tail: float = GAP_TAIL) -> int:
    """Rounds g with P(a block is skipped g times in a row) <= tail; 1 at full participation."""
    q = M / (n_devices + 1)
    if q >= 1.0:
        return 1
    return max(1, math.ceil(math.log(tail) / math.log1p(-q)))


def bregman_floor(inst: FederatedInstance, M: int, rho: float, tail: float = GAP_TAIL) -> tuple[float, np.ndarray]:
    """Smallest server and device weights that keep stale blocks from winding up.

    Every dual integrates rho (x_i - z) in every round of the convex
    variant, also while block i or the server sits out. A block refreshed
    every g rounds stays stable when eta0 >= rho N (g - 2) / 4 on the
    server and eta_i >= ((g - 2) rho - 2 p_i mu_i) / 8 on device i, where
    g is the participation gap exceeded with probability at most tail.

    Args:
        inst: Federated instance.
        M: Blocks sampled per round.
        rho: Penalty parameter.
        tail: Probability of a longer gap.

    Returns:
        Tuple of the server floor and the per-device floors.
    """
    g = participation_gap(inst.n_devices, M, tail)
    eta0 = rho * inst.n_devices * max(0.0, g - 2.0) / 4.0
    curvature = np.array([p * o.mu for p, o in zip(inst.weights, inst.devices)])
    eta_i = np.maximum(0.0, ((g - 2.0) * rho - 2.0 * curvature) / 8.0)
    return eta0, eta_i


def stabilized_config(inst: FederatedInstance, cfg: FedConfig) -> FedConfig:
    """Raise eta0 and eta_i to the Bregman floor; the nonconvex variant is returned unchanged."""
    if cfg.variant == FedVariant.NONCONVEX:
        return cfg
    floor0, floor_i = bregman_floor(inst, cfg.M, cfg.rho)
    current = [cfg.device_eta(i, inst.n_devices) for i in range(1, inst.n_devices + 1)]
    eta_i = [max(c, float(f)) for c, f in zip(current, floor_i)]
    return cfg.model_copy(update={"eta0": max(cfg.eta0, floor0), "eta_i": eta_i})


def below_bregman_floor(inst: FederatedInstance, cfg: FedConfig) -> bool:
    """Whether a convex run uses weights under the floor of bregman_floor."""
    if cfg.variant == FedVariant.NONCONVEX:
        return False
    floor0, floor_i = bregman_floor(inst, cfg.M, cfg.rho)
    current = np.array([cfg.device_eta(i, inst.n_devices) for i in range(1, inst.n_devices + 1)])
    return cfg.eta0 < floor0 or bool(np.any(current < floor_i))


@dataclass(frozen=True, eq=False)
class FedState:
    """Committed state after a round.

    Attributes:
        z: Server variable.
        x: Device variables, shape (N, d).
        lam: Device duals, shape (N, d).
        k: Rounds completed.
        sampled: Blocks sampled in the last round.
        flags: Warning flags raised so far.
    """

    z: np.ndarray
    x: np.ndarray
    lam: np.ndarray
    k: int = 0
    sampled: tuple[int, ...] = ()
    flags: frozenset[str] = field(default_factory=frozenset)


def initial_fed_state(inst: FederatedInstance, z0: np.ndarray | None = None) -> FedState:
    """Server and devices start at z0 (default 0); duals start at 0."""
    z = np.zeros(inst.dimension) if z0 is None else np.asarray(z0, dtype=float).copy()
    if z.shape != (inst.dimension,):
        raise DimensionError(f"z0 has shape {z.shape}, expected ({inst.dimension},)")
    x = np.tile(z, (inst.n_devices, 1))
    return FedState(z=z, x=x, lam=np.zeros_like(x))


def sample_blocks(cfg: FedConfig, rng: np.random.Generator, n_devices: int) -> tuple[int, ...]:
    """Draw |S_k| = M blocks from {0, 1, ..., N} uniformly without replacement.

    Raises:
        ConfigError: If M exceeds N + 1.
    """
    if not 1 <= cfg.M <= n_devices + 1:
        raise ConfigError(f"M={cfg.M} must lie in [1, {n_devices + 1}]")
    return tuple(int(b) for b in np.sort(rng.choice(n_devices + 1, size=cfg.M, replace=False)))


def round_rng(cfg: FedConfig, k: int) -> np.random.Generator:
    """Sampling generator of round k, a pure function of (seed, k)."""
    return np.random.default_rng([cfg.seed, k])


def server_z_update(st: FedState, inst: FederatedInstance, cfg: FedConfig) -> np.ndarray:
    """z+ = (rho sum x_i + sum lam_i + eta0 z) / (rho N + eta0), with eta0 = 0 in the nonconvex variant."""
    eta0 = cfg.server_eta()
    denominator = cfg.rho * inst.n_devices + eta0
    if denominator <= 0:
        raise ConfigError("rho N + eta0 must be positive")
    return (cfg.rho * st.x.sum(axis=0) + st.lam.sum(axis=0) + eta0 * st.z) / denominator


def client_local_solve(
    i: int,
    st: FedState,
    inst: FederatedInstance,
    cfg: FedConfig,
    z: np.ndarray | None = None,
) -> np.ndarray:
    """Minimize f_i(x) + lam_i'(x - z) + (rho/2)||x - z||^2 + eta_i ||x - x_i||^2.

    Args:
        i: Device index in 1..N.
        st: State the round reads from.
        inst: Federated instance.
        cfg: Round parameters.
        z: Server value to use; defaults to st.z.

    Returns:
        New device variable; non-finite results fall back to x_i and the
        caller flags them.
    """
    if not 1 <= i <= inst.n_devices:
        raise DimensionError(f"Device index {i} outside 1..{inst.n_devices}")
    z = st.z if z is None else z
    f_i = inst.local(i)
    x_i, lam_i = st.x[i - 1], st.lam[i - 1]
    eta = cfg.device_eta(i, inst.n_devices)
    d = inst.dimension

    if cfg.local_solver.mode == "exact":
        # B(u, v) = ||u - v||^2 contributes 2 eta to the Hessian
        return f_i.argmin_shifted(lam_i - cfg.rho * z - 2.0 * eta * x_i, (cfg.rho + 2.0 * eta) * np.eye(d))

    step = cfg.local_solver.step_size or 1.0 / (f_i.ell + cfg.rho + 2.0 * eta)
    x = x_i.copy()
    for _ in range(cfg.local_solver.steps):
        x = x - step * (f_i.grad(x) + lam_i + cfg.rho * (x - z) + 2.0 * eta * (x - x_i))
    return x


def dual_update_all(
    st: FedState,
    cfg: FedConfig,
    x_new: np.ndarray,
    z_new: np.ndarray,
    sampled: Sequence[int],
) -> np.ndarray:
    """lam_i+ = lam_i + rho (x_i+ - z+) for every device (convex) or sampled devices (nonconvex)."""
    lam = st.lam + cfg.rho * (x_new - z_new)
    if cfg.variant == FedVariant.NONCONVEX:
        keep = np.ones(st.lam.shape[0], dtype=bool)
        keep[[b - 1 for b in sampled if b >= 1]] = False
        lam[keep] = st.lam[keep]
    return lam


def federated_round(
    st: FedState,
    inst: FederatedInstance,
    cfg: FedConfig,
    executor: ThreadPoolExecutor | None = None,
) -> FedState:
    """One round: sample, server update, device solves, dual updates.

    Devices read the frozen round state and results are committed in
    index order, so the outcome does not depend on the executor.
    """
    sampled = sample_blocks(cfg, round_rng(cfg, st.k), inst.n_devices)
    z_next = server_z_update(st, inst, cfg) if 0 in sampled else st.z
    uses_new_z = cfg.variant == FedVariant.NONCONVEX or cfg.z_refresh == ZRefresh.POST_UPDATE
    z_devices = z_next if uses_new_z else st.z

    devices = [b for b in sampled if b >= 1]

    def solve(i: int) -> np.ndarray:
        return client_local_solve(i, st, inst, cfg, z_devices)

    results = list(executor.map(solve, devices)) if executor else [solve(i) for i in devices]

    x_next = st.x.copy()
    flags = st.flags
    for i, x_i in zip(devices, results):
        if np.all(np.isfinite(x_i)):
            x_next[i - 1] = x_i
        else:
            logger.warning(f"Device {i} local solve returned non-finite values in round {st.k}")
            flags = flags | {TraceFlag.LOCAL_SOLVE_FAILED.value}

    lam_next = dual_update_all(st, cfg, x_next, z_next, sampled)
    return FedState(z=z_next, x=x_next, lam=lam_next, k=st.k + 1, sampled=sampled, flags=flags)


def iterate_federated(
    inst: FederatedInstance,
    cfg: FedConfig,
    z0: np.ndarray | None = None,
) -> Iterator[FedState]:
    """Yield the committed state after each of cfg.T rounds."""
    state = initial_fed_state(inst, z0)
    workers = get_settings().worker_count(cfg.M)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        for _ in range(cfg.T):
            state = federated_round(state, inst, cfg, executor if workers > 1 else None)
            yield state


def run_federated(
    inst: FederatedInstance,
    cfg: FedConfig,
    f_star: float,
    z0: np.ndarray | None = None,
) -> Trace:
    """Run cfg.T rounds and record gap, feasibility and message counts.

    Args:
        inst: Federated instance.
        cfg: Round parameters.
        f_star: Optimal value of sum_i p_i F_i.
        z0: Common starting point.

    Returns:
        Trace with FEDERATED_COLUMNS.
    """
    logger.info(
        f"Starting federated run: N={inst.n_devices}, M={cfg.M}, T={cfg.T}, "
        f"variant={cfg.variant.value}, z_refresh={cfg.z_refresh.value}"
    )
    if below_bregman_floor(inst, cfg):
        floor0, floor_i = bregman_floor(inst, cfg.M, cfg.rho)
        logger.warning(
            f"Bregman weights below the partial-participation floor (eta0 >= {floor0:.3g}, "
            f"eta_i >= {float(floor_i.max()):.3g}); the run may diverge"
        )
    trace = Trace(columns=FEDERATED_COLUMNS)
    state = initial_fed_state(inst, z0)
    _record_round(trace, inst, state, f_star, participants=0, devices=0)
    for state in iterate_federated(inst, cfg, z0):
        devices = sum(1 for b in state.sampled if b >= 1)
        _record_round(trace, inst, state, f_star, participants=len(state.sampled), devices=devices)
    trace.merge_flags(state.flags)
    trace.metadata.update({"algorithm": "pdmm", "z": state.z.tolist(), "eta0": cfg.server_eta()})
    logger.info(f"Finished federated run, final gap {trace.last('gap'):.3e}")
    return trace


def run_fedprox_baseline(
    inst: FederatedInstance,
    cfg: FedConfig,
    f_star: float,
    z0: np.ndarray | None = None,
) -> Trace:
    """FedProx-style baseline with the same sampling and no duals.

    Sampled devices minimize F_i(x) + (rho/2)||x - z||^2 from the current
    server value; the server then averages the participating x_i.
    """
    logger.info(f"Starting FedProx baseline: N={inst.n_devices}, M={cfg.M}, T={cfg.T}")
    trace = Trace(columns=FEDERATED_COLUMNS)
    state = initial_fed_state(inst, z0)
    d = inst.dimension
    _record_round(trace, inst, state, f_star, participants=0, devices=0)
    for k in range(cfg.T):
        sampled = sample_blocks(cfg, round_rng(cfg, k), inst.n_devices)
        devices = [b for b in sampled if b >= 1]
        x_next = state.x.copy()
        for i in devices:
            device = inst.devices[i - 1]
            if cfg.local_solver.mode == "exact":
                x_next[i - 1] = device.argmin_shifted(-cfg.rho * state.z, cfg.rho * np.eye(d))
            else:
                step = cfg.local_solver.step_size or 1.0 / (device.ell + cfg.rho)
                x = state.x[i - 1].copy()
                for _ in range(cfg.local_solver.steps):
                    x = x - step * (device.grad(x) + cfg.rho * (x - state.z))
                x_next[i - 1] = x
        z_next = x_next[[i - 1 for i in devices]].mean(axis=0) if devices else state.z
        state = replace(state, z=z_next, x=x_next, k=k + 1, sampled=sampled)
        _record_round(trace, inst, state, f_star, participants=len(sampled), devices=len(devices))
    trace.metadata.update({"algorithm": "fedprox", "z": state.z.tolist()})
    return trace


def _record_round(
    trace: Trace,
    inst: FederatedInstance,
    state: FedState,
    f_star: float,
    participants: int,
    devices: int,
) -> None:
    distances = np.linalg.norm(state.x - state.z, axis=1)
    trace.append(
        round=state.k,
        gap=inst.objective(state.z) - f_star,
        feas_residual=float(np.sum(distances**2)),
        spread=float(np.max(distances)),
        participants=participants,
        msgs_up=devices,
        msgs_down=2 * devices,
    )

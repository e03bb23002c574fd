"""State schema shared by solvers, simulators and the harness.

Defines the enums that name methods and experiment kinds, the fixed
trace column sets, and the Trace container every runner returns.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, TypedDict

import numpy as np

from state.errors import TraceSchemaError


class ExperimentKind(str, Enum):
    """Experiment kinds understood by the harness."""

    SADDLE = "saddle"
    CONSENSUS = "consensus"
    DYNAMICS = "dynamics"
    FEDERATED = "federated"
    ENERGY = "energy"
    CHECK = "check"


class SaddleMethod(str, Enum):
    """Steppers for linearly constrained problems."""

    ALM = "alm"
    INEXACT_ALM = "inexact_alm"
    PROX_POINT = "prox_point"
    AHU = "ahu"
    ADMM = "admm"
    JACOBI = "jacobi"
    PDMM = "pdmm"


class ConsensusMethod(str, Enum):
    """Decentralized consensus methods."""

    DISTRIBUTED_ALM = "distributed_alm"
    EXTRA = "extra"
    EXTRA_PD = "extra_pd"
    GRADIENT_TRACKING = "gradient_tracking"
    GRADIENT_TRACKING_PD = "gradient_tracking_pd"


class InnerMethod(str, Enum):
    """Inner solvers for inexact primal subproblems."""

    GRADIENT = "gradient"
    NESTEROV = "nesterov"


class TraceFlag(str, Enum):
    """Warnings a run records instead of raising."""

    INNER_TOLERANCE_UNMET = "inner_tolerance_unmet"
    DIVERGED = "diverged"
    OSCILLATION = "oscillation"
    TRADE_CAP_ACTIVE = "trade_cap_active"
    LOCAL_SOLVE_FAILED = "local_solve_failed"


# Column sets, one per runner
SADDLE_COLUMNS: tuple[str, ...] = (
    "k",
    "objective",
    "primal_residual",
    "dual_residual",
    "kkt_residual",
    "dual_value",
    "inner_iters",
)
CONSENSUS_COLUMNS: tuple[str, ...] = (
    "k",
    "consensus_error",
    "kkt_residual",
    "objective_gap",
    "rounds",
    "grad_evals",
)
FLOW_COLUMNS: tuple[str, ...] = (
    "t",
    "V",
    "V_dot",
    "consensus_residual",
    "stationarity_residual",
)
FEDERATED_COLUMNS: tuple[str, ...] = (
    "round",
    "gap",
    "feas_residual",
    "spread",
    "participants",
    "msgs_up",
    "msgs_down",
)
ENERGY_COLUMNS: tuple[str, ...] = (
    "k",
    "max_residual",
    "residual_norm",
    "objective",
    "price_norm",
    "inner_iters",
    "msgs",
)


class ConsensusMetrics(TypedDict):
    """Distance of a consensus state from the reference optimum.

    Attributes:
        consensus_error: Largest distance of an agent from the agent mean.
        kkt_residual: Residual of the Laplacian-constrained KKT system.
        objective_gap: Sum of objectives at the agent mean minus the optimum.
    """

    consensus_error: float
    kkt_residual: float
    objective_gap: float


class PeerAllocation(TypedDict):
    """Final trading position of one peer.

    Attributes:
        eps: Energy offered for sale.
        sales: Energy delivered to each buyer, keyed by buyer index.
        price: Final dual price.
    """

    eps: float
    sales: dict[str, float]
    price: float


@dataclass
class Trace:
    """Per-iteration metric rows with a fixed column set.

    The first column is the iteration index (k, t or round) and must be
    nondecreasing across rows.

    Attributes:
        columns: Declared column names.
        rows: One tuple of floats per recorded iteration.
        metadata: Run metadata (config hash, seed, versions, extras).
        flags: Warning flags raised during the run.
    """

    columns: tuple[str, ...]
    rows: list[tuple[float, ...]] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)
    flags: set[str] = field(default_factory=set)

    def append(self, **values: float) -> None:
        """Append one row.

        Args:
            **values: Value per declared column.

        Raises:
            TraceSchemaError: If the keys differ from the declared columns
                or the index column would decrease.
        """
        if set(values) != set(self.columns):
            missing = sorted(set(self.columns) - set(values))
            extra = sorted(set(values) - set(self.columns))
            raise TraceSchemaError(
                f"Row does not match columns: missing={missing}, unexpected={extra}"
            )
        row = tuple(float(values[name]) for name in self.columns)
        if self.rows and row[0] < self.rows[-1][0]:
            raise TraceSchemaError(
                f"Index column '{self.columns[0]}' decreased: {self.rows[-1][0]} -> {row[0]}"
            )
        self.rows.append(row)

    def add_flag(self, flag: TraceFlag | str) -> None:
        """Record a warning flag."""
        self.flags.add(flag.value if isinstance(flag, TraceFlag) else flag)

    def merge_flags(self, flags: frozenset[str] | set[str]) -> None:
        """Record every flag of a solver state."""
        self.flags.update(flags)

    def column(self, name: str) -> np.ndarray:
        """Values of one column as an array."""
        if name not in self.columns:
            raise TraceSchemaError(f"Unknown column '{name}'")
        index = self.columns.index(name)
        return np.array([row[index] for row in self.rows], dtype=float)

    def last(self, name: str) -> float:
        """Value of a column in the last row."""
        if not self.rows:
            raise TraceSchemaError("Trace has no rows")
        return self.rows[-1][self.columns.index(name)]

    @property
    def flagged(self) -> bool:
        """Whether any warning flag was raised."""
        return bool(self.flags)

    def __len__(self) -> int:
        return len(self.rows)

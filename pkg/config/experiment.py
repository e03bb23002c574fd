"""Experiment documents.

An experiment is one JSON document whose ``kind`` selects the runner.
Documents are validated by the pydantic models below before anything
runs; the validated model is what gets hashed into trace metadata.
"""

import hashlib
import json
from pathlib import Path
from typing import Annotated, Any, Literal, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, model_validator

from simulators.energy import TradingConfig
from simulators.federated import FedVariant, LocalSolverConfig, ZRefresh
from solvers.saddle import PdmmConfig
from state.errors import ConfigError
from state.schema import ConsensusMethod, SaddleMethod
from tools.inner_solvers import InexactConfig

_Seeded = TypeVar("_Seeded", bound=BaseModel)


class OracleSpec(BaseModel):
    """Oracle description; kind-specific fields pass through unchanged."""

    model_config = ConfigDict(extra="allow")

    kind: Literal["quadratic", "linear", "logistic", "pwlq", "quadratic_sine"]


class TopologySpec(BaseModel):
    """Explicit edge list or a named generator."""

    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    generator: Literal["path", "ring", "star", "complete", "erdos_renyi"] | None = None
    edges: list[tuple[int, int]] = Field(default_factory=list)
    p: float = Field(default=0.5, ge=0, le=1)
    seed: int = 0


class ExperimentBase(BaseModel):
    """Fields shared by every experiment kind."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="run", pattern=r"^[A-Za-z0-9_.-]+$")
    seed: int = 0


def _seeded(model: _Seeded, seed: int) -> _Seeded:
    """Nested config carrying the experiment seed unless it sets its own."""
    if "seed" in model.model_fields_set:
        return model
    return model.model_copy(update={"seed": seed})


class SaddleBlockSpec(BaseModel):
    """One objective block and its constraint matrix."""

    model_config = ConfigDict(extra="forbid")

    oracle: OracleSpec
    A: list[list[float]]


class SaddleExperiment(ExperimentBase):
    """Linearly constrained problem solved by one saddle-point method."""

    kind: Literal["saddle"] = "saddle"
    blocks: list[SaddleBlockSpec] = Field(min_length=1)
    rho: float = Field(default=1.0, ge=0)
    method: SaddleMethod = SaddleMethod.ALM
    max_iters: int = Field(default=1000, ge=0)
    tol: float = Field(default=1e-8, gt=0)
    alpha: float | None = Field(default=None, ge=0)
    pdmm: PdmmConfig = Field(default_factory=PdmmConfig)
    inexact: InexactConfig = Field(default_factory=InexactConfig)

    @model_validator(mode="after")
    def _pdmm_seed(self) -> "SaddleExperiment":
        self.pdmm = _seeded(self.pdmm, self.seed)
        return self


class ConsensusExperiment(ExperimentBase):
    """Agents on a graph running one consensus method (or a native/primal-dual pair)."""

    kind: Literal["consensus"] = "consensus"
    topology: TopologySpec
    agents: list[OracleSpec] = Field(min_length=1)
    rho: float = Field(default=1.0, gt=0)
    alpha: float | None = Field(default=None, gt=0)
    method: ConsensusMethod = ConsensusMethod.EXTRA
    equivalence: bool = False
    max_iters: int = Field(default=1000, ge=0)
    tol: float = Field(default=1e-8, gt=0)
    inner: InexactConfig = Field(default_factory=InexactConfig)

    @model_validator(mode="after")
    def _native_for_equivalence(self) -> "ConsensusExperiment":
        if self.equivalence and self.method not in (ConsensusMethod.EXTRA, ConsensusMethod.GRADIENT_TRACKING):
            raise ValueError("equivalence mode needs method extra or gradient_tracking")
        return self

    @model_validator(mode="after")
    def _topology_seed(self) -> "ConsensusExperiment":
        self.topology = _seeded(self.topology, self.seed)
        return self


class DynamicsExperiment(ExperimentBase):
    """Euler integration of the primal-dual flow with the Lyapunov monitor."""

    kind: Literal["dynamics"] = "dynamics"
    topology: TopologySpec
    agents: list[OracleSpec] = Field(min_length=1)
    h: float | None = Field(default=None, gt=0)
    steps: int = Field(default=10_000, ge=0)

    @model_validator(mode="after")
    def _topology_seed(self) -> "DynamicsExperiment":
        self.topology = _seeded(self.topology, self.seed)
        return self


class FederatedExperiment(ExperimentBase):
    """Federated devices trained by the PDMM simulator (optionally with the FedProx baseline)."""

    kind: Literal["federated"] = "federated"
    devices: list[OracleSpec] = Field(min_length=1)
    weights: list[float] | None = None
    rho: float = Field(default=1.0, gt=0)
    eta0: float = Field(default=0.0, ge=0)
    eta_i: float | list[float] = 0.0
    M: int = Field(default=1, ge=1)
    T: int = Field(default=100, ge=0)
    local_solver: LocalSolverConfig = Field(default_factory=LocalSolverConfig)
    variant: FedVariant = FedVariant.CONVEX
    z_refresh: ZRefresh = ZRefresh.POST_UPDATE
    auto_bregman: bool = True
    baseline: bool = False

    @property
    def N(self) -> int:
        return len(self.devices)


class PeerSpec(BaseModel):
    """Consumption and generation cost of one peer."""

    model_config = ConfigDict(extra="forbid")

    consumption: float = Field(ge=0)
    cost: OracleSpec


class ArcSpec(BaseModel):
    """Trading edge; the transfer cost applies in both directions."""

    model_config = ConfigDict(extra="forbid")

    edge: tuple[int, int]
    gamma: OracleSpec


class EnergyExperiment(ExperimentBase):
    """Peer-to-peer market cleared by dual decomposition or inexact ALM."""

    kind: Literal["energy"] = "energy"
    peers: list[PeerSpec] = Field(min_length=1)
    arcs: list[ArcSpec] = Field(default_factory=list)
    trading: TradingConfig = Field(default_factory=TradingConfig)


class CheckExperiment(ExperimentBase):
    """Invariant-suite run."""

    kind: Literal["check"] = "check"
    filter: str | None = None


ExperimentConfig = Annotated[
    Union[
        SaddleExperiment,
        ConsensusExperiment,
        DynamicsExperiment,
        FederatedExperiment,
        EnergyExperiment,
        CheckExperiment,
    ],
    Field(discriminator="kind"),
]

_ADAPTER: TypeAdapter[Any] = TypeAdapter(ExperimentConfig)


def parse_experiment(document: dict[str, Any], seed: int | None = None) -> ExperimentBase:
    """Validate a decoded document, applying a seed override first.

    Raises:
        ConfigError: With the pydantic message when validation fails.
    """
    if seed is not None:
        document = {**document, "seed": seed}
        for key in ("pdmm", "topology"):
            if isinstance(document.get(key), dict):
                document[key] = {**document[key], "seed": seed}
    try:
        return _ADAPTER.validate_python(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config: {e}") from e


def load_experiment(path: Path | str, seed: int | None = None) -> ExperimentBase:
    """Read and validate an experiment JSON file.

    Args:
        path: JSON document.
        seed: Seed override from the command line.

    Returns:
        Validated experiment model.

    Raises:
        ConfigError: If the file is unreadable, not JSON or invalid.
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"Cannot read experiment config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Experiment config {path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"Experiment config {path} must be a JSON object")
    return parse_experiment(document, seed)


def config_hash(cfg: ExperimentBase) -> str:
    """SHA-256 of the canonical JSON form of a validated config."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def experiment_schema() -> str:
    """JSON schema of ExperimentConfig, sorted and indented."""
    return json.dumps(_ADAPTER.json_schema(), indent=2, sort_keys=True)

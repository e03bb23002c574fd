"""Shared records and errors.

Schemas:
    - Trace: Per-iteration metric rows with a fixed column set
    - ExperimentKind, SaddleMethod, ConsensusMethod: Run selectors
    - TraceFlag: Warnings recorded instead of raised
"""

from state.errors import (
    CapabilityError,
    ConfigError,
    DimensionError,
    DivergenceError,
    PdtoolError,
    ReferenceSolveError,
    TopologyError,
    TraceSchemaError,
)
from state.schema import (
    ConsensusMethod,
    ExperimentKind,
    InnerMethod,
    SaddleMethod,
    Trace,
    TraceFlag,
)

__all__ = [
    "CapabilityError",
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "PdtoolError",
    "ReferenceSolveError",
    "TopologyError",
    "TraceSchemaError",
    "ConsensusMethod",
    "ExperimentKind",
    "InnerMethod",
    "SaddleMethod",
    "Trace",
    "TraceFlag",
]

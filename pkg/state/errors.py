"""Exception hierarchy shared by every package.

Conditions that the toolkit only *flags* (unmet inner tolerance,
divergence of a deliberately unstable scheme, oscillating prices) are
not exceptions; they travel as string flags on states and traces.
"""


class PdtoolError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(PdtoolError, ValueError):
    """Array shapes do not match the problem they are used with."""


class TopologyError(PdtoolError, ValueError):
    """Invalid graph description or a graph unusable for the request."""


class CapabilityError(PdtoolError):
    """An oracle or problem lacks the capability an operation needs."""


class ConfigError(PdtoolError):
    """Experiment configuration failed validation."""


class DivergenceError(PdtoolError):
    """Iterates left the finite range where a run is meaningful."""


class ReferenceSolveError(PdtoolError):
    """A reference solution could not be computed to the required accuracy."""


class TraceSchemaError(PdtoolError):
    """A trace row does not match the declared column set."""

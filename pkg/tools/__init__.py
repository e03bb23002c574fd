"""Numerical building blocks.

Tools:
    - topology: Graphs, Metropolis weights and spectral gaps
    - oracle: Function oracles with gradients, proximal maps and exact minimizers
    - inner_solvers: Gradient and Nesterov loops for inexact subproblems
    - projection: Box, halfspace and Dykstra projections, active-set QP
"""

from tools.inner_solvers import InexactConfig, ToleranceSchedule, minimize_inner
from tools.oracle import FunctionOracle, certify_constants, oracle_from_config
from tools.projection import BoxHalfspace, active_set_qp, dykstra_projection
from tools.topology import Topology, WeightMatrix, build_topology, metropolis_weights, spectral_gap

__all__ = [
    "InexactConfig",
    "ToleranceSchedule",
    "minimize_inner",
    "FunctionOracle",
    "certify_constants",
    "oracle_from_config",
    "BoxHalfspace",
    "active_set_qp",
    "dykstra_projection",
    "Topology",
    "WeightMatrix",
    "build_topology",
    "metropolis_weights",
    "spectral_gap",
]

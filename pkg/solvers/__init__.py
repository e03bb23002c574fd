"""Primal-dual solvers.

Modules:
    - saddle: ALM, proximal point, AHU, ADMM, Jacobi and PDMM steppers
    - consensus: Distributed ALM, EXTRA and gradient tracking over graphs
    - dynamics: Continuous-time primal-dual flow with a Lyapunov monitor
"""

from solvers.consensus import ConsensusProblem, build_consensus_problem, run_consensus, run_equivalence
from solvers.dynamics import FlowOptimum, FlowState, LyapunovReport, euler_flow
from solvers.saddle import PdmmConfig, ProblemSpec, SolverState, make_problem, run_saddle

__all__ = [
    "ConsensusProblem",
    "build_consensus_problem",
    "run_consensus",
    "run_equivalence",
    "FlowOptimum",
    "FlowState",
    "LyapunovReport",
    "euler_flow",
    "PdmmConfig",
    "ProblemSpec",
    "SolverState",
    "make_problem",
    "run_saddle",
]

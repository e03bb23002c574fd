"""Harness services: instances, references, persistence and checks.

Modules:
- instances: Seeded benchmark instance generators
- reference: Centralized reference solutions for every problem type
- trace_store: Atomic CSV/JSON trace persistence
- checks: Invariant gates behind `pdtool check`
"""

from services.checks import CheckReport, GateResult, run_checks
from services.reference import ReferenceSolution, reference_solve
from services.trace_store import read_trace, write_json, write_trace

__all__ = [
    "CheckReport",
    "GateResult",
    "ReferenceSolution",
    "read_trace",
    "reference_solve",
    "run_checks",
    "write_json",
    "write_trace",
]

"""Pytest configuration and shared fixtures for test suite.

Provides seeded benchmark instances, a clean settings cache and small
experiment documents used across test modules.
"""

from collections.abc import Generator
from typing import Any

import numpy as np
import pytest

from config.settings import get_settings
from services.instances import (
    energy_two_peer_quadratic,
    jacobi_witness_instance,
    random_saddle_instance,
    standard_consensus_instances,
    two_agent_consensus,
)
from simulators.energy import EnergyNetwork
from solvers.consensus import ConsensusProblem
from solvers.saddle import ProblemSpec
from tools.topology import Topology, path_graph, ring_graph


# =============================================================================
# Settings Fixtures
# =============================================================================

@pytest.fixture(autouse=True)
def clean_settings(monkeypatch: pytest.MonkeyPatch) -> Generator[None, None, None]:
    """Run every test with default settings and no log file.

    Yields:
        None; the settings cache is cleared before and after the test.
    """
    monkeypatch.setenv("LOG_TO_FILE", "false")
    monkeypatch.delenv("PDTOOL_THREADS", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


# =============================================================================
# Topology Fixtures
# =============================================================================

@pytest.fixture
def ring6() -> Topology:
    """Create a six-node ring."""
    return ring_graph(6)


@pytest.fixture
def path4() -> Topology:
    """Create a four-node path."""
    return path_graph(4)


# =============================================================================
# Problem Fixtures
# =============================================================================

@pytest.fixture
def saddle_problem() -> ProblemSpec:
    """Create a two-block strictly convex quadratic problem.

    Returns:
        ProblemSpec with 3-dimensional blocks and 2 coupling rows.
    """
    return random_saddle_instance(seed=0, n_blocks=2, block_dim=3, m=2)


@pytest.fixture
def jacobi_witness() -> ProblemSpec:
    """Create the instance on which Jacobi diverges and PDMM converges."""
    return jacobi_witness_instance()


@pytest.fixture
def consensus_problem() -> ConsensusProblem:
    """Create the complete4 benchmark with alpha * rho = 1."""
    return standard_consensus_instances()[0].problem()


@pytest.fixture
def two_agent_problem() -> ConsensusProblem:
    """Create the two-agent problem with optimum 0 and a safe step."""
    return two_agent_consensus().problem(rho=1.0, alpha=None, coupled=False)


@pytest.fixture
def two_peer_market() -> EnergyNetwork:
    """Create a cheap and an expensive quadratic producer on one edge."""
    return energy_two_peer_quadratic()


# =============================================================================
# Experiment Document Fixtures
# =============================================================================

@pytest.fixture
def quadratic_spec() -> dict[str, Any]:
    """Oracle document for f(x) = ||x||^2/2 - x_1 in two dimensions."""
    return {"kind": "quadratic", "Q": [[1.0, 0.0], [0.0, 1.0]], "q": [-1.0, 0.0]}


@pytest.fixture
def consensus_document() -> dict[str, Any]:
    """Consensus experiment on a three-node path with scalar quadratics."""
    return {
        "kind": "consensus",
        "name": "path3",
        "topology": {"n": 3, "generator": "path"},
        "agents": [
            {"kind": "quadratic", "Q": [[1.0]], "q": [-1.0]},
            {"kind": "quadratic", "Q": [[2.0]], "q": [0.0]},
            {"kind": "quadratic", "Q": [[1.0]], "q": [2.0]},
        ],
        "rho": 1.0,
        "method": "extra",
        "max_iters": 200,
        "tol": 1e-9,
    }


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator."""
    return np.random.default_rng(0)

"""Communication and trading topologies.

Builds validated undirected graphs, Metropolis weight matrices and the
spectral quantities derived from them. Graphs are desk scale, so every
matrix is dense.
"""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import networkx as nx
import numpy as np

from config.logging_config import get_logger
from state.errors import TopologyError


logger = get_logger(__name__)

# Symmetry and stochasticity tolerance for weight matrices
WEIGHT_TOLERANCE = 1e-12

GENERATORS = ("path", "ring", "star", "complete", "erdos_renyi")


@dataclass(frozen=True, eq=False)
class Topology:
    """Undirected graph without self-loops.

    Attributes:
        n_nodes: Number of nodes.
        edges: Normalized edges (i < j), sorted.
        neighbors: Sorted neighbor tuple per node.
        connected: Whether the graph is connected.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...]
    connected: bool

    def degree(self, i: int) -> int:
        """Number of neighbors of node i."""
        return len(self.neighbors[i])

    def has_edge(self, i: int, j: int) -> bool:
        """Whether i and j are adjacent."""
        return j in self.neighbors[i]

    @cached_property
    def arcs(self) -> tuple[tuple[int, int], ...]:
        """Both orientations of every edge, sorted."""
        return tuple(sorted([(i, j) for i, j in self.edges] + [(j, i) for i, j in self.edges]))

    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def to_networkx(self) -> nx.Graph:
        """Equivalent networkx graph."""
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_nodes))
        graph.add_edges_from(self.edges)
        return graph


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Symmetric doubly stochastic mixing matrix.

    Attributes:
        matrix: Dense n x n matrix W.
        gap: Spectral gap of W.
    """

    matrix: np.ndarray

    @cached_property
    def laplacian(self) -> np.ndarray:
        """L = I - W."""
        return np.eye(self.matrix.shape[0]) - self.matrix

    @cached_property
    def gap(self) -> float:
        return spectral_gap(self.matrix)

    @cached_property
    def lambda_max_laplacian(self) -> float:
        """Largest eigenvalue of L."""
        return float(np.linalg.eigvalsh(self.laplacian)[-1])

    @property
    def n_nodes(self) -> int:
        return int(self.matrix.shape[0])


def build_topology(n: int, edges: Iterable[Sequence[int]]) -> Topology:
    """Validate an edge list and record connectivity.

    Args:
        n: Number of nodes.
        edges: Unordered node pairs.

    Returns:
        Validated Topology.

    Raises:
        TopologyError: On non-positive n, self-loops, out-of-range
            indices or duplicate edges.
    """
    if n < 1:
        raise TopologyError(f"Topology needs at least one node, got n={n}")

    normalized: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for edge in edges:
        if len(edge) != 2:
            raise TopologyError(f"Edge {tuple(edge)} is not a pair")
        i, j = int(edge[0]), int(edge[1])
        if not (0 <= i < n and 0 <= j < n):
            raise TopologyError(f"Edge ({i}, {j}) has an index outside [0, {n - 1}]")
        if i == j:
            raise TopologyError(f"Self-loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise TopologyError(f"Duplicate edge {key}")
        seen.add(key)
        normalized.append(key)

    normalized.sort()
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for i, j in normalized:
        adjacency[i].append(j)
        adjacency[j].append(i)

    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    graph.add_edges_from(normalized)
    connected = nx.is_connected(graph)

    topology = Topology(
        n_nodes=n,
        edges=tuple(normalized),
        neighbors=tuple(tuple(sorted(a)) for a in adjacency),
        connected=connected,
    )
    logger.debug(f"Built topology n={n}, edges={len(normalized)}, connected={connected}")
    return topology


def metropolis_weights(t: Topology) -> WeightMatrix:
    """Metropolis-Hastings weights w_ij = 1/(1 + max(d_i, d_j)).

    Args:
        t: Connected topology.

    Returns:
        Doubly stochastic WeightMatrix with the topology's sparsity.

    Raises:
        TopologyError: If the topology is disconnected.
    """
    if not t.connected:
        raise TopologyError("Metropolis weights need a connected topology (spectral gap would be 0)")

    w = np.zeros((t.n_nodes, t.n_nodes))
    for i, j in t.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(t.degree(i), t.degree(j)))
    for i in range(t.n_nodes):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    return WeightMatrix(matrix=w)


def spectral_gap(w: WeightMatrix | np.ndarray) -> float:
    """Spectral gap 1 - max |lambda_i(W)| over non-principal eigenvalues.

    Args:
        w: Symmetric doubly stochastic matrix.

    Returns:
        Gap in [0, 1]; 1 for a single node.

    Raises:
        TopologyError: If the matrix is not square, symmetric or doubly
            stochastic.
    """
    matrix = w.matrix if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise TopologyError(f"Weight matrix must be square, got shape {matrix.shape}")
    if np.max(np.abs(matrix - matrix.T)) > WEIGHT_TOLERANCE:
        raise TopologyError("Weight matrix is not symmetric")
    if np.max(np.abs(matrix.sum(axis=1) - 1.0)) > WEIGHT_TOLERANCE:
        raise TopologyError("Weight matrix rows do not sum to 1")
    if matrix.shape[0] == 1:
        return 1.0

    eigenvalues = np.linalg.eigvalsh(matrix)
    # The principal eigenvalue is the one belonging to the all-ones vector
    principal = int(np.argmin(np.abs(eigenvalues - 1.0)))
    others = np.delete(eigenvalues, principal)
    gap = 1.0 - float(np.max(np.abs(others)))
    return min(1.0, max(0.0, gap))


def masked_product(w: WeightMatrix, x: np.ndarray, t: Topology) -> np.ndarray:
    """Multiply by W after zeroing every entry outside the neighbor pattern.

    Args:
        w: Weight matrix.
        x: Agent-stacked array, one row per node.
        t: Topology that defines which entries a node may read.

    Returns:
        Masked product; equals W @ x for weights compatible with t.
    """
    mask = t.adjacency() + np.eye(t.n_nodes)
    return (w.matrix * mask) @ x


def path_graph(n: int) -> Topology:
    """Path 0 - 1 - ... - (n-1)."""
    return _from_networkx(nx.path_graph(n), n)


def ring_graph(n: int) -> Topology:
    """Cycle on n >= 3 nodes."""
    if n < 3:
        raise TopologyError(f"A ring needs at least 3 nodes, got n={n}")
    return _from_networkx(nx.cycle_graph(n), n)


def star_graph(n: int) -> Topology:
    """Star with hub 0 and n - 1 leaves."""
    return _from_networkx(nx.star_graph(n - 1), n)


def complete_graph(n: int) -> Topology:
    """Complete graph on n nodes."""
    return _from_networkx(nx.complete_graph(n), n)


def erdos_renyi_graph(n: int, p: float, seed: int = 0) -> Topology:
    """G(n, p) random graph; connectivity is recorded, not enforced."""
    if not 0.0 <= p <= 1.0:
        raise TopologyError(f"Edge probability must lie in [0, 1], got {p}")
    return _from_networkx(nx.gnp_random_graph(n, p, seed=seed), n)


def topology_from_config(spec: dict[str, Any]) -> Topology:
    """Build a topology from its config description.

    Either ``{"n": int, "edges": [[i, j], ...]}`` or a named generator
    ``{"generator": "ring", "n": int}`` (``erdos_renyi`` also takes ``p``
    and ``seed``).

    Args:
        spec: Topology description.

    Returns:
        Validated Topology.
    """
    n = int(spec["n"])
    generator = spec.get("generator")
    if generator is None:
        return build_topology(n, spec.get("edges", []))
    if generator == "path":
        return path_graph(n)
    if generator == "ring":
        return ring_graph(n)
    if generator == "star":
        return star_graph(n)
    if generator == "complete":
        return complete_graph(n)
    if generator == "erdos_renyi":
        return erdos_renyi_graph(n, float(spec.get("p", 0.5)), int(spec.get("seed", 0)))
    raise TopologyError(f"Unknown topology generator '{generator}', expected one of {GENERATORS}")


def _from_networkx(graph: nx.Graph, n: int) -> Topology:
    if n < 1:
        raise TopologyError(f"Topology needs at least one node, got n={n}")
    return build_topology(n, list(graph.edges()))

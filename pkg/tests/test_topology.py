"""Tests for topologies and Metropolis weights."""

import networkx as nx
import numpy as np
import pytest

from state.errors import TopologyError
from tools.topology import (
    Topology,
    build_topology,
    complete_graph,
    erdos_renyi_graph,
    masked_product,
    metropolis_weights,
    path_graph,
    ring_graph,
    spectral_gap,
    star_graph,
    topology_from_config,
)


class TestBuildTopology:
    """Tests for edge-list validation."""

    def test_edges_normalized_and_sorted(self) -> None:
        """Test edges are stored as sorted (i < j) pairs."""
        t = build_topology(3, [(2, 1), (0, 1)])
        assert t.edges == ((0, 1), (1, 2))
        assert t.neighbors == ((1,), (0, 2), (1,))
        assert t.connected is True

    def test_arcs_cover_both_orientations(self) -> None:
        """Test arcs list every edge in both directions."""
        t = build_topology(3, [(0, 1), (1, 2)])
        assert t.arcs == ((0, 1), (1, 0), (1, 2), (2, 1))

    def test_disconnected_recorded(self) -> None:
        """Test connectivity is recorded, not enforced."""
        assert build_topology(4, [(0, 1), (2, 3)]).connected is False

    @pytest.mark.parametrize(
        "edges, message",
        [
            ([(0, 0)], "Self-loop"),
            ([(0, 1), (1, 0)], "Duplicate"),
            ([(0, 3)], "outside"),
            ([(0, 1, 2)], "not a pair"),
        ],
    )
    def test_invalid_edges(self, edges: list, message: str) -> None:
        """Test malformed edge lists raise TopologyError."""
        with pytest.raises(TopologyError, match=message):
            build_topology(3, edges)

    def test_needs_a_node(self) -> None:
        """Test n = 0 is rejected."""
        with pytest.raises(TopologyError):
            build_topology(0, [])

    def test_networkx_round_trip(self, ring6: Topology) -> None:
        """Test the networkx view has the same structure."""
        graph = ring6.to_networkx()
        assert graph.number_of_nodes() == 6
        assert nx.is_isomorphic(graph, nx.cycle_graph(6))


class TestGenerators:
    """Tests for named graph generators."""

    def test_star(self) -> None:
        """Test the hub is adjacent to every leaf."""
        t = star_graph(5)
        assert t.degree(0) == 4
        assert all(t.degree(i) == 1 for i in range(1, 5))

    def test_ring_needs_three_nodes(self) -> None:
        """Test rings on fewer than three nodes are rejected."""
        with pytest.raises(TopologyError):
            ring_graph(2)

    def test_erdos_renyi_extremes(self) -> None:
        """Test p = 1 gives the complete graph and p = 0 no edges."""
        assert len(erdos_renyi_graph(5, 1.0).edges) == 10
        assert erdos_renyi_graph(5, 0.0).connected is False

    def test_erdos_renyi_reproducible(self) -> None:
        """Test the same seed gives the same graph."""
        assert erdos_renyi_graph(8, 0.4, seed=3).edges == erdos_renyi_graph(8, 0.4, seed=3).edges

    def test_erdos_renyi_bad_probability(self) -> None:
        """Test probabilities outside [0, 1] are rejected."""
        with pytest.raises(TopologyError):
            erdos_renyi_graph(4, 1.5)

    def test_from_config(self) -> None:
        """Test generator and edge-list descriptions."""
        assert topology_from_config({"n": 4, "generator": "path"}).edges == path_graph(4).edges
        assert topology_from_config({"n": 2, "edges": [[0, 1]]}).edges == ((0, 1),)
        with pytest.raises(TopologyError, match="Unknown topology generator"):
            topology_from_config({"n": 3, "generator": "torus"})


class TestMetropolisWeights:
    """Tests for Metropolis weights and the spectral gap."""

    def test_path_weights(self, path4: Topology) -> None:
        """Test w_ij = 1/(1 + max(d_i, d_j)) on a path."""
        W = metropolis_weights(path4).matrix
        expected = np.array(
            [
                [2 / 3, 1 / 3, 0, 0],
                [1 / 3, 1 / 3, 1 / 3, 0],
                [0, 1 / 3, 1 / 3, 1 / 3],
                [0, 0, 1 / 3, 2 / 3],
            ]
        )
        assert np.allclose(W, expected, atol=1e-15)

    @pytest.mark.parametrize("topology", [ring_graph(7), star_graph(6), complete_graph(4), path_graph(5)])
    def test_doubly_stochastic(self, topology: Topology) -> None:
        """Test symmetry, unit row sums and the graph's sparsity pattern."""
        W = metropolis_weights(topology).matrix
        assert np.max(np.abs(W - W.T)) <= 1e-12
        assert np.max(np.abs(W.sum(axis=1) - 1.0)) <= 1e-12
        off_graph = (topology.adjacency() + np.eye(topology.n_nodes)) == 0
        assert np.all(W[off_graph] == 0.0)

    def test_complete_graph_gap(self) -> None:
        """Test W = J/n on a complete graph, so the gap is 1."""
        weights = metropolis_weights(complete_graph(5))
        assert np.allclose(weights.matrix, np.full((5, 5), 0.2))
        assert weights.gap == pytest.approx(1.0)

    def test_gap_positive_on_connected_graphs(self, ring6: Topology) -> None:
        """Test connected graphs have a gap in (0, 1]."""
        gap = metropolis_weights(ring6).gap
        assert 0.0 < gap <= 1.0

    def test_laplacian_annihilates_consensus(self, ring6: Topology) -> None:
        """Test L 1 = 0 and lambda_max(L) <= 2."""
        weights = metropolis_weights(ring6)
        assert np.allclose(weights.laplacian @ np.ones(6), 0.0)
        assert 0.0 < weights.lambda_max_laplacian <= 2.0

    def test_disconnected_rejected(self) -> None:
        """Test weights on a disconnected graph raise."""
        with pytest.raises(TopologyError, match="connected"):
            metropolis_weights(build_topology(4, [(0, 1), (2, 3)]))

    def test_single_node(self) -> None:
        """Test a single node has W = [1] and gap 1."""
        weights = metropolis_weights(build_topology(1, []))
        assert weights.matrix.tolist() == [[1.0]]
        assert spectral_gap(weights) == 1.0

    def test_spectral_gap_validates(self) -> None:
        """Test non-symmetric or non-stochastic matrices are rejected."""
        with pytest.raises(TopologyError, match="symmetric"):
            spectral_gap(np.array([[0.5, 0.5], [0.4, 0.6]]))
        with pytest.raises(TopologyError, match="sum to 1"):
            spectral_gap(np.array([[0.5, 0.2], [0.2, 0.5]]))
        with pytest.raises(TopologyError, match="square"):
            spectral_gap(np.ones((2, 3)))


class TestMaskedProduct:
    """Tests for neighbor-local mixing."""

    def test_matches_dense_product(self, ring6: Topology, rng: np.random.Generator) -> None:
        """Test masking does not change W x for compatible weights."""
        weights = metropolis_weights(ring6)
        x = rng.standard_normal((6, 2))
        assert np.array_equal(masked_product(weights, x, ring6), weights.matrix @ x)

    def test_drops_non_neighbor_entries(self) -> None:
        """Test a dense matrix used on a path cannot read non-neighbors."""
        topology = path_graph(3)
        dense = metropolis_weights(complete_graph(3))
        x = np.array([[1.0], [0.0], [0.0]])
        # Node 2 is not adjacent to node 0, so it sees nothing of x_0
        assert masked_product(dense, x, topology)[2, 0] == 0.0

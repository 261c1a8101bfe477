"""Trading graph: canonical edge ordering and node-to-edge mapping matrices.

The community is an undirected connected graph.  Edges are ordered
lexicographically on (min id, max id); every serialized artifact uses that
order.  For node ``i`` the 0/1 mapping matrix ``M_i`` (|edges| x |neighbors|)
scatters the node's neighbor-trade vector into edge space, so that summing
``M_i @ e_i`` over all nodes stacks ``e_i_from_j + e_j_from_i`` per edge.
Its transpose gathers the edge-price vector back into neighbor order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

__all__ = ["Topology", "TopologyError", "build_mapping", "edge_price_slice"]


class TopologyError(ValueError):
    """Raised for graphs the trading layer cannot operate on."""


@dataclass(frozen=True)
class Topology:
    """Immutable trading graph with precomputed per-node mapping matrices."""

    nodes: Tuple[str, ...]
    edges: Tuple[Tuple[str, str], ...]
    neighbors: Dict[str, Tuple[str, ...]]
    mapping: Dict[str, np.ndarray]
    edge_index: Dict[Tuple[str, str], int]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, node: str) -> int:
        return len(self.neighbors[node])

    def edge_row(self, a: str, b: str) -> int:
        """Canonical edge-space row of the (a, b) link."""
        key = (a, b) if a <= b else (b, a)
        return self.edge_index[key]

    def incident_rows(self, node: str) -> np.ndarray:
        """Edge rows touching ``node``, ordered like its neighbor list."""
        return np.array([self.edge_row(node, j) for j in self.neighbors[node]], dtype=int)

    def stack_trades(self, trades: Dict[str, np.ndarray]) -> np.ndarray:
        """Sum of ``M_i @ e_i`` over nodes, one edge-space vector per slot.

        ``trades[i]`` holds node i's trade matrix shaped (n_neighbors, T);
        the result is shaped (T, n_edges) and vanishes exactly when every
        edge's two trade entries are antisymmetric.
        """
        horizons = {m.shape[1] for m in trades.values()}
        if len(horizons) > 1:
            raise ValueError("trade matrices must share a horizon")
        horizon = horizons.pop() if horizons else 0
        stacked = np.zeros((horizon, self.n_edges))
        for node, e in trades.items():
            rows = self.incident_rows(node)
            np.add.at(stacked.T, rows, e)
        return stacked


def build_mapping(nodes: Sequence[str], edges: Sequence[Tuple[str, str]]) -> Topology:
    """Validate the trading graph and construct all mapping matrices.

    Rejects self-loops, duplicate edges, edges naming unknown nodes and
    disconnected graphs, each with a specific diagnostic.
    """
    node_list = tuple(nodes)
    if len(set(node_list)) != len(node_list):
        raise TopologyError("duplicate node ids")
    node_set = set(node_list)

    canonical = []
    seen = set()
    for a, b in edges:
        if a == b:
            raise TopologyError(f"self-loop on node {a!r}")
        if a not in node_set or b not in node_set:
            raise TopologyError(f"edge ({a!r}, {b!r}) references an unknown node")
        key = (a, b) if a <= b else (b, a)
        if key in seen:
            raise TopologyError(f"duplicate edge {key!r}")
        seen.add(key)
        canonical.append(key)
    canonical.sort()

    adjacency: Dict[str, set] = {n: set() for n in node_list}
    for a, b in canonical:
        adjacency[a].add(b)
        adjacency[b].add(a)

    if node_list:
        frontier = [node_list[0]]
        reached = {node_list[0]}
        while frontier:
            current = frontier.pop()
            for nxt in adjacency[current]:
                if nxt not in reached:
                    reached.add(nxt)
                    frontier.append(nxt)
        if reached != node_set:
            missing = sorted(node_set - reached)
            raise TopologyError(f"graph is disconnected; unreachable nodes: {missing}")

    edge_index = {e: k for k, e in enumerate(canonical)}
    neighbors = {n: tuple(sorted(adjacency[n])) for n in node_list}

    mapping = {}
    n_edges = len(canonical)
    for node in node_list:
        m = np.zeros((n_edges, len(neighbors[node])))
        for col, other in enumerate(neighbors[node]):
            key = (node, other) if node <= other else (other, node)
            m[edge_index[key], col] = 1.0
        m.flags.writeable = False
        mapping[node] = m

    return Topology(
        nodes=node_list,
        edges=tuple(canonical),
        neighbors=neighbors,
        mapping=mapping,
        edge_index=edge_index,
    )


def edge_price_slice(topology: Topology, node: str, prices: np.ndarray) -> np.ndarray:
    """Gather the edge prices incident to ``node`` in neighbor order.

    ``prices`` may be a single edge-space vector or a (T, n_edges) stack;
    the entry for neighbor j is the price at edge (node, j).
    """
    prices = np.asarray(prices, dtype=float)
    if prices.shape[-1] != topology.n_edges:
        raise ValueError(
            f"price vector has {prices.shape[-1]} entries, expected {topology.n_edges}"
        )
    return prices[..., topology.incident_rows(node)]

"""Node replication with label adjustment, and reordering into category blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, split_homo_hetero


@dataclass(frozen=True)
class ReplicationResult:
    modified_graph: Graph
    replica_of: dict[int, int]
    new_label: dict[int, int]

    @property
    def num_replicas(self) -> int:
        return len(self.replica_of)


def qualifies_for_replication(g: Graph, v: int) -> int | None:
    """Return the unanimous neighbour category if ``v`` must be replicated."""
    nbrs = g.neighbors[v]
    if len(nbrs) < 2:
        return None
    nbr_cats = g.node_category[list(nbrs)]
    target = int(nbr_cats[0])
    if np.any(nbr_cats != target) or target == g.node_category[v]:
        return None
    return target


def replicate_nodes(g: Graph) -> ReplicationResult:
    """Append a relabelled copy of every node surrounded by one foreign category.

    The conditions are checked on the input graph only, so replicas never
    trigger further replication. Every node is examined; a node that fails the
    test is simply skipped.
    """
    categories = list(g.node_category.tolist())
    new_edges = [g.edges]
    replica_of: dict[int, int] = {}
    new_label: dict[int, int] = {}
    next_id = g.num_nodes
    for v in range(g.num_nodes):
        target = qualifies_for_replication(g, v)
        if target is None:
            continue
        nbrs = np.asarray(g.neighbors[v], dtype=np.int64)
        new_edges.append(np.column_stack([nbrs, np.full_like(nbrs, next_id)]))
        categories.append(target)
        replica_of[next_id] = v
        new_label[next_id] = target
        next_id += 1
    if not replica_of:
        return ReplicationResult(g, {}, {})
    modified = Graph(next_id, np.array(categories), np.concatenate(new_edges), g.label, g.graph_id)
    return ReplicationResult(modified, replica_of, new_label)


@dataclass(frozen=True)
class CategoryBlocks:
    """Homophilic adjacency split into one diagonal block per category.

    ``permutation[old] = new`` position after a stable sort by category;
    ``block_node_ids[c]`` lists the (pre-permutation) node ids of block ``c``
    in block order.
    """

    permutation: np.ndarray
    blocks: list[np.ndarray]
    block_node_ids: list[np.ndarray]
    graph: Graph

    @property
    def num_categories(self) -> int:
        return len(self.blocks)

    def block_sizes(self) -> list[int]:
        return [b.shape[0] for b in self.blocks]

    def permuted_homo_adjacency(self) -> np.ndarray:
        split = split_homo_hetero(self.graph)
        n = self.graph.num_nodes
        a = np.zeros((n, n))
        p = self.permutation
        if len(split.homo_edges):
            i, j = p[split.homo_edges[:, 0]], p[split.homo_edges[:, 1]]
            a[i, j] = a[j, i] = 1.0
        return a


def reorder_by_category(g: Graph, num_categories: int | None = None) -> CategoryBlocks:
    k = num_categories if num_categories is not None else int(g.node_category.max(initial=-1)) + 1
    order = np.argsort(g.node_category, kind="stable")
    permutation = np.empty(g.num_nodes, dtype=np.int64)
    permutation[order] = np.arange(g.num_nodes)

    homo = split_homo_hetero(g).homo_edges
    cats = g.node_category
    blocks, ids = [], []
    for c in range(k):
        members = order[cats[order] == c]
        local = np.full(g.num_nodes, -1, dtype=np.int64)
        local[members] = np.arange(len(members))
        block = np.zeros((len(members), len(members)))
        if len(homo):
            inside = homo[cats[homo[:, 0]] == c]
            block[local[inside[:, 0]], local[inside[:, 1]]] = 1.0
            block[local[inside[:, 1]], local[inside[:, 0]]] = 1.0
        blocks.append(block)
        ids.append(members)
    return CategoryBlocks(permutation, blocks, ids, g)


def preprocess_for_intranet(g: Graph, enable_replication: bool = True,
                            num_categories: int | None = None) -> CategoryBlocks:
    if enable_replication:
        g = replicate_nodes(g).modified_graph
    return reorder_by_category(g, num_categories)

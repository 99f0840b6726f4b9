"""Graph records with categorical node labels, and homophily measures over them."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InputError


def _canonical_edges(edges, num_nodes: int) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
        raise InputError(f"edge endpoint out of range for a graph of {num_nodes} nodes")
    if np.any(arr[:, 0] == arr[:, 1]):
        raise InputError("self-loops are not allowed")
    arr = np.sort(arr, axis=1)
    return np.unique(arr, axis=0) if arr.size else arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph whose nodes carry a category id in ``[0, k)``.

    ``edges`` holds each unordered pair once as ``(i, j)`` with ``i < j``,
    sorted lexicographically. Use :meth:`build` to construct from an
    arbitrary edge list (it drops mirrored duplicates).
    """

    num_nodes: int
    node_category: np.ndarray
    edges: np.ndarray
    label: float | int = 0
    graph_id: object = None

    def __post_init__(self):
        cats = np.asarray(self.node_category, dtype=np.int64)
        if cats.shape != (self.num_nodes,):
            raise InputError(f"expected {self.num_nodes} node categories, got {cats.shape[0]}")
        if cats.size and cats.min() < 0:
            raise InputError("node categories must be non-negative")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        canon = _canonical_edges(edges, self.num_nodes)
        if canon.shape[0] != edges.shape[0]:
            raise InputError("edge list contains duplicate unordered pairs")
        cats.setflags(write=False)
        canon.setflags(write=False)
        object.__setattr__(self, "node_category", cats)
        object.__setattr__(self, "edges", canon)

    @classmethod
    def build(cls, num_nodes: int, node_category: Sequence[int], edges, label=0, graph_id=None) -> "Graph":
        """Construct a graph, collapsing mirrored and repeated edges."""
        return cls(num_nodes, np.asarray(node_category, dtype=np.int64),
                   _canonical_edges(edges, num_nodes), label, graph_id)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        if self.num_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, j in self.edges.tolist():
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(n)) for n in nbrs)

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)

    def with_edges(self, edges) -> "Graph":
        return Graph(self.num_nodes, self.node_category, edges, self.label, self.graph_id)

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that old node ``v`` becomes ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        cats = np.empty_like(self.node_category)
        cats[perm] = self.node_category
        return Graph.build(self.num_nodes, cats, perm[self.edges], self.label, self.graph_id)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.node_category, other.node_category)
                and np.array_equal(self.edges, other.edges)
                and self.label == other.label
                and self.graph_id == other.graph_id)

    __hash__ = None


@dataclass(frozen=True)
class EdgeSplit:
    homo_edges: np.ndarray
    hetero_edges: np.ndarray
    hetero_nodes: np.ndarray


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: list[Graph]
    category_count: int
    task_kind: str = "classification"
    class_count: int | None = None
    name: str = ""
    category_vocab: tuple = ()
    class_vocab: tuple = ()

    def __post_init__(self):
        if self.task_kind not in ("classification", "regression"):
            raise InputError(f"unknown task kind {self.task_kind!r}")
        for g in self.graphs:
            if g.num_nodes and g.node_category.max() >= self.category_count:
                raise InputError(f"graph {g.graph_id!r} uses a category >= {self.category_count}")

    def __len__(self):
        return len(self.graphs)

    def labels(self) -> np.ndarray:
        dtype = np.int64 if self.task_kind == "classification" else np.float64
        return np.array([g.label for g in self.graphs], dtype=dtype)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.graphs[i] for i in indices], self.category_count, self.task_kind,
                       self.class_count, self.name, self.category_vocab, self.class_vocab)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.category_count == other.category_count
                and self.task_kind == other.task_kind
                and self.class_count == other.class_count
                and self.category_vocab == other.category_vocab
                and self.class_vocab == other.class_vocab
                and self.graphs == other.graphs)


def node_homophily_ratio(g: Graph, v: int) -> float:
    """Fraction of ``v``'s neighbours sharing its category; 1.0 for isolated nodes."""
    if not 0 <= v < g.num_nodes:
        raise InputError(f"node {v} out of range for a graph of {g.num_nodes} nodes")
    nbrs = g.neighbors[v]
    if not nbrs:
        return 1.0
    cats = g.node_category
    return float(np.count_nonzero(cats[list(nbrs)] == cats[v])) / len(nbrs)


def split_homo_hetero(g: Graph) -> EdgeSplit:
    cats = g.node_category
    same = cats[g.edges[:, 0]] == cats[g.edges[:, 1]]
    hetero = g.edges[~same]
    # a node has ratio < 1 exactly when it touches a heterophilic edge
    hetero_nodes = np.unique(hetero.ravel())
    return EdgeSplit(g.edges[same], hetero, hetero_nodes)


def graph_heterophily_ratio(g: Graph) -> float:
    """Share of edges joining different categories; 0 for an edgeless graph."""
    if g.num_edges == 0:
        return 0.0
    cats = g.node_category
    return float(np.count_nonzero(cats[g.edges[:, 0]] != cats[g.edges[:, 1]])) / g.num_edges


def dataset_heterophily_ratio(d: Dataset | Sequence[Graph]) -> float:
    """Mean over graphs of the per-graph heterophilic edge share."""
    graphs = d.graphs if isinstance(d, Dataset) else list(d)
    if not graphs:
        raise InputError("heterophily ratio of an empty dataset is undefined")
    return float(np.mean([graph_heterophily_ratio(g) for g in graphs]))


def pooled_heterophily_ratio(d: Dataset | Sequence[Graph]) -> float:
    """Heterophilic edges over all edges of the dataset (edge-weighted)."""
    graphs = d.graphs if isinstance(d, Dataset) else list(d)
    if not graphs:
        raise InputError("heterophily ratio of an empty dataset is undefined")
    total = sum(g.num_edges for g in graphs)
    if total == 0:
        return 0.0
    return sum(graph_heterophily_ratio(g) * g.num_edges for g in graphs) / total


def one_hot_features(g: Graph, k: int) -> np.ndarray:
    if g.num_nodes and g.node_category.max() >= k:
        raise InputError(f"category {int(g.node_category.max())} does not fit {k} columns")
    x = np.zeros((g.num_nodes, k))
    x[np.arange(g.num_nodes), g.node_category] = 1.0
    return x

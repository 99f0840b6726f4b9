"""TUDataset parsing, cross-validation folds and experiment reports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError, InputError
from .graph import Dataset, Graph

log = logging.getLogger(__name__)


def _read_column(path: Path, dtype=str) -> list:
    try:
        with path.open() as fh:
            return [dtype(line.strip()) for line in fh if line.strip()]
    except ValueError as exc:
        raise DataFormatError(f"{path.name}: {exc}") from None


def _read_edges(path: Path) -> np.ndarray:
    pairs = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise DataFormatError(f"{path.name}:{lineno}: expected 'i, j', got {line.strip()!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DataFormatError(f"{path.name}:{lineno}: non-integer node id") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _parse_number(text: str) -> float | int:
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_tudataset(directory, name: str) -> Dataset:
    """Read the raw TUDataset text files for ``name`` from ``directory``.

    Node ids become 0-based and contiguous within each graph; mirrored edges
    are merged into a single undirected edge. Node labels and integer graph
    labels are remapped to dense ids by ascending raw value. If
    ``<name>_node_labels.txt`` is absent, the first column of
    ``<name>_node_attributes.txt`` is used as the atom type.
    """
    directory = Path(directory)
    if (directory / name).is_dir() and not (directory / f"{name}_A.txt").exists():
        directory = directory / name
    paths = {key: directory / f"{name}_{key}.txt" for key in ("A", "graph_indicator", "graph_labels", "node_labels")}
    if not paths["node_labels"].exists():
        attr = directory / f"{name}_node_attributes.txt"
        if attr.exists():
            paths["node_labels"] = attr
    for p in paths.values():
        if not p.exists():
            raise FileNotFoundError(f"missing dataset file: {p}")

    indicator = np.array(_read_column(paths["graph_indicator"], int), dtype=np.int64)
    raw_node_labels = _read_column(paths["node_labels"], lambda s: _parse_number(s.split(",")[0].strip()))
    raw_graph_labels = _read_column(paths["graph_labels"], _parse_number)
    edges = _read_edges(paths["A"])

    num_nodes_total = len(indicator)
    if len(raw_node_labels) != num_nodes_total:
        raise DataFormatError(
            f"{paths['node_labels'].name} has {len(raw_node_labels)} lines but "
            f"{paths['graph_indicator'].name} lists {num_nodes_total} nodes")
    num_graphs = len(raw_graph_labels)
    if num_nodes_total and (indicator.min() < 1 or indicator.max() > num_graphs):
        raise DataFormatError(f"graph indicator references graphs outside 1..{num_graphs}")
    if np.any(np.diff(indicator) < 0):
        raise DataFormatError("graph indicator is not sorted by graph id")
    if edges.size and (edges.min() < 1 or edges.max() > num_nodes_total):
        raise DataFormatError(f"edge references a node outside 1..{num_nodes_total}")

    category_vocab = tuple(sorted(set(raw_node_labels)))
    cat_index = {v: i for i, v in enumerate(category_vocab)}
    categories = np.array([cat_index[v] for v in raw_node_labels], dtype=np.int64)

    if all(isinstance(v, int) for v in raw_graph_labels):
        task_kind = "classification"
        class_vocab = tuple(sorted(set(raw_graph_labels)))
        cls_index = {v: i for i, v in enumerate(class_vocab)}
        labels = [cls_index[v] for v in raw_graph_labels]
        class_count = len(class_vocab)
    else:
        task_kind, class_vocab, class_count = "regression", (), None
        labels = [float(v) for v in raw_graph_labels]

    # 0-based graph of each global node, and offset of each graph's first node
    node_graph = indicator - 1
    counts = np.bincount(node_graph, minlength=num_graphs)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    e0 = edges - 1
    if e0.size and np.any(node_graph[e0[:, 0]] != node_graph[e0[:, 1]]):
        raise DataFormatError("edge joins nodes from different graphs")
    edge_graph = node_graph[e0[:, 0]] if e0.size else np.zeros(0, dtype=np.int64)
    order = np.argsort(edge_graph, kind="stable")
    e0, edge_graph = e0[order], edge_graph[order]
    bounds = np.searchsorted(edge_graph, np.arange(num_graphs + 1))

    graphs = []
    for g in range(num_graphs):
        lo, n = offsets[g], counts[g]
        local = e0[bounds[g]:bounds[g + 1]] - lo
        local = local[local[:, 0] != local[:, 1]]
        graphs.append(Graph.build(int(n), categories[lo:lo + n], local, labels[g], g + 1))

    return Dataset(graphs, len(category_vocab), task_kind, class_count, name, category_vocab, class_vocab)


@dataclass(frozen=True)
class FoldPlan:
    fold_assignment: np.ndarray
    seed: int
    k_folds: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignment != fold)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_assignment, minlength=self.k_folds)


def stratified_kfold(d: Dataset, k_folds: int, seed: int) -> FoldPlan:
    """Assign graphs to folds, balancing class counts when possible.

    Members of each class are shuffled and dealt round-robin, the dealer
    position carrying over between classes, so both per-class and total fold
    sizes differ by at most one.
    """
    n = len(d)
    if k_folds < 2:
        raise InputError("k_folds must be at least 2")
    if k_folds > n:
        raise InputError(f"cannot split {n} graphs into {k_folds} folds")
    rng = np.random.default_rng(seed)
    groups: list[np.ndarray]
    if d.task_kind == "classification":
        labels = d.labels()
        classes = np.unique(labels)
        groups = [np.flatnonzero(labels == c) for c in classes]
        if min(len(g) for g in groups) < k_folds:
            log.warning("a class has fewer than %d members; falling back to unstratified folds", k_folds)
            groups = [np.arange(n)]
    else:
        groups = [np.arange(n)]
    assignment = np.empty(n, dtype=np.int64)
    start = 0
    for members in groups:
        members = rng.permutation(members)
        assignment[members] = (start + np.arange(len(members))) % k_folds
        start = (start + len(members)) % k_folds
    return FoldPlan(assignment, seed, k_folds)


@dataclass
class Report:
    """Per-fold metric values of one experiment, optionally over several seeds.

    ``fold_values[s][f]`` is the metric of fold ``f`` under ``seeds[s]``.
    """

    metric: str
    fold_values: list[list[float]]
    seeds: list[int]
    config: dict = field(default_factory=dict)
    wall_clock_seconds: float | None = None

    def __post_init__(self):
        if not self.fold_values or not all(self.fold_values):
            raise InputError("a report needs at least one fold value per seed")
        if len(self.fold_values) != len(self.seeds):
            raise InputError("one row of fold values is required per seed")

    def values(self) -> np.ndarray:
        return np.array([v for row in self.fold_values for v in row], dtype=float)

    @property
    def mean(self) -> float:
        return float(np.mean([np.mean(row) for row in self.fold_values]))

    @property
    def std(self) -> float:
        return float(np.std(self.values()))

    def summary(self, scale: float = 1.0, digits: int = 2) -> str:
        return f"{self.mean * scale:.{digits}f}±{self.std * scale:.{digits}f}"

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "metric": self.metric,
            "seeds": list(self.seeds),
            "fold_values": [[float(v) for v in row] for row in self.fold_values],
            "mean": self.mean,
            "std": self.std,
            "summary": self.summary(100.0 if self.metric == "accuracy" else 1.0),
            "config": self.config,
        }
        if include_timing and self.wall_clock_seconds is not None:
            out["wall_clock_seconds"] = self.wall_clock_seconds
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Report":
        return cls(obj["metric"], [list(map(float, row)) for row in obj["fold_values"]],
                   list(obj["seeds"]), obj.get("config", {}), obj.get("wall_clock_seconds"))

    def __eq__(self, other):
        if not isinstance(other, Report):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def export_report(r: Report, path, include_timing: bool = False) -> None:
    """Write ``r`` as indented JSON; floats use shortest round-tripping repr.

    Timing is left out unless requested so identical runs give identical files.
    """
    text = json.dumps(r.to_dict(include_timing), indent=2, sort_keys=True, allow_nan=True)
    Path(path).write_text(text + "\n")


def read_report(path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)

import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from divgnn.graph import Graph

A, B, C = 0, 1, 2
REPO = Path(__file__).resolve().parents[1]

# acceptance results: key -> (passed, title, detail)
ACCEPTANCE: dict[str, tuple[bool, str, str]] = {}


@contextmanager
def criterion(key, title):
    """Record one acceptance line; any exception inside marks it as failed."""
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        reason = (str(exc).strip().splitlines() or [type(exc).__name__])[0]
        ACCEPTANCE[key] = (False, title, "; ".join(notes + [reason]))
        raise
    ACCEPTANCE[key] = (True, title, "; ".join(notes))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key:<3} {title}: {detail}")


def triangle_aab():
    return Graph.build(3, [A, A, B], [(0, 1), (0, 2), (1, 2)], 0, "tri")


def star_baa():
    """Centre (B) joined to two A leaves."""
    return Graph.build(3, [B, A, A], [(0, 1), (0, 2)], 1, "star")


def k2(cats=(A, A)):
    return Graph.build(2, list(cats), [(0, 1)], 0, "k2")


def random_graph(rng, max_nodes=30, max_categories=5, p=None):
    n = int(rng.integers(1, max_nodes + 1))
    k = int(rng.integers(1, max_categories + 1))
    p = rng.uniform(0.05, 0.5) if p is None else p
    iu = np.triu_indices(n, 1)
    keep = rng.random(len(iu[0])) < p
    return Graph.build(n, rng.integers(0, k, n), np.column_stack([iu[0][keep], iu[1][keep]]),
                       int(rng.integers(0, 2)))


def mutag_dir():
    """Directory holding MUTAG_*.txt, from $DIVGNN_DATA_DIR or ./data."""
    for base in filter(None, [os.environ.get("DIVGNN_DATA_DIR"), str(REPO / "data")]):
        for d in (Path(base), Path(base) / "MUTAG"):
            if (d / "MUTAG_A.txt").exists():
                return d
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_tudataset(directory: Path, name: str, graphs, node_labels, graph_labels, mirror=True):
    """Write ``graphs`` (lists of 0-based local edges with node counts) in raw TUDataset layout."""
    directory.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines = [], []
    offset = 0
    for gid, (n, edges) in enumerate(graphs, 1):
        for i, j in edges:
            a_lines.append(f"{i + offset + 1}, {j + offset + 1}")
            if mirror:
                a_lines.append(f"{j + offset + 1}, {i + offset + 1}")
        ind_lines += [str(gid)] * n
        offset += n
    (directory / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (directory / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (directory / f"{name}_node_labels.txt").write_text("\n".join(map(str, node_labels)) + "\n")
    (directory / f"{name}_graph_labels.txt").write_text("\n".join(map(str, graph_labels)) + "\n")
    return directory


def toy_dataset(seed=0, n_graphs=40):
    """Two structurally separable classes over three categories.

    Class 0 graphs are category-pure paths, class 1 graphs alternate
    categories along the path, so every edge is heterophilic.
    """
    from divgnn.graph import Dataset

    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs):
        y = i % 2
        n = int(rng.integers(4, 9))
        edges = [(v, v + 1) for v in range(n - 1)]
        if y == 0:
            cats = [int(rng.integers(0, 3))] * n
        else:
            a, b = rng.choice(3, 2, replace=False)
            cats = [int(a) if v % 2 == 0 else int(b) for v in range(n)]
        graphs.append(Graph.build(n, cats, edges, y, i + 1))
    return Dataset(graphs, 3, "classification", 2, "TOY")

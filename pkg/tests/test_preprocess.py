import numpy as np
from hypothesis import given, settings

from divgnn.graph import Graph, split_homo_hetero
from divgnn.preprocess import preprocess_for_intranet, reorder_by_category, replicate_nodes

from conftest import A, B, random_graph, star_baa, triangle_aab
from test_graph import graphs


def brute_force_replicas(g):
    """Independent replication oracle over the dense adjacency matrix."""
    adj = g.adjacency()
    out = []
    for v in range(g.num_nodes):
        nbrs = [u for u in range(g.num_nodes) if adj[v, u]]
        if len(nbrs) < 2:
            continue
        labels = {int(g.node_category[u]) for u in nbrs}
        if len(labels) == 1 and labels != {int(g.node_category[v])}:
            out.append((v, labels.pop(), sorted(nbrs)))
    return out


def test_star_replication():
    r = replicate_nodes(star_baa())
    g = r.modified_graph
    assert g.num_nodes == 4 and g.num_edges == 4
    assert r.replica_of == {3: 0}
    assert r.new_label == {3: A}
    assert g.node_category.tolist() == [B, A, A, A]
    assert g.edges.tolist() == [[0, 1], [0, 2], [1, 3], [2, 3]]


def test_single_neighbour_and_mixed_neighbours_never_replicate():
    leaf = Graph.build(2, [A, B], [(0, 1)])
    assert replicate_nodes(leaf).num_replicas == 0
    mixed = Graph.build(3, [B, A, 2], [(0, 1), (0, 2)])
    assert replicate_nodes(mixed).num_replicas == 0


def test_replication_matches_brute_force_oracle(rng):
    for _ in range(200):
        g = random_graph(rng, 30, 5)
        expected = brute_force_replicas(g)
        r = replicate_nodes(g)
        got = sorted(r.replica_of.items())
        assert [v for _, v in got] == [v for v, _, _ in expected]
        m = r.modified_graph
        for (new, orig), (v, label, nbrs) in zip(got, expected):
            assert r.new_label[new] == label == m.node_category[new]
            assert sorted(m.neighbors[new]) == nbrs
        # original nodes and edges untouched
        assert np.array_equal(m.node_category[:g.num_nodes], g.node_category)
        assert m.num_nodes == g.num_nodes + len(expected)
        assert m.num_edges == g.num_edges + sum(len(n) for _, _, n in expected)


@settings(max_examples=100, deadline=None)
@given(graphs(max_nodes=10))
def test_second_replication_pass_adds_nothing_for_replicas(g):
    first = replicate_nodes(g)
    second = replicate_nodes(first.modified_graph)
    assert not set(second.replica_of.values()) & set(first.replica_of)


def test_reorder_example():
    g = Graph.build(4, [B, A, B, A], [])
    cb = reorder_by_category(g)
    order = np.argsort(cb.permutation)
    assert order.tolist() == [1, 3, 0, 2]
    assert cb.block_sizes() == [2, 2]


def test_single_category_block_is_full_adjacency(rng):
    g = random_graph(rng, 12, 1)
    g = Graph.build(g.num_nodes, [0] * g.num_nodes, g.edges)
    cb = reorder_by_category(g)
    assert len(cb.blocks) == 1
    assert np.array_equal(cb.blocks[0], g.adjacency())


def test_triangle_blocks():
    cb = reorder_by_category(triangle_aab())
    assert cb.blocks[0].tolist() == [[0, 1], [1, 0]]
    assert cb.blocks[1].tolist() == [[0]]


def test_zero_off_block_entries(rng):
    for _ in range(200):
        g = random_graph(rng, 30, 5)
        cb = preprocess_for_intranet(g, True, 5)
        a = cb.permuted_homo_adjacency()
        mask = np.zeros_like(a, dtype=bool)
        lo = 0
        for size in cb.block_sizes():
            mask[lo:lo + size, lo:lo + size] = True
            lo += size
        assert lo == cb.graph.num_nodes
        assert not np.any(a[~mask])
        # blocks are exactly the diagonal pieces
        lo = 0
        for block in cb.blocks:
            n = block.shape[0]
            assert np.array_equal(block, a[lo:lo + n, lo:lo + n])
            lo += n


def test_replicated_original_is_isolated_in_its_block():
    cb = preprocess_for_intranet(star_baa())
    assert cb.block_sizes() == [3, 1]
    assert cb.blocks[1].tolist() == [[0]]
    assert cb.blocks[0].sum() == 4  # two replica edges, stored symmetrically


def test_replication_off_is_pass_through(rng):
    for _ in range(20):
        g = random_graph(rng, 15, 3)
        off = preprocess_for_intranet(g, enable_replication=False)
        ref = reorder_by_category(g)
        assert all(np.array_equal(x, y) for x, y in zip(off.blocks, ref.blocks))


def test_no_qualifying_node_means_on_equals_off():
    g = Graph.build(4, [A, A, B, B], [(0, 1), (1, 2), (2, 3)])
    on, off = preprocess_for_intranet(g, True), preprocess_for_intranet(g, False)
    assert on.graph == off.graph
    assert all(np.array_equal(x, y) for x, y in zip(on.blocks, off.blocks))


def test_homo_edges_preserved_by_reorder(rng):
    g = random_graph(rng, 20, 4)
    cb = reorder_by_category(g)
    assert cb.permuted_homo_adjacency().sum() == 2 * len(split_homo_hetero(g).homo_edges)

import numpy as np
import pytest

from divgnn import autodiff as ad
from divgnn.autodiff import Tensor
from divgnn.cli import gradcheck_fixtures, run_gradcheck
from divgnn.errors import CapacityError, InputError
from divgnn.graph import Graph
from divgnn.model import (MODEL_KINDS, ModelConfig, category_readout, ego_forward, forward, gated_fuse,
                          gcn_forward, init_params, internet_forward, intranet_forward, make_batch,
                          max_block_size, prepare_graph, readout, virtual_node_update)
from divgnn.spectral import HighPassParams

from conftest import random_graph

ONES = HighPassParams(1.0, 1.0, 1.0)


def setup(graphs, kind, k, hidden=4, layers=2, seed=0, **kw):
    prepared = [prepare_graph(g, k, kind) for g in graphs]
    kw.setdefault("id_width", max(max_block_size(prepared), 1))
    cfg = ModelConfig(kind, k, 2, hidden=hidden, conv_layers=layers, **kw)
    params = init_params(cfg, np.random.default_rng(seed))
    return make_batch(prepared, cfg), params, cfg


def test_intranet_k2_identity_weights():
    batch, params, cfg = setup([Graph.build(2, [0, 0], [(0, 1)])], "intranet", 1, hidden=2, layers=1, id_width=2)
    params["intra.conv.0"].value = np.eye(2)
    assert np.allclose(intranet_forward(batch, params, cfg).value, 0.5, atol=1e-15)


def test_intranet_isolated_node_gives_first_unit_row():
    batch, params, cfg = setup([Graph.build(1, [0], [])], "intranet", 1, hidden=3, layers=1, id_width=3)
    params["intra.conv.0"].value = np.eye(3)
    assert intranet_forward(batch, params, cfg).value.tolist() == [[1.0, 0.0, 0.0]]


def test_empty_category_gives_no_rows():
    batch, params, cfg = setup([Graph.build(2, [0, 0], [(0, 1)])], "intranet", 3, hidden=2, layers=1)
    assert intranet_forward(batch, params, cfg).shape == (2, 2)
    assert batch.intra_category.tolist() == [0, 0]


def test_internet_k2_example():
    batch, params, cfg = setup([Graph.build(2, [0, 1], [(0, 1)])], "internet", 2, hidden=2, layers=1,
                               high_pass=ONES)
    params["inter.conv.0"].value = np.eye(2)
    h = internet_forward(batch, params, cfg).value
    assert np.allclose(h, [[-1.0, -1.0]], atol=1e-10)


def test_internet_zero_magnitude():
    batch, params, cfg = setup(gradcheck_fixtures(), "internet", 3, high_pass=HighPassParams(p=0.0))
    assert np.abs(internet_forward(batch, params, cfg).value).max() == 0.0


def test_internet_permutation_invariance(rng):
    worst = 0.0
    for trial in range(50):
        g = random_graph(rng, 15, 4)
        g = Graph.build(g.num_nodes, g.node_category, g.edges, g.label)
        h = g.permuted(rng.permutation(g.num_nodes))
        (b1, params, cfg), (b2, _, _) = setup([g], "internet", 4, seed=trial), setup([h], "internet", 4)
        worst = max(worst, np.abs(forward(b1, params, cfg).value - forward(b2, params, cfg).value).max())
    assert worst <= 1e-6


def test_intranet_invariant_under_block_order_preserving_relabel(rng):
    # renumbering that keeps the relative order of same-category nodes
    g = Graph.build(5, [1, 0, 1, 0, 2], [(0, 2), (1, 3), (0, 1), (2, 4)], 0)
    perm = np.array([1, 0, 3, 2, 4])  # swaps a category-1 node with a category-0 node
    h = g.permuted(perm)
    assert [int(h.node_category[perm[v]]) for v in range(5)] == g.node_category.tolist()
    (b1, params, cfg), (b2, _, _) = setup([g], "intranet", 3), setup([h], "intranet", 3)
    assert np.allclose(forward(b1, params, cfg).value, forward(b2, params, cfg).value, atol=1e-12)


def test_category_readout_shapes_and_zero():
    batch, params, cfg = setup(gradcheck_fixtures(), "intranet", 3, hidden=4)
    assert params["intra.mlp2.0.weight"].shape == (12, 4)
    for name in params.names("intra.mlp"):
        if name.endswith("bias"):
            params[name].value = np.zeros_like(params[name].value)
    x = Tensor(np.zeros((batch.intra_adj.shape[0], 4)))
    assert np.abs(category_readout(x, batch, params).value).max() == 0.0


def test_category_readout_within_category_permutation(rng):
    batch, params, cfg = setup(gradcheck_fixtures()[:1], "intranet", 3, hidden=4)
    x = rng.normal(size=(batch.intra_adj.shape[0], 4))
    base = category_readout(Tensor(x), batch, params).value
    rows = np.flatnonzero(batch.intra_category == 0)
    y = x.copy()
    y[rows] = x[rng.permutation(rows)]
    assert np.allclose(category_readout(Tensor(y), batch, params).value, base, atol=1e-12)


def test_zeroing_one_category_changes_only_its_slice(rng):
    batch, params, cfg = setup(gradcheck_fixtures()[:1], "intranet", 3, hidden=4)
    x = rng.normal(size=(batch.intra_adj.shape[0], 4))
    layers = [(params[f"intra.mlp1.{i}.weight"], params[f"intra.mlp1.{i}.bias"]) for i in range(2)]
    for _, b in layers:
        b.value = rng.normal(size=b.shape)

    def concat_input(z):
        return ad.mlp_forward(ad.spmm(batch.category_pool, Tensor(z)), layers).value.reshape(-1)

    y = x.copy()
    y[batch.intra_category == 1] = 0.0
    diff = concat_input(x) != concat_input(y)
    assert diff[4:8].any() and not diff[:4].any() and not diff[8:].any()


def test_readout_examples():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert readout(x, "sum").value.tolist() == [[1.0, 1.0]]
    assert readout(x, "mean").value.tolist() == [[0.5, 0.5]]
    assert readout(x, "max").value.tolist() == [[1.0, 1.0]]
    single = np.array([[0.3, -2.0]])
    for mode in ("sum", "mean", "max"):
        assert readout(single, mode).value.tolist() == single.tolist()
    with pytest.raises(InputError):
        readout(np.zeros((0, 2)), "sum")


def test_virtual_node_identity_parameterisation():
    x = Tensor(np.array([[1.0, 2.0], [3.0, -1.0]]))
    pool = np.ones((1, 2))
    eye, zero = Tensor(np.eye(2)), Tensor(np.zeros(2))
    hv, updated = virtual_node_update(x, pool, eye, eye, zero, activation="identity")
    assert hv.value.tolist() == [[4.0, 1.0]]
    assert updated.value.tolist() == [[5.0, 3.0], [7.0, 0.0]]
    out = readout(x, "virtual", virtual=(eye, eye, zero), virtual_activation="identity")
    assert out.value.tolist() == [[4.0, 1.0]]


def test_gated_fuse_properties(rng):
    a, b = Tensor(rng.normal(size=(3, 5))), Tensor(rng.normal(size=(3, 5)))
    theta = rng.normal(size=5)
    sa, sb = ad.standardize(a).value, ad.standardize(b).value
    assert np.allclose(gated_fuse(a, b, Tensor(np.full(5, 60.0))).value, sa, atol=1e-12)
    assert np.allclose(gated_fuse(a, b, Tensor(np.zeros(5))).value, (sa + sb) / 2, atol=1e-15)
    assert np.allclose(gated_fuse(a, b, Tensor(theta)).value, gated_fuse(b, a, Tensor(-theta)).value, atol=1e-12)
    with pytest.raises(InputError):
        gated_fuse(a, Tensor(np.zeros((3, 4))), Tensor(np.zeros(5)))


def test_divgnn_head_width_and_hetero_isolation(rng):
    batch, params, cfg = setup(gradcheck_fixtures(), "divgnn", 3)
    out = forward(batch, params, cfg)
    assert out.shape == (2, cfg.out_dim)
    params["fuse.theta"].value = np.full(cfg.hidden, 60.0)
    for l in range(cfg.conv_layers):
        params[f"inter.conv.{l}"].value = np.zeros_like(params[f"inter.conv.{l}"].value)
    base = forward(batch, params, cfg).value
    for l in range(cfg.conv_layers):
        params[f"inter.conv.{l}"].value = rng.normal(size=params[f"inter.conv.{l}"].shape)
    assert np.allclose(forward(batch, params, cfg).value, base, atol=1e-12)


def test_gcn_on_single_category_equals_gcn_wo_hetero(rng):
    g = random_graph(rng, 12, 1)
    g = Graph.build(g.num_nodes, [0] * g.num_nodes, g.edges)
    b1, params, cfg = setup([g], "gcn", 1)
    b2, _, cfg2 = setup([g], "gcn_wo_hetero", 1)
    assert np.array_equal(forward(b1, params, cfg).value, forward(b2, params, cfg2).value)


def test_gcn_k2_rows_of_normalised_adjacency():
    batch, params, cfg = setup([Graph.build(2, [0, 1], [(0, 1)])], "gcn", 2, hidden=2, layers=1)
    params["gcn.conv.0"].value = np.eye(2)
    assert np.allclose(batch.gcn_adj.toarray(), 0.5)
    assert np.allclose(gcn_forward(batch, params, cfg).value, [[1.0, 1.0]])


def test_ego_on_edgeless_graph():
    g = Graph.build(3, [0, 1, 1], [])
    batch, params, cfg = setup([g], "hetero_ego_fused", 2, hidden=4, layers=1)
    own = np.maximum(batch.onehot @ params["ego.0.self"].value, 0.0)
    expected = np.concatenate([own, np.zeros((3, 2))], axis=1).sum(axis=0, keepdims=True)
    assert np.allclose(ego_forward(batch, params, cfg).value, expected)


@pytest.mark.parametrize("kind", MODEL_KINDS)
def test_batching_matches_single_graphs(kind, rng):
    graphs = [random_graph(rng, 10, 3) for _ in range(3)]
    prepared = [prepare_graph(g, 3, kind) for g in graphs]
    cfg = ModelConfig(kind, 3, 2, hidden=5, id_width=10)
    params = init_params(cfg, rng)
    together = forward(make_batch(prepared, cfg), params, cfg).value
    alone = np.vstack([forward(make_batch([p], cfg), params, cfg).value for p in prepared])
    assert np.allclose(together, alone, atol=1e-10)


def test_capacity_error_names_the_fix():
    g = Graph.build(4, [0, 0, 0, 1], [(0, 1)], 0, "big")
    prepared = [prepare_graph(g, 2, "intranet")]
    cfg = ModelConfig("intranet", 2, 2, id_width=2)
    with pytest.raises(CapacityError, match="--id-width 3"):
        make_batch(prepared, cfg)


def test_config_validation():
    with pytest.raises(InputError):
        ModelConfig("bogus", 2, 2, id_width=1)
    with pytest.raises(InputError):
        ModelConfig("divgnn", 2, 2, id_width=1, readout="sum")
    with pytest.raises(InputError):
        ModelConfig("intranet", 2, 2, id_width=0)
    ModelConfig("internet", 2, 2)


def test_end_to_end_gradients_every_kind():
    results = run_gradcheck()
    assert set(results) >= set(MODEL_KINDS)
    worst = max(max(errs.values()) for errs in results.values())
    assert worst <= 1e-4


def test_per_category_weights_gradcheck():
    batch, params, cfg = setup(gradcheck_fixtures(), "divgnn", 3, per_category_weights=True)
    assert "intra.conv.0.cat2" in params
    err = ad.finite_diff_gradcheck(lambda: ad.cross_entropy(forward(batch, params, cfg), batch.labels), params)
    assert err <= 1e-4

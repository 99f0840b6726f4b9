"""DivGNN and its ablation / baseline variants.

Graphs are preprocessed once into :class:`PreparedGraph` records (category
blocks, normalized operators, cached Laplacian eigensystem). A
:class:`Batch` stacks several prepared graphs into block-diagonal sparse
operators, so one forward pass handles a whole minibatch while each graph
is still convolved independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import CapacityError, InputError
from .graph import Graph, split_homo_hetero
from .preprocess import CategoryBlocks, preprocess_for_intranet
from .spectral import EigenPair, HighPassParams, laplacian_eigensystem, normalized_adjacency

MODEL_KINDS = ("divgnn", "intranet", "internet", "gcn", "gcn_wo_hetero", "hetero_gcn_fused", "hetero_ego_fused")
READOUT_MODES = ("category", "sum", "mean", "max", "virtual")
INTRANET_KINDS = ("divgnn", "intranet", "hetero_gcn_fused", "hetero_ego_fused")


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    num_categories: int
    out_dim: int
    hidden: int = 64
    conv_layers: int = 2
    id_width: int = 0
    readout: str = "category"
    replication: bool = True
    high_pass: HighPassParams = field(default_factory=HighPassParams)
    per_category_weights: bool = False
    internet_on_hetero: bool = False
    internet_activation: str = "identity"
    conv_activation: str = "relu"
    virtual_activation: str = "relu"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InputError(f"unknown model kind {self.kind!r}; choose from {', '.join(MODEL_KINDS)}")
        if self.readout not in READOUT_MODES:
            raise InputError(f"unknown readout {self.readout!r}; choose from {', '.join(READOUT_MODES)}")
        if self.readout != "category" and self.kind != "intranet":
            raise InputError("readout variants are only wired into the intranet model")
        if self.uses_intranet and self.id_width <= 0:
            raise InputError("id_width must be positive for IntraNet-bearing models")

    @property
    def uses_intranet(self) -> bool:
        return self.kind in INTRANET_KINDS

    @property
    def uses_spectral(self) -> bool:
        return self.kind in ("divgnn", "internet")


# ---------------------------------------------------------------- preprocessing

@dataclass
class PreparedGraph:
    graph: Graph
    blocks: CategoryBlocks | None = None
    intra_adj: sp.csr_matrix | None = None  # block-diagonal normalized adjacency, block order
    intra_position: np.ndarray | None = None  # row -> position inside its category block
    intra_category: np.ndarray | None = None  # row -> category
    eig: EigenPair | None = None
    hetero_mask: np.ndarray | None = None  # nodes read out by the spectral branch
    gcn_adj: sp.csr_matrix | None = None
    gcn_homo_adj: sp.csr_matrix | None = None
    mean_adj: sp.csr_matrix | None = None

    @property
    def num_intra_nodes(self) -> int:
        return 0 if self.intra_category is None else len(self.intra_category)

    def max_block_size(self) -> int:
        return max(self.blocks.block_sizes(), default=0) if self.blocks is not None else 0


def _norm_adj_sparse(g: Graph) -> sp.csr_matrix:
    return sp.csr_matrix(normalized_adjacency(g.adjacency()))


def prepare_graph(g: Graph, num_categories: int, kind: str = "divgnn", replication: bool = True,
                  internet_on_hetero: bool = False, spectral: tuple | None = None) -> PreparedGraph:
    """Compute everything about ``g`` that does not depend on parameters.

    ``spectral`` may pass a previously computed ``(eig, hetero_mask)`` pair.
    """
    out = PreparedGraph(g)
    if kind in INTRANET_KINDS:
        blocks = preprocess_for_intranet(g, replication, num_categories)
        out.blocks = blocks
        mats, pos, cats = [], [], []
        for c, block in enumerate(blocks.blocks):
            n = block.shape[0]
            if n == 0:
                continue
            mats.append(normalized_adjacency(block))
            pos.append(np.arange(n))
            cats.append(np.full(n, c))
        out.intra_adj = sp.block_diag(mats, format="csr") if mats else sp.csr_matrix((0, 0))
        out.intra_position = np.concatenate(pos) if pos else np.zeros(0, dtype=np.int64)
        out.intra_category = np.concatenate(cats) if cats else np.zeros(0, dtype=np.int64)
    if kind in ("divgnn", "internet"):
        if spectral is not None:
            out.eig, out.hetero_mask = spectral
        elif internet_on_hetero:
            split = split_homo_hetero(g)
            out.eig = laplacian_eigensystem(g.with_edges(split.hetero_edges).adjacency())
            mask = np.zeros(g.num_nodes, dtype=bool)
            mask[split.hetero_nodes] = True
            out.hetero_mask = mask
        else:
            out.eig = laplacian_eigensystem(g.adjacency())
    if kind in ("gcn", "hetero_gcn_fused"):
        out.gcn_adj = _norm_adj_sparse(g)
    if kind == "gcn_wo_hetero":
        out.gcn_homo_adj = _norm_adj_sparse(g.with_edges(split_homo_hetero(g).homo_edges))
    if kind == "hetero_ego_fused":
        a = g.adjacency()
        deg = a.sum(axis=1, keepdims=True)
        out.mean_adj = sp.csr_matrix(np.divide(a, deg, out=np.zeros_like(a), where=deg > 0))
    return out


def max_block_size(prepared: Sequence[PreparedGraph]) -> int:
    return max((p.max_block_size() for p in prepared), default=0)


# ---------------------------------------------------------------------- batching

@dataclass
class Batch:
    size: int
    num_categories: int
    labels: np.ndarray
    graph_ids: list
    # intranet
    intra_adj: sp.csr_matrix | None = None
    intra_x0: sp.csr_matrix | None = None
    intra_category: np.ndarray | None = None
    category_pool: sp.csr_matrix | None = None
    intra_pool: sp.csr_matrix | None = None
    intra_offsets: np.ndarray | None = None
    intra_counts: np.ndarray | None = None
    # full-graph branches
    onehot: np.ndarray | None = None
    node_pool: sp.csr_matrix | None = None
    eigvecs: sp.csr_matrix | None = None
    eigvals: np.ndarray | None = None
    spectral_pool: sp.csr_matrix | None = None
    gcn_adj: sp.csr_matrix | None = None
    mean_adj: sp.csr_matrix | None = None


def _pool_matrix(counts: Sequence[int], weights: np.ndarray | None = None) -> sp.csr_matrix:
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    rows = np.repeat(np.arange(len(counts)), counts)
    data = np.ones(n) if weights is None else weights
    return sp.csr_matrix((data, (rows, np.arange(n))), shape=(len(counts), n))


def make_batch(prepared: Sequence[PreparedGraph], cfg: ModelConfig) -> Batch:
    k = cfg.num_categories
    graphs = [p.graph for p in prepared]
    b = Batch(len(prepared), k, np.array([g.label for g in graphs]), [g.graph_id for g in graphs])

    if cfg.uses_intranet:
        for p in prepared:
            if p.blocks is None:
                raise InputError("graph was not prepared for IntraNet")
            sizes = p.blocks.block_sizes()
            worst = int(np.argmax(sizes)) if sizes else 0
            if sizes and sizes[worst] > cfg.id_width:
                raise CapacityError(
                    f"graph {p.graph.graph_id!r}: category {worst} block has {sizes[worst]} nodes but the "
                    f"identity width is {cfg.id_width}; rerun with --id-width {sizes[worst]} or larger")
        counts = [p.num_intra_nodes for p in prepared]
        n = int(sum(counts))
        b.intra_adj = sp.block_diag([p.intra_adj for p in prepared], format="csr") if n else sp.csr_matrix((0, 0))
        pos = np.concatenate([p.intra_position for p in prepared])
        cats = np.concatenate([p.intra_category for p in prepared]).astype(np.int64)
        b.intra_x0 = sp.csr_matrix((np.ones(n), (np.arange(n), pos)), shape=(n, cfg.id_width))
        b.intra_category = cats
        graph_of_row = np.repeat(np.arange(len(prepared)), counts)
        b.category_pool = sp.csr_matrix((np.ones(n), (graph_of_row * k + cats, np.arange(n))),
                                        shape=(len(prepared) * k, n))
        b.intra_pool = _pool_matrix(counts)
        b.intra_counts = np.asarray(counts, dtype=float)
        b.intra_offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)

    if cfg.kind not in ("intranet",):
        counts = [g.num_nodes for g in graphs]
        onehot = np.zeros((sum(counts), k))
        cats = np.concatenate([g.node_category for g in graphs])
        onehot[np.arange(len(cats)), cats] = 1.0
        b.onehot = onehot
        b.node_pool = _pool_matrix(counts)
        if cfg.uses_spectral:
            b.eigvecs = sp.block_diag([p.eig.eigenvectors for p in prepared], format="csr")
            b.eigvals = np.concatenate([p.eig.eigenvalues for p in prepared])
            if cfg.internet_on_hetero:
                b.spectral_pool = _pool_matrix(counts, np.concatenate([p.hetero_mask for p in prepared]).astype(float))
            else:
                b.spectral_pool = b.node_pool
        if cfg.kind in ("gcn", "hetero_gcn_fused"):
            b.gcn_adj = sp.block_diag([p.gcn_adj for p in prepared], format="csr")
        if cfg.kind == "gcn_wo_hetero":
            b.gcn_adj = sp.block_diag([p.gcn_homo_adj for p in prepared], format="csr")
        if cfg.kind == "hetero_ego_fused":
            b.mean_adj = sp.block_diag([p.mean_adj for p in prepared], format="csr")
    return b


# -------------------------------------------------------------------- parameters

def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    h, k, L = cfg.hidden, cfg.num_categories, cfg.conv_layers
    if cfg.uses_intranet:
        widths = [cfg.id_width] + [h] * L
        for l in range(L):
            if cfg.per_category_weights:
                for c in range(k):
                    store.add(f"intra.conv.{l}.cat{c}", ad.glorot_uniform(rng, widths[l], widths[l + 1]))
            else:
                store.add(f"intra.conv.{l}", ad.glorot_uniform(rng, widths[l], widths[l + 1]))
        if cfg.readout == "category":
            ad.add_mlp(store, "intra.mlp1", [h, h, h], rng)
            ad.add_mlp(store, "intra.mlp2", [k * h, h, h], rng)
        elif cfg.readout == "virtual":
            store.add("readout.virtual.agg", ad.glorot_uniform(rng, h, h))
            store.add("readout.virtual.redist", ad.glorot_uniform(rng, h, h))
            store.add("readout.virtual.bias", np.zeros(h))
    if cfg.uses_spectral:
        widths = [k] + [h] * L
        for l in range(L):
            store.add(f"inter.conv.{l}", ad.glorot_uniform(rng, widths[l], widths[l + 1]))
        hp = cfg.high_pass
        if hp.learn_p:
            store.add("inter.filter.p", hp.p)
        if hp.learn_e:
            store.add("inter.filter.e", hp.e)
        if hp.a is not None and hp.learn_a:
            store.add("inter.filter.a", hp.a)
    if cfg.kind in ("gcn", "gcn_wo_hetero", "hetero_gcn_fused"):
        widths = [k] + [h] * L
        for l in range(L):
            store.add(f"gcn.conv.{l}", ad.glorot_uniform(rng, widths[l], widths[l + 1]))
    if cfg.kind == "hetero_ego_fused":
        half = h // 2
        fin = k
        for l in range(L):
            store.add(f"ego.{l}.self", ad.glorot_uniform(rng, fin, h - half))
            store.add(f"ego.{l}.neigh", ad.glorot_uniform(rng, fin, half))
            fin = h
    if cfg.kind in ("divgnn", "hetero_gcn_fused", "hetero_ego_fused"):
        store.add("fuse.theta", np.zeros(h))
    ad.add_mlp(store, "head", [h, h, cfg.out_dim], rng)
    return store


def _mlp(params: ParamStore, prefix: str) -> list[tuple[Tensor, Tensor]]:
    layers, i = [], 0
    while f"{prefix}.{i}.weight" in params:
        layers.append((params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"]))
        i += 1
    return layers


# ----------------------------------------------------------------------- branches

def intranet_forward(batch: Batch, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Featureless per-category convolution; returns one row per block node.

    The input of every block is its positional one-hot (an identity matrix
    zero-padded to ``id_width`` columns). Rows follow ``batch.intra_category``.
    """
    act = ad.ACTIVATIONS[cfg.conv_activation]
    x = None
    for l in range(cfg.conv_layers):
        if cfg.per_category_weights:
            parts = None
            for c in range(cfg.num_categories):
                rows = (batch.intra_category == c).astype(float)
                if not rows.any():
                    continue
                mask = sp.diags(rows)
                src = ad.spmm(batch.intra_x0, params[f"intra.conv.{l}.cat{c}"]) if x is None \
                    else ad.matmul(x, params[f"intra.conv.{l}.cat{c}"])
                piece = ad.spmm(mask, src)
                parts = piece if parts is None else parts + piece
            xw = parts
        else:
            w = params[f"intra.conv.{l}"]
            xw = ad.spmm(batch.intra_x0, w) if x is None else ad.matmul(x, w)
        x = act(ad.spmm(batch.intra_adj, xw))
    return x


def category_readout(x: Tensor, batch: Batch, params: ParamStore) -> Tensor:
    """Per-category sum, shared MLP, concatenation in category order, final MLP."""
    k = batch.num_categories
    sums = ad.spmm(batch.category_pool, x)                     # (B*k, h)
    per_cat = ad.mlp_forward(sums, _mlp(params, "intra.mlp1"))  # (B*k, d')
    flat = ad.reshape(per_cat, (batch.size, k * per_cat.shape[1]))
    return ad.mlp_forward(flat, _mlp(params, "intra.mlp2"))


def virtual_node_update(x: Tensor, pool, w_agg: Tensor, w_redist: Tensor, bias: Tensor,
                        activation: str = "relu") -> tuple[Tensor, Tensor]:
    """Aggregate nodes into a virtual node, then add its redistribution back."""
    act = ad.ACTIVATIONS[activation]
    h_virtual = act(ad.linear(ad.spmm(pool, x), w_agg, bias))
    broadcast = ad.spmm(pool.T.tocsr() if sp.issparse(pool) else pool.T, ad.matmul(h_virtual, w_redist))
    return h_virtual, x + broadcast


def readout(x: Tensor, mode: str, pool=None, offsets=None, counts=None,
            virtual: tuple[Tensor, Tensor, Tensor] | None = None, virtual_activation: str = "relu") -> Tensor:
    """Collapse node rows into one vector per graph.

    Without ``pool`` all rows belong to a single graph.
    """
    x = ad.as_tensor(x)
    if x.shape[0] == 0:
        raise InputError("readout of an empty node set")
    if pool is None:
        pool = np.ones((1, x.shape[0]))
        offsets = np.array([0])
        counts = np.array([float(x.shape[0])])
    if mode == "sum":
        return ad.spmm(pool, x)
    if mode == "mean":
        if np.any(np.asarray(counts) == 0):
            raise InputError("readout of an empty node set")
        return ad.mul(ad.spmm(pool, x), (1.0 / np.asarray(counts, dtype=float))[:, None])
    if mode == "max":
        return ad.segment_max(x, offsets)
    if mode == "virtual":
        if virtual is None:
            raise InputError("virtual readout needs (W_agg, W_redist, b)")
        h_virtual, _ = virtual_node_update(x, pool, *virtual, activation=virtual_activation)
        return h_virtual
    raise InputError(f"unknown readout mode {mode!r}")


def filter_response(batch: Batch, params: ParamStore, hp: HighPassParams) -> Tensor:
    p = params["inter.filter.p"] if "inter.filter.p" in params else ad.Tensor(hp.p)
    e = params["inter.filter.e"] if "inter.filter.e" in params else ad.Tensor(hp.e)
    if hp.a is None:
        a = e
    else:
        a = params["inter.filter.a"] if "inter.filter.a" in params else ad.Tensor(hp.a)
    lam = batch.eigvals
    return p * (e * lam + (1.0 - 2.0 * a))


def internet_forward(batch: Batch, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """High-pass spectral convolution on one-hot features, then sum readout."""
    act = ad.ACTIVATIONS[cfg.internet_activation]
    response = ad.reshape(filter_response(batch, params, cfg.high_pass), (-1, 1))
    u = batch.eigvecs
    ut = u.T.tocsr()
    x = ad.Tensor(batch.onehot)
    for l in range(cfg.conv_layers):
        xw = ad.matmul(x, params[f"inter.conv.{l}"])
        x = ad.spmm(u, response * ad.spmm(ut, xw))
        if l < cfg.conv_layers - 1:
            x = act(x)
    return ad.spmm(batch.spectral_pool, x)


def gcn_forward(batch: Batch, params: ParamStore, cfg: ModelConfig) -> Tensor:
    act = ad.ACTIVATIONS[cfg.conv_activation]
    x = ad.Tensor(batch.onehot)
    for l in range(cfg.conv_layers):
        x = act(ad.spmm(batch.gcn_adj, ad.matmul(x, params[f"gcn.conv.{l}"])))
    return ad.spmm(batch.node_pool, x)


def ego_forward(batch: Batch, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Ego/neighbour separation: ``act([x W_self || mean_nbr(x) W_nbr])`` per layer."""
    act = ad.ACTIVATIONS[cfg.conv_activation]
    x = ad.Tensor(batch.onehot)
    for l in range(cfg.conv_layers):
        own = ad.matmul(x, params[f"ego.{l}.self"])
        nbr = ad.matmul(ad.spmm(batch.mean_adj, x), params[f"ego.{l}.neigh"])
        x = act(ad.concat([own, nbr], axis=1))
    return ad.spmm(batch.node_pool, x)


def gated_fuse(h_homo: Tensor, h_hetero: Tensor, theta: Tensor) -> Tensor:
    """``g * std(h_homo) + (1 - g) * std(h_hetero)`` with ``g = sigmoid(theta)``."""
    if h_homo.shape != h_hetero.shape:
        raise InputError(f"cannot fuse embeddings of shapes {h_homo.shape} and {h_hetero.shape}")
    g = ad.sigmoid(theta)
    return g * ad.standardize(h_homo) + (1.0 - g) * ad.standardize(h_hetero)


def homo_embedding(batch: Batch, params: ParamStore, cfg: ModelConfig) -> Tensor:
    x = intranet_forward(batch, params, cfg)
    if cfg.readout == "category":
        return category_readout(x, batch, params)
    virtual = None
    if cfg.readout == "virtual":
        virtual = (params["readout.virtual.agg"], params["readout.virtual.redist"], params["readout.virtual.bias"])
    return readout(x, cfg.readout, batch.intra_pool, batch.intra_offsets, batch.intra_counts,
                   virtual, cfg.virtual_activation)


def embed(batch: Batch, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Graph-level representation fed to the prediction head."""
    kind = cfg.kind
    if kind == "intranet":
        return homo_embedding(batch, params, cfg)
    if kind == "internet":
        return internet_forward(batch, params, cfg)
    if kind in ("gcn", "gcn_wo_hetero"):
        return gcn_forward(batch, params, cfg)
    homo = homo_embedding(batch, params, cfg)
    if kind == "divgnn":
        hetero = internet_forward(batch, params, cfg)
    elif kind == "hetero_gcn_fused":
        hetero = gcn_forward(batch, params, cfg)
    else:
        hetero = ego_forward(batch, params, cfg)
    return gated_fuse(homo, hetero, params["fuse.theta"])


def forward(batch: Batch, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Logits (classification) or a single regression output per graph."""
    return ad.mlp_forward(embed(batch, params, cfg), _mlp(params, "head"))


divgnn_forward = forward
baseline_forward = forward


def loss_fn(out: Tensor, labels: np.ndarray, task_kind: str) -> Tensor:
    if task_kind == "classification":
        return ad.cross_entropy(out, labels.astype(np.int64))
    return ad.l1_loss(out, labels.astype(float))

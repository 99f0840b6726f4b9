"""Minibatch training and k-fold cross-validation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import ParamStore, TrainConfig
from .data import FoldPlan, Report, stratified_kfold
from .errors import InputError
from .graph import Dataset
from .model import (INTRANET_KINDS, ModelConfig, PreparedGraph, forward, init_params, loss_fn,
                    make_batch, max_block_size, prepare_graph)
from .spectral import HighPassParams

log = logging.getLogger(__name__)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(pred.reshape(-1) - target.reshape(-1))))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Binary ROC-AUC via the Mann-Whitney rank statistic."""
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise InputError("ROC-AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def metric_name(task_kind: str) -> str:
    return "accuracy" if task_kind == "classification" else "mae"


def evaluate(prepared: Sequence[PreparedGraph], params: ParamStore, cfg: ModelConfig, task_kind: str,
             batch_size: int = 256, metric: str | None = None) -> float:
    metric = metric or metric_name(task_kind)
    outs, labels = [], []
    for lo in range(0, len(prepared), batch_size):
        batch = make_batch(prepared[lo:lo + batch_size], cfg)
        outs.append(forward(batch, params, cfg).value)
        labels.append(batch.labels)
    out, y = np.concatenate(outs), np.concatenate(labels)
    if metric == "accuracy":
        return accuracy(out, y.astype(np.int64))
    if metric == "roc_auc":
        z = out - out.max(axis=1, keepdims=True)
        prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        return roc_auc(prob[:, 1], y)
    return mae(out, y)


@dataclass
class FoldResult:
    metric: float
    losses: list[float]
    params: ParamStore | None = None


def train_fold(prepared: Sequence[PreparedGraph], train_idx, test_idx, cfg: ModelConfig,
               tcfg: TrainConfig, task_kind: str, fold: int = 0, selection: str = "final",
               keep_params: bool = False) -> FoldResult:
    """Train a fresh model on ``train_idx`` and score it on ``test_idx``.

    The RNG is derived from ``(tcfg.seed, fold)`` only, so a fold gives the
    same result whether it runs alone, in sequence or in a worker process.
    """
    rng = np.random.default_rng([tcfg.seed, fold])
    params = init_params(cfg, rng)
    train_idx = np.asarray(train_idx)
    test = [prepared[i] for i in test_idx]
    losses, best = [], -np.inf if task_kind == "classification" else np.inf
    for epoch in range(tcfg.epochs):
        lr = ad.step_lr(tcfg.initial_lr, epoch, tcfg.lr_halve_every_epochs)
        order = rng.permutation(train_idx)
        total = 0.0
        for lo in range(0, len(order), tcfg.batch_size):
            chunk = order[lo:lo + tcfg.batch_size]
            batch = make_batch([prepared[i] for i in chunk], cfg)
            loss = loss_fn(forward(batch, params, cfg), batch.labels, task_kind)
            loss.backward()
            ad.adam_step(params, lr)
            total += float(loss.value) * len(chunk)
        losses.append(total / len(order))
        if selection == "best":
            score = evaluate(test, params, cfg, task_kind)
            better = score > best if task_kind == "classification" else score < best
            best = score if better else best
    if selection == "best":
        score = best
    else:
        score = evaluate(test, params, cfg, task_kind)
    return FoldResult(score, losses, params if keep_params else None)


@dataclass
class ExperimentConfig:
    dataset: str = "MUTAG"
    data_dir: str = "data"
    model: str = "divgnn"
    readout: str = "category"
    replication: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: int = 10
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str | None = None
    workers: int = 1
    id_width: int = 0
    selection: str = "final"
    high_pass: HighPassParams = field(default_factory=HighPassParams)
    internet_on_hetero: bool = False
    per_category_weights: bool = False

    def __post_init__(self):
        if self.readout != "category" and self.model != "intranet":
            raise InputError("readout variants are only valid with --model intranet")
        if self.selection not in ("final", "best"):
            raise InputError("selection must be 'final' or 'best'")
        if self.workers < 1:
            raise InputError("workers must be at least 1")

    def snapshot(self) -> dict:
        """JSON-friendly view used in reports (no paths, no worker count)."""
        d = asdict(self)
        for key in ("data_dir", "out", "workers"):
            d.pop(key)
        return d


def prepare_dataset(d: Dataset, kinds: Sequence[str], replication: bool = True,
                    internet_on_hetero: bool = False) -> dict[str, list[PreparedGraph]]:
    """Preprocess every graph once per distinct model kind.

    Eigensystems are shared between kinds that need them.
    """
    out: dict[str, list[PreparedGraph]] = {}
    eig_cache: dict[int, tuple] = {}
    for kind in dict.fromkeys(kinds):
        prepared = []
        for i, g in enumerate(d.graphs):
            p = prepare_graph(g, d.category_count, kind, replication, internet_on_hetero, eig_cache.get(i))
            if p.eig is not None:
                eig_cache[i] = (p.eig, p.hetero_mask)
            prepared.append(p)
        out[kind] = prepared
    return out


def build_model_config(exp: ExperimentConfig, d: Dataset, prepared: Sequence[PreparedGraph]) -> ModelConfig:
    out_dim = d.class_count if d.task_kind == "classification" else 1
    id_width = exp.id_width
    if exp.model in INTRANET_KINDS and id_width <= 0:
        id_width = max(max_block_size(prepared), 1)
    return ModelConfig(kind=exp.model, num_categories=d.category_count, out_dim=out_dim,
                       hidden=exp.train.hidden_dim, conv_layers=exp.train.conv_layers, id_width=max(id_width, 1),
                       readout=exp.readout, replication=exp.replication, high_pass=exp.high_pass,
                       per_category_weights=exp.per_category_weights, internet_on_hetero=exp.internet_on_hetero)


def _run_fold(args):
    prepared, plan, fold, cfg, tcfg, task_kind, selection = args
    res = train_fold(prepared, plan.train_indices(fold), plan.test_indices(fold), cfg, tcfg, task_kind,
                     fold=fold, selection=selection)
    return res.metric


def cross_validate(d: Dataset, exp: ExperimentConfig, prepared: Sequence[PreparedGraph] | None = None,
                   plans: dict[int, FoldPlan] | None = None) -> Report:
    """Run ``exp.folds``-fold cross-validation for every seed in ``exp.seeds``.

    ``plans`` (seed -> FoldPlan) lets ablation grids share identical folds.
    """
    start = time.perf_counter()
    if prepared is None:
        prepared = prepare_dataset(d, [exp.model], exp.replication, exp.internet_on_hetero)[exp.model]
    cfg = build_model_config(exp, d, prepared)
    rows = []
    for seed in exp.seeds:
        plan = plans[seed] if plans and seed in plans else stratified_kfold(d, exp.folds, seed)
        tcfg = replace(exp.train, seed=seed)
        jobs = [(prepared, plan, f, cfg, tcfg, d.task_kind, exp.selection) for f in range(exp.folds)]
        if exp.workers > 1:
            with get_context("fork").Pool(exp.workers) as pool:
                scores = pool.map(_run_fold, jobs)
        else:
            scores = [_run_fold(j) for j in jobs]
        for f, s in enumerate(scores):
            log.info("%s seed %d fold %d: %s = %.4f", exp.model, seed, f, metric_name(d.task_kind), s)
        rows.append([float(s) for s in scores])
    snapshot = exp.snapshot()
    snapshot["id_width"] = cfg.id_width
    return Report(metric_name(d.task_kind), rows, list(exp.seeds), snapshot, time.perf_counter() - start)

"""Command-line driver: ``divgnn stats|train|ablate|complexity|gradcheck``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or gradcheck failure.
"""

from __future__ import annotations

import argparse
import configparser
import itertools
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import TrainConfig
from .data import export_report, load_tudataset, stratified_kfold, write_csv
from .errors import CapacityError, DataFormatError, InputError, NumericError
from .graph import Dataset, Graph, dataset_heterophily_ratio, graph_heterophily_ratio, pooled_heterophily_ratio
from .model import (MODEL_KINDS, READOUT_MODES, ModelConfig, forward, init_params, loss_fn, make_batch,
                    max_block_size, prepare_graph)
from .spectral import HighPassParams, laplacian_eigensystem
from .train import ExperimentConfig, cross_validate, prepare_dataset

log = logging.getLogger("divgnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "1", "yes"):
        return True
    if text.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {text!r}")


def _add_data_flags(p):
    p.add_argument("--dataset", default="MUTAG", help="TUDataset name, e.g. MUTAG")
    p.add_argument("--data-dir", default="data", help="directory holding <NAME>_*.txt (or a <NAME>/ subdir)")


def _add_train_flags(p, models=True):
    if models:
        p.add_argument("--model", default="divgnn", choices=MODEL_KINDS)
        p.add_argument("--readout", default="category", choices=READOUT_MODES)
        p.add_argument("--replication", default=True, type=_on_off, metavar="on|off")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.0007)
    p.add_argument("--lr-halve-every", type=int, default=50)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seed", type=int, nargs="+", default=[0], help="one or more seeds")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--id-width", type=int, default=0, help="identity feature width (0 = largest block in the dataset)")
    p.add_argument("--selection", choices=("final", "best"), default="final",
                   help="score the final epoch, or the best test epoch")
    p.add_argument("--filter-p", type=float, default=1.0)
    p.add_argument("--filter-e", type=float, default=1.0)
    p.add_argument("--filter-a", type=float, default=None, help="offset; defaults to following --filter-e")
    p.add_argument("--fixed-filter", action="store_true", help="do not learn the filter parameters")
    p.add_argument("--internet-on-hetero", action="store_true",
                   help="run the spectral branch on the heterophilic subgraph only")
    p.add_argument("--per-category-weights", action="store_true")
    p.add_argument("--record-time", action="store_true", help="store wall-clock seconds in the report")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="divgnn", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file; command-line flags take precedence")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="dataset statistics and per-class heterophily histograms")
    _add_data_flags(p)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--classes", type=int, nargs="*", default=None, help="restrict histograms to these class ids")
    p.add_argument("--out", help="summary CSV (default: stdout)")
    p.add_argument("--hist-out", help="histogram CSV (default: <out>_histogram.csv or stdout)")

    p = sub.add_parser("train", help="k-fold cross-validation of one model")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", help="report path (structured JSON text)")

    p = sub.add_parser("ablate", help="paired cross-validation over a grid of variants")
    _add_data_flags(p)
    _add_train_flags(p, models=False)
    p.add_argument("--models", nargs="+", default=["divgnn", "intranet", "internet"], choices=MODEL_KINDS)
    p.add_argument("--readouts", nargs="+", default=["category"], choices=READOUT_MODES)
    p.add_argument("--replications", nargs="+", default=[True], type=_on_off, metavar="on|off")
    p.add_argument("--out", help="comparison CSV (default: stdout)")
    p.add_argument("--report-dir", help="also write one report per variant here")

    p = sub.add_parser("complexity", help="time forward+backward against edge count")
    p.add_argument("--sizes", type=int, nargs="*", default=[200, 400, 800, 1600, 3200], help="edge counts")
    p.add_argument("--nodes", type=int, default=200)
    p.add_argument("--categories", type=int, default=7)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="timing CSV (default: stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every model kind")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    p.add_argument("--corrupt-op", default=None, help=argparse.SUPPRESS)
    return parser


def _read_config(path: str) -> dict:
    cp = configparser.ConfigParser()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    cp.read_string("[config]\n" + text)
    return {k.replace("-", "_"): v for k, v in cp["config"].items()}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` fill in flags that were not given."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = _read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = known.get(key)
        if action is None:
            raise UsageError(f"unknown config key {key!r} for '{args.command}'")
        tokens = raw.split()
        if action.nargs in ("+", "*"):
            val = [action.type(t) if action.type else t for t in tokens]
        elif action.nargs == 0:
            val = _on_off(raw)
        else:
            val = action.type(raw) if action.type else raw
        if action.choices is not None:
            for v in val if isinstance(val, list) else [val]:
                if v not in action.choices:
                    raise UsageError(f"config key {key!r}: invalid choice {v!r}")
        defaults[key] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _experiment(args, model: str | None = None, readout: str | None = None,
                replication: bool | None = None) -> ExperimentConfig:
    tcfg = TrainConfig(batch_size=args.batch_size, initial_lr=args.lr, lr_halve_every_epochs=args.lr_halve_every,
                       epochs=args.epochs, seed=args.seed[0], hidden_dim=args.hidden, conv_layers=args.layers)
    learn = not args.fixed_filter
    hp = HighPassParams(args.filter_p, args.filter_e, args.filter_a, learn_p=learn, learn_e=learn,
                        learn_a=learn and args.filter_a is not None)
    return ExperimentConfig(
        dataset=args.dataset, data_dir=args.data_dir,
        model=model or args.model, readout=readout or args.readout,
        replication=args.replication if replication is None else replication,
        train=tcfg, folds=args.folds, seeds=list(args.seed), out=args.out, workers=args.workers,
        id_width=args.id_width, selection=args.selection, high_pass=hp,
        internet_on_hetero=args.internet_on_hetero, per_category_weights=args.per_category_weights)


def _emit_csv(path, header, rows):
    if path:
        write_csv(path, header, rows)
    else:
        import csv
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)


# ------------------------------------------------------------------ subcommands

def stats_rows(d: Dataset, bins: int = 20, classes=None):
    """Summary rows (Table-5 style) and per-class histogram rows."""
    if bins < 1:
        raise InputError("bins must be at least 1")
    gamma = dataset_heterophily_ratio(d)
    summary = [[d.name, len(d), f"{np.mean([g.num_nodes for g in d.graphs]):.4f}", d.category_count,
                f"{gamma:.6f}", f"{pooled_heterophily_ratio(d):.6f}", d.task_kind,
                d.class_count if d.class_count is not None else ""]]
    ratios = np.array([graph_heterophily_ratio(g) for g in d.graphs])
    labels = d.labels()
    hist = []
    edges = np.linspace(0.0, 1.0, bins + 1)
    if d.task_kind == "classification":
        wanted = sorted(set(labels.tolist())) if classes is None else classes
        for c in wanted:
            counts, _ = np.histogram(ratios[labels == c], bins=edges)
            raw = d.class_vocab[c] if d.class_vocab and 0 <= c < len(d.class_vocab) else c
            for i, n in enumerate(counts):
                hist.append([c, raw, f"{edges[i]:.4f}", f"{edges[i + 1]:.4f}", int(n)])
    else:
        counts, _ = np.histogram(ratios, bins=edges)
        for i, n in enumerate(counts):
            hist.append(["all", "", f"{edges[i]:.4f}", f"{edges[i + 1]:.4f}", int(n)])
    return summary, hist


STATS_HEADER = ["dataset", "graphs", "avg_nodes", "categories", "heterophily_ratio", "pooled_heterophily_ratio",
                "task", "classes"]
HIST_HEADER = ["class", "raw_label", "bin_lo", "bin_hi", "count"]


def cmd_stats(args) -> int:
    d = load_tudataset(args.data_dir, args.dataset)
    summary, hist = stats_rows(d, args.bins, args.classes)
    _emit_csv(args.out, STATS_HEADER, summary)
    hist_out = args.hist_out
    if hist_out is None and args.out:
        out = Path(args.out)
        hist_out = str(out.with_name(out.stem + "_histogram.csv"))
    _emit_csv(hist_out, HIST_HEADER, hist)
    return EXIT_OK


def cmd_train(args) -> int:
    exp = _experiment(args)
    d = load_tudataset(exp.data_dir, exp.dataset)
    report = cross_validate(d, exp)
    scale = 100.0 if report.metric == "accuracy" else 1.0
    print(f"{exp.dataset} {exp.model}: {report.metric} {report.summary(scale)} "
          f"({len(report.values())} folds, {report.wall_clock_seconds:.1f}s)")
    if args.out:
        export_report(report, args.out, include_timing=args.record_time)
    return EXIT_OK


ABLATE_HEADER = ["variant", "model", "readout", "replication", "metric", "mean", "std", "seeds", "fold_values"]


def ablation_grid(models, readouts, replications):
    """Expand the grid, dropping readout variants on models that have no IntraNet readout."""
    variants = []
    for model, readout, rep in itertools.product(models, readouts, replications):
        if readout != "category" and model != "intranet":
            continue
        if rep is False and model not in ("divgnn", "intranet", "hetero_gcn_fused", "hetero_ego_fused"):
            continue
        label = model if readout == "category" else f"{model}[{readout}]"
        if len(set(replications)) > 1:
            label += "+rep" if rep else "-rep"
        variants.append((label, model, readout, rep))
    return variants


def cmd_ablate(args) -> int:
    d = load_tudataset(args.data_dir, args.dataset)
    args.model, args.readout, args.replication = "divgnn", "category", True
    variants = ablation_grid(args.models, args.readouts, args.replications)
    if not variants:
        raise UsageError("the ablation grid is empty")
    plans = {s: stratified_kfold(d, args.folds, s) for s in args.seed}
    prepared_by_rep = {}
    rows = []
    for label, model, readout, rep in variants:
        if rep not in prepared_by_rep:
            kinds = [m for (_, m, _, r) in variants if r == rep]
            prepared_by_rep[rep] = prepare_dataset(d, kinds, rep, args.internet_on_hetero)
        exp = _experiment(args, model, readout, rep)
        report = cross_validate(d, exp, prepared_by_rep[rep][model], plans)
        log.info("%s: %s", label, report.summary(100.0 if report.metric == "accuracy" else 1.0))
        rows.append([label, model, readout, "on" if rep else "off", report.metric, repr(report.mean),
                     repr(report.std), " ".join(map(str, report.seeds)),
                     " ".join(repr(float(v)) for v in report.values())])
        if args.report_dir:
            Path(args.report_dir).mkdir(parents=True, exist_ok=True)
            export_report(report, Path(args.report_dir) / f"{label}.json", include_timing=args.record_time)
    _emit_csv(args.out, ABLATE_HEADER, rows)
    return EXIT_OK


def random_graph(rng: np.random.Generator, n: int, m: int, k: int, label=0, graph_id=None) -> Graph:
    """Uniformly random simple graph with exactly ``m`` edges."""
    total = n * (n - 1) // 2
    if m > total:
        raise InputError(f"{n} nodes admit at most {total} edges")
    flat = rng.choice(total, size=m, replace=False)
    iu = np.triu_indices(n, 1)
    edges = np.column_stack([iu[0][flat], iu[1][flat]])
    return Graph.build(n, rng.integers(0, k, n), edges, label, graph_id)


COMPLEXITY_HEADER = ["edges", "nodes", "conv_seconds", "eig_seconds"]


def complexity_rows(sizes, nodes=200, categories=7, hidden=64, layers=2, repeats=5, seed=0):
    """Time DivGNN forward+backward on random graphs of growing edge count.

    The Laplacian eigendecomposition is timed separately; conv time is the
    best of ``repeats`` runs.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for m in sizes:
        g = random_graph(rng, nodes, m, categories)
        t0 = time.perf_counter()
        eig = laplacian_eigensystem(g.adjacency())
        eig_seconds = time.perf_counter() - t0
        prepared = prepare_graph(g, categories, "divgnn", True, spectral=(eig, None))
        cfg = ModelConfig("divgnn", categories, 2, hidden=hidden, conv_layers=layers,
                          id_width=max(prepared.max_block_size(), 1))
        params = init_params(cfg, np.random.default_rng(seed))
        batch = make_batch([prepared], cfg)
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            loss = loss_fn(forward(batch, params, cfg), batch.labels, "classification")
            loss.backward()
            best = min(best, time.perf_counter() - t0)
        params.zero_grad()
        rows.append([m, nodes, best, eig_seconds])
    return rows


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def cmd_complexity(args) -> int:
    rows = complexity_rows(args.sizes, args.nodes, args.categories, args.hidden, args.layers, args.repeats, args.seed)
    _emit_csv(args.out, COMPLEXITY_HEADER, rows)
    if len(rows) >= 2:
        slope = loglog_slope([r[0] for r in rows], [r[2] for r in rows])
        print(f"conv-time log-log slope vs |E|: {slope:.3f}", file=sys.stderr)
    return EXIT_OK


def gradcheck_fixtures() -> list[Graph]:
    """Two small graphs with mixed categories, a replicable node and an isolated node."""
    g1 = Graph.build(6, [0, 0, 1, 0, 2, 1], [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5)], 1, "g1")
    g2 = Graph.build(5, [1, 0, 0, 2, 1], [(0, 1), (0, 2), (1, 2), (2, 3)], 0, "g2")
    return [g1, g2]


def gradcheck_variants():
    variants = [(kind, "category") for kind in MODEL_KINDS]
    variants += [("intranet", r) for r in READOUT_MODES if r != "category"]
    return variants


def run_gradcheck(eps: float = 1e-5, hidden: int = 4, seed: int = 0,
                  abs_floor: float = 1e-7) -> dict[str, dict[str, float]]:
    """Max relative gradient error per parameter, for every model variant."""
    graphs = gradcheck_fixtures()
    k = 3
    results = {}
    for kind, readout in gradcheck_variants():
        prepared = [prepare_graph(g, k, kind) for g in graphs]
        hp = HighPassParams(0.8, 0.9, 0.3, learn_a=True)
        cfg = ModelConfig(kind, k, 2, hidden=hidden, conv_layers=2, id_width=max(max_block_size(prepared), 1),
                          readout=readout, high_pass=hp)
        params = init_params(cfg, np.random.default_rng(seed))
        batch = make_batch(prepared, cfg)
        label = kind if readout == "category" else f"{kind}[{readout}]"
        results[label] = ad.gradcheck_by_param(
            lambda: loss_fn(forward(batch, params, cfg), batch.labels, "classification"), params, eps, abs_floor)
    return results


def cmd_gradcheck(args) -> int:
    ops = [args.corrupt_op] if args.corrupt_op else []
    with ad.corrupted_backward(*ops):
        results = run_gradcheck(args.eps)
    failed = False
    for variant, errors in results.items():
        for name, err in errors.items():
            ok = err <= args.tol
            failed |= not ok
            print(f"{'PASS' if ok else 'FAIL'} {variant:28s} {name:28s} {err:.3e}")
    print("gradcheck " + ("FAILED" if failed else "passed"))
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {"stats": cmd_stats, "train": cmd_train, "ablate": cmd_ablate,
            "complexity": cmd_complexity, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"divgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InputError) as exc:
        print(f"divgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DataFormatError, CapacityError) as exc:
        print(f"divgnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"divgnn: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

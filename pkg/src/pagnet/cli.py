"""Command-line interface.

Subcommands: ``train``, ``eval``, ``gradcheck``, ``invariance``,
``robustness``, ``bench``, ``plot``. Exit codes: 0 success, 1 validation
failure (bad config values, failed check, mismatched data), 2 usage error
(unknown flags, missing files).

Every file the CLI writes (checkpoints, CSVs, reports) is a pure function of
the config and seed — reruns produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import geometry
from .audits import AUDIT_MODULES, run_gradient_audit, run_invariance_audit
from .checkpoint import load_checkpoint, save_checkpoint
from .cloud_io import load_manifest_clouds, read_manifest
from .layers import PacLayer, pac_forward
from .metrics import MetricsReport, compute_metrics
from .models import (
    ClassifierModel,
    TrainState,
    build_classifier,
    build_segmenter,
    make_optimizer,
)
from .robustness import run_robustness_sweep, sweep_to_csv
from .runconfig import RunConfig, load_run_config
from .shapes import make_classification_dataset, make_segmentation_dataset
from .training import (
    predict_class,
    predict_point_labels,
    prepare_classification,
    prepare_segmentation,
    run_training,
)
from . import autodiff as ad


def _data_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(0xDA, tag)))


def _synthetic_split(run_cfg: RunConfig, tag: int, n_clouds: int):
    rng = _data_rng(run_cfg.seed, tag)
    if run_cfg.dataset == "synthetic-classification":
        return make_classification_dataset(n_clouds, run_cfg.n_points, rng,
                                           noise_std=run_cfg.noise_std)
    return make_segmentation_dataset(n_clouds, run_cfg.n_points, rng,
                                     noise_std=run_cfg.noise_std)


def _load_dataset(run_cfg: RunConfig):
    """Returns (train items, eval items or None)."""
    if run_cfg.dataset == "manifest":
        if not run_cfg.manifest:
            raise ValueError("dataset = manifest needs a manifest path")
        manifest = read_manifest(run_cfg.manifest)
        items = load_manifest_clouds(manifest)
        is_seg = manifest.is_segmentation
        if is_seg != (run_cfg.task == "segmentation"):
            raise ValueError(
                f"manifest is {'segmentation' if is_seg else 'classification'} data "
                f"but task = {run_cfg.task}")
        return items, None
    if run_cfg.dataset == "synthetic-classification":
        if run_cfg.task != "classification":
            raise ValueError("synthetic-classification data needs task = classification")
        if run_cfg.num_classes != 4:
            raise ValueError("the synthetic classification set has exactly 4 classes")
    else:
        if run_cfg.task != "segmentation":
            raise ValueError("synthetic-segmentation data needs task = segmentation")
        if run_cfg.num_classes != 2:
            raise ValueError("the synthetic segmentation set has exactly 2 parts")
    train = _synthetic_split(run_cfg, 0, run_cfg.n_train)
    evals = _synthetic_split(run_cfg, 1, run_cfg.n_eval) if run_cfg.n_eval > 0 else None
    return train, evals


def _build_state(run_cfg: RunConfig) -> TrainState:
    net = run_cfg.network()
    if run_cfg.task == "classification":
        model = build_classifier(net, seed=run_cfg.seed)
    else:
        model = build_segmenter(net, seed=run_cfg.seed)
    opt = make_optimizer(run_cfg.optimizer, lr=run_cfg.lr, momentum=run_cfg.momentum)
    return TrainState(model=model, opt=opt, seed=run_cfg.seed)


def _evaluate(model, items) -> MetricsReport:
    if isinstance(model, ClassifierModel):
        preds = [predict_class(model, cloud) for cloud, _ in items]
        gts = [label for _, label in items]
        return compute_metrics(preds, gts, task="classification",
                               num_classes=model.cfg.num_classes)
    preds, gts = [], []
    for item in items:
        cloud = item.cloud if hasattr(item, "cloud") else item
        preds.append(predict_point_labels(model, item))
        gts.append(cloud.labels)
    return compute_metrics(preds, gts, task="part_seg",
                           num_classes=model.cfg.num_classes)


def _history_csv(history) -> str:
    lines = ["epoch,total,master,mmd,ds,accuracy"]
    for rec in history:
        lines.append(
            f"{rec.epoch},{format(rec.total, '.9g')},{format(rec.master, '.9g')},"
            f"{format(rec.mmd, '.9g')},{format(rec.ds, '.9g')},"
            f"{format(rec.accuracy, '.9g')}"
        )
    return "\n".join(lines) + "\n"


def _write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _cmd_train(args) -> int:
    run_cfg = load_run_config(args.config)
    train_items, eval_items = _load_dataset(run_cfg)
    state = _build_state(run_cfg)
    model = state.model

    if run_cfg.task == "classification":
        prepared = prepare_classification(model, train_items)
    else:
        prepared = prepare_segmentation(model, train_items)
    history = run_training(state, run_cfg, prepared, log=print)

    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "model.ckpt"), state, run_cfg)
    _write(os.path.join(args.out, "history.csv"), _history_csv(history))

    report_lines = [
        f"task = {run_cfg.task}",
        f"seed = {run_cfg.seed}",
        f"epochs_run = {len(history)}",
        f"steps = {state.step}",
        f"final_loss = {format(history[-1].total, '.9g')}",
    ]
    train_report = _evaluate(model, prepared)
    _write(os.path.join(args.out, "metrics_train.csv"), train_report.to_csv())
    report_lines += [f"train_{name} = {format(v, '.9g')}" for name, v in train_report.rows()]
    print(f"train accuracy {train_report.overall_accuracy:.4f}")
    if eval_items is not None:
        eval_report = _evaluate(model, eval_items)
        _write(os.path.join(args.out, "metrics_eval.csv"), eval_report.to_csv())
        report_lines += [f"eval_{name} = {format(v, '.9g')}" for name, v in eval_report.rows()]
        print(f"eval accuracy {eval_report.overall_accuracy:.4f}")
    _write(os.path.join(args.out, "report.txt"), "\n".join(report_lines) + "\n")
    print(f"saved {os.path.join(args.out, 'model.ckpt')}")
    return 0


def _cmd_eval(args) -> int:
    state, run_cfg = load_checkpoint(args.ckpt)
    manifest = read_manifest(args.data)
    items = load_manifest_clouds(manifest)
    is_seg = manifest.is_segmentation
    if is_seg != (run_cfg.task == "segmentation"):
        raise ValueError(
            f"checkpoint is a {run_cfg.task} model but the manifest holds "
            f"{'segmentation' if is_seg else 'classification'} data")
    report = _evaluate(state.model, items)
    sys.stdout.write(report.to_text())
    if args.out:
        _write(args.out, report.to_csv())
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradient_audit(args.module)
    for result in results:
        print(result.format())
    if all(r.passed for r in results):
        print(f"all {len(results)} gradient checks passed")
        return 0
    print("gradient checks FAILED", file=sys.stderr)
    return 1


def _cmd_invariance(args) -> int:
    state, _ = load_checkpoint(args.ckpt)
    worst = run_invariance_audit(state.model, n_clouds=args.clouds,
                                 n_perms=args.perms, n_points=args.points,
                                 seed=args.seed)
    print(f"max logit deviation over {args.perms} permutations "
          f"x {args.clouds} clouds: {worst:.3e}")
    if worst < args.tol:
        return 0
    print(f"deviation exceeds tolerance {args.tol:g}", file=sys.stderr)
    return 1


def _cmd_robustness(args) -> int:
    state, run_cfg = load_checkpoint(args.ckpt)
    if args.data:
        manifest = read_manifest(args.data)
        items = load_manifest_clouds(manifest)
        if manifest.is_segmentation != (run_cfg.task == "segmentation"):
            raise ValueError("manifest task does not match the checkpoint")
    else:
        if run_cfg.dataset == "manifest":
            raise ValueError("checkpoint was trained on a manifest; pass --data")
        items = _synthetic_split(run_cfg, 1, max(run_cfg.n_eval, 1))
    ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    if not ratios:
        raise ValueError("no keep ratios given")
    options = [None, (args.r_min, args.r_max)]
    cells = run_robustness_sweep(state.model, items, ratios, options, seed=args.seed)
    csv_text = sweep_to_csv(cells)
    sys.stdout.write(csv_text)
    if args.out:
        _write(args.out, csv_text)
    return 0


def _cmd_bench(args) -> int:
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((args.n, 3))
    best = float("inf")
    for _ in range(args.repeat):
        start = time.perf_counter()
        if args.op == "knn":
            geometry.knn(rows, rows, min(16, args.n - 1),
                         query_ids=np.arange(args.n), space="metric")
        elif args.op == "fps":
            geometry.farthest_point_sample(rows, max(1, args.n // 4))
        else:  # pac
            feats = ad.constant(rng.standard_normal((args.n, 16)).astype(np.float32))
            layer = PacLayer(ad.LinearParams.create(32, 32, rng), k=8,
                             rate=2)
            pac_forward(feats, layer)
        best = min(best, time.perf_counter() - start)
    print(f"{args.op} n={args.n}: best of {args.repeat} runs {best * 1e3:.2f} ms")
    return 0


def _cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "pagnet"
    import matplotlib.pyplot as plt

    with open(args.in_path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{args.in_path}: empty CSV")
    header = lines[0].split(",")
    body = [line.split(",") for line in lines[1:]]

    fig, ax = plt.subplots(figsize=(6, 4))
    if header == ["keep_ratio", "neighbor_bounds", "accuracy"]:
        groups: dict = {}
        for ratio, bounds, acc in body:
            groups.setdefault(bounds, []).append((float(ratio), float(acc)))
        for bounds, pairs in sorted(groups.items()):
            pairs.sort()
            label = "unbounded" if bounds == "none" else f"bounds {bounds}"
            ax.plot([p[0] for p in pairs], [p[1] for p in pairs], marker="o", label=label)
        ax.set_xlabel("keep ratio")
        ax.set_ylabel("accuracy")
        ax.invert_xaxis()
        ax.legend()
    elif header[0] == "epoch":
        cols = {name: [float(row[i]) for row in body] for i, name in enumerate(header)}
        ax.plot(cols["epoch"], cols["total"], label="loss")
        ax.plot(cols["epoch"], cols["accuracy"], label="accuracy")
        ax.set_xlabel("epoch")
        ax.legend()
    elif header == ["metric", "value"]:
        scalars = [(name, float(v)) for name, v in body
                   if not name.startswith("confusion_")]
        ax.bar(range(len(scalars)), [v for _, v in scalars])
        ax.set_xticks(range(len(scalars)))
        ax.set_xticklabels([name for name, _ in scalars], rotation=45, ha="right")
    else:
        raise ValueError(f"{args.in_path}: unrecognized CSV header {lines[0]!r}")
    fig.tight_layout()
    fig.savefig(args.out, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pagnet",
        description="Permutation-invariant hierarchical point-cloud networks",
    )
    sub = parser.add_subparsers(dest="command")

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True, help="key = value run config")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True, help="manifest file")
    p_eval.add_argument("--out", default="", help="optional metrics CSV path")
    p_eval.set_defaults(func=_cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--module", default="all", choices=AUDIT_MODULES + ("all",))
    p_grad.set_defaults(func=_cmd_gradcheck)

    p_inv = sub.add_parser("invariance", help="permutation-invariance audit")
    p_inv.add_argument("--ckpt", required=True)
    p_inv.add_argument("--perms", type=int, default=20)
    p_inv.add_argument("--clouds", type=int, default=10)
    p_inv.add_argument("--points", type=int, default=96)
    p_inv.add_argument("--tol", type=float, default=1e-5)
    p_inv.add_argument("--seed", type=int, default=0)
    p_inv.set_defaults(func=_cmd_invariance)

    p_rob = sub.add_parser("robustness", help="point-dropout sweep")
    p_rob.add_argument("--ckpt", required=True)
    p_rob.add_argument("--data", default="", help="manifest (default: synthetic eval split)")
    p_rob.add_argument("--ratios", default="1.0,0.875,0.75,0.5,0.25")
    p_rob.add_argument("--r-min", type=float, default=0.0)
    p_rob.add_argument("--r-max", type=float, default=1.0)
    p_rob.add_argument("--seed", type=int, default=0)
    p_rob.add_argument("--out", default="", help="optional CSV path")
    p_rob.set_defaults(func=_cmd_robustness)

    p_bench = sub.add_parser("bench", help="time a geometry or convolution kernel")
    p_bench.add_argument("--op", required=True, choices=("knn", "fps", "pac"))
    p_bench.add_argument("--n", type=int, default=1024)
    p_bench.add_argument("--repeat", type=int, default=5)
    p_bench.set_defaults(func=_cmd_bench)

    p_plot = sub.add_parser("plot", help="render a CSV as an SVG figure")
    p_plot.add_argument("--in", dest="in_path", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands: train, eval, segment, ablate, graph-dump. Every command is
deterministic given (config, seed) and produces byte-identical artifacts
on rerun. Exit codes: 0 success, 1 contract error, 2 I/O error.
"""

import argparse
import concurrent.futures
import itertools
import json
import os
import statistics
import sys

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config, load_sweep, model_config
from .data import (PALETTE, load_dataset, read_ppm, save_dataset,
                   synth_dataset, write_pgm, write_ppm)
from .errors import ContractError
from .graph import graph_dump
from .metrics import confusion, metrics
from .model import build_model, forward, predict, train
from .validation import check_image

# label color table used by `segment` (row c colors class c, cycling past 9)
PALETTE_U8 = np.rint(PALETTE * 255.0).astype(np.uint8)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _load_train_data(cfg):
    if cfg["data"]:
        manifest = cfg["data"]
        if os.path.isdir(manifest):
            manifest = os.path.join(manifest, "manifest.json")
        return load_dataset(manifest)
    data = synth_dataset(cfg["synth_n"], cfg["synth_size"], cfg["synth_classes"],
                         cfg["synth_seed"])
    if not data:
        raise ContractError("synth_n must be >= 1 for training")
    return data, cfg["synth_classes"]


def _metric_report_lines(rep):
    lines = ["class  iou        f1"]
    for c in range(len(rep.per_class_iou)):
        iou, f1 = rep.per_class_iou[c], rep.per_class_f1[c]
        if np.isnan(iou):
            lines.append(f"{c:<6d} -          -")
        else:
            lines.append(f"{c:<6d} {iou:<10.6f} {f1:<10.6f}")
    lines.append(f"OA     {rep.oa:.6f}")
    lines.append(f"meanF1 {rep.mean_f1:.6f}")
    lines.append(f"mIoU   {rep.miou:.6f}")
    return lines


def _dataset_metrics(model, dataset, classes):
    if not dataset:
        raise ContractError("dataset is empty")
    cm = None
    for item in dataset:
        c = confusion(predict(model, item.image), item.labels, classes)
        cm = c if cm is None else cm.add(c)
    return metrics(cm)


def cmd_train(args):
    cfg = load_run_config(args.config,
                          {"seed": args.seed} if args.seed is not None else None)
    dataset, classes = _load_train_data(cfg)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    mcfg = model_config(cfg, dataset[0].image.shape[:2], classes)
    model = build_model(mcfg)
    log = train(model, dataset)
    save_checkpoint(model, os.path.join(out_dir, "checkpoint.gibrss"))
    write_csv(os.path.join(out_dir, "train_log.csv"), log.CSV_FIELDS, log.rows())
    rep = _dataset_metrics(model, dataset, classes)
    report = "\n".join(["final training-set metrics", ""] + _metric_report_lines(rep))
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(report + "\n")
    print(report)
    return 0


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    manifest = args.data
    if os.path.isdir(manifest):
        manifest = os.path.join(manifest, "manifest.json")
    dataset, classes = load_dataset(manifest)
    if classes != model.cfg.classes:
        raise ContractError(
            f"dataset has {classes} classes but checkpoint was trained with "
            f"{model.cfg.classes}")
    rep = _dataset_metrics(model, dataset, classes)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    rows = [[c, rep.per_class_iou[c], rep.per_class_f1[c]]
            for c in range(classes) if not np.isnan(rep.per_class_iou[c])]
    rows.append(["mean", rep.miou, rep.mean_f1])
    write_csv(os.path.join(out_dir, "metrics.csv"), ("class", "iou", "f1"), rows)
    report = "\n".join(_metric_report_lines(rep))
    with open(os.path.join(out_dir, "eval_report.txt"), "w") as f:
        f.write(report + "\n")
    print(report)
    return 0


def colorize(labels):
    """Class indices to RGB via the documented palette, cycling past its end."""
    return PALETTE_U8[np.asarray(labels) % len(PALETTE_U8)].astype(np.float64) / 255.0


def cmd_segment(args):
    model = load_checkpoint(args.checkpoint)
    image = check_image(read_ppm(args.image))
    labels = predict(model, image)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    write_pgm(os.path.join(args.out, f"{stem}_labels.pgm"), labels)
    overlay = 0.5 * image + 0.5 * colorize(labels)
    write_ppm(os.path.join(args.out, f"{stem}_overlay.ppm"), overlay)
    print(f"wrote {stem}_labels.pgm and {stem}_overlay.ppm to {args.out}")
    return 0


def _run_cell(cfg, cell, dataset, classes, eval_set):
    run = dict(cfg)
    run.update(cell)
    mcfg = model_config(run, dataset[0].image.shape[:2], classes)
    model = build_model(mcfg)
    train(model, dataset)
    rep = _dataset_metrics(model, eval_set, classes)
    return rep


def cmd_ablate(args):
    cfg = load_run_config(args.config)
    sweep = load_sweep(args.sweep)
    dataset, classes = _load_train_data(cfg)
    eval_set = synth_dataset(cfg["eval_n"], cfg["synth_size"], classes,
                             cfg["eval_seed"])
    if not eval_set:
        eval_set = dataset
    seeds = sweep.pop("seed", [cfg["seed"]])
    axes = sorted(sweep.items())
    names = [k for k, _ in axes]
    grid = list(itertools.product(*[v for _, v in axes])) or [()]

    def run_cell(values):
        cell = dict(zip(names, values))
        reps = [_run_cell(cfg, {**cell, "seed": s}, dataset, classes, eval_set)
                for s in seeds]
        return values, {
            "miou": statistics.median(r.miou for r in reps),
            "oa": statistics.median(r.oa for r in reps),
            "mean_f1": statistics.median(r.mean_f1 for r in reps),
        }

    workers = max(1, int(os.environ.get("GIBRSS_THREADS", "1")))
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(run_cell, grid))
    else:
        results = dict(run_cell(v) for v in grid)

    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    header = tuple(names) + ("median_miou", "median_oa", "median_meanf1")
    rows = [list(values) + [results[values]["miou"], results[values]["oa"],
                            results[values]["mean_f1"]]
            for values in sorted(grid)]
    write_csv(os.path.join(out_dir, "sweep.csv"), header, rows)
    print(f"wrote {len(rows)} sweep rows to {os.path.join(out_dir, 'sweep.csv')}")
    return 0


def cmd_graph_dump(args):
    cfg = load_run_config(args.config)
    image = check_image(read_ppm(args.image))
    mcfg = model_config(cfg, image.shape[:2], max(cfg["synth_classes"], 2))
    model = build_model(mcfg)
    trace = forward(model, image)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, g in enumerate(trace.stage_graphs):
        path = os.path.join(out_dir, f"graph_stage{i}.json")
        with open(path, "w") as f:
            json.dump(graph_dump(g), f, sort_keys=True, separators=(",", ":"))
            f.write("\n")
        paths.append(path)
    print("wrote " + ", ".join(paths))
    return 0


def cmd_synth(args):
    """Generate a synthetic dataset to disk (convenience for eval/segment)."""
    data = synth_dataset(args.n, args.size, args.classes, args.seed)
    manifest = save_dataset(data, args.out, args.classes)
    print(f"wrote {len(data)} images and {manifest}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gibrss",
                                description="Graph-bottleneck image segmentation")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("segment", help="segment one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    a = sub.add_parser("ablate", help="run a configuration sweep")
    a.add_argument("--config", required=True)
    a.add_argument("--sweep", required=True)
    a.set_defaults(func=cmd_ablate)

    g = sub.add_parser("graph-dump", help="dump per-stage patch graphs")
    g.add_argument("--config", required=True)
    g.add_argument("--image", required=True)
    g.set_defaults(func=cmd_graph_dump)

    y = sub.add_parser("synth", help="write a synthetic dataset to disk")
    y.add_argument("--out", required=True)
    y.add_argument("--n", type=int, default=8)
    y.add_argument("--size", type=int, default=64)
    y.add_argument("--classes", type=int, default=3)
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

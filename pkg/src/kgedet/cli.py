"""Command-line surface for reproducible experiments.

Every subcommand reads declared inputs, writes JSON/CSV artifacts into
--out, and is deterministic for a fixed config: re-runs produce
byte-identical files.  All randomness flows from explicit seeds recorded in
the output metadata; wall-clock timings go to stderr only, never into
artifacts.

Exit codes: 0 success, 2 usage/config error, 3 numeric failure,
4 gradient-check tolerance failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _kernels, boxes, evaluation, heads, losses, prototypes, trainer
from .errors import NumericError
from .knowledge_graph import CategoryMap, load_graph

THREAD_CAP_ENV = "KGEDET_MAX_THREADS"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_metadata(out: Path, seed: int | None, extra: dict | None = None) -> None:
    meta = {
        "backend": _kernels.active_backend(),
        "seed": seed,
        "thread_cap": os.environ.get(THREAD_CAP_ENV),
    }
    if extra:
        meta.update(extra)
    _write_json(out / "metadata.json", meta)


def _read_classes(path: str) -> list[str]:
    names = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n and not n.startswith("#")]
    if not names:
        raise ValueError(f"{path}: no class names")
    return names


def _out_dir(value: str) -> Path:
    out = Path(value)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_build_prototypes(args) -> int:
    out = _out_dir(args.out)
    classes = _read_classes(args.classes)
    if args.graph:
        graph = load_graph(args.graph)
        if args.dim > graph.n_nodes:
            raise ValueError(
                f"--dim {args.dim} exceeds the graph's {graph.n_nodes} nodes"
            )
        weights = json.loads(Path(args.relation_weights).read_text()) if args.relation_weights else None
        protos = prototypes.build_graph_prototypes(graph, classes, args.dim, weights)
    else:
        table = prototypes.load_embedding_table(args.table)
        aliases = json.loads(Path(args.aliases).read_text()) if args.aliases else None
        protos = prototypes.select_prototypes(table, classes, aliases)
    protos.save(out / "prototypes.json")
    for metric in ("cosine", "manhattan"):
        matrix = prototypes.pairwise_distance_matrix(protos, metric)
        (out / f"distances_{metric}.csv").write_text(
            prototypes.distance_matrix_csv(classes, matrix), encoding="utf-8"
        )
    _write_metadata(out, seed=None, extra={"provenance": protos.provenance})
    return 0


def _load_experiment_config(args) -> dict:
    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.out:
        config["out"] = args.out
    if args.seed is not None:
        config["seed"] = args.seed
    if "seed" not in config:
        raise ValueError("experiment config must declare a seed")
    if "out" not in config:
        raise ValueError("experiment config must declare an output directory")
    return config


def _resolve_prototypes(spec, seed: int) -> prototypes.PrototypeSet:
    if isinstance(spec, str):
        return prototypeset_from_path(spec)
    if isinstance(spec, dict) and "random_orthogonal" in spec:
        params = spec["random_orthogonal"]
        return prototypes.random_orthogonal_prototypes(
            n_classes=int(params["n_classes"]),
            dim=int(params["dim"]),
            seed=int(params.get("seed", seed)),
        )
    raise ValueError("prototypes must be a file path or {'random_orthogonal': {...}}")


def prototypeset_from_path(path: str) -> prototypes.PrototypeSet:
    if not Path(path).exists():
        raise ValueError(f"prototype file not found: {path}")
    return prototypes.PrototypeSet.load(path)


def _cmd_train_head(args) -> int:
    config = _load_experiment_config(args)
    seed = int(config["seed"])
    out = _out_dir(config["out"])
    protos = _resolve_prototypes(config["prototypes"], seed)

    dataset_cfg = dict(config["dataset"])
    dataset_cfg.setdefault("n_classes", protos.n_classes)
    dataset_cfg.setdefault("seed", seed)
    dataset = trainer.generate_dataset(trainer.DatasetSpec.from_json(dataset_cfg), protos)

    loss_config = losses.LossConfig.from_json(config["loss"])
    optim_cfg = dict(config["optimizer"])
    optim_cfg.setdefault("seed", seed + 1)
    optimizer = trainer.OptimizerSpec.from_json(optim_cfg)

    head_cfg = dict(config.get("head", {}))
    head = heads.ProjectionHead.initialize(
        d_in=int(dataset_cfg.get("d_in", 32)),
        d_out=protos.dim,
        seed=int(head_cfg.get("seed", seed + 2)),
        scale=float(head_cfg.get("scale", 0.1)),
    )

    report = trainer.train(head, dataset, loss_config, protos, optimizer)
    print(f"trained {optimizer.steps} steps in {report.wall_clock_s:.2f}s", file=sys.stderr)
    _write_json(out / "train_report.json", report.to_json(include_wall_clock=False))
    _write_json(out / "head.json", head.to_json())
    _write_metadata(out, seed=seed, extra={"loss": loss_config.to_json()})
    return 0


def _cmd_evaluate(args) -> int:
    out = _out_dir(args.out)
    dets = boxes.load_jsonl(args.dets)
    gts = boxes.load_jsonl(args.gts)
    categories = None
    if args.categories:
        categories = CategoryMap.from_json(
            json.loads(Path(args.categories).read_text(encoding="utf-8"))
        )
    report = evaluation.average_precision(dets, gts, categories)
    _write_json(out / "ap_report.json", report.to_json())
    classes = sorted({g.label for g in gts})
    matrix = evaluation.confusion_matrix(dets, gts, classes, iou_floor=args.iou_floor)
    (out / "confusion_matrix.csv").write_text(matrix.to_csv(), encoding="utf-8")
    if categories is not None:
        split = evaluation.category_confusion(matrix, categories)
        _write_json(out / "category_confusion.json", split.to_json())
    _write_metadata(out, seed=None)
    return 0


def _cmd_compare_errors(args) -> int:
    out = _out_dir(args.out)
    matrix_a = evaluation.ConfusionMatrix.from_csv(Path(args.confusion_a).read_text(encoding="utf-8"))
    matrix_b = evaluation.ConfusionMatrix.from_csv(Path(args.confusion_b).read_text(encoding="utf-8"))
    weights = json.loads(Path(args.gt_counts).read_text(encoding="utf-8"))
    comparison = evaluation.error_distribution_comparison(matrix_a, matrix_b, weights)
    (out / "js_comparison.csv").write_text(comparison.to_csv(), encoding="utf-8")
    _write_metadata(out, seed=None)
    return 0


def _cmd_decode_heatmap(args) -> int:
    out = _out_dir(args.out)
    embedding_map = np.load(args.map)
    protos = prototypeset_from_path(args.prototypes)
    detections = heads.decode_keypoints(
        embedding_map, protos, metric=args.metric, background_threshold=args.threshold
    )
    records = [
        boxes.AnnotatedBox(
            image_id=args.image_id,
            box=d.box,
            label=protos.classes[d.class_id - 1],
            score=d.score,
        )
        for d in detections
    ]
    boxes.dump_jsonl(records, out / "detections.jsonl")
    _write_metadata(out, seed=None, extra={"metric": args.metric, "threshold": args.threshold})
    return 0


def _cmd_gradcheck(args) -> int:
    kinds = losses.LOSS_KINDS if args.loss == "all" else (args.loss,)
    started = time.perf_counter()
    results = trainer.gradcheck_suite(
        kinds=kinds, instances_per_kind=args.instances, seed=args.seed
    )
    elapsed = time.perf_counter() - started
    failed = False
    for kind, err in results.items():
        status = "PASS" if err < args.tolerance else "FAIL"
        failed |= status == "FAIL"
        print(f"{kind}: max_rel_err={err:.3e} {status}")
    print(f"checked {args.instances} instances per loss in {elapsed:.1f}s", file=sys.stderr)
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "gradcheck.json", {"results": results, "tolerance": args.tolerance})
        _write_metadata(out, seed=args.seed)
    return 4 if failed else 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgedet",
        description="Embedding-space detection heads: prototypes, training, "
        "decoding, and error analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-prototypes", help="construct a prototype set and distance matrices")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--graph", help="knowledge-graph edge list (TSV)")
    source.add_argument("--table", help="word-embedding table (text)")
    p.add_argument("--classes", required=True, help="class list, one name per line")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--relation-weights", help="JSON {relation: weight} for graph collapse")
    p.add_argument("--aliases", help="JSON {class: table key} for table lookup")
    p.set_defaults(func=_cmd_build_prototypes)

    p = sub.add_parser("train-head", help="fit a projection head on synthetic features")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", help="override the config's output directory")
    p.add_argument("--seed", type=int, help="override the config's seed")
    p.set_defaults(func=_cmd_train_head)

    p = sub.add_parser("evaluate", help="AP report and confusion matrix from JSONL boxes")
    p.add_argument("--dets", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--categories", help="JSON {class: category}")
    p.add_argument("--iou-floor", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare-errors", help="JS distance between confusion matrices")
    p.add_argument("--confusion-a", required=True)
    p.add_argument("--confusion-b", required=True)
    p.add_argument("--gt-counts", required=True, help="JSON {class: count}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare_errors)

    p = sub.add_parser("decode-heatmap", help="decode detections from an embedding map (.npy)")
    p.add_argument("--map", required=True)
    p.add_argument("--prototypes", required=True)
    p.add_argument("--metric", default="cosine", choices=["cosine", "manhattan"])
    p.add_argument("--threshold", type=float, default=0.9, help="background distance threshold")
    p.add_argument("--image-id", default="map")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode_heatmap)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--loss", default="all", choices=["all", *losses.LOSS_KINDS])
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    tablegraph synth      --config synth.json --out data.jsonl
    tablegraph train      --dataset data.jsonl --out runs/full [ablation flags]
    tablegraph eval       --checkpoint runs/full/model.ckpt --dataset data.jsonl --out runs/full/eval
    tablegraph predict    --checkpoint runs/full/model.ckpt --dataset data.jsonl --out probs.csv
    tablegraph graph      --dataset data.jsonl --doc-id doc-00000 --out graph.json
    tablegraph baseline   --dataset data.jsonl --k 1 --out runs/lr1
    tablegraph gradcheck

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baseline import BaselineConfig, BaselineDiverged, evaluate_baseline, fit_on_samples
from .dataio import DatasetFormatError, load_dataset, make_splits, save_dataset, select
from .doc import DEFAULT_SCHEMA, ClassSchema, InvalidBoxError
from .experiment import ExperimentConfig, load_config, run_experiment, sha256_file, split_samples
from .geometry import EDGES, MISSING, assign_reading_order, build_neighbor_graph
from .metrics import evaluate, format_table
from .network import CheckpointError, TrainingDiverged, class_mask, load_checkpoint, save_checkpoint
from .network import samples_from_records
from .network.gradcheck import format_checks, run_layer_checks
from .synth import SynthConfig, positive_rate, synth_generate

log = logging.getLogger("tablegraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- helpers


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _read_config(path) -> dict:
    try:
        return load_config(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except (json.JSONDecodeError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def _experiment_config(args) -> ExperimentConfig:
    raw = _read_config(args.config)
    try:
        cfg = ExperimentConfig.from_dict({k: v for k, v in raw.items() if k != "synth"})
        return cfg.with_overrides(
            seed=args.seed, neighbors=args.neighbors, loss=args.loss, targets=args.targets,
            no_attention=args.no_attention, no_seq_conv=args.no_seq_conv,
            no_dropout_block=args.no_dropout_block, no_text_features=args.no_text_features,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _load(path, schema: Optional[ClassSchema] = None):
    try:
        return load_dataset(path, len(schema) if schema else None)
    except FileNotFoundError:
        raise DataError(f"dataset not found: {path}") from None
    except (DatasetFormatError, InvalidBoxError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(command: str, argv, config: dict, seeds: dict, datasets: dict,
              artifacts: dict, scores: dict, started: float) -> dict:
    return {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "datasets": datasets,
        "artifacts": artifacts,
        "scores": scores,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }


def _float(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    raw = _read_config(args.config)
    section = raw.get("synth", raw)
    try:
        cfg = SynthConfig.from_dict(section)
        if args.seed is not None:
            cfg = SynthConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
        schema = ClassSchema.from_dict(raw["schema"]) if "schema" in raw else DEFAULT_SCHEMA
        records = synth_generate(cfg, schema)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth configuration: {exc}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(records, out)
    print(f"wrote {len(records)} documents to {out} "
          f"(positive rate {positive_rate(records, schema):.4f})")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    started = time.perf_counter()
    cfg = _experiment_config(args)
    records = _load(args.dataset, cfg.schema)
    out = _out_dir(args.out)
    try:
        result = run_experiment(records, cfg)
    except TrainingDiverged as exc:
        raise NumericError(f"training diverged: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    dataset_hash = sha256_file(args.dataset)
    save_checkpoint(result.model, out / "model.ckpt",
                    {"experiment": cfg.to_dict(), "dataset_sha256": dataset_hash})
    with open(out / "history.tsv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "best"])
        for rec in result.history.epochs:
            w.writerow([rec.epoch, _float(rec.train_loss), _float(rec.val_loss),
                        int(rec.epoch == result.history.best_epoch)])
    _write_json(out / "splits.json", result.splits.to_dict())
    _write_json(out / "report_adaptation.json", result.adaptation.to_dict())
    _write_json(out / "report_generalization.json", result.generalization.to_dict())
    table = format_table([(args.name or "network", result.adaptation, result.generalization)])
    (out / "report.md").write_text(table + "\n", encoding="utf-8")
    manifest = _manifest(
        "train", argv, cfg.to_dict(),
        {"train": cfg.train.seed, "split": cfg.effective_split_seed},
        {"dataset": {"path": str(args.dataset), "sha256": dataset_hash}},
        {k: k for k in ("model.ckpt", "history.tsv", "splits.json", "report_adaptation.json",
                        "report_generalization.json", "report.md")},
        {**result.scores(), "best_epoch": result.history.best_epoch,
         "best_val_loss": result.history.best_val_loss, "epochs_run": len(result.history.epochs),
         "model_sha256": sha256_file(out / "model.ckpt")},
        started,
    )
    _write_json(out / "manifest.json", manifest)
    print(table)
    return EXIT_OK


def _load_checkpoint(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    except (CheckpointError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None


def _checkpoint_experiment(extra: dict, model_cfg) -> ExperimentConfig:
    if "experiment" in extra:
        return ExperimentConfig.from_dict(extra["experiment"])
    return ExperimentConfig(model=model_cfg)


def cmd_eval(args, argv) -> int:
    started = time.perf_counter()
    model, extra = _load_checkpoint(args.checkpoint)
    cfg = _checkpoint_experiment(extra, model.config)
    records = _load(args.dataset, cfg.schema)
    active = class_mask(cfg.train.targets, cfg.schema)
    out = _out_dir(args.out)
    if args.split == "all":
        groups = {"all": samples_from_records(records, cfg.schema, model.config.n_neighbors)}
    else:
        try:
            _, (_, va, ge) = split_samples(records, cfg)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        groups = {"adaptation": va, "generalization": ge}
        if args.split != "both":
            groups = {args.split: groups[args.split]}
    reports, artifacts = {}, {}
    for name, samples in groups.items():
        try:
            rep = evaluate(model, samples, cfg.schema, name, active)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        reports[name] = rep
        fname = f"report_{name}.json"
        _write_json(out / fname, rep.to_dict())
        artifacts[fname] = fname
        print(f"{name}: body F1 {rep.row()[0]}  header F1 {rep.row()[1]}  micro F1 {rep.row()[2]}")
    _write_json(out / "manifest.json", _manifest(
        "eval", argv, cfg.to_dict(), {"split": cfg.effective_split_seed},
        {"dataset": {"path": str(args.dataset), "sha256": sha256_file(args.dataset)},
         "checkpoint": {"path": str(args.checkpoint), "sha256": sha256_file(args.checkpoint)}},
        artifacts, {k: r.to_dict() for k, r in reports.items()}, started))
    return EXIT_OK


def predict_rows(model, records, schema: ClassSchema):
    """Yield ``(doc_id, page, box_index, probs)`` in page box order."""
    from .metrics import predict_samples

    samples = samples_from_records(records, schema, model.config.n_neighbors)
    for sample, probs in zip(samples, predict_samples(model, samples)):
        by_box = np.empty_like(probs)
        by_box[sample.features.order] = probs
        for i, p in enumerate(by_box):
            yield sample.doc_id, sample.page_index, i, p


def cmd_predict(args, argv) -> int:
    model, extra = _load_checkpoint(args.checkpoint)
    cfg = _checkpoint_experiment(extra, model.config)
    records = _load(args.dataset, cfg.schema)
    if args.doc_id:
        records = select(records, [args.doc_id])
        if not records:
            raise DataError(f"document {args.doc_id!r} not in {args.dataset}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    count = 0
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "page", "box", *cfg.schema.names])
        for doc_id, page, box, probs in predict_rows(model, records, cfg.schema):
            w.writerow([doc_id, page, box, *map(_float, probs)])
            count += 1
    os.replace(tmp, out)
    print(f"wrote {count} box predictions to {out}")
    return EXIT_OK


def graph_dump(record, n_neighbors: int) -> dict:
    """Neighbor slots and reading order of every box, plus plot data (boxes and
    center-to-center edge segments)."""
    pages = []
    for p, ap in enumerate(record.pages):
        page = ap.page
        graph = build_neighbor_graph(page, n_neighbors)
        order = assign_reading_order(page).as_matrix()
        boxes, segments = [], []
        for i, box in enumerate(page.wordboxes):
            nb = {EDGES[e]: graph.neighbors(i, e) for e in range(4)}
            boxes.append({
                "index": i, "bbox": list(box.bbox), "text": box.text,
                "line": int(order[i, 0]), "order_in_line": int(order[i, 1]),
                "rot_line": int(order[i, 2]), "rot_order_in_line": int(order[i, 3]),
                "neighbors": nb,
            })
            for e, js in nb.items():
                for j in js:
                    segments.append({"from": i, "to": j, "edge": e,
                                     "xy": [*map(float, box.center), *map(float, page.wordboxes[j].center)]})
        pages.append({"page": p, "width": page.width, "height": page.height, "n_neighbors": n_neighbors,
                      "edge_count": graph.edge_count(), "boxes": boxes, "segments": segments})
    return {"doc_id": record.doc_id, "layout_family": record.layout_family, "pages": pages}


def cmd_graph(args, argv) -> int:
    records = _load(args.dataset)
    found = select(records, [args.doc_id])
    if not found:
        raise DataError(f"document {args.doc_id!r} not in {args.dataset}")
    neighbors = 1 if args.neighbors is None else args.neighbors
    if neighbors < 0:
        raise UsageError("--neighbors must be >= 0")
    dump = graph_dump(found[0], neighbors)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, dump)
    print(f"wrote graph of {args.doc_id} to {out}")
    return EXIT_OK


def cmd_baseline(args, argv) -> int:
    started = time.perf_counter()
    cfg = _experiment_config(args)
    records = _load(args.dataset, cfg.schema)
    out = _out_dir(args.out)
    k = args.k
    # the design matrix needs at least k neighbors per edge
    cfg = cfg.with_overrides(neighbors=max(k, cfg.model.n_neighbors))
    try:
        splits, (tr, va, ge) = split_samples(records, cfg)
        active = class_mask(cfg.train.targets, cfg.schema)
        lr = fit_on_samples(tr, BaselineConfig(k_neighbors=k), active)
        reports = {name: evaluate_baseline(lr, s, cfg.schema, name, active)
                   for name, s in (("adaptation", va), ("generalization", ge))}
    except BaselineDiverged as exc:
        raise NumericError(str(exc)) from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    for name, rep in reports.items():
        _write_json(out / f"report_{name}.json", rep.to_dict())
    table = format_table([(f"logistic regression k={k}", reports["adaptation"], reports["generalization"])])
    (out / "report.md").write_text(table + "\n", encoding="utf-8")
    _write_json(out / "manifest.json", _manifest(
        "baseline", argv, {**cfg.to_dict(), "baseline": {"k_neighbors": k}},
        {"split": cfg.effective_split_seed},
        {"dataset": {"path": str(args.dataset), "sha256": sha256_file(args.dataset)}},
        {k_: k_ for k_ in ("report_adaptation.json", "report_generalization.json", "report.md")},
        {k_: r.to_dict() for k_, r in reports.items()}, started))
    print(table)
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    checks = run_layer_checks(seed=args.seed or 0, tol=args.tol)
    print(format_checks(checks))
    if not all(c.passed for c in checks):
        raise NumericError("gradient check failed for " + ", ".join(c.name for c in checks if not c.passed))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="JSON file with model/train/split sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--neighbors", type=int, metavar="N")
    p.add_argument("--loss", choices=("bce", "focal"))
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-seq-conv", action="store_true")
    p.add_argument("--no-dropout-block", action="store_true")
    p.add_argument("--no-text-features", action="store_true")
    p.add_argument("--targets", choices=("all", "lineitems", "others", "no-header"))
    p.add_argument("--out", required=True, metavar="DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tablegraph", description="Word-box graph network for line-item tables.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the network and score both evaluation splits")
    _experiment_flags(p)
    p.add_argument("--name", help="experiment label in the report table")

    p = sub.add_parser("baseline", help="logistic regression over own and neighbor rows")
    _experiment_flags(p)
    p.add_argument("--k", type=int, default=0, help="neighbors per edge in the design matrix")

    p = sub.add_parser("eval", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("adaptation", "generalization", "both", "all"), default="both")
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="per-box probabilities")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--doc-id")
    p.add_argument("--out", required=True)

    p = sub.add_parser("graph", help="dump the neighbor graph and reading order of one document")
    p.add_argument("--dataset", required=True)
    p.add_argument("--doc-id", required=True)
    p.add_argument("--neighbors", type=int, metavar="N")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "graph": cmd_graph, "baseline": cmd_baseline, "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if args.command == "synth":
            return cmd_synth(args)
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"tablegraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"tablegraph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"tablegraph: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"tablegraph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface.

Subcommands: label, featurize, train, rerank, eval, synth, report. Exit
codes: 0 success, 1 usage error, 2 data error, 3 numeric failure. Logs go to
standard error; data goes to files or standard output. Every command
validates its inputs and computes results before writing anything, and every
successful run that writes files leaves a <output>.manifest.json next to its
primary output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .core import (
    DataError,
    Dataset,
    dataset_to_lines,
    label_dataset,
    read_dataset,
)
from .features import HogConfig, PgmDirectory, featurize_dataset
from .metrics import EvalConfig, EvalReport, identity_rankings, render_csv, render_text, report
from .ranking import (
    NumericError,
    TrainingConfig,
    load_model,
    rerank,
    save_model,
    train_full_rank_baseline,
    train_soft_margin,
)
from .synthdata import SynthConfig, generate_feature_dataset, generate_geometric_dataset, synth_metadata

logger = logging.getLogger("proprank")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_dataset_file(dataset: Dataset, path: Path) -> None:
    lines = dataset_to_lines(dataset)
    _atomic_write_text(path, "".join(line + "\n" for line in lines))


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(args: argparse.Namespace, inputs: list[Path], outputs: list[Path], started: float) -> None:
    if not outputs:
        return
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "arguments": {k: str(v) if isinstance(v, Path) else v for k, v in resolved.items()},
        "config_digest": hashlib.sha256(
            json.dumps(resolved, sort_keys=True, default=str).encode("utf-8")
        ).hexdigest(),
        "inputs": {str(p): _sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "wall_time_s": round(time.monotonic() - started, 3),
        "version": __version__,
    }
    path = outputs[0].with_name(outputs[0].name + ".manifest.json")
    _atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{what} must be a comma-separated list of integers") from exc


def _parse_float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{what} must be a comma-separated list of numbers") from exc


# ---------------------------------------------------------------------------
# Commands


def cmd_label(args: argparse.Namespace) -> int:
    started = time.monotonic()
    dataset = read_dataset(args.input)
    labeled = label_dataset(dataset)
    objects = sum(len(r.groundtruth) for r in labeled.records)
    candidates = sum(r.num_candidates for r in labeled.records)
    _write_dataset_file(labeled, args.output)
    logger.info(
        "labeled %d records (%d groundtruth objects, %d candidates) -> %s",
        len(labeled.records), objects, candidates, args.output,
    )
    _write_manifest(args, [args.input], [args.output], started)
    return 0


def _hog_config_from(args: argparse.Namespace) -> HogConfig:
    return HogConfig(
        resize_w=args.resize_w,
        resize_h=args.resize_h,
        cell_size=args.cell_size,
        orientation_bins=args.bins,
        block_size=args.block_size,
        block_stride=args.block_stride,
        clip_value=args.clip,
    )


def cmd_featurize(args: argparse.Namespace) -> int:
    started = time.monotonic()
    dataset = read_dataset(args.input)
    config = _hog_config_from(args)
    images = PgmDirectory(args.images)
    featurized, failures = featurize_dataset(dataset, images, config, keep_existing=args.keep_existing)
    for failure in failures:
        logger.warning("featurize: %s", failure)
    _write_dataset_file(featurized, args.output)
    meta_path = args.output.with_name(args.output.name + ".meta.json")
    _atomic_write_text(meta_path, json.dumps({"hog_config": config.to_dict()}, indent=2) + "\n")
    logger.info(
        "featurized %d records (%d failures, dimension %d) -> %s",
        len(featurized.records), len(failures), config.dimension, args.output,
    )
    _write_manifest(args, [args.input], [args.output, meta_path], started)
    return 0


def _sidecar_hog_config(dataset_path: Path) -> HogConfig | None:
    meta_path = dataset_path.with_name(dataset_path.name + ".meta.json")
    if not meta_path.is_file():
        return None
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if isinstance(meta, dict) and isinstance(meta.get("hog_config"), dict):
        return HogConfig.from_dict(meta["hog_config"])
    return None


def cmd_train(args: argparse.Namespace) -> int:
    started = time.monotonic()
    dataset = read_dataset(args.input)
    config = TrainingConfig(
        k=args.k,
        C=args.C,
        epochs=args.epochs,
        eta0=args.eta0,
        step_decay=args.step_decay,
        seed=args.seed,
        mode=args.mode,
        hard_mode_C=args.hard_mode_C,
        convergence_tol=args.convergence_tol,
        per_image_slack=not args.per_constraint_slack,
    )
    trainer = train_full_rank_baseline if args.constraints == "full" else train_soft_margin
    model = trainer(dataset, config, hog_config=_sidecar_hog_config(args.input))
    save_model(model, args.output)
    logger.info(
        "trained on %d images in %d epochs: final objective %.6g -> %s",
        len(dataset.records), len(model.objective_history), model.final_objective, args.output,
    )
    if model.violation_report is not None:
        logger.info("violation report: %s", json.dumps(model.violation_report))
    _write_manifest(args, [args.input], [args.output], started)
    return 0


def cmd_rerank(args: argparse.Namespace) -> int:
    started = time.monotonic()
    dataset = read_dataset(args.input)
    model = load_model(args.model)
    if dataset.feature_dim is not None and dataset.feature_dim != model.feature_dim:
        raise DataError(
            f"dataset feature dimension {dataset.feature_dim} does not match "
            f"model dimension {model.feature_dim}"
        )
    out_records = []
    for rec in dataset.records:
        order = rerank(model, rec)
        cands = tuple(
            replace(
                rec.candidates[i],
                source_index=rec.candidates[i].source_index if rec.candidates[i].source_index is not None else i,
            )
            for i in order
        )
        out_records.append(replace(rec, candidates=cands))
    _write_dataset_file(Dataset(tuple(out_records), dataset.feature_dim), args.output)
    logger.info("reranked %d records -> %s", len(out_records), args.output)
    _write_manifest(args, [args.input, args.model], [args.output], started)
    return 0


def _recover_rankings(base: Dataset, other: Dataset) -> dict[str, list[int]]:
    """Ranking of base's candidates encoded by the other dataset's order.

    Candidates carrying source_index (written by rerank) name their position
    in the base dataset; without them the file's own order is the ranking.
    """
    rankings: dict[str, list[int]] = {}
    for rec in other.records:
        base_rec = base.get(rec.image_id)
        if base_rec.num_candidates != rec.num_candidates:
            raise DataError(
                f"{rec.image_id}: candidate counts differ "
                f"({base_rec.num_candidates} vs {rec.num_candidates})"
            )
        if all(c.source_index is not None for c in rec.candidates):
            rankings[rec.image_id] = [c.source_index for c in rec.candidates]
        else:
            rankings[rec.image_id] = list(range(rec.num_candidates))
    return rankings


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.monotonic()
    dataset = read_dataset(args.dataset)
    other = read_dataset(args.reranked)
    ids_a = {r.image_id for r in dataset.records}
    ids_b = {r.image_id for r in other.records}
    if ids_a != ids_b:
        missing = sorted(ids_a ^ ids_b)[:5]
        raise DataError(f"datasets do not cover the same images (first differences: {missing})")
    config = EvalConfig(
        iou_thresholds=_parse_float_list(args.thresholds, "--thresholds"),
        proposal_budgets=_parse_int_list(args.budgets, "--budgets"),
        strict=not args.non_strict,
    )
    comparison = report(
        dataset,
        identity_rankings(dataset),
        _recover_rankings(dataset, other),
        config,
        label_a=args.label_a,
        label_b=args.label_b,
    )
    sys.stdout.write(comparison.text)
    outputs: list[Path] = []
    if args.output is not None:
        base = args.output
        text_path = base.with_name(base.name + ".txt")
        csv_path = base.with_name(base.name + ".csv")
        json_path = base.with_name(base.name + ".json")
        _atomic_write_text(text_path, comparison.text)
        _atomic_write_text(csv_path, comparison.csv)
        _atomic_write_text(json_path, json.dumps(comparison.to_dict(), indent=2) + "\n")
        outputs = [text_path, csv_path, json_path]
        logger.info("wrote report to %s.{txt,csv,json}", base)
    _write_manifest(args, [args.dataset, args.reranked], outputs, started)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.monotonic()
    objects = _parse_int_list(args.objects, "--objects")
    if len(objects) != 2:
        raise UsageError("--objects must be 'lo,hi'")
    size = _parse_int_list(args.image_size, "--image-size")
    if len(size) != 2:
        raise UsageError("--image-size must be 'width,height'")
    config = SynthConfig(
        seed=args.seed,
        num_images=args.num_images,
        candidates_per_image=args.candidates,
        feature_dim=args.feature_dim,
        noise_sigma=args.noise_sigma,
        mode=args.mode,
        image_size=(size[0], size[1]),
        objects_per_image=(objects[0], objects[1]),
        classes=args.classes,
    )
    planted = None
    if config.mode == "feature_only":
        dataset, planted = generate_feature_dataset(config)
    else:
        dataset = generate_geometric_dataset(config)
    _write_dataset_file(dataset, args.output)
    meta_path = args.output.with_name(args.output.name + ".meta.json")
    _atomic_write_text(meta_path, json.dumps(synth_metadata(config, planted), indent=2) + "\n")
    logger.info("generated %d %s records -> %s", len(dataset.records), config.mode, args.output)
    _write_manifest(args, [], [args.output, meta_path], started)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    started = time.monotonic()
    try:
        obj = json.loads(args.input.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.input}: invalid report JSON ({exc.msg})") from exc
    try:
        config = EvalConfig.from_dict(obj["config"])
        reports = [EvalReport.from_dict(entry) for entry in obj["sources"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.input}: malformed report file ({exc})") from exc
    text = render_text(reports, config)
    sys.stdout.write(text)
    outputs: list[Path] = []
    if args.output is not None:
        text_path = args.output.with_name(args.output.name + ".txt")
        csv_path = args.output.with_name(args.output.name + ".csv")
        _atomic_write_text(text_path, text)
        _atomic_write_text(csv_path, render_csv(reports, config))
        outputs = [text_path, csv_path]
    _write_manifest(args, [args.input], outputs, started)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proprank", description="Train and evaluate top-k partial ranking of box proposals.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch detail to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("label", parents=[], help="recompute candidate iou_labels from groundtruth")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("featurize", help="attach HOG descriptors from a directory of PGM images")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--images", type=Path, required=True, help="directory of <image_id>.pgm files")
    p.add_argument("--keep-existing", action="store_true", help="skip records that already have features")
    p.add_argument("--resize-w", type=int, default=50)
    p.add_argument("--resize-h", type=int, default=60)
    p.add_argument("--cell-size", type=int, default=8)
    p.add_argument("--bins", type=int, default=9)
    p.add_argument("--block-size", type=int, default=2)
    p.add_argument("--block-stride", type=int, default=1)
    p.add_argument("--clip", type=float, default=0.2)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a ranking model on a labeled, featurized dataset")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--k", type=int, default=20, help="positives per image")
    p.add_argument("--C", type=float, default=1.0, help="slack penalty")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--eta0", type=float, default=None, help="initial step size (default: number of images)")
    p.add_argument("--step-decay", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("soft", "hard"), default="soft")
    p.add_argument("--hard-mode-C", dest="hard_mode_C", type=float, default=1e6)
    p.add_argument("--convergence-tol", type=float, default=1e-6)
    p.add_argument("--per-constraint-slack", action="store_true",
                   help="sum a hinge per constraint instead of one slack per image")
    p.add_argument("--constraints", choices=("partial", "full"), default="partial",
                   help="partial top-k constraints or the all-pairs baseline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rerank", help="reorder candidates by model score")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--model", type=Path, required=True)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="compare two orderings of the same dataset")
    p.add_argument("dataset", type=Path, help="dataset in its original candidate order")
    p.add_argument("reranked", type=Path, help="the same dataset, reordered (e.g. by rerank)")
    p.add_argument("--output", type=Path, default=None, help="base path for .txt/.csv/.json report files")
    p.add_argument("--thresholds", default="0.5,0.7,0.9")
    p.add_argument("--budgets", default="1,10,50,100,200,500,800,1000")
    p.add_argument("--non-strict", action="store_true", help="count overlap >= threshold as covered")
    p.add_argument("--label-a", default="source-order")
    p.add_argument("--label-b", default="reranked")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a deterministic synthetic dataset")
    p.add_argument("output", type=Path)
    p.add_argument("--mode", choices=("feature_only", "geometric"), default="feature_only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-images", type=int, default=100)
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--image-size", default="640,480")
    p.add_argument("--objects", default="1,3")
    p.add_argument("--classes", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="re-render a saved eval report")
    p.add_argument("input", type=Path)
    p.add_argument("--output", type=Path, default=None, help="base path for .txt/.csv files")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        logger.error("%s", exc)
        return 2
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return 3


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()

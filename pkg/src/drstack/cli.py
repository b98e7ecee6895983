"""Command-line entry points wrapping the pipeline stages.

Subcommands: synth, preprocess, train-base, train-meta, evaluate, predict,
run.  Each accepts --config (the flat key=value file) plus flags that
override file values.  Exit codes: 0 success, 1 stage error, 2 usage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PipelineConfig, load_pipeline_config
from .dataset import (
    DatasetManifest,
    SampleRecord,
    generate_synthetic,
    ingest_aptos,
    load_image,
    save_image,
    save_manifest_csv,
)
from .errors import DRStackError
from .model import predict as ensemble_predict
from .pipeline import (
    evaluate_stage,
    prepare_data,
    reload_models,
    reload_prepared,
    run_pipeline,
    stack_stage,
    train_base_stage,
    train_meta_stage,
)
from .preprocess import preprocess_image


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drstack",
        description="Retinopathy grading: preprocessing, ordinal labels, "
        "two-branch stacking ensemble, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full pipeline: data -> branches -> meta -> metrics")
    _add_common(run)
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    synth.add_argument("--n", type=int, default=10, help="images per grade")
    synth.add_argument("--size", type=int, default=64, help="image side in pixels")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", type=Path, required=True)
    synth.set_defaults(func=cmd_synth)

    prep = sub.add_parser("preprocess", help="normalize a dataset's images to disk")
    _add_common(prep)
    prep.set_defaults(func=cmd_preprocess)

    base = sub.add_parser("train-base", help="prepare data and train both branches")
    _add_common(base)
    base.set_defaults(func=cmd_train_base)

    meta = sub.add_parser("train-meta", help="train the meta-model on stacked features")
    _add_common(meta)
    meta.set_defaults(func=cmd_train_meta)

    ev = sub.add_parser("evaluate", help="score a trained run on its validation split")
    _add_common(ev)
    ev.set_defaults(func=cmd_evaluate)

    pred = sub.add_parser("predict", help="grade one image with a trained run")
    pred.add_argument("image", type=Path, help="path to a PNG/JPEG fundus image")
    pred.add_argument("--model-dir", type=Path, required=True,
                      help="output directory of a finished run")
    pred.set_defaults(func=cmd_predict)

    return parser


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--data-csv", type=Path, default=None)
    sub.add_argument("--image-dir", type=Path, default=None)
    sub.add_argument("--out", type=Path, default=None, help="output directory")
    sub.add_argument("--backbones", type=str, default=None, help="two names, comma-separated")
    sub.add_argument("--epochs-base", type=int, default=None)
    sub.add_argument("--epochs-meta", type=int, default=None)
    sub.add_argument("--resample-target", type=int, default=None)
    sub.add_argument("--no-augment", action="store_true")


def _config_from_args(args) -> PipelineConfig:
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.data_csv is not None:
        overrides["data.csv"] = str(args.data_csv)
    if args.image_dir is not None:
        overrides["data.images"] = str(args.image_dir)
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    if args.backbones is not None:
        overrides["backbones"] = args.backbones
    if args.epochs_base is not None:
        overrides["train_base.epochs"] = str(args.epochs_base)
    if args.epochs_meta is not None:
        overrides["train_meta.epochs"] = str(args.epochs_meta)
    if args.resample_target is not None:
        overrides["resample_target"] = str(args.resample_target)
    if args.no_augment:
        overrides["augment.enabled"] = "false"
    return load_pipeline_config(args.config, overrides)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    report = run_pipeline(cfg)
    for line in report.summary_lines():
        print(line)
    return 0


def cmd_synth(args) -> int:
    manifest = generate_synthetic(args.n, args.size, args.seed, args.out)
    print(f"wrote {len(manifest)} images and manifest.csv to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config_from_args(args)
    if cfg.data_csv is None or cfg.image_dir is None:
        print("error: preprocess needs --data-csv and --image-dir", file=sys.stderr)
        return 2
    manifest, stats = ingest_aptos(cfg.data_csv, cfg.image_dir)
    out_dir = cfg.output_dir / "processed"
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for record in manifest.records:
        processed = preprocess_image(load_image(record.image_path), cfg.preprocess)
        path = out_dir / f"{record.id}.png"
        save_image(path, processed)
        records.append(SampleRecord(record.id, path, record.grade))
    out_manifest = DatasetManifest(tuple(records), "all", manifest.provenance + " preprocessed")
    save_manifest_csv(cfg.output_dir / "processed_manifest.csv", out_manifest)
    print(
        f"preprocessed {len(records)} images to {out_dir} "
        f"(skipped: {stats.n_missing_image} missing, {stats.n_corrupt_image} corrupt, "
        f"{stats.n_bad_grade} bad grades)"
    )
    return 0


def cmd_train_base(args) -> int:
    cfg = _config_from_args(args)
    prepared = prepare_data(cfg)
    _branches, histories = train_base_stage(cfg, prepared)
    for name, history in histories.items():
        print(f"{name}: best val qwk {history.best_val_qwk():.4f} "
              f"at epoch {history.best_epoch}")
    return 0


def cmd_train_meta(args) -> int:
    cfg = _config_from_args(args)
    prepared = reload_prepared(cfg)
    branches, _ = reload_models(cfg, with_meta=False)
    stacked_train, stacked_val = stack_stage(cfg, branches, prepared)
    _meta, history = train_meta_stage(cfg, stacked_train, stacked_val)
    print(f"meta: best val qwk {history.best_val_qwk():.4f} at epoch {history.best_epoch}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    prepared = reload_prepared(cfg)
    branches, meta = reload_models(cfg, with_meta=True)
    report = evaluate_stage(cfg, branches, meta, prepared)
    for line in report.summary_lines():
        print(line)
    return 0


def cmd_predict(args) -> int:
    cfg = load_pipeline_config(args.model_dir / "config.txt")
    branches, meta = reload_models(cfg, with_meta=True)
    img = preprocess_image(load_image(args.image), cfg.preprocess)
    grade, probs = ensemble_predict(branches, meta, img)
    print(f"grade={grade} probs=" + " ".join(f"{p:.6f}" for p in probs))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DRStackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

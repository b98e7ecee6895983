"""End-to-end orchestration: data prep, branch training, stacking, meta
training, evaluation, artifact emission.

The flow is strictly sequential: stratified split first, resampling applied
to the training split only (validation is never duplicated or dropped),
deterministic preprocessing of every image, two branch models trained
independently, their inference-mode predictions stacked into 8 features,
the meta-model trained on those, and finally the ensemble scored on the
untouched validation split.

Every run writes to one output directory:
    config.txt            effective configuration (reloadable)
    manifests/            train_raw.csv, train.csv (resampled), val.csv
    checkpoints/          branch1.*, branch2.*, meta.*
    history_<model>.csv   epoch,train_loss,val_loss,val_acc,val_qwk
    curves_<model>.csv    epoch,train_loss,val_loss,train_acc,val_acc
    confusion.txt         5x5 grid of the ensemble's validation confusion
    metrics.json          flat ensemble metrics document
    comparison.txt        branches vs. stacked ensemble, one row per model
    run_report.txt        short human-readable summary
"""
from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, write_csv
from .config import PipelineConfig, config_to_text, effective_augment
from .dataset import (
    ArrayDataset,
    DatasetManifest,
    generate_synthetic,
    ingest_aptos,
    load_image,
    load_manifest_csv,
    save_manifest_csv,
    split,
)
from .errors import DRStackError, PipelineStageError
from .labels import apply_resample_plan, build_resample_plan, decode_batch
from .metrics import MetricsReport, format_confusion, metrics_report
from .model import (
    SequentialModel,
    TrainingHistory,
    build_branch,
    build_meta,
    predict_batch,
    stack_features,
    train_branch,
    train_meta,
)
from .preprocess import PreprocessConfig, preprocess_image

MODEL_NAMES = ("branch1", "branch2", "meta")


@dataclass
class PreparedData:
    """Split + resampled manifests and their preprocessed pixel arrays."""

    train_raw: DatasetManifest
    train: DatasetManifest
    val: DatasetManifest
    train_arrays: ArrayDataset
    val_arrays: ArrayDataset


@dataclass
class RunReport:
    """What a finished run produced and where it put things."""

    output_dir: Path
    seed: int
    n_train: int
    n_val: int
    branch_reports: tuple[MetricsReport, MetricsReport]
    ensemble_report: MetricsReport
    histories: dict[str, TrainingHistory]
    artifacts: dict[str, Path]

    def branch_val_qwk(self) -> tuple[float, float]:
        return (self.branch_reports[0].qwk, self.branch_reports[1].qwk)

    def summary_lines(self) -> list[str]:
        lines = [
            f"output_dir: {self.output_dir}",
            f"seed: {self.seed}",
            f"train_samples: {self.n_train}",
            f"val_samples: {self.n_val}",
        ]
        for name, report in zip(
            ("branch1", "branch2", "ensemble"), [*self.branch_reports, self.ensemble_report]
        ):
            lines.append(
                f"{name}: accuracy={report.accuracy:.4f} qwk={report.qwk:.4f} "
                f"precision={report.precision:.4f} recall={report.recall:.4f} "
                f"f1={report.f1:.4f}"
            )
        return lines


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineStageError:
        raise
    except DRStackError as exc:
        raise PipelineStageError(name, str(exc)) from exc
    except Exception as exc:  # noqa: BLE001 - tag anything a stage throws
        raise PipelineStageError(name, f"{type(exc).__name__}: {exc}") from exc


def derived_seeds(seed: int) -> dict[str, int]:
    """Stable per-purpose seeds fanned out from the run seed."""
    names = (
        "synth", "split", "resample",
        "branch1_build", "branch2_build", "meta_build",
        "branch1_train", "branch2_train",
        "oof_split",
        "branch1_fold0_build", "branch1_fold0_train",
        "branch1_fold1_build", "branch1_fold1_train",
        "branch2_fold0_build", "branch2_fold0_train",
        "branch2_fold1_build", "branch2_fold1_train",
    )
    state = np.random.SeedSequence(seed).generate_state(len(names))
    seeds = {name: int(value) for name, value in zip(names, state)}
    seeds["meta_train"] = int(np.random.SeedSequence(seed + 1).generate_state(1)[0])
    return seeds


def preprocess_cache_key(image_path: Path, cfg: PreprocessConfig) -> str:
    desc = json.dumps(
        {
            "path": str(image_path),
            "dark_threshold": cfg.dark_threshold,
            "target_size": cfg.target_size,
            "circle_margin": cfg.circle_margin,
            "sigma_x": cfg.kernel.sigma_x,
            "sigma_y": cfg.kernel.sigma_y,
            "half_size": cfg.kernel.half_size,
        },
        sort_keys=True,
    )
    return hashlib.sha256(desc.encode("utf-8")).hexdigest()


def load_preprocessed(
    manifest: DatasetManifest, cfg: PreprocessConfig, cache_dir: Path | None = None
) -> ArrayDataset:
    """Decode + preprocess every record into one (N, S, S, 3) array.

    Replicated records share their source image, so each unique file is
    processed once per call; with cache_dir set, results also persist on
    disk keyed by (path, preprocessing settings).
    """
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
    memo: dict[str, np.ndarray] = {}
    images = []
    for record in manifest.records:
        key = preprocess_cache_key(record.image_path, cfg)
        if key in memo:
            images.append(memo[key])
            continue
        cached_file = cache_dir / f"{key}.npy" if cache_dir is not None else None
        if cached_file is not None and cached_file.exists():
            arr = np.load(cached_file)
        else:
            arr = preprocess_image(load_image(record.image_path), cfg)
            if cached_file is not None:
                np.save(cached_file, arr)
        memo[key] = arr
        images.append(arr)
    return ArrayDataset(
        x=np.stack(images),
        grades=manifest.grades(),
        ids=tuple(r.id for r in manifest.records),
    )


def _run_paths(output_dir: Path) -> dict[str, Path]:
    return {
        "config": output_dir / "config.txt",
        "manifests": output_dir / "manifests",
        "checkpoints": output_dir / "checkpoints",
        "cache": output_dir / "cache",
        "synth": output_dir / "synth",
        "confusion": output_dir / "confusion.txt",
        "metrics": output_dir / "metrics.json",
        "comparison": output_dir / "comparison.txt",
        "run_report": output_dir / "run_report.txt",
    }


def prepare_data(cfg: PipelineConfig) -> PreparedData:
    """Ingest (or synthesize) -> split -> resample train -> preprocess."""
    paths = _run_paths(cfg.output_dir)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    paths["manifests"].mkdir(parents=True, exist_ok=True)
    paths["config"].write_text(config_to_text(cfg))
    seeds = derived_seeds(cfg.seed)

    with _stage("ingest"):
        if cfg.data_csv is not None:
            if cfg.image_dir is None:
                raise PipelineStageError("ingest", "data.csv given without data.images")
            manifest, _stats = ingest_aptos(cfg.data_csv, cfg.image_dir)
        else:
            manifest = generate_synthetic(
                cfg.synth_per_class, cfg.synth_size, seeds["synth"], paths["synth"]
            )

    with _stage("split"):
        train_raw, val = split(manifest, cfg.split_fraction, seeds["split"])

    with _stage("resample"):
        plan = build_resample_plan(
            train_raw.class_counts(), cfg.resample_target, seeds["resample"]
        )
        train = apply_resample_plan(plan, train_raw)

    save_manifest_csv(paths["manifests"] / "train_raw.csv", train_raw)
    save_manifest_csv(paths["manifests"] / "train.csv", train)
    save_manifest_csv(paths["manifests"] / "val.csv", val)

    with _stage("preprocess"):
        cache = paths["cache"] if cfg.cache_preprocessed else None
        train_arrays = load_preprocessed(train, cfg.preprocess, cache)
        val_arrays = load_preprocessed(val, cfg.preprocess, cache)

    return PreparedData(train_raw, train, val, train_arrays, val_arrays)


def _build_branches(cfg: PipelineConfig) -> list[SequentialModel]:
    seeds = derived_seeds(cfg.seed)
    specs = cfg.backbone_specs()
    return [
        build_branch(
            specs[i],
            cfg.head,
            l2=cfg.train_base.l2_on_dense,
            seed=seeds[f"branch{i + 1}_build"],
        )
        for i in range(2)
    ]


def train_base_stage(
    cfg: PipelineConfig, prepared: PreparedData
) -> tuple[list[SequentialModel], dict[str, TrainingHistory]]:
    """Train both branch models independently and checkpoint them."""
    seeds = derived_seeds(cfg.seed)
    branches = _build_branches(cfg)
    histories: dict[str, TrainingHistory] = {}
    for i, branch in enumerate(branches):
        name = f"branch{i + 1}"
        with _stage(f"train-{name}"):
            train_cfg = replace(cfg.train_base, seed=seeds[f"{name}_train"])
            branches[i], history = train_branch(
                branch,
                prepared.train_arrays,
                prepared.val_arrays,
                train_cfg,
                augment_cfg=effective_augment(cfg),
            )
        histories[name] = history
        _write_model_artifacts(cfg, name, branches[i], history)
    return branches, histories


def stack_stage(
    cfg: PipelineConfig, branches: list[SequentialModel], prepared: PreparedData
) -> tuple[ArrayDataset, ArrayDataset]:
    """Inference-mode branch predictions, concatenated into meta features.

    No augmentation here: stacked features come from the deterministic
    preprocessed images.  With out-of-fold stacking enabled, training
    features come from 2-fold branch copies that never saw the sample they
    score; validation features always come from the final branches.
    """
    with _stage("stack"):
        if cfg.out_of_fold_stacking:
            train_feats = [
                _out_of_fold_predictions(cfg, i, prepared) for i in range(2)
            ]
        else:
            train_feats = [b.predict(prepared.train_arrays.x) for b in branches]
        stacked_train = ArrayDataset(
            stack_features(train_feats[0], train_feats[1]),
            prepared.train_arrays.grades,
            prepared.train_arrays.ids,
        )
        val = prepared.val_arrays
        stacked_val = ArrayDataset(
            stack_features(branches[0].predict(val.x), branches[1].predict(val.x)),
            val.grades,
            val.ids,
        )
    return stacked_train, stacked_val


def _out_of_fold_predictions(
    cfg: PipelineConfig, branch_index: int, prepared: PreparedData
) -> np.ndarray:
    """Score every training sample with a branch copy fit on the other fold."""
    seeds = derived_seeds(cfg.seed)
    train = prepared.train_arrays
    folds = _stratified_folds(train.grades, seeds["oof_split"])
    spec = cfg.backbone_specs()[branch_index]
    features = np.empty((len(train), 4))
    for k in (0, 1):
        held_out = folds[k]
        fit_idx = folds[1 - k]
        tag = f"branch{branch_index + 1}_fold{k}"
        fold_model = build_branch(
            spec, cfg.head, l2=cfg.train_base.l2_on_dense, seed=seeds[f"{tag}_build"]
        )
        fold_train = ArrayDataset(
            train.x[fit_idx], train.grades[fit_idx], tuple(train.ids[i] for i in fit_idx)
        )
        fold_cfg = replace(cfg.train_base, seed=seeds[f"{tag}_train"])
        fold_model, _ = train_branch(
            fold_model, fold_train, prepared.val_arrays, fold_cfg,
            augment_cfg=effective_augment(cfg),
        )
        features[held_out] = fold_model.predict(train.x[held_out])
    return features


def _stratified_folds(grades: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[], []]
    for grade in sorted(set(grades.tolist())):
        members = np.flatnonzero(grades == grade)
        if len(members) < 2:
            raise PipelineStageError(
                "stack",
                f"out-of-fold stacking needs >= 2 training samples of grade {grade}",
            )
        members = members[rng.permutation(len(members))]
        half = len(members) // 2
        folds[0].extend(members[:half].tolist())
        folds[1].extend(members[half:].tolist())
    return np.array(sorted(folds[0])), np.array(sorted(folds[1]))


def train_meta_stage(
    cfg: PipelineConfig, stacked_train: ArrayDataset, stacked_val: ArrayDataset
) -> tuple[SequentialModel, TrainingHistory]:
    seeds = derived_seeds(cfg.seed)
    meta = build_meta(cfg.meta, l2=cfg.train_meta.l2_on_dense, seed=seeds["meta_build"])
    with _stage("train-meta"):
        train_cfg = replace(cfg.train_meta, seed=seeds["meta_train"])
        meta, history = train_meta(meta, stacked_train, stacked_val, train_cfg)
    _write_model_artifacts(cfg, "meta", meta, history)
    return meta, history


def evaluate_stage(
    cfg: PipelineConfig,
    branches: list[SequentialModel],
    meta: SequentialModel,
    prepared: PreparedData,
    histories: dict[str, TrainingHistory] | None = None,
) -> RunReport:
    """Score branches and the stacked ensemble on validation; emit artifacts."""
    paths = _run_paths(cfg.output_dir)
    with _stage("evaluate"):
        val = prepared.val_arrays
        branch_reports = []
        for branch in branches:
            preds = decode_batch(branch.predict(val.x))
            branch_reports.append(metrics_report(val.grades, preds))
        grades_pred, _probs = predict_batch(branches, meta, val.x)
        ensemble = metrics_report(val.grades, grades_pred)

    paths["confusion"].write_text(format_confusion(ensemble.confusion) + "\n")
    paths["metrics"].write_text(ensemble.to_json())
    paths["comparison"].write_text(_comparison_text(cfg, branch_reports, ensemble))

    artifacts = {
        "config": paths["config"],
        "confusion": paths["confusion"],
        "metrics": paths["metrics"],
        "comparison": paths["comparison"],
        "run_report": paths["run_report"],
        "manifest_train_raw": paths["manifests"] / "train_raw.csv",
        "manifest_train": paths["manifests"] / "train.csv",
        "manifest_val": paths["manifests"] / "val.csv",
    }
    for name in MODEL_NAMES:
        artifacts[f"checkpoint_{name}"] = paths["checkpoints"] / f"{name}.weights.npz"
        artifacts[f"history_{name}"] = cfg.output_dir / f"history_{name}.csv"
        artifacts[f"curves_{name}"] = cfg.output_dir / f"curves_{name}.csv"

    report = RunReport(
        output_dir=cfg.output_dir,
        seed=cfg.seed,
        n_train=len(prepared.train),
        n_val=len(prepared.val),
        branch_reports=tuple(branch_reports),
        ensemble_report=ensemble,
        histories=histories or {},
        artifacts=artifacts,
    )
    paths["run_report"].write_text("\n".join(report.summary_lines()) + "\n")
    return report


def _comparison_text(cfg, branch_reports, ensemble) -> str:
    rows = [f"{'model':<24}{'precision':>10}{'recall':>10}{'accuracy':>10}{'kappa':>10}{'f1':>10}"]
    labeled = [
        (f"branch1_{cfg.backbone_names[0]}", branch_reports[0]),
        (f"branch2_{cfg.backbone_names[1]}", branch_reports[1]),
        ("stacked_ensemble", ensemble),
    ]
    for label, rep in labeled:
        rows.append(
            f"{label:<24}{rep.precision:>10.4f}{rep.recall:>10.4f}"
            f"{rep.accuracy:>10.4f}{rep.qwk:>10.4f}{rep.f1:>10.4f}"
        )
    return "\n".join(rows) + "\n"


def _write_model_artifacts(cfg, name, model, history):
    paths = _run_paths(cfg.output_dir)
    save_checkpoint(paths["checkpoints"], name, model, history)
    header, rows = history.history_rows()
    write_csv(cfg.output_dir / f"history_{name}.csv", header, rows)
    header, rows = history.curve_rows()
    write_csv(cfg.output_dir / f"curves_{name}.csv", header, rows)


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """The whole flow: prepare -> train branches -> stack -> train meta ->
    evaluate.  Returns the run report; all artifacts land in cfg.output_dir."""
    prepared = prepare_data(cfg)
    branches, histories = train_base_stage(cfg, prepared)
    stacked_train, stacked_val = stack_stage(cfg, branches, prepared)
    meta, meta_history = train_meta_stage(cfg, stacked_train, stacked_val)
    histories["meta"] = meta_history
    return evaluate_stage(cfg, branches, meta, prepared, histories)


def reload_prepared(cfg: PipelineConfig) -> PreparedData:
    """Rebuild PreparedData from the manifests a previous run wrote."""
    paths = _run_paths(cfg.output_dir)
    train_raw = load_manifest_csv(paths["manifests"] / "train_raw.csv", "train")
    train = load_manifest_csv(paths["manifests"] / "train.csv", "train")
    val = load_manifest_csv(paths["manifests"] / "val.csv", "val")
    cache = paths["cache"] if cfg.cache_preprocessed else None
    return PreparedData(
        train_raw,
        train,
        val,
        load_preprocessed(train, cfg.preprocess, cache),
        load_preprocessed(val, cfg.preprocess, cache),
    )


def reload_models(cfg: PipelineConfig, with_meta: bool = True):
    """Rebuild model skeletons from the config and load their checkpoints."""
    paths = _run_paths(cfg.output_dir)
    seeds = derived_seeds(cfg.seed)
    branches = _build_branches(cfg)
    for i, branch in enumerate(branches):
        load_checkpoint(paths["checkpoints"], f"branch{i + 1}", branch)
    if not with_meta:
        return branches, None
    meta = build_meta(cfg.meta, l2=cfg.train_meta.l2_on_dense, seed=seeds["meta_build"])
    load_checkpoint(paths["checkpoints"], "meta", meta)
    return branches, meta

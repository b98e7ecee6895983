"""Pipeline configuration: one dataclass, one flat key=value file format.

Config files are plain text, one `section.key = value` per line, `#` for
comments.  Every training hyperparameter (loss, optimizer, learning rate,
batch size, L2, dropout, augmentation, epochs) lives under train_base.* /
train_meta.* with the full-scale defaults.  config_to_text round-trips
through load_pipeline_config.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .backbones import BackboneSpec, backbone_spec
from .errors import ConfigError
from .model import BranchHeadSpec, MetaModelSpec, TrainConfig
from .preprocess import AugmentConfig, GaussianKernelSpec, PreprocessConfig


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one end-to-end run needs."""

    seed: int = 0
    output_dir: Path = Path("runs/latest")
    data_csv: Path | None = None
    image_dir: Path | None = None
    synth_per_class: int = 20
    synth_size: int = 64
    split_fraction: float = 0.85
    resample_target: int = 700
    augment_enabled: bool = True
    cache_preprocessed: bool = True
    out_of_fold_stacking: bool = False
    backbone_names: tuple[str, str] = ("tiny-cnn", "tiny-cnn")
    frozen_fraction: float | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train_base: TrainConfig = field(default_factory=TrainConfig)
    train_meta: TrainConfig = field(default_factory=TrainConfig.meta_defaults)
    head: BranchHeadSpec = field(default_factory=BranchHeadSpec)
    meta: MetaModelSpec = field(default_factory=MetaModelSpec)

    def __post_init__(self):
        if len(self.backbone_names) != 2:
            raise ConfigError(f"exactly two backbones required, got {self.backbone_names}")
        if not (0.0 < self.split_fraction < 1.0):
            raise ConfigError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.resample_target < 1:
            raise ConfigError(f"resample_target must be >= 1, got {self.resample_target}")

    def backbone_specs(self) -> tuple[BackboneSpec, BackboneSpec]:
        """Resolve names against the registry at the preprocessing size."""
        return tuple(
            backbone_spec(
                name,
                frozen_fraction=self.frozen_fraction,
                input_size=self.preprocess.target_size,
            )
            for name in self.backbone_names
        )


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_path(raw: str) -> Path | None:
    raw = raw.strip()
    return Path(raw) if raw else None


def _parse_names(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _parse_widths(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _parse_opt_float(raw: str) -> float | None:
    raw = raw.strip()
    return float(raw) if raw else None


def _parse_opt_int(raw: str) -> int | None:
    raw = raw.strip()
    return int(raw) if raw else None


_KEY_PARSERS = {
    "seed": int,
    "output_dir": _parse_path,
    "data.csv": _parse_path,
    "data.images": _parse_path,
    "data.synth_per_class": int,
    "data.synth_size": int,
    "split_fraction": float,
    "resample_target": int,
    "cache_preprocessed": _parse_bool,
    "stacking.out_of_fold": _parse_bool,
    "backbones": _parse_names,
    "backbones.frozen_fraction": _parse_opt_float,
    "preprocess.dark_threshold": float,
    "preprocess.target_size": int,
    "preprocess.circle_margin": float,
    "preprocess.sigma_x": float,
    "preprocess.sigma_y": float,
    "preprocess.half_size": _parse_opt_int,
    "augment.enabled": _parse_bool,
    "augment.zoom_range": float,
    "augment.horizontal_flip": _parse_bool,
    "augment.vertical_flip": _parse_bool,
    "augment.fill_value": float,
    "train_base.loss": str.strip,
    "train_base.optimizer": str.strip,
    "train_base.learning_rate": float,
    "train_base.batch_size": int,
    "train_base.l2_on_dense": float,
    "train_base.dropout": float,
    "train_base.epochs": int,
    "train_meta.loss": str.strip,
    "train_meta.optimizer": str.strip,
    "train_meta.learning_rate": float,
    "train_meta.batch_size": int,
    "train_meta.l2_on_dense": float,
    "train_meta.dropout": float,
    "train_meta.epochs": int,
    "head.dense_width": int,
    "head.dropout_rate": float,
    "meta.widths": _parse_widths,
    "meta.dropout_rate": float,
}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings from the flat file format."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_pipeline_config(
    path: Path | str | None = None, overrides: dict[str, str] | None = None
) -> PipelineConfig:
    """Build a PipelineConfig from an optional file plus override strings.

    Overrides use the same keys as the file and win over file values.
    Unknown keys are rejected.
    """
    raw: dict[str, str] = {}
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text()))
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})

    unknown = set(raw) - set(_KEY_PARSERS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    parsed = {}
    for key, value in raw.items():
        try:
            parsed[key] = _KEY_PARSERS[key](value)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from exc

    def get(key, default):
        return parsed.get(key, default)

    target_size = get("preprocess.target_size", 224)
    sigma_x = get("preprocess.sigma_x", 10.0)
    sigma_y = get("preprocess.sigma_y", sigma_x)
    half_size = get("preprocess.half_size", None)
    if half_size is None:
        kernel = GaussianKernelSpec.from_sigma(sigma_x, sigma_y, max_window=target_size - 1)
    else:
        kernel = GaussianKernelSpec(sigma_x, sigma_y, half_size)

    preprocess = PreprocessConfig(
        dark_threshold=get("preprocess.dark_threshold", 0.03),
        target_size=target_size,
        circle_margin=get("preprocess.circle_margin", 0.0),
        kernel=kernel,
    )
    seed = get("seed", 0)
    augment = AugmentConfig(
        zoom_range=get("augment.zoom_range", 0.15),
        horizontal_flip=get("augment.horizontal_flip", True),
        vertical_flip=get("augment.vertical_flip", True),
        fill_value=get("augment.fill_value", 0.0),
        seed=seed,
    )

    def train_cfg(section: str, defaults: TrainConfig) -> TrainConfig:
        return TrainConfig(
            loss=get(f"{section}.loss", defaults.loss),
            optimizer=get(f"{section}.optimizer", defaults.optimizer),
            learning_rate=get(f"{section}.learning_rate", defaults.learning_rate),
            batch_size=get(f"{section}.batch_size", defaults.batch_size),
            l2_on_dense=get(f"{section}.l2_on_dense", defaults.l2_on_dense),
            dropout=get(f"{section}.dropout", defaults.dropout),
            epochs=get(f"{section}.epochs", defaults.epochs),
            seed=seed,
        )

    backbones = get("backbones", ("tiny-cnn", "tiny-cnn"))
    if len(backbones) != 2:
        raise ConfigError(f"'backbones' needs exactly two names, got {backbones}")

    train_base = train_cfg("train_base", TrainConfig())
    train_meta = train_cfg("train_meta", TrainConfig.meta_defaults())
    head = BranchHeadSpec(
        dense_width=get("head.dense_width", 256),
        dropout_rate=get("head.dropout_rate", train_base.dropout),
    )
    meta = MetaModelSpec(
        widths=get("meta.widths", MetaModelSpec().widths),
        dropout_rate=get("meta.dropout_rate", train_meta.dropout),
    )
    return PipelineConfig(
        seed=seed,
        output_dir=get("output_dir", Path("runs/latest")),
        data_csv=get("data.csv", None),
        image_dir=get("data.images", None),
        synth_per_class=get("data.synth_per_class", 20),
        synth_size=get("data.synth_size", 64),
        split_fraction=get("split_fraction", 0.85),
        resample_target=get("resample_target", 700),
        augment_enabled=get("augment.enabled", True),
        cache_preprocessed=get("cache_preprocessed", True),
        out_of_fold_stacking=get("stacking.out_of_fold", False),
        backbone_names=tuple(backbones),
        frozen_fraction=get("backbones.frozen_fraction", None),
        preprocess=preprocess,
        augment=augment,
        train_base=train_base,
        train_meta=train_meta,
        head=head,
        meta=meta,
    )


def config_to_text(cfg: PipelineConfig) -> str:
    """Serialize a config back to the flat format (round-trips exactly)."""
    lines = [
        f"seed = {cfg.seed}",
        f"output_dir = {cfg.output_dir}",
        f"data.csv = {cfg.data_csv or ''}",
        f"data.images = {cfg.image_dir or ''}",
        f"data.synth_per_class = {cfg.synth_per_class}",
        f"data.synth_size = {cfg.synth_size}",
        f"split_fraction = {cfg.split_fraction!r}",
        f"resample_target = {cfg.resample_target}",
        f"cache_preprocessed = {str(cfg.cache_preprocessed).lower()}",
        f"stacking.out_of_fold = {str(cfg.out_of_fold_stacking).lower()}",
        f"backbones = {','.join(cfg.backbone_names)}",
        "backbones.frozen_fraction = "
        + ("" if cfg.frozen_fraction is None else repr(cfg.frozen_fraction)),
        f"preprocess.dark_threshold = {cfg.preprocess.dark_threshold!r}",
        f"preprocess.target_size = {cfg.preprocess.target_size}",
        f"preprocess.circle_margin = {cfg.preprocess.circle_margin!r}",
        f"preprocess.sigma_x = {cfg.preprocess.kernel.sigma_x!r}",
        f"preprocess.sigma_y = {cfg.preprocess.kernel.sigma_y!r}",
        f"preprocess.half_size = {cfg.preprocess.kernel.half_size}",
        f"augment.enabled = {str(cfg.augment_enabled).lower()}",
        f"augment.zoom_range = {cfg.augment.zoom_range!r}",
        f"augment.horizontal_flip = {str(cfg.augment.horizontal_flip).lower()}",
        f"augment.vertical_flip = {str(cfg.augment.vertical_flip).lower()}",
        f"augment.fill_value = {cfg.augment.fill_value!r}",
    ]
    for section, tc in (("train_base", cfg.train_base), ("train_meta", cfg.train_meta)):
        lines += [
            f"{section}.loss = {tc.loss}",
            f"{section}.optimizer = {tc.optimizer}",
            f"{section}.learning_rate = {tc.learning_rate!r}",
            f"{section}.batch_size = {tc.batch_size}",
            f"{section}.l2_on_dense = {tc.l2_on_dense!r}",
            f"{section}.dropout = {tc.dropout!r}",
            f"{section}.epochs = {tc.epochs}",
        ]
    lines += [
        f"head.dense_width = {cfg.head.dense_width}",
        f"head.dropout_rate = {cfg.head.dropout_rate!r}",
        f"meta.widths = {','.join(str(w) for w in cfg.meta.widths)}",
        f"meta.dropout_rate = {cfg.meta.dropout_rate!r}",
    ]
    return "\n".join(lines) + "\n"


def smoke_config(output_dir: Path | str, seed: int = 0, **overrides) -> PipelineConfig:
    """Desk-scale settings: synthetic 64px data, tiny-cnn branches, few
    epochs, learning rate scaled up to suit training from scratch.

    Finishes in minutes on a CPU; intended for smoke tests and demos.
    """
    values: dict[str, str] = {
        "seed": str(seed),
        "output_dir": str(output_dir),
        "data.synth_per_class": "20",
        "data.synth_size": "64",
        "resample_target": "160",
        "backbones": "tiny-cnn,tiny-cnn",
        "preprocess.target_size": "64",
        "preprocess.sigma_x": "1.0",
        "preprocess.half_size": "2",
        "train_base.learning_rate": "0.005",
        "train_base.epochs": "5",
        "train_meta.learning_rate": "0.005",
        "train_meta.epochs": "50",
    }
    values.update({k: str(v) for k, v in overrides.items()})
    return load_pipeline_config(None, values)


def effective_augment(cfg: PipelineConfig) -> AugmentConfig | None:
    return cfg.augment if cfg.augment_enabled else None

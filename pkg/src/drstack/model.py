"""Two-branch stacking ensemble: branch models, meta-model, training loops.

Each branch is a backbone followed by the head
    global-average-pool -> dense+ReLU -> dropout -> dense(4)+sigmoid,
producing a 4-bit ordinal probability vector.  The two branch outputs are
concatenated into 8 stacked features and a small dense funnel (the
meta-model) maps them to the final 4 probabilities:

    dense+ReLU x2, dropout, dense+ReLU x2, dropout, dense+ReLU x3,
    dense(4)+sigmoid

Training is minibatch Adam on binary cross-entropy over the 4 ordinal bits,
with the model state from the best validation-QWK epoch returned.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .backbones import BackboneSpec, build_backbone_layers
from .dataset import ArrayDataset
from .errors import (
    EmptyDatasetError,
    LayerPlanError,
    NonFiniteLossError,
    ShapeMismatchError,
    UnpreprocessedInputError,
)
from .labels import decode, decode_batch, encode_batch
from .metrics import confusion, quadratic_weighted_kappa
from .preprocess import AugmentConfig, augment
from .shapecalc import Dense, Flatten, PoolSpec, validate_chain

BCE_EPS = 1e-7

META_LAYER_PLAN = (
    "dense_relu",
    "dense_relu",
    "dropout",
    "dense_relu",
    "dense_relu",
    "dropout",
    "dense_relu",
    "dense_relu",
    "dense_relu",
    "sigmoid",
)

DEFAULT_META_WIDTHS = (64, 64, 32, 32, 16, 8, 4)


@dataclass(frozen=True)
class BranchHeadSpec:
    """Classification head shared by both branches."""

    pooling: str = "global-average"
    dense_width: int = 256
    dropout_rate: float = 0.5
    output_units: int = 4

    def __post_init__(self):
        if self.pooling != "global-average":
            raise ValueError(f"only global-average pooling is supported, got {self.pooling!r}")
        if self.output_units != 4:
            raise ValueError(f"the ordinal head has 4 output units, got {self.output_units}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.dense_width < 1:
            raise ValueError(f"dense_width must be >= 1, got {self.dense_width}")


@dataclass(frozen=True)
class MetaModelSpec:
    """Meta-model layer plan; the order is fixed, the widths are knobs."""

    widths: tuple[int, ...] = DEFAULT_META_WIDTHS
    dropout_rate: float = 0.5
    layer_plan: tuple[str, ...] = META_LAYER_PLAN

    def __post_init__(self):
        if len(self.widths) != 7 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be 7 positive ints, got {self.widths}")
        if self.widths[-1] != 4:
            raise ValueError(f"final dense width must be 4, got {self.widths[-1]}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (defaults: base-model regime)."""

    loss: str = "binary-cross-entropy"
    optimizer: str = "adam"
    learning_rate: float = 5e-5
    batch_size: int = 32
    l2_on_dense: float = 1e-3
    dropout: float = 0.5
    epochs: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.loss != "binary-cross-entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"bad optimization settings: {self}")

    @classmethod
    def meta_defaults(cls, **overrides) -> "TrainConfig":
        """Meta-model regime: 200 epochs at batch size 64."""
        values = dict(batch_size=64, epochs=200)
        values.update(overrides)
        return cls(**values)


@dataclass
class TrainingHistory:
    """Per-epoch training curves plus which epoch held the best val QWK."""

    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    val_qwk: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.epoch)

    def append(self, epoch, train_loss, train_acc, val_loss, val_acc, val_qwk):
        self.epoch.append(int(epoch))
        self.train_loss.append(float(train_loss))
        self.train_acc.append(float(train_acc))
        self.val_loss.append(float(val_loss))
        self.val_acc.append(float(val_acc))
        self.val_qwk.append(float(val_qwk))

    def best_val_qwk(self) -> float:
        return max(self.val_qwk) if self.val_qwk else float("nan")

    def history_rows(self) -> tuple[list[str], list[list]]:
        header = ["epoch", "train_loss", "val_loss", "val_acc", "val_qwk"]
        rows = [
            [e, tl, vl, va, vq]
            for e, tl, vl, va, vq in zip(
                self.epoch, self.train_loss, self.val_loss, self.val_acc, self.val_qwk
            )
        ]
        return header, rows

    def curve_rows(self) -> tuple[list[str], list[list]]:
        header = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"]
        rows = [
            [e, tl, vl, ta, va]
            for e, tl, vl, ta, va in zip(
                self.epoch, self.train_loss, self.val_loss, self.train_acc, self.val_acc
            )
        ]
        return header, rows


@dataclass
class SequentialModel:
    """A built network plus the canonical description that fingerprints it."""

    network: nn.Network
    spec: dict

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode forward pass (dropout off, deterministic)."""
        return self.network.forward(np.asarray(x, dtype=np.float64), training=False)

    def structural_signature(self) -> tuple[str, ...]:
        return tuple(type(layer).__name__ for layer in self.network.layers)


def build_branch(
    backbone: BackboneSpec,
    head: BranchHeadSpec,
    l2: float = 1e-3,
    seed: int = 0,
) -> SequentialModel:
    """Backbone + ordinal head mapping (N, size, size, 3) -> (N, 4) in (0, 1).

    The head geometry is cross-checked with the shape calculator before any
    weights are allocated; the backbone's first frozen_fraction of
    parameterized layers is excluded from training.
    """
    out_shape = backbone.output_shape
    if out_shape.width != out_shape.height:
        raise ShapeMismatchError(f"backbone output must be square, got {out_shape}")
    chain_shapes = validate_chain(
        out_shape,
        [
            PoolSpec(window=out_shape.width, stride=1),  # global pooling geometry
            Flatten(),
            Dense(head.dense_width),
            Dense(head.output_units),
        ],
    )
    if chain_shapes[-1] != head.output_units:
        raise ShapeMismatchError(f"head chain ends at {chain_shapes[-1]}, expected 4")

    rng = np.random.default_rng(seed)
    layers = build_backbone_layers(backbone, rng)
    layers += [
        nn.GlobalAvgPool(),
        nn.Dense(out_shape.depth, head.dense_width, l2=l2, rng=rng),
        nn.ReLU(),
        nn.Dropout(head.dropout_rate),
        nn.Dense(head.dense_width, head.output_units, l2=l2, rng=rng, init="glorot"),
        nn.Sigmoid(),
    ]
    spec = {
        "kind": "branch",
        "backbone": backbone.name,
        "pretrained": backbone.pretrained,
        "frozen_fraction": backbone.frozen_fraction,
        "input_size": backbone.input_size,
        "dense_width": head.dense_width,
        "dropout_rate": head.dropout_rate,
        "output_units": head.output_units,
        "l2": l2,
    }
    return SequentialModel(nn.Network(layers), spec)


def build_meta(spec: MetaModelSpec, l2: float = 1e-3, seed: int = 0) -> SequentialModel:
    """Dense funnel mapping the 8 stacked branch probabilities to 4 outputs.

    The layer plan must match META_LAYER_PLAN exactly; any deviation raises
    LayerPlanError rather than silently building a different network.
    """
    if tuple(spec.layer_plan) != META_LAYER_PLAN:
        raise LayerPlanError(
            f"meta layer plan must be {META_LAYER_PLAN}, got {tuple(spec.layer_plan)}"
        )
    rng = np.random.default_rng(seed)
    layers: list[nn.Layer] = []
    width_in = 8
    widths = iter(spec.widths)
    for step in spec.layer_plan:
        if step == "dense_relu":
            width_out = next(widths)
            layers += [nn.Dense(width_in, width_out, l2=l2, rng=rng), nn.ReLU()]
            width_in = width_out
        elif step == "dropout":
            layers.append(nn.Dropout(spec.dropout_rate))
        elif step == "sigmoid":
            layers += [nn.Dense(width_in, 4, l2=l2, rng=rng, init="glorot"), nn.Sigmoid()]
            width_in = 4
        else:
            raise LayerPlanError(f"unknown layer-plan step {step!r}")
    model_spec = {
        "kind": "meta",
        "widths": list(spec.widths),
        "dropout_rate": spec.dropout_rate,
        "layer_plan": list(spec.layer_plan),
        "l2": l2,
    }
    return SequentialModel(nn.Network(layers), model_spec)


def stack_features(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Concatenate two 4-vector predictions (or (N, 4) batches) into 8 features."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape[-1] != 4 or p2.shape[-1] != 4 or p1.shape != p2.shape:
        raise ValueError(f"expected matching (..., 4) inputs, got {p1.shape} and {p2.shape}")
    return np.concatenate([p1, p2], axis=-1)


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy over all positions, with predictions
    clipped to [1e-7, 1 - 1e-7]."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    terms = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
    return float(terms.mean())


def bce_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Analytic gradient of bce_loss with respect to pred (zero in the
    clipped region)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    grad = ((1.0 - target) / (1.0 - p) - target / p) / pred.size
    return np.where((pred < BCE_EPS) | (pred > 1.0 - BCE_EPS), 0.0, grad)


def train_branch(
    model: SequentialModel,
    train: ArrayDataset,
    val: ArrayDataset,
    cfg: TrainConfig,
    augment_cfg: AugmentConfig | None = None,
) -> tuple[SequentialModel, TrainingHistory]:
    """Fit a branch on (N, H, W, C) images; augmentation (when given) is
    applied to training batches only."""
    if np.asarray(train.x).ndim != 4 or np.asarray(val.x).ndim != 4:
        raise ValueError("branch training expects (N, H, W, C) image arrays")
    return _fit(model, train, val, cfg, augment_cfg=augment_cfg)


def train_meta(
    meta: SequentialModel,
    stacked_train: ArrayDataset,
    stacked_val: ArrayDataset,
    cfg: TrainConfig,
) -> tuple[SequentialModel, TrainingHistory]:
    """Fit the meta-model on (N, 8) stacked branch predictions."""
    for ds in (stacked_train, stacked_val):
        x = np.asarray(ds.x)
        if x.ndim != 2 or x.shape[-1] != 8:
            raise ValueError(f"meta training expects (N, 8) features, got {x.shape}")
    return _fit(meta, stacked_train, stacked_val, cfg, augment_cfg=None)


def _fit(model, train, val, cfg, augment_cfg=None):
    n = len(train)
    if n == 0 or len(val) == 0:
        raise EmptyDatasetError("training and validation sets must be non-empty")
    history = TrainingHistory()
    if cfg.epochs == 0:
        return model, history

    x = np.asarray(train.x, dtype=np.float64)
    targets = encode_batch(train.grades)
    val_x = np.asarray(val.x, dtype=np.float64)
    val_targets = encode_batch(val.grades)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    augment_rng = np.random.default_rng(seeds[2])

    optimizer = nn.Adam(model.network, cfg.learning_rate)
    best_qwk = -np.inf
    best_state = model.network.state()
    best_epoch = 0

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses, sizes, n_correct = [], [], 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = x[idx]
            if augment_cfg is not None:
                xb = np.stack([augment(im, augment_cfg, augment_rng) for im in xb])
            tb = targets[idx]
            preds = model.network.forward(xb, training=True, rng=dropout_rng)
            loss = bce_loss(preds, tb) + model.network.l2_penalty()
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"loss {loss} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            model.network.backward(bce_grad(preds, tb))
            optimizer.step()
            losses.append(loss)
            sizes.append(len(idx))
            n_correct += int((decode_batch(preds) == train.grades[idx]).sum())

        val_probs = model.network.forward(val_x)
        val_loss = bce_loss(val_probs, val_targets) + model.network.l2_penalty()
        val_pred = decode_batch(val_probs)
        val_acc = float((val_pred == val.grades).mean())
        val_qwk = quadratic_weighted_kappa(confusion(val.grades, val_pred))
        history.append(
            epoch, np.average(losses, weights=sizes), n_correct / n, val_loss, val_acc, val_qwk
        )
        if val_qwk > best_qwk:
            best_qwk = val_qwk
            best_state = model.network.state()
            best_epoch = epoch

    model.network.set_state(best_state)
    history.best_epoch = best_epoch
    return model, history


def predict(
    branches: list[SequentialModel], meta: SequentialModel, img: np.ndarray
) -> tuple[int, np.ndarray]:
    """Full-ensemble prediction for one preprocessed image: run both
    branches, stack, run the meta-model, decode at threshold 0.5."""
    img = np.asarray(img, dtype=np.float64)
    size = branches[0].spec["input_size"]
    if img.shape != (size, size, 3):
        raise UnpreprocessedInputError(
            f"expected a preprocessed ({size}, {size}, 3) image, got {img.shape}"
        )
    probs = _ensemble_probs(branches, meta, img[None])[0]
    return decode(probs), probs


def predict_batch(
    branches: list[SequentialModel], meta: SequentialModel, images: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ensemble prediction: (N, size, size, 3) -> grades, probs."""
    images = np.asarray(images, dtype=np.float64)
    size = branches[0].spec["input_size"]
    if images.ndim != 4 or images.shape[1:] != (size, size, 3):
        raise UnpreprocessedInputError(
            f"expected preprocessed (N, {size}, {size}, 3) images, got {images.shape}"
        )
    probs = _ensemble_probs(branches, meta, images)
    return decode_batch(probs), probs


def _ensemble_probs(branches, meta, images):
    if len(branches) != 2:
        raise ValueError(f"the ensemble stacks exactly two branches, got {len(branches)}")
    stacked = stack_features(branches[0].predict(images), branches[1].predict(images))
    return meta.predict(stacked)

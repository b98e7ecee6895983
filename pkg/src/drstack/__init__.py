"""drstack: diabetic-retinopathy grading with ordinal multi-label targets
and a two-branch stacking ensemble.

The pieces, bottom to top: fundus preprocessing (crop / resize / circle
mask / Gaussian blur) and augmentation, cumulative ordinal label encoding,
class-balancing resampling, a shape calculator that validates every layer
chain, branch + meta models trained with Adam on binary cross-entropy, a
metrics suite centered on quadratic weighted kappa, and a pipeline that
runs the whole flow on APTOS-format or synthetic data.
"""

from .backbones import (
    BackboneSpec,
    backbone_spec,
    build_backbone_layers,
    register_backbone,
    registered_backbones,
)
from .config import PipelineConfig, load_pipeline_config, config_to_text, smoke_config
from .dataset import (
    ArrayDataset,
    DatasetManifest,
    GRADE_NAMES,
    NUM_GRADES,
    SampleRecord,
    generate_synthetic,
    ingest_aptos,
    load_image,
    save_image,
    split,
)
from .labels import (
    ResamplePlan,
    apply_resample_plan,
    build_resample_plan,
    decode,
    decode_batch,
    encode,
    encode_batch,
    source_id,
)
from .metrics import (
    MetricsReport,
    classification_metrics,
    confusion,
    format_confusion,
    metrics_report,
    quadratic_weighted_kappa,
)
from .model import (
    BranchHeadSpec,
    MetaModelSpec,
    SequentialModel,
    TrainConfig,
    TrainingHistory,
    bce_grad,
    bce_loss,
    build_branch,
    build_meta,
    predict,
    predict_batch,
    stack_features,
    train_branch,
    train_meta,
)
from .pipeline import RunReport, run_pipeline
from .preprocess import (
    AugmentConfig,
    GaussianKernelSpec,
    PreprocessConfig,
    apply_circle_mask,
    augment,
    crop_dark_border,
    gaussian_blur,
    kernel_weights,
    pad_to_square,
    preprocess_image,
    resize,
    zoom_about_center,
)
from .shapecalc import (
    ConvSpec,
    Dense,
    Flatten,
    PoolSpec,
    VolumeShape,
    conv_output_shape,
    pool_output_shape,
    same_padding,
    validate_chain,
)

__version__ = "0.1.0"

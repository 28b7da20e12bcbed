"""Expanded parts model: sparse discriminative part templates over integral
bag-of-features, with greedy constrained selection and SGD part mining."""

from .errors import (
    ConfigError,
    EmptyRegionError,
    EpmError,
    EvaluationError,
    FeatureError,
    FileFormatError,
    GeometryError,
    ImageFormatError,
    ManifestError,
    SelectionError,
    SyntheticError,
    TrainingError,
)
from .image_io import (
    DatasetManifest,
    GrayImage,
    ManifestEntry,
    PixelBox,
    crop_expand,
    load_image,
    read_manifest,
    save_image,
    write_manifest,
)
from .geometry import Grid, PartLocation, align_to_grid, iou, sample_candidate_locations
from .features import (
    Codebook,
    DenseDescriptor,
    FeatureTensor,
    RegionFeature,
    build_feature_tensor,
    extract_dense_descriptors,
    learn_codebook,
    load_codebook,
    load_tensor,
    quantize,
    region_feature,
    save_codebook,
    save_tensor,
)
from .model import (
    EpmModel,
    Part,
    Selection,
    init_part,
    load_model,
    part_score,
    save_model,
    score_exact,
    score_greedy,
)
from .training import (
    TrainConfig,
    TrainLog,
    compute_rates,
    objective_value,
    prune_parts,
    sgd_step,
    train_epm,
)
from .metrics import average_precision, mean_ap
from .baseline import fuse_scores, spm_feature, train_linear
from .synthetic import SynthConfig, generate_synthetic
from .report import visualize_selection

__version__ = "0.1.0"

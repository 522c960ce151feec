from .dataset import MultiViewDataset, Sample, split_by_subject, subject_folds
from .manifest import (
    DatasetManifest,
    DuplicateRecordError,
    EmptyDatasetError,
    ManifestError,
    ManifestNotFoundError,
    ManifestRecord,
    UnknownExpressionError,
    UnknownViewError,
    load_dataset,
    load_manifest,
    parse_manifest,
)
from .synthetic import SyntheticConfig, SyntheticConfigError, generate_synthetic_dataset, write_synthetic_dataset
from .augment import AugmentConfig, AugmentParams, apply_params, augment, sample_params
from .sampler import (
    AugmentedBatch,
    SamplerConfig,
    SamplerError,
    augment_pairs,
    batches_per_epoch,
    epoch_batches,
    labeled_batches,
    sample_batch,
)

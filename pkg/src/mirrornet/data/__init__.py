from .augment import AffineParams, AugmentConfig, apply_affine, augment_sample
from .dataset import (
    Batch,
    DatasetError,
    DatasetManifest,
    collate,
    generate_dataset,
    load_dataset,
    read_manifest,
    save_dataset,
    select_annotated,
)
from .sample import Sample
from .synthetic import SyntheticConfig, SyntheticError, generate_synthetic_sample

__all__ = [
    "AffineParams", "AugmentConfig", "Batch", "DatasetError", "DatasetManifest", "Sample",
    "SyntheticConfig", "SyntheticError", "apply_affine", "augment_sample", "collate",
    "generate_dataset", "generate_synthetic_sample", "load_dataset", "read_manifest",
    "save_dataset", "select_annotated",
]

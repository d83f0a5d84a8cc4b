from ..pose import JOINT_NAMES, N_JOINTS, Plane, Pose
from .augment import (
    NO_AUGMENT,
    SLP_POLICY,
    SMAL_POLICY,
    AugmentPolicy,
    augment,
    derive_seed,
    preprocess,
    preprocess_array,
)
from .io import ManifestError, load_dataset, save_dataset
from .splits import SplitPlan, assemble_split, make_folds, make_holdout
from .synth import ADULT, INFANT, BodyProfile, generate_dataset, generate_pose, heightfield, render_sample
from .types import COVERED, Category, Cover, Dataset, Modality, Sample, Source

__all__ = [
    "ADULT", "COVERED", "INFANT", "JOINT_NAMES", "N_JOINTS", "NO_AUGMENT", "SLP_POLICY", "SMAL_POLICY",
    "AugmentPolicy", "BodyProfile", "Category", "Cover", "Dataset", "ManifestError", "Modality", "Plane",
    "Pose", "Sample", "Source", "SplitPlan", "assemble_split", "augment", "derive_seed", "generate_dataset",
    "generate_pose", "heightfield", "load_dataset", "make_folds", "make_holdout", "preprocess",
    "preprocess_array", "render_sample", "save_dataset",
]

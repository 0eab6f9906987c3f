"""Datasets: labeling, splitting, augmentation, synthesis and file I/O."""
from .augment import augment, center_offset, channel_mean, crop, crop_batch, flip
from .io import DatasetManifest, ingest, persist, read_images, read_labels, write_images, write_labels
from .records import (
    CLASS_HIGH,
    CLASS_LOW,
    DISCARD,
    HIGH,
    LOW,
    Dataset,
    LabeledSet,
    RawRecord,
    delta_label,
    label_scores,
    labeled,
    make_split,
)
from .synthetic import (
    GroundTruth,
    SyntheticSpec,
    attribute_code,
    attribute_template,
    default_plan,
    generate_synthetic,
    jittered_patch,
)

__all__ = [
    "CLASS_HIGH", "CLASS_LOW", "DISCARD", "Dataset", "DatasetManifest", "GroundTruth", "HIGH",
    "LOW", "LabeledSet", "RawRecord", "SyntheticSpec", "attribute_code", "attribute_template", "augment",
    "center_offset", "channel_mean", "crop", "crop_batch", "default_plan", "delta_label",
    "flip", "generate_synthetic", "ingest", "jittered_patch", "label_scores", "labeled", "make_split", "persist",
    "read_images", "read_labels", "write_images", "write_labels",
]

"""Synthetic degradation engine: operators, JPEG codec, dataset builder."""

from .dataset import (
    DatasetRecipe,
    SampleRecord,
    apply_augment,
    balance_and_augment,
    build_dataset,
    load_pair,
    read_manifest,
    write_manifest,
)
from .jpeg import jpeg_roundtrip
from .ops import (
    DEFAULT_PARAMS,
    KINDS,
    PARAM_RANGES,
    DegradationSpec,
    apply_degradation,
    compose_mixture,
    derive_seed,
    haze_invert,
    haze_synthesize,
    sample_spec,
)

__all__ = [
    "DEFAULT_PARAMS",
    "KINDS",
    "PARAM_RANGES",
    "DatasetRecipe",
    "DegradationSpec",
    "SampleRecord",
    "apply_augment",
    "apply_degradation",
    "balance_and_augment",
    "build_dataset",
    "compose_mixture",
    "derive_seed",
    "haze_invert",
    "haze_synthesize",
    "jpeg_roundtrip",
    "load_pair",
    "read_manifest",
    "sample_spec",
    "write_manifest",
]

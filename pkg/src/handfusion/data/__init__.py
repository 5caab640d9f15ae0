"""Synthetic scenes, dataset IO and augmentation."""

from .augment import AugmentParams, AugmentRanges, augment, sample_params
from .io import HANDS, HandAnnotation, Sample, load_dataset, load_sample, save_sample
from .synthetic import SceneConfig, generate_sample, generate_synthetic

__all__ = [
    "AugmentParams", "AugmentRanges", "HANDS", "HandAnnotation", "Sample", "SceneConfig", "augment",
    "generate_sample", "generate_synthetic", "load_dataset", "load_sample", "sample_params", "save_sample",
]

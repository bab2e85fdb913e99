"""Desk-scale indoor place recognition: data prep, a from-scratch CNN engine,
two-level hierarchical prediction, class activation maps, and misclassification
analysis."""

from .analysis import (
    build_confusion,
    distinctiveness,
    normalize_misclass,
    rank_similar_pairs,
)
from .blur import BlurVerdict, blur_indicator
from .cam import CamMap, compute_cam, render_overlay, upsample_bilinear
from .datasets import DatasetManifest, load_manifest, split_validation, synth_generate
from .hierarchy import HierarchyConfig, PlaceRecognizer, predict_place
from .imageio import ImageRecord, crop, decode_image, resize_bilinear
from .layers import ConvParams, LrnParams
from .model import ModelSpec, ModelState, deepspace_spec, init_params
from .tensor import Rng
from .training import TrainConfig, TrainReport, lr_at, sgd_step, top_k_accuracy, train

__version__ = "0.1.0"

__all__ = [
    "BlurVerdict",
    "CamMap",
    "ConvParams",
    "DatasetManifest",
    "HierarchyConfig",
    "ImageRecord",
    "LrnParams",
    "ModelSpec",
    "ModelState",
    "PlaceRecognizer",
    "Rng",
    "TrainConfig",
    "TrainReport",
    "blur_indicator",
    "build_confusion",
    "compute_cam",
    "crop",
    "decode_image",
    "deepspace_spec",
    "distinctiveness",
    "init_params",
    "load_manifest",
    "lr_at",
    "normalize_misclass",
    "predict_place",
    "rank_similar_pairs",
    "render_overlay",
    "resize_bilinear",
    "sgd_step",
    "split_validation",
    "synth_generate",
    "top_k_accuracy",
    "train",
    "upsample_bilinear",
]

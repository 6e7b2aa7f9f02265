"""Zero-shot sign recognition from 3D hand keypoints.

Converts hand-keypoint sequences (plus optional precomputed video snippet
features) into fused visual feature vectors, learns a projection into a
lingual class-embedding space on seen classes, and classifies unseen classes
by cosine nearest neighbor. Ships an evaluation harness for repeated
random class splits and feature ablations, file formats for keypoints /
embeddings / snippet features, a synthetic benchmark generator, and a CLI.
"""

__version__ = "0.1.0"

from .types import (
    ClassEmbedding,
    EmbeddingSet,
    FeatureVector,
    FrameSkeleton,
    HandFrame,
    NumericError,
    Point3,
    SignSample,
    SplitSpec,
    ValidationError,
    validate_sample,
)
from .skeleton import FeatureConfig
from .pipeline import (
    DeepChannelConfig,
    TrainConfig,
    ZeroShotModel,
    build_visual,
    predict,
    train,
)
from .evaluate import ablation_suite, make_split, run_protocol, topk_accuracy
from .dataio import SynthSpec, load_dataset, synth_dataset

__all__ = [
    "ClassEmbedding",
    "DeepChannelConfig",
    "EmbeddingSet",
    "FeatureConfig",
    "FeatureVector",
    "FrameSkeleton",
    "HandFrame",
    "NumericError",
    "Point3",
    "SignSample",
    "SplitSpec",
    "SynthSpec",
    "TrainConfig",
    "ValidationError",
    "ZeroShotModel",
    "ablation_suite",
    "build_visual",
    "load_dataset",
    "make_split",
    "predict",
    "run_protocol",
    "synth_dataset",
    "topk_accuracy",
    "train",
    "validate_sample",
]

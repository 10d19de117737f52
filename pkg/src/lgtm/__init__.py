"""Local-to-global text-to-motion diffusion.

A caption is split into six body-part narratives, six independent part
encoders turn noisy part motions plus their narratives into latents, and a
full-body optimizer fuses them into a clean-motion prediction driven by a
DDIM diffusion loop.  The package also ships the evaluation suite (FID,
diversity, retrieval precision, per-part motion-text similarity, physical
artifact metrics), a synthetic 16-clip corpus, and a training/sampling CLI.
"""

from .motion import (
    FEATURE_DIM,
    NUM_JOINTS,
    PART_NAMES,
    PART_WIDTHS,
    FeatureStats,
    MotionSequence,
    SkeletonMap,
    compute_stats,
    default_skeleton,
    denormalize,
    load_motion,
    normalize,
    partition,
    recompose,
    save_motion,
    validate,
)
from .text_partition import PartTexts, decompose, parse_decomposition, rule_fallback
from .diffusion import SampleRequest, ddim_sample, make_schedule, q_sample, training_loss
from .model import TextToMotionModel, build_model
from .harness import (
    DatasetIndex,
    TrainConfig,
    end_to_end_sample,
    ingest,
    precompute_decompositions,
    train,
)
from .metrics import MetricsReport, evaluate_corpus, train_eval_encoders
from .toycorpus import build_toy_corpus

__version__ = "0.1.0"

__all__ = [
    "FEATURE_DIM",
    "NUM_JOINTS",
    "PART_NAMES",
    "PART_WIDTHS",
    "FeatureStats",
    "MotionSequence",
    "SkeletonMap",
    "compute_stats",
    "default_skeleton",
    "denormalize",
    "load_motion",
    "normalize",
    "partition",
    "recompose",
    "save_motion",
    "validate",
    "PartTexts",
    "decompose",
    "parse_decomposition",
    "rule_fallback",
    "SampleRequest",
    "ddim_sample",
    "make_schedule",
    "q_sample",
    "training_loss",
    "TextToMotionModel",
    "build_model",
    "DatasetIndex",
    "TrainConfig",
    "end_to_end_sample",
    "ingest",
    "precompute_decompositions",
    "train",
    "MetricsReport",
    "evaluate_corpus",
    "train_eval_encoders",
    "build_toy_corpus",
    "__version__",
]

"""promptrouter: attention-routed prompt knowledge bases for de-biased
classification on long-tailed data.

Offline, a five-dimension prompt pool per class is rendered, encoded and
summarized into fixed inputs (averaged features and a prior alignment
matrix). Online, a shared multi-head attention router matches image
features against each class's pool; training combines a class-name branch
with compensated cross-entropy, prior alignment and distillation losses,
and inference fuses both branches' logits.
"""

from .data import LongTailDataset, LongTailSpec, assign_shot_groups, longtail_counts, make_dataset
from .encoders import (
    FeatureProvider,
    FileBackedProvider,
    SyntheticWorld,
    SyntheticWorldSpec,
    load_feature_bundle,
    make_synthetic_world,
    save_feature_bundle,
)
from .errors import (
    ConfigurationError,
    EmptyPoolError,
    IntegrityError,
    LoadError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .estimator import RoutedPromptClassifier
from .evaluation import EvalReport, evaluate, fuse_logits, run_ablation
from .knowledge import KnowledgeBase, PriorStats, build_knowledge_base, load_kb, prior_stats, save_kb, zero_shot_confusion
from .losses import (
    LossWeights,
    compensated_ce,
    knowledge_alignment_loss,
    prior_alignment_loss,
    total_loss,
    warmup_weight,
)
from .numerics import GradCheckReport, grad_check, kl_divergence, scaled_dot_product_attention, softmax
from .prompts import DIMENSIONS, PromptRecord, render_prompt
from .routing import (
    BaseBranchParams,
    RouterParams,
    RoutingOutput,
    base_logits,
    base_trainable_count,
    c_mha_forward,
    init_base_branch,
    init_router,
    router_trainable_count,
    semantic_logits,
)
from .training import Checkpoint, TrainConfig, TrainHistory, load_checkpoint, save_checkpoint, train, tune_grid

__version__ = "0.1.0"

__all__ = [
    "BaseBranchParams",
    "Checkpoint",
    "ConfigurationError",
    "DIMENSIONS",
    "EmptyPoolError",
    "EvalReport",
    "FeatureProvider",
    "FileBackedProvider",
    "GradCheckReport",
    "IntegrityError",
    "KnowledgeBase",
    "LoadError",
    "LongTailDataset",
    "LongTailSpec",
    "LossWeights",
    "NumericError",
    "PriorStats",
    "PromptRecord",
    "RoutedPromptClassifier",
    "RouterParams",
    "RoutingOutput",
    "ShapeError",
    "SyntheticWorld",
    "SyntheticWorldSpec",
    "TrainConfig",
    "TrainHistory",
    "ValidationError",
    "assign_shot_groups",
    "base_logits",
    "base_trainable_count",
    "build_knowledge_base",
    "c_mha_forward",
    "compensated_ce",
    "evaluate",
    "fuse_logits",
    "grad_check",
    "init_base_branch",
    "init_router",
    "kl_divergence",
    "knowledge_alignment_loss",
    "load_checkpoint",
    "load_feature_bundle",
    "load_kb",
    "longtail_counts",
    "make_dataset",
    "make_synthetic_world",
    "prior_alignment_loss",
    "prior_stats",
    "render_prompt",
    "router_trainable_count",
    "run_ablation",
    "save_checkpoint",
    "save_feature_bundle",
    "save_kb",
    "scaled_dot_product_attention",
    "semantic_logits",
    "softmax",
    "total_loss",
    "train",
    "tune_grid",
    "warmup_weight",
    "zero_shot_confusion",
]

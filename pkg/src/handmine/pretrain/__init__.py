"""Contrastive pre-training on mined cross-video pairs."""

from .augment import (
    AugmentParams,
    AugmentRanges,
    affine_matrix,
    apply_augment,
    inverse_align,
    inverse_align_backward,
    transform_keypoints,
    warp_images,
)
from .encoder import EncoderModel, encoder_backward, encoder_forward, init_encoder
from .loss import LossReport, adaptive_weights, unit_weights, weighted_ntxent
from .train import (
    OptimizerState,
    TrainBatch,
    TrainConfig,
    TrainData,
    evaluate_margin,
    loss_and_grads,
    make_batch,
    smoothed_loss,
    train_loop,
    train_step,
    training_margin,
)

__all__ = [
    "AugmentParams", "AugmentRanges", "affine_matrix", "apply_augment", "inverse_align",
    "inverse_align_backward", "transform_keypoints", "warp_images",
    "EncoderModel", "encoder_backward", "encoder_forward", "init_encoder",
    "LossReport", "adaptive_weights", "unit_weights", "weighted_ntxent",
    "OptimizerState", "TrainBatch", "TrainConfig", "TrainData", "evaluate_margin",
    "loss_and_grads", "make_batch", "smoothed_loss", "train_loop", "train_step",
    "training_margin",
]

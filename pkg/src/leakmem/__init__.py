"""leakmem: taming identity leakage in a miniature animation pipeline.

A from-scratch differentiable core drives a self-supervised encoder/generator
toy on a synthetic identity x motion world, with two mechanisms mounted on
top: motion extraction that strips identity content, and a dual external
memory that stores leakage-bearing detail features during training and
recalls them at inference.
"""

from .autodiff import (
    Tape,
    Tensor,
    avg_pool_spatial,
    backward,
    cosine_similarity,
    kl_divergence,
    matmul,
    softmax,
    weighted_sum,
)
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, load_run_config, parse_run_config
from .estimator import MotionTransfer
from .gradcheck import finite_difference_check, run_gradcheck
from .memory import (
    DetailIndicator,
    MemoryBanks,
    address_driven,
    address_motion_source,
    alignment_loss,
    memory_loss,
    recall,
)
from .model import (
    AnimationModel,
    ModelConfig,
    MultiScaleFeatures,
    adversarial_loss,
    generator_adversarial_loss,
    reconstruction_loss,
)
from .motion import MotionIndicator, QueryExtractor, disentanglement_loss, motion_difference
from .probe import (
    IdentityProbe,
    ProbeReport,
    feature_swap_sweep,
    fit_identity_probe,
    motion_leakage_score,
    retrieval_fidelity,
    self_vs_cross_gap,
)
from .training import RMSProp, TrainConfig, run_training, train_step
from .world import SyntheticSample, SyntheticWorld, WorldConfig

__version__ = "0.1.0"

__all__ = [
    "AnimationModel",
    "DetailIndicator",
    "IdentityProbe",
    "MemoryBanks",
    "ModelConfig",
    "MotionIndicator",
    "MotionTransfer",
    "MultiScaleFeatures",
    "ProbeReport",
    "QueryExtractor",
    "RMSProp",
    "RunConfig",
    "SyntheticSample",
    "SyntheticWorld",
    "Tape",
    "Tensor",
    "TrainConfig",
    "WorldConfig",
    "address_driven",
    "address_motion_source",
    "adversarial_loss",
    "alignment_loss",
    "avg_pool_spatial",
    "backward",
    "cosine_similarity",
    "disentanglement_loss",
    "feature_swap_sweep",
    "finite_difference_check",
    "fit_identity_probe",
    "generator_adversarial_loss",
    "kl_divergence",
    "load_checkpoint",
    "load_run_config",
    "matmul",
    "memory_loss",
    "motion_difference",
    "motion_leakage_score",
    "parse_run_config",
    "recall",
    "reconstruction_loss",
    "restore_model",
    "retrieval_fidelity",
    "run_gradcheck",
    "run_training",
    "save_checkpoint",
    "self_vs_cross_gap",
    "softmax",
    "train_step",
    "weighted_sum",
]

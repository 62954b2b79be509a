"""Masked latent prediction grafted onto a two-stage vision-language
alignment loop, at desk scale: block masking, a hybrid attention mask, a
layer-tapped predictive loss, and a reproducible trainer with oracles and
gradient checks.
"""

__version__ = "0.1.0"

from .attention import AttnVariant, AttentionMask, TokenRole, build_mask
from .autodiff import Tensor, fd_check
from .masking import (BlockSpec, MaskSpec, PatchGrid, ResampleExhausted,
                      SamplerConfig, sample_mask)
from .model import PredictorConfig, Predictor, Projector, tap_layer_default
from .objective import LossConfig, LossReport
from .training import ModelBundle, TrainConfig, Trainer, run_stage

__all__ = [
    "AttnVariant", "AttentionMask", "TokenRole", "build_mask",
    "Tensor", "fd_check",
    "BlockSpec", "MaskSpec", "PatchGrid", "ResampleExhausted",
    "SamplerConfig", "sample_mask",
    "PredictorConfig", "Predictor", "Projector", "tap_layer_default",
    "LossConfig", "LossReport",
    "ModelBundle", "TrainConfig", "Trainer", "run_stage",
]

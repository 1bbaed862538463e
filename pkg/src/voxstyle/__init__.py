"""Desk-scale verification lab for voiced-aware style quantization.

Core surfaces: a tape autodiff engine (`tensor`, `optim`, `gradcheck`),
audio features (`audiofeat`), rotation-gradient residual quantization
(`quantizer`), the filler-attention style encoder (`styleenc`), the
direction/prosody objectives (`objectives`), and a synthetic training
lab (`synthdata`, `toymodel`, `training`, `metrics`) behind the
`voxstyle` CLI.
"""

from .tensor import Tape, Tensor, backward, zero_grad
from .optim import AdamWConfig, AdamWState, adamw_step
from .gradcheck import grad_check
from .quantizer import (
    Codebook,
    QuantizeOutput,
    RotationTransform,
    RvqStack,
    nearest_code,
    quantize_rt,
    quantize_ste,
    rotation_align,
    rvq_forward,
    rvq_loss,
)
from .styleenc import EncodeOptions, StyleEncoder, StyleEncoderConfig
from .objectives import LossWeights, MlpHead, sd_loss, sp_loss, total_loss
from .synthdata import SynthSpec, generate_dataset
from .toymodel import ToyModel, ToyModelConfig
from .training import MODES, AblationMode, TrainConfig, run_training

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "zero_grad",
    "AdamWConfig",
    "AdamWState",
    "adamw_step",
    "grad_check",
    "Codebook",
    "QuantizeOutput",
    "RotationTransform",
    "RvqStack",
    "nearest_code",
    "quantize_rt",
    "quantize_ste",
    "rotation_align",
    "rvq_forward",
    "rvq_loss",
    "EncodeOptions",
    "StyleEncoder",
    "StyleEncoderConfig",
    "LossWeights",
    "MlpHead",
    "sd_loss",
    "sp_loss",
    "total_loss",
    "SynthSpec",
    "generate_dataset",
    "ToyModel",
    "ToyModelConfig",
    "MODES",
    "AblationMode",
    "TrainConfig",
    "run_training",
]

__version__ = "0.1.0"

"""Masked action recognition at desk scale: running mask schedules, a small
spatio-temporal transformer trained from scratch on a custom reverse-mode
tape, an analytic compute-cost model, and a synthetic motion benchmark."""

from .flops import CostReport, full_scale_cost, mar_cost, transformer_cost
from .maskgen import LatticeShape, MaskSchedule, MaskSpec, generate
from .model import BridgeConfig, DecoderConfig, EncoderConfig, ModelConfig, init_params
from .tensorcore import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "full_scale_cost",
    "mar_cost",
    "transformer_cost",
    "LatticeShape",
    "MaskSchedule",
    "MaskSpec",
    "generate",
    "BridgeConfig",
    "DecoderConfig",
    "EncoderConfig",
    "ModelConfig",
    "init_params",
    "Tape",
    "Tensor",
    "__version__",
]

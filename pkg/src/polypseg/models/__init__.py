from polypseg.models.config import ARCHS, PRESETS, ModelConfig
from polypseg.models.layers import (
    Activation,
    InceptionBlock,
    ResidualBlock,
    ReverseAttention,
    leaky_relu,
)
from polypseg.models.networks import ModelOutput, SegModel, build_model, forward, param_count

__all__ = [
    "ARCHS",
    "PRESETS",
    "Activation",
    "InceptionBlock",
    "ModelConfig",
    "ModelOutput",
    "ResidualBlock",
    "ReverseAttention",
    "SegModel",
    "build_model",
    "forward",
    "leaky_relu",
    "param_count",
]

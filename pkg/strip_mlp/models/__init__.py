"""Model zoo and checkpoint container."""

from .checkpoint import decode_container, encode_container, load_checkpoint, save_checkpoint
from .zoo import VARIANTS, ModelConfig, StripMLP, build_model, model_forward, variant_config

__all__ = [
    "ModelConfig",
    "StripMLP",
    "VARIANTS",
    "build_model",
    "decode_container",
    "encode_container",
    "load_checkpoint",
    "model_forward",
    "save_checkpoint",
    "variant_config",
]

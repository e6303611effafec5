"""
网络模块 - U-Net 主干、图像提示 adapter、模型组合
"""

from .backbone import (
    Taps,
    TapPoint,
    BlockFeatures,
    AttnProbs,
    AttnRecord,
    AttnMaps,
    BackboneOutput,
    UNet,
    merged_attention,
    backbone_forward,
)
from .adapters import (
    FACE_EMBED_DIM,
    ImageAdapter,
    encode_face,
    encode_faces,
    flip_embedding,
    project_embedding,
    adapter_kv,
)
from .bundle import ModelBundle, build_unet, build_adapter

__all__ = [
    "Taps",
    "TapPoint",
    "BlockFeatures",
    "AttnProbs",
    "AttnRecord",
    "AttnMaps",
    "BackboneOutput",
    "UNet",
    "merged_attention",
    "backbone_forward",
    "FACE_EMBED_DIM",
    "ImageAdapter",
    "encode_face",
    "encode_faces",
    "flip_embedding",
    "project_embedding",
    "adapter_kv",
    "ModelBundle",
    "build_unet",
    "build_adapter",
]

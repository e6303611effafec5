"""
融合模块 - 区域损失与双通路特征融合
"""

from .losses import loss_iea, loss_tca, fuse_noise, loss_fusion, total_loss
from .ffb import (
    PathwaySpec,
    DualPathOutput,
    MaskPyramid,
    build_mask_pyramid,
    blend_features,
    dual_path_forward,
)

__all__ = [
    "loss_iea",
    "loss_tca",
    "fuse_noise",
    "loss_fusion",
    "total_loss",
    "PathwaySpec",
    "DualPathOutput",
    "MaskPyramid",
    "build_mask_pyramid",
    "blend_features",
    "dual_path_forward",
]

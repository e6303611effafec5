"""
区域掩码损失与噪声空间融合
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor

from ..errors import StructuralError


def _check_mask(noise: Tensor, pred: Tensor, m: Tensor):
    if noise.shape != pred.shape:
        raise StructuralError(f"noise {tuple(noise.shape)} and prediction {tuple(pred.shape)} differ")
    try:
        shape = torch.broadcast_shapes(m.shape, noise.shape)
    except RuntimeError as e:
        raise StructuralError(f"mask {tuple(m.shape)} does not broadcast to {tuple(noise.shape)}") from e
    if shape != noise.shape:
        raise StructuralError(f"mask {tuple(m.shape)} would enlarge {tuple(noise.shape)}")


def loss_iea(noise: Tensor, pred_iea: Tensor, m: Tensor) -> Tensor:
    """mean((m ⊙ (n − ε_IEA))²)，对全部元素取均值"""
    _check_mask(noise, pred_iea, m)
    return (m.to(noise.dtype) * (noise - pred_iea)).pow(2).mean()


def loss_tca(noise: Tensor, pred_tca: Tensor, m: Tensor) -> Tensor:
    """mean(((1 − m) ⊙ (n − ε_TCA))²)"""
    _check_mask(noise, pred_tca, m)
    return ((1.0 - m.to(noise.dtype)) * (noise - pred_tca)).pow(2).mean()


def fuse_noise(pred_iea: Tensor, pred_tca: Tensor, m: Tensor) -> Tensor:
    """m ⊙ ε_IEA + (1 − m) ⊙ ε_TCA；m ∈ {0, 1} 或两者相同时精确"""
    _check_mask(pred_iea, pred_tca, m)
    return torch.lerp(pred_tca, pred_iea, m.to(pred_iea.dtype).expand_as(pred_iea))


def loss_fusion(noise: Tensor, fused: Tensor) -> Tensor:
    if noise.shape != fused.shape:
        raise StructuralError("noise and fused prediction differ in shape")
    return F.mse_loss(fused, noise)


def total_loss(
    l_iea: Tensor,
    l_tca: Tensor,
    l_fusion: Tensor,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> Tensor:
    w_iea, w_tca, w_fusion = weights
    return w_iea * l_iea + w_tca * l_tca + w_fusion * l_fusion

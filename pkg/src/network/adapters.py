"""
图像提示 adapter - 冻结的人脸编码器、投影网络与逐层解耦 key/value 投影
"""

from __future__ import annotations
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from ..errors import ParameterError, StructuralError
from ..models import AdapterRole

FACE_GRID = 4
FACE_EMBED_DIM = 3 * FACE_GRID * FACE_GRID

ROLE_DEFAULT_ALPHA = {
    AdapterRole.IEA: 1.0,
    AdapterRole.TCA: 0.5,
}

BBox = tuple[int, int, int, int]


# ============ 冻结人脸编码器 ============

def check_bbox(face_bbox: Sequence[int], height: int, width: int) -> BBox:
    """校验半开区间 bbox (top, left, bottom, right)"""
    if len(face_bbox) != 4:
        raise ParameterError(f"face_bbox needs 4 values, got {len(face_bbox)}")
    top, left, bottom, right = (int(v) for v in face_bbox)
    if not (0 <= top < bottom <= height and 0 <= left < right <= width):
        raise ParameterError(
            f"face_bbox {(top, left, bottom, right)} outside image {height}x{width} or empty"
        )
    return top, left, bottom, right


@torch.no_grad()
def encode_face(image: Tensor, face_bbox: Sequence[int], mask: Optional[Tensor] = None) -> Tensor:
    """
    人脸嵌入：bbox 裁剪（可选按掩码置零背景）→ 4×4 自适应均值池化 → 展平为 48 维

    Args:
        image: (3, H, W)，取值 [-1, 1]
        face_bbox: (top, left, bottom, right)，半开区间
        mask: 可选 (H, W) 人脸掩码，掩码外像素置零

    Returns:
        (48,) 通道优先展平的嵌入，不参与求导
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise StructuralError(f"image must be (3, H, W), got {tuple(image.shape)}")
    height, width = image.shape[-2:]
    top, left, bottom, right = check_bbox(face_bbox, height, width)

    crop = image[:, top:bottom, left:right]
    if mask is not None:
        mask = mask.reshape(height, width)
        crop = crop * (mask[top:bottom, left:right] > 0.5).to(crop.dtype)

    grid = F.adaptive_avg_pool2d(crop.unsqueeze(0), FACE_GRID)[0]
    return grid.reshape(-1).detach()


def encode_faces(
    images: Tensor,
    face_bboxes: Sequence[Sequence[int]],
    masks: Optional[Tensor] = None,
) -> Tensor:
    """批量版本：(B, 3, H, W) → (B, 48)"""
    if len(face_bboxes) != images.shape[0]:
        raise StructuralError("one face_bbox per image is required")
    return torch.stack([
        encode_face(images[i], face_bboxes[i], None if masks is None else masks[i])
        for i in range(images.shape[0])
    ])


def flip_embedding(e: Tensor) -> Tensor:
    """水平翻转人脸对应的嵌入（训练增强）"""
    lead = e.shape[:-1]
    grid = e.reshape(*lead, 3, FACE_GRID, FACE_GRID).flip(-1)
    return grid.reshape(*lead, FACE_EMBED_DIM)


# ============ Adapter ============

class ImageAdapter(nn.Module):
    """
    一组 adapter 参数：投影网络 + 每个注意力层的 to_k_ip / to_v_ip

    role 决定默认注入强度（IEA 1.0，TCA 0.5）。
    """

    def __init__(
        self,
        role: AdapterRole,
        layer_dims: dict[str, int],
        embed_dim: int = FACE_EMBED_DIM,
        n_tokens: int = 4,
        hidden_dim: int = 128,
        token_dim: int = 64,
    ):
        super().__init__()
        if not layer_dims:
            raise StructuralError("adapter needs at least one attention layer")
        self.role = AdapterRole(role)
        self.alpha_default = ROLE_DEFAULT_ALPHA[self.role]
        self.embed_dim = embed_dim
        self.n_tokens = n_tokens
        self.token_dim = token_dim

        self.projector = nn.Sequential(
            nn.Linear(embed_dim, hidden_dim),
            nn.GELU(),
            nn.Linear(hidden_dim, n_tokens * token_dim),
        )
        self.to_k_ip = nn.ModuleDict({
            layer_id: nn.Linear(token_dim, channels, bias=False)
            for layer_id, channels in layer_dims.items()
        })
        self.to_v_ip = nn.ModuleDict({
            layer_id: nn.Linear(token_dim, channels, bias=False)
            for layer_id, channels in layer_dims.items()
        })

    def layer_ids(self) -> list[str]:
        return list(self.to_k_ip.keys())

    def project(self, e: Tensor) -> Tensor:
        """(..., 48) → (..., n_tokens, token_dim)"""
        if e.shape[-1] != self.embed_dim:
            raise StructuralError(f"embedding dim {e.shape[-1]} != {self.embed_dim}")
        return self.projector(e).reshape(*e.shape[:-1], self.n_tokens, self.token_dim)

    def layer_kv(self, tokens: Tensor, layer_id: str) -> tuple[Tensor, Tensor]:
        if layer_id not in self.to_k_ip:
            raise StructuralError(f"adapter has no projections for layer '{layer_id}'")
        return self.to_k_ip[layer_id](tokens), self.to_v_ip[layer_id](tokens)


def project_embedding(e: Tensor, adapter: ImageAdapter) -> Tensor:
    """人脸嵌入 → 图像提示 tokens"""
    return adapter.project(e)


def adapter_kv(tokens: Tensor, adapter: ImageAdapter, layer_id: str) -> tuple[Tensor, Tensor]:
    """图像提示 tokens → 指定注意力层的 (key, value)"""
    return adapter.layer_kv(tokens, layer_id)

"""
玩具世界的解析指标 - face_score（身份相似度）与 text_match_score（描述一致性）
"""

from __future__ import annotations
from functools import lru_cache
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from torch import Tensor

from ..errors import StructuralError
from ..masking import largest_region
from ..models import Background, Caption, FaceSize, IdentitySpec, Placement
from ..network.adapters import encode_face
from .world import (
    BACKGROUND_COLORS, BACKGROUND_LEVEL, placement_centers, render_reference,
    size_area_threshold, stripe_signs,
)

# 背景原型：(平均 RGB, 条纹能量)
BACKGROUND_PROTOTYPES: dict[Background, np.ndarray] = {
    **{bg: np.array([*rgb, 0.0]) for bg, rgb in BACKGROUND_COLORS.items()},
    Background.STRIPED: np.array([0.0, 0.0, 0.0, BACKGROUND_LEVEL]),
}


# 像素与脸色/眼色的最大通道差上限
FACE_TOLERANCE = 0.5

_NEUTRAL_PROTOTYPES = np.array(
    [*BACKGROUND_COLORS.values(), (BACKGROUND_LEVEL,) * 3, (-BACKGROUND_LEVEL,) * 3],
    dtype=np.float64,
)


def _binary(m: Tensor, shape: tuple[int, int]) -> np.ndarray:
    mask = m.detach().reshape(shape).cpu().numpy() > 0.5
    return mask


def _bbox(mask: np.ndarray) -> Optional[tuple[int, int, int, int]]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


# ============ face region ============

def face_region(image: Tensor, identity: IdentitySpec, tolerance: float = FACE_TOLERANCE) -> Tensor:
    """
    从生成像素中定位人脸：(S, S) float {0, 1}

    像素归入最近的颜色原型（脸色、眼色、三种纯色背景、条纹亮/暗列），
    以最近为脸色且在 tolerance 内的像素为核心，再并入与核心相连的眼色像素，
    取最大 4 连通域并填洞。没有脸色像素时返回全零。
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise StructuralError(f"image must be (3, H, W), got {tuple(image.shape)}")
    pixels = image.detach().double().cpu().numpy().transpose(1, 2, 0)
    face = np.asarray(identity.face_color, dtype=np.float64)
    eye = np.asarray(identity.eye_color, dtype=np.float64)
    prototypes = np.vstack([face, eye, _NEUTRAL_PROTOTYPES])

    nearest = np.linalg.norm(pixels[:, :, None, :] - prototypes, axis=-1).argmin(axis=-1)
    core = (nearest == 0) & (np.abs(pixels - face).max(axis=-1) <= tolerance)
    eyes = (nearest == 1) & (np.abs(pixels - eye).max(axis=-1) <= tolerance)
    if not core.any():
        return torch.zeros(pixels.shape[:2], dtype=torch.float32)

    four = ndimage.generate_binary_structure(2, 1)
    connected = ndimage.binary_propagation(core, structure=four, mask=core | eyes)
    region = ndimage.binary_fill_holes(largest_region(connected, 4))
    return torch.from_numpy(region.astype(np.float32))


def score_image(image: Tensor, caption: Caption, identity: IdentitySpec) -> tuple[float, float, Tensor]:
    """(face_score, text_match, 评估掩码)，掩码取自图像本身"""
    region = face_region(image, identity)
    return face_score(image, region, identity), text_match_score(image, caption, region), region


# ============ face score ============

@lru_cache(maxsize=256)
def _reference_embedding(
    face_color: tuple[float, ...], eye_color: tuple[float, ...], identity_id: int, size: int
) -> Tensor:
    identity = IdentitySpec(id=identity_id, face_color=face_color, eye_color=eye_color)
    ref = render_reference(identity, size)
    return encode_face(ref.image, ref.face_bbox, ref.face_mask)


def reference_embedding(identity: IdentitySpec, size: int) -> Tensor:
    return _reference_embedding(
        tuple(identity.face_color), tuple(identity.eye_color), identity.id, size
    )


def face_score(image: Tensor, m: Tensor, ref: IdentitySpec) -> float:
    """
    掩码 bbox 内（掩码外置零）的人脸嵌入与参考渲染嵌入的余弦相似度

    掩码为空时返回 0。
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise StructuralError(f"image must be (3, H, W), got {tuple(image.shape)}")
    size = image.shape[-1]
    mask = _binary(m, tuple(image.shape[-2:]))
    bbox = _bbox(mask)
    if bbox is None:
        return 0.0

    emb = encode_face(image.detach().float().cpu(), bbox, torch.from_numpy(mask.astype(np.float32)))
    ref_emb = reference_embedding(ref, size)
    return float(F.cosine_similarity(emb, ref_emb, dim=0, eps=1e-8))


# ============ text match ============

def background_features(image: Tensor, m: Tensor) -> Optional[np.ndarray]:
    """非人脸区域的 (平均 R, G, B, 条纹能量)；区域为空时返回 None"""
    pixels = image.detach().float().cpu().numpy()
    outside = ~_binary(m, pixels.shape[-2:])
    count = outside.sum()
    if count == 0:
        return None

    mean_rgb = pixels[:, outside].mean(axis=1)
    gray = pixels.mean(axis=0)
    signs = np.broadcast_to(stripe_signs(gray.shape[-1])[None, :], gray.shape)
    centered = gray[outside] - gray[outside].mean()
    energy = abs(float((signs[outside] * centered).mean()))
    return np.array([*mean_rgb, energy])


def classify_background(image: Tensor, m: Tensor) -> Optional[Background]:
    features = background_features(image, m)
    if features is None:
        return None
    return min(
        BACKGROUND_PROTOTYPES,
        key=lambda bg: float(np.linalg.norm(features - BACKGROUND_PROTOTYPES[bg])),
    )


def classify_placement(m: Tensor, size: int) -> Optional[Placement]:
    mask = _binary(m, (size, size))
    if not mask.any():
        return None
    centroid_x = float(np.nonzero(mask)[1].mean())
    centers = placement_centers(size)
    return min(centers, key=lambda p: abs(centers[p] - centroid_x))


def classify_size(m: Tensor, size: int) -> Optional[FaceSize]:
    area = float(_binary(m, (size, size)).sum())
    if area == 0:
        return None
    return FaceSize.SMALL if area < size_area_threshold(size) else FaceSize.LARGE


def classify(image: Tensor, m: Tensor) -> dict[str, Optional[str]]:
    size = image.shape[-1]
    background = classify_background(image, m)
    placement = classify_placement(m, size)
    face_size = classify_size(m, size)
    return {
        "background": background.value if background else None,
        "placement": placement.value if placement else None,
        "size": face_size.value if face_size else None,
    }


def text_match_score(image: Tensor, caption: Caption, m: Tensor) -> float:
    """三个属性（背景、位置、尺寸）中与描述一致的比例"""
    if image.ndim != 3 or image.shape[0] != 3:
        raise StructuralError(f"image must be (3, H, W), got {tuple(image.shape)}")
    predicted = classify(image, m)
    expected = {
        "background": caption.background.value,
        "placement": caption.placement.value,
        "size": caption.size.value,
    }
    matched = sum(predicted[k] == v for k, v in expected.items())
    return matched / 3.0

"""
玩具世界渲染 - 纯色/条纹背景上的圆脸，脸色与眼睛颜色构成身份

几何以 32 像素画布为基准定义，其他尺寸按比例缩放。
"""

from __future__ import annotations
import colorsys
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from ..models import Background, Caption, FaceSize, IdentitySpec, Placement

BASE_SIZE = 32
STRIPE_WIDTH = 4
BACKGROUND_LEVEL = 0.8

BACKGROUND_COLORS: dict[Background, tuple[float, float, float]] = {
    Background.RED: (BACKGROUND_LEVEL, -BACKGROUND_LEVEL, -BACKGROUND_LEVEL),
    Background.GREEN: (-BACKGROUND_LEVEL, BACKGROUND_LEVEL, -BACKGROUND_LEVEL),
    Background.BLUE: (-BACKGROUND_LEVEL, -BACKGROUND_LEVEL, BACKGROUND_LEVEL),
}

# 圆心 x（32 像素坐标，像素中心为整数）
PLACEMENT_X: dict[Placement, float] = {
    Placement.LEFT: 10.0,
    Placement.CENTER: 15.5,
    Placement.RIGHT: 21.0,
}
CENTER_Y = 15.5
RADIUS: dict[FaceSize, float] = {FaceSize.SMALL: 5.0, FaceSize.LARGE: 9.0}

# face_score 的参考渲染
REFERENCE_CAPTION = Caption(background=Background.RED, placement=Placement.CENTER, size=FaceSize.LARGE)
REFERENCE_SEED = 0

GOLDEN_RATIO_CONJUGATE = 0.618033988749895


@dataclass
class Sample:
    """一张渲染样本"""
    image: Tensor                            # (3, S, S)，[-1, 1]
    face_mask: Tensor                        # (S, S)，{0, 1}
    face_bbox: tuple[int, int, int, int]     # (top, left, bottom, right)，半开区间
    identity: IdentitySpec
    caption: Caption

    @property
    def size(self) -> int:
        return self.image.shape[-1]


# ============ 身份 ============

def make_identity(index: int) -> IdentitySpec:
    """
    第 index 个身份：黄金比例色相间隔 + 交替饱和度/明度

    眼睛颜色在每个通道上相对脸色偏移 ±1.0。
    """
    hue = (index * GOLDEN_RATIO_CONJUGATE) % 1.0
    sat = 0.75 if index % 2 == 0 else 0.95
    val = 0.85 if (index // 2) % 2 == 0 else 0.65
    rgb = colorsys.hsv_to_rgb(hue, sat, val)
    face = tuple(round(2.0 * c - 1.0, 6) for c in rgb)
    eye = tuple(round(c - 1.0 if c > 0 else c + 1.0, 6) for c in face)
    return IdentitySpec(id=index, face_color=face, eye_color=eye)


def make_identities(n: int) -> list[IdentitySpec]:
    return [make_identity(i) for i in range(n)]


# ============ 渲染 ============

def stripe_signs(size: int) -> np.ndarray:
    """每列的条纹符号：亮列 +1，暗列 -1"""
    width = max(1, round(STRIPE_WIDTH * size / BASE_SIZE))
    return np.where((np.arange(size) // width) % 2 == 0, 1.0, -1.0)


def render_background(background: Background, size: int) -> np.ndarray:
    """(size, size, 3) 背景"""
    if background == Background.STRIPED:
        column = stripe_signs(size) * BACKGROUND_LEVEL
        gray = np.broadcast_to(column[None, :], (size, size))
        return np.repeat(gray[:, :, None], 3, axis=2).astype(np.float32)
    color = np.asarray(BACKGROUND_COLORS[background], dtype=np.float32)
    return np.broadcast_to(color, (size, size, 3)).copy()


def placement_centers(size: int) -> dict[Placement, float]:
    scale = size / BASE_SIZE
    return {p: x * scale for p, x in PLACEMENT_X.items()}


def size_area_threshold(size: int) -> float:
    """小脸与大脸面积之间的分界（半径 7 的圆面积）"""
    scale = size / BASE_SIZE
    return float(np.pi * (7.0 * scale) ** 2)


def render_sample(
    identity: IdentitySpec,
    caption: Caption,
    seed: int,
    image_size: int = BASE_SIZE,
) -> Sample:
    """
    确定性渲染

    背景按 caption 填充，脸为 face_color 的圆盘，上方两点 eye_color 眼睛；
    圆心按 placement，半径按 size，seed 决定 ≤1 像素的抖动。
    """
    scale = image_size / BASE_SIZE
    rng = np.random.default_rng(seed)
    jx, jy = rng.integers(-1, 2, size=2)

    cx = PLACEMENT_X[caption.placement] * scale + jx * scale
    cy = CENTER_Y * scale + jy * scale
    r = RADIUS[caption.size] * scale

    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float64)
    disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= r ** 2

    eye_r = max(0.6 * scale, 0.22 * r)
    eye_y = cy - 0.3 * r
    eyes = np.zeros_like(disk)
    for dx in (-0.4 * r, 0.4 * r):
        eyes |= (xx - (cx + dx)) ** 2 + (yy - eye_y) ** 2 <= eye_r ** 2
    eyes &= disk

    canvas = render_background(caption.background, image_size)
    canvas[disk] = np.asarray(identity.face_color, dtype=np.float32)
    canvas[eyes] = np.asarray(identity.eye_color, dtype=np.float32)

    rows = np.flatnonzero(disk.any(axis=1))
    cols = np.flatnonzero(disk.any(axis=0))
    bbox = (int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)

    return Sample(
        image=torch.from_numpy(np.ascontiguousarray(canvas.transpose(2, 0, 1))),
        face_mask=torch.from_numpy(disk.astype(np.float32)),
        face_bbox=bbox,
        identity=identity,
        caption=caption,
    )


def render_reference(identity: IdentitySpec, image_size: int = BASE_SIZE) -> Sample:
    """face_score 使用的规范参考渲染"""
    return render_sample(identity, REFERENCE_CAPTION, REFERENCE_SEED, image_size)

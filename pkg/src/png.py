"""
PNG 输出 - 8 位图像、1 位掩码、灰度热力图
"""

from __future__ import annotations
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image
from torch import Tensor

from .errors import StructuralError


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def image_to_uint8(image: Tensor) -> np.ndarray:
    """(3, H, W) ∈ [-1, 1] → (H, W, 3) uint8，仿射映射后四舍五入（远离零）"""
    if image.ndim != 3 or image.shape[0] != 3:
        raise StructuralError(f"image must be (3, H, W), got {tuple(image.shape)}")
    hwc = image.detach().cpu().double().numpy().transpose(1, 2, 0)
    scaled = _round_half_away((np.clip(hwc, -1.0, 1.0) + 1.0) * 127.5)
    return scaled.astype(np.uint8)


def save_image_png(image: Tensor, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image_to_uint8(image)).save(path, format="PNG")


def save_mask_png(mask: Union[Tensor, np.ndarray], path: Path):
    """1 位 PNG"""
    array = mask.detach().cpu().numpy() if isinstance(mask, Tensor) else np.asarray(mask)
    array = array.reshape(array.shape[-2:]) > 0.5
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    gray = Image.fromarray(array.astype(np.uint8) * 255)
    gray.convert("1", dither=Image.Dither.NONE).save(path, format="PNG")


def save_heatmap_png(heatmap: np.ndarray, path: Path):
    """[0, 1] 热力图存为 8 位灰度"""
    gray = _round_half_away(np.clip(np.asarray(heatmap, dtype=np.float64), 0.0, 1.0) * 255.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(gray.astype(np.uint8)).save(path, format="PNG")

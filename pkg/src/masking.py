"""
掩码推断 - 从图像提示交叉注意力得到人脸区域掩码

流程：注意力聚合 → 阈值化（固定 τ 或 Otsu）→ 最大连通域 → 空 / 全满时回退到中心框
"""

from __future__ import annotations
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from torch import Tensor

from .config import MaskConfig, RunConfig
from .diffusion import DiffusionSchedule, cfg_combine, run_ddim
from .errors import ParameterError, StateError
from .fusion.ffb import PathwaySpec
from .models import MaskStats, ThresholdMethod
from .network.backbone import AttnMaps, Taps, UNet

OTSU_BINS = 256


@dataclass
class MaskResult:
    """掩码推断结果及中间产物"""
    mask: Tensor                # (H, W) float32，取值 {0, 1}
    heatmap: np.ndarray
    thresholded: np.ndarray
    filtered: np.ndarray
    threshold: float
    fallback: bool
    stats: MaskStats
    image: Optional[Tensor] = None


# ============ 注意力聚合 ============

def aggregate_attention(
    attn_steps: Sequence[AttnMaps],
    target_resolution: Union[int, tuple[int, int]],
    layers: Optional[Sequence[str]] = None,
    sample: int = 0,
) -> np.ndarray:
    """
    对图像键注意力质量在头、层、时间步上取均值，最近邻上采样后按最大值归一化

    Args:
        attn_steps: 每个记录步的 AttnMaps
        target_resolution: 输出尺寸
        layers: 参与聚合的层，None 为全部带图像键的层
        sample: 批内样本下标

    Raises:
        StateError: 没有可聚合的记录
    """
    size = (
        (target_resolution, target_resolution)
        if isinstance(target_resolution, int) else tuple(target_resolution)
    )
    wanted = set(layers) if layers is not None else None

    total = torch.zeros(size, dtype=torch.float64)
    count = 0
    for maps in attn_steps:
        for layer_id, record in maps.layers.items():
            if wanted is not None and layer_id not in wanted:
                continue
            mass = record.probs.image_mass
            if mass is None:
                continue
            h, w = record.resolution
            per_query = mass[sample].to(torch.float64).mean(dim=0).reshape(1, 1, h, w)
            total += F.interpolate(per_query, size=size, mode="nearest")[0, 0]
            count += 1

    if count == 0:
        raise StateError("no image-prompt attention was recorded")

    heatmap = (total / count).numpy()
    peak = heatmap.max()
    return heatmap / peak if peak > 0 else np.zeros_like(heatmap)


# ============ 阈值化 ============

def otsu_threshold(heatmap: np.ndarray) -> Optional[float]:
    """
    [0, 1] 上 256 个 bin 的 Otsu 阈值

    阈值取类间方差最大处的 bin 左边界（取第一个最大值）；
    所有值落在同一 bin 时返回 None。
    """
    counts, edges = np.histogram(heatmap, bins=OTSU_BINS, range=(0.0, 1.0))
    counts = counts.astype(np.float64)
    centers = (edges[:-1] + edges[1:]) / 2

    w0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(counts * centers)[:-1]
    w1 = counts.sum() - w0
    s1 = (counts * centers).sum() - s0

    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return None
    between = np.full(w0.shape, -1.0)
    mu0 = s0[valid] / w0[valid]
    mu1 = s1[valid] / w1[valid]
    between[valid] = w0[valid] * w1[valid] * (mu0 - mu1) ** 2

    k = int(np.argmax(between)) + 1
    return float(edges[k])


def threshold_map(
    heatmap: np.ndarray,
    method: ThresholdMethod = ThresholdMethod.OTSU,
    tau: float = 0.5,
) -> tuple[np.ndarray, float]:
    """像素 ≥ 阈值 记为 1；Otsu 无法分割时退回 τ"""
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"threshold must be in [0, 1], got {tau}")
    threshold = tau
    if ThresholdMethod(method) == ThresholdMethod.OTSU:
        otsu = otsu_threshold(heatmap)
        if otsu is not None:
            threshold = otsu
    return heatmap >= threshold, threshold


# ============ 连通域 ============

def _structure(connectivity: int) -> np.ndarray:
    if connectivity not in (4, 8):
        raise ParameterError(f"connectivity must be 4 or 8, got {connectivity}")
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def count_components(b: np.ndarray, connectivity: int = 4) -> int:
    _, n = ndimage.label(b, structure=_structure(connectivity))
    return int(n)


def largest_region(b: np.ndarray, connectivity: int = 4) -> np.ndarray:
    """保留面积最大的连通域；并列时取标号最小者"""
    labels, n = ndimage.label(b, structure=_structure(connectivity))
    if n == 0:
        return np.zeros(b.shape, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == int(np.argmax(sizes)) + 1


def fallback_box(shape: tuple[int, int], fraction: float = 0.25) -> np.ndarray:
    """面积约为 fraction 的中心方框"""
    height, width = shape
    box_h = max(1, round(height * math.sqrt(fraction)))
    box_w = max(1, round(width * math.sqrt(fraction)))
    top = (height - box_h) // 2
    left = (width - box_w) // 2
    out = np.zeros(shape, dtype=bool)
    out[top:top + box_h, left:left + box_w] = True
    return out


def mask_bbox(mask: np.ndarray) -> Optional[tuple[int, int, int, int]]:
    """半开区间 (top, left, bottom, right)；空掩码返回 None"""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


# ============ 组合流程 ============

def mask_from_heatmap(heatmap: np.ndarray, cfg: MaskConfig) -> MaskResult:
    thresholded, threshold = threshold_map(heatmap, cfg.method, cfg.threshold)
    filtered = largest_region(thresholded, cfg.connectivity)

    fallback = bool(not filtered.any() or filtered.all())
    final = fallback_box(filtered.shape, cfg.fallback_fraction) if fallback else filtered

    stats = MaskStats(
        coverage=float(final.mean()),
        threshold=float(threshold),
        components=count_components(thresholded, cfg.connectivity),
        fallback=fallback,
        bbox=mask_bbox(final),
    )
    return MaskResult(
        mask=torch.from_numpy(final.astype(np.float32)),
        heatmap=heatmap,
        thresholded=thresholded,
        filtered=filtered,
        threshold=float(threshold),
        fallback=fallback,
        stats=stats,
    )


def mask_from_attention(
    attn_steps: Sequence[AttnMaps],
    resolution: Union[int, tuple[int, int]],
    cfg: MaskConfig,
    sample: int = 0,
) -> MaskResult:
    heatmap = aggregate_attention(attn_steps, resolution, cfg.record_layers, sample)
    return mask_from_heatmap(heatmap, cfg)


@torch.no_grad()
def generate_mask(
    backbone: UNet,
    tca: PathwaySpec,
    text_tokens: Tensor,
    face_emb: Tensor,
    schedule: DiffusionSchedule,
    cfg: RunConfig,
    x_T: Tensor,
    generator: Optional[torch.Generator] = None,
) -> MaskResult:
    """
    第一阶段：仅用 TCA 通路生成，并在选定步记录图像提示注意力以推断人脸掩码

    Returns:
        MaskResult，image 字段为 TCA 通路的生成结果
    """
    steps = cfg.sampler.steps
    record_steps = set(range(steps) if cfg.mask.record_steps is None else cfg.mask.record_steps)
    if not record_steps & set(range(steps)):
        raise StateError("mask.record_steps selects no sampling step")

    null_tokens = torch.zeros_like(text_tokens)
    image_tokens = tca.adapter.project(face_emb)
    recorded: list[AttnMaps] = []

    def eps_fn(x: Tensor, t: int, i: int) -> Tensor:
        out = backbone(
            x, t, text_tokens, tca.adapter, image_tokens, tca.alpha,
            Taps(attention=i in record_steps),
        )
        if out.attn is not None:
            recorded.append(out.attn)
        uncond = backbone(x, t, null_tokens).eps
        return cfg_combine(uncond, out.eps, cfg.sampler.guidance_scale)

    image = run_ddim(x_T, eps_fn, schedule, steps, cfg.sampler.eta, generator)
    result = mask_from_attention(recorded, tuple(x_T.shape[-2:]), cfg.mask)
    result.image = image.clamp(-1.0, 1.0)
    return result

"""
细粒度特征融合（FFB）- 掩码金字塔、逐 block 特征混合、双通路前向
"""

from __future__ import annotations
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Union

import torch
import torch.nn.functional as F
from torch import Tensor

from ..errors import ParameterError, StructuralError
from ..models import FusionMode
from ..network.adapters import ImageAdapter
from ..network.backbone import AttnMaps, BlockStream, Taps, UNet
from .losses import fuse_noise

Resolution = Union[int, tuple[int, int]]
MaskPyramid = dict[tuple[int, int], Tensor]


@dataclass(frozen=True)
class PathwaySpec:
    """一条生成通路：使用的 adapter 与注入强度"""
    adapter: ImageAdapter
    alpha: float
    label: str = ""


@dataclass
class DualPathOutput:
    eps_iea: Tensor
    eps_tca: Tensor
    eps_fused: Tensor
    attn_iea: Optional[AttnMaps] = None
    attn_tca: Optional[AttnMaps] = None


# ============ 掩码金字塔 ============

def _as_4d(m: Tensor) -> Tensor:
    if m.ndim == 2:
        return m[None, None]
    if m.ndim == 3:
        return m[:, None]
    if m.ndim == 4 and m.shape[1] == 1:
        return m
    raise StructuralError(f"mask must be (H, W), (B, H, W) or (B, 1, H, W), got {tuple(m.shape)}")


def build_mask_pyramid(m: Tensor, resolutions: Iterable[Resolution]) -> MaskPyramid:
    """
    把掩码重采样到每个 block 分辨率

    下采样为整数倍面积平均；上采样为整数倍最近邻复制。
    结果保持输入的维度形式（(H, W) 输入得到 (h, w) 输出）。

    Raises:
        ParameterError: 分辨率与掩码尺寸不成整数倍关系
    """
    m4 = _as_4d(m)
    height, width = m4.shape[-2:]
    pyramid: MaskPyramid = {}
    for res in resolutions:
        h, w = (res, res) if isinstance(res, int) else tuple(res)
        if (h, w) in pyramid:
            continue
        if (h, w) == (height, width):
            level = m4
        elif h <= height and w <= width and height % h == 0 and width % w == 0:
            level = F.avg_pool2d(m4, kernel_size=(height // h, width // w))
        elif h >= height and w >= width and h % height == 0 and w % width == 0:
            level = F.interpolate(m4, size=(h, w), mode="nearest")
        else:
            raise ParameterError(
                f"resolution {(h, w)} is not an integer factor of mask size {(height, width)}"
            )
        pyramid[(h, w)] = level.reshape(*m.shape[:-2], h, w) if m.ndim != 4 else level
    return pyramid


def blend_features(f_iea: Tensor, f_tca: Tensor, m_level: Tensor) -> Tensor:
    """m ⊙ f_IEA + (1 − m) ⊙ f_TCA，m 在通道维广播"""
    if f_iea.shape != f_tca.shape:
        raise StructuralError(f"features differ: {tuple(f_iea.shape)} vs {tuple(f_tca.shape)}")
    m4 = _as_4d(m_level)
    if m4.shape[-2:] != f_iea.shape[-2:]:
        raise StructuralError(
            f"mask level {tuple(m4.shape[-2:])} does not match features {tuple(f_iea.shape[-2:])}"
        )
    return torch.lerp(f_tca, f_iea, m4.to(f_iea.dtype).expand_as(f_iea))


# ============ 双通路前向 ============

def _resume(stream: BlockStream, value: Tensor) -> tuple[bool, Any]:
    try:
        return False, stream.send(value)
    except StopIteration as stop:
        return True, stop.value


def _project(path: PathwaySpec, face_emb: Optional[Tensor]) -> Optional[Tensor]:
    return None if face_emb is None else path.adapter.project(face_emb)


def dual_path_forward(
    backbone: UNet,
    x_t: Tensor,
    t: Union[int, Tensor],
    text_tokens: Tensor,
    face_emb: Optional[Tensor],
    path_a: PathwaySpec,
    path_b: PathwaySpec,
    m: Tensor,
    mode: FusionMode = FusionMode.BLENDED,
    private_streams: bool = False,
    record_attention: bool = False,
) -> DualPathOutput:
    """
    IEA（path_a）与 TCA（path_b）两条通路共享噪声输入的一次去噪

    blended 模式下两个通路在每个可融合 block 同步，
    把 m ⊙ f_a + (1 − m) ⊙ f_b 回送给后续层；
    private_streams 时 TCA 通路保留自身特征，只有 IEA 通路接收融合结果。
    independent 模式下只在噪声空间融合。

    Returns:
        DualPathOutput：两个通路的 ε 与融合后的 ε
    """
    m4 = _as_4d(m).to(x_t.dtype)
    tokens_a = _project(path_a, face_emb)
    tokens_b = _project(path_b, face_emb)
    mode = FusionMode(mode)

    if mode == FusionMode.INDEPENDENT:
        taps = Taps(attention=record_attention)
        out_a = backbone(x_t, t, text_tokens, path_a.adapter, tokens_a, path_a.alpha, taps)
        out_b = backbone(x_t, t, text_tokens, path_b.adapter, tokens_b, path_b.alpha, taps)
        return DualPathOutput(
            eps_iea=out_a.eps,
            eps_tca=out_b.eps,
            eps_fused=fuse_noise(out_a.eps, out_b.eps, m4),
            attn_iea=out_a.attn,
            attn_tca=out_b.attn,
        )

    pyramid = build_mask_pyramid(m4, backbone.tap_resolutions())
    stream_a = backbone.iter_blocks(
        x_t, t, text_tokens, path_a.adapter, tokens_a, path_a.alpha, record_attention
    )
    stream_b = backbone.iter_blocks(
        x_t, t, text_tokens, path_b.adapter, tokens_b, path_b.alpha, record_attention
    )

    done_a, item_a = _resume(stream_a, None)
    done_b, item_b = _resume(stream_b, None)
    if done_a or done_b:
        raise StructuralError("backbone exposed no fusion taps")

    while True:
        if item_a.block_id != item_b.block_id:
            raise StructuralError(
                f"pathways out of step: '{item_a.block_id}' vs '{item_b.block_id}'"
            )
        level = pyramid.get(item_a.resolution)
        if level is None:
            raise StructuralError(f"no mask level for tap '{item_a.block_id}' at {item_a.resolution}")
        fused = blend_features(item_a.features, item_b.features, level)

        done_a, item_a = _resume(stream_a, fused)
        done_b, item_b = _resume(stream_b, item_b.features if private_streams else fused)
        if done_a != done_b:
            raise StructuralError("pathways expose a different number of taps")
        if done_a:
            break

    eps_a, attn_a = item_a
    eps_b, attn_b = item_b
    return DualPathOutput(
        eps_iea=eps_a,
        eps_tca=eps_b,
        eps_fused=fuse_noise(eps_a, eps_b, m4),
        attn_iea=attn_a,
        attn_tca=attn_b,
    )
